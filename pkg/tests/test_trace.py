from __future__ import annotations

import io

import pytest

from desco import Simulation
from desco.tasks import sleep, spawn
from desco.trace import (
    DEFAULT_KINDS,
    KERNEL_KINDS,
    TraceRecord,
    Tracer,
    diff_traces,
    read_trace,
    trace_digest,
    write_trace,
)


def _small_run(tracer):
    sim = Simulation(tracer=tracer)

    async def body():
        await sleep(sim, 3)
        tracer.emit("app", sim.now(), note="woke")

    spawn(sim, body()).release()
    eid = sim.schedule(9, lambda: None)
    sim.schedule(1, lambda: sim.cancel(eid))
    sim.run_to_completion()
    return sim


def test_records_are_time_ordered_with_increasing_seq():
    tracer = Tracer()
    _small_run(tracer)
    keys = [(r.time, r.seq) for r in tracer.records]
    assert keys == sorted(keys) and len(set(keys)) == len(keys)
    assert {r.kind for r in tracer.records} == {"schedule", "execute", "cancel", "app"}


def test_task_state_records_only_on_request():
    assert "task-state" not in DEFAULT_KINDS
    tracer = Tracer(kinds=DEFAULT_KINDS | {"task-state"})
    _small_run(tracer)
    assert any(r.kind == "task-state" for r in tracer.records)


def test_kind_filter_and_unknown_kinds():
    tracer = Tracer(kinds={"app"})
    _small_run(tracer)
    assert [r.kind for r in tracer.records] == ["app"]
    with pytest.raises(ValueError):
        Tracer(kinds={"bogus"})


def test_digest_matches_records_and_streaming_mode():
    kept, streamed = Tracer(), Tracer(keep=False)
    _small_run(kept)
    _small_run(streamed)
    assert streamed.records == [] and streamed.count == kept.count
    assert kept.digest() == streamed.digest() == trace_digest(kept.records)


def test_json_round_trip_and_sink(tmp_path):
    sink = io.StringIO()
    tracer = Tracer(kinds=KERNEL_KINDS | {"app"}, sink=sink)
    _small_run(tracer)
    path = tmp_path / "t.jsonl"
    write_trace(path, tracer.records)
    back = list(read_trace(path))
    assert back == tracer.records
    assert sink.getvalue() == path.read_text()


def test_diff_reports_first_difference():
    a = [TraceRecord(0, 0, "app", {"x": 1}), TraceRecord(1, 1, "app", {"x": 2})]
    b = [TraceRecord(0, 5, "app", {"x": 1}), TraceRecord(1, 6, "app", {"x": 3})]
    div = diff_traces(a, b)
    assert div is not None and div.index == 1
    assert "a:" in div.describe()
    assert diff_traces(a, a[:1]).right is None
    assert diff_traces(a, list(a)) is None
