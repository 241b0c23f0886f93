from __future__ import annotations

import gc
from functools import reduce

import pytest
from hypothesis import given
from hypothesis import strategies as st

from desco import OperationAborted, Simulation, TaskState
from desco.combinators import (
    TIMED_OUT,
    AllOutcome,
    Finished,
    RaceFailed,
    RaceOutcome,
    all_of,
    any_of,
    chain,
    pure,
    with_timeout,
)
from desco.tasks import new_operation, sleep, spawn


async def _after(sim, d, value):
    await sleep(sim, d)
    return value


async def _fail_after(sim, d):
    await sleep(sim, d)
    raise RuntimeError(f"fail@{d}")


def _spy(handles):
    return [h.retain() for h in handles]


def test_race_first_completion_wins_and_losers_abort(sim):
    ops = [spawn(sim, _after(sim, d, d)) for d in (3, 5, 7)]
    spies = _spy(ops)
    race = any_of(sim, ops)
    sim.run_to_completion()
    assert race.result() == RaceOutcome(0, 3)
    assert sim.now() == 3
    assert [s.state for s in spies] == [TaskState.COMPLETED, TaskState.ABORTED, TaskState.ABORTED]


def test_race_tie_goes_to_lower_index(sim):
    ops = [spawn(sim, _after(sim, 4, "a")), spawn(sim, _after(sim, 4, "b"))]
    race = any_of(sim, ops)
    sim.run_to_completion()
    assert race.result() == RaceOutcome(0, "a")


def test_race_single_input(sim):
    race = any_of(sim, [spawn(sim, _after(sim, 2, "x"))])
    sim.run_to_completion()
    assert race.result() == RaceOutcome(0, "x")


def test_race_empty_rejected(sim):
    with pytest.raises(ValueError):
        any_of(sim, [])


def test_race_all_failing_reports_every_error(sim):
    race = any_of(sim, [spawn(sim, _fail_after(sim, 1)), spawn(sim, _fail_after(sim, 2))])
    sim.run_to_completion()
    err = race.exception()
    assert isinstance(err, RaceFailed) and len(err.errors) == 2


def test_race_resolves_at_winner_instant_with_no_loser_events(sim):
    ops = [spawn(sim, _after(sim, d, d)) for d in (10, 2, 30)]
    race = any_of(sim, ops)
    sim.run_until(2)
    assert race.done()
    assert sim.pending() == []


def test_race_aborting_the_race_aborts_inputs(sim):
    ops = [spawn(sim, _after(sim, d, d)) for d in (10, 20)]
    spies = _spy(ops)
    race = any_of(sim, ops)
    race.abort()
    assert all(s.state is TaskState.ABORTED for s in spies)
    assert sim.pending() == []


def test_join_completes_at_max_with_input_order(sim):
    join = all_of(sim, [spawn(sim, _after(sim, 9, "late")), spawn(sim, _after(sim, 4, "early"))])
    sim.run_to_completion()
    assert join.result() == AllOutcome(("late", "early"))
    assert sim.now() == 9


def test_join_fails_fast_and_aborts_pending(sim):
    pending = spawn(sim, _after(sim, 50, "x"))
    spy = pending.retain()
    join = all_of(sim, [spawn(sim, _fail_after(sim, 2)), pending])
    sim.run_to_completion()
    assert isinstance(join.exception(), RuntimeError)
    assert spy.state is TaskState.ABORTED
    assert sim.now() == 2


def test_join_of_completed_inputs_is_immediate(sim):
    async def v(x):
        return x

    join = all_of(sim, [spawn(sim, v(1)), spawn(sim, v(2))])
    assert join.result() == AllOutcome((1, 2))
    assert sim.events_scheduled == 0


def test_join_empty_rejected(sim):
    with pytest.raises(ValueError):
        all_of(sim, [])


def test_timeout_finished_cancels_timer(sim):
    t = with_timeout(sim, spawn(sim, _after(sim, 5, "ok")), 10)
    stats = sim.run_to_completion()
    assert t.result() == Finished("ok")
    assert stats.final_time == 5
    assert stats.events_cancelled == 1


def test_timeout_expires_and_aborts_inner(sim):
    inner = spawn(sim, _after(sim, 20, "late"))
    spy = inner.retain()
    t = with_timeout(sim, inner, 10)
    sim.run_to_completion()
    assert t.result() is TIMED_OUT
    assert spy.state is TaskState.ABORTED
    assert sim.now() == 10


def test_timeout_zero_on_completed_op_finishes(sim):
    async def v():
        return 1

    t = with_timeout(sim, spawn(sim, v()), 0)
    sim.run_to_completion()
    assert t.result() == Finished(1)


def test_timeout_inner_failure_propagates(sim):
    t = with_timeout(sim, spawn(sim, _fail_after(sim, 1)), 10)
    sim.run_to_completion()
    assert isinstance(t.exception(), RuntimeError)


def test_timeout_bounds_never_firing_operation(sim):
    handle, _res = new_operation(sim, "never")
    t = with_timeout(sim, handle, 7)
    sim.run_to_completion()
    assert t.result() is TIMED_OUT


def test_chain_pure_plus_stage(sim):
    async def body():
        return await chain(pure(2), lambda x: x + 3)

    h = spawn(sim, body())
    assert h.result() == 5


def test_chain_is_lazy_until_awaited(sim):
    calls = []
    c = chain(pure(1), lambda x: calls.append(x) or x + 1)
    sim.run_to_completion()
    assert calls == [] and not c.materialized

    async def body():
        return await c

    h = spawn(sim, body())
    assert h.result() == 2 and calls == [1]


def test_chain_stage_error_short_circuits(sim):
    later = []

    def boom(_):
        raise ValueError("stage")

    async def body():
        return await chain(pure(1), boom, lambda x: later.append(x))

    h = spawn(sim, body())
    assert isinstance(h.exception(), ValueError) and later == []


def test_chain_stages_may_suspend(sim):
    async def body():
        return await chain(pure(4), lambda x: _after(sim, x, x * 10), lambda y: y + 1)

    h = spawn(sim, body())
    sim.run_to_completion()
    assert h.result() == 41 and sim.now() == 4


def test_chain_can_start_only_once(sim):
    c = chain(pure(1))
    spawn(sim, c)
    with pytest.raises(RuntimeError):
        spawn(sim, c)


def test_spawned_chain_runs(sim):
    h = spawn(sim, chain(pure(3), lambda x: x * 2))
    assert h.result() == 6


# -- properties ---------------------------------------------------------------

stage_fns = st.lists(
    st.tuples(st.sampled_from(["add", "mul", "sub"]), st.integers(-5, 5)),
    min_size=0, max_size=6,
)


def _fn(spec):
    kind, k = spec
    return {"add": lambda x: x + k, "mul": lambda x: x * k, "sub": lambda x: x - k}[kind]


def _run_chain(c):
    sim = Simulation()
    h = spawn(sim, c)
    sim.run_to_completion()
    return h.result()


@given(st.integers(-100, 100), stage_fns, stage_fns)
def test_chain_associativity_and_fusion(x, left, right):
    f = [_fn(s) for s in left]
    g = [_fn(s) for s in right]
    nested = chain(chain(pure(x), *f), *g)
    fused_fn = lambda v: reduce(lambda acc, fn: fn(acc), f + g, v)  # noqa: E731
    fused = chain(pure(x), fused_fn)
    expected = reduce(lambda acc, fn: fn(acc), f + g, x)
    assert _run_chain(nested) == _run_chain(fused) == expected


@given(st.lists(st.integers(0, 20), min_size=1, max_size=8))
def test_race_soundness(times):
    sim = Simulation()
    ops = [spawn(sim, _after(sim, t, i)) for i, t in enumerate(times)]
    spies = _spy(ops)
    race = any_of(sim, ops)
    sim.run_to_completion()
    winner = min(range(len(times)), key=lambda i: (times[i], i))
    assert race.result() == RaceOutcome(winner, winner)
    assert sim.now() == times[winner]
    states = [s.state for s in spies]
    assert states[winner] is TaskState.COMPLETED
    assert all(st is TaskState.ABORTED for i, st in enumerate(states) if i != winner)
    assert sim.pending() == []


@given(st.lists(st.integers(0, 20), min_size=1, max_size=8))
def test_join_timing(times):
    sim = Simulation()
    join = all_of(sim, [spawn(sim, _after(sim, t, i)) for i, t in enumerate(times)])
    sim.run_to_completion()
    assert join.result() == AllOutcome(tuple(range(len(times))))
    assert sim.now() == max(times)


@given(st.integers(0, 30), st.integers(0, 30))
def test_timeout_matches_race_with_sleep(op_time, limit):
    sim = Simulation()
    inner = spawn(sim, _after(sim, op_time, "v"))
    spy = inner.retain()
    t = with_timeout(sim, inner, limit)
    sim.run_to_completion()
    if op_time <= limit:
        # the operation's sleep was scheduled before the timer, so it wins ties
        assert t.result() == Finished("v")
    else:
        assert t.result() is TIMED_OUT
        assert spy.state is TaskState.ABORTED
    assert sim.pending() == []


def test_combinators_leave_no_frames(sim):
    race = any_of(sim, [spawn(sim, _after(sim, d, d)) for d in (1, 2)])
    join = all_of(sim, [spawn(sim, _after(sim, d, d)) for d in (1, 2)])
    t = with_timeout(sim, spawn(sim, _after(sim, 5, 0)), 3)
    sim.run_to_completion()
    for h in (race, join, t):
        h.release()
    del h
    gc.collect()
    assert sim.live_frames() == 0
