"""Trace records, digests and diffs.

A trace is a sequence of records, one JSON object per line::

    {"time": 8000, "seq": 12, "kind": "tx", "attrs": {"iface": 0, "node": 1, "prio": 3}}

``time`` is the virtual time in ticks, ``seq`` the record's position in the
stream (strictly increasing), ``kind`` one of :data:`KINDS`, and ``attrs`` a
flat map with keys in sorted order.  Kernel records carry the event id in
``attrs["event"]``.
"""

from __future__ import annotations

import hashlib
import json
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any

__all__ = [
    "KERNEL_KINDS",
    "KINDS",
    "Divergence",
    "TraceRecord",
    "Tracer",
    "diff_traces",
    "read_trace",
    "trace_digest",
    "write_trace",
]

KERNEL_KINDS = frozenset({"schedule", "execute", "cancel"})
KINDS = KERNEL_KINDS | {"tx", "rx", "drop", "pause", "resume", "route-update", "task-state", "app"}
DEFAULT_KINDS = KINDS - {"task-state"}


@dataclass(frozen=True)
class TraceRecord:
    time: int
    seq: int
    kind: str
    attrs: dict[str, Any] = field(default_factory=dict, hash=False)

    def to_json(self) -> str:
        body = {"time": self.time, "seq": self.seq, "kind": self.kind,
                "attrs": dict(sorted(self.attrs.items()))}
        return json.dumps(body, separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> TraceRecord:
        raw = json.loads(line)
        return cls(int(raw["time"]), int(raw["seq"]), str(raw["kind"]), dict(raw.get("attrs", {})))


class Tracer:
    """Collects records as the simulation emits them.

    ``kinds`` filters what is recorded.  With ``keep=False`` only the running
    digest and count are kept, which is enough for determinism checks on long
    runs.
    """

    def __init__(self, kinds: Iterable[str] | None = None, keep: bool = True, sink: IO[str] | None = None) -> None:
        self.kinds = frozenset(kinds) if kinds is not None else DEFAULT_KINDS
        unknown = self.kinds - KINDS
        if unknown:
            raise ValueError(f"unknown trace kinds {sorted(unknown)}")
        self.keep = keep
        self.sink = sink
        self.records: list[TraceRecord] = []
        self.count = 0
        self._hash = hashlib.sha256()
        self._kernel = bool(self.kinds & KERNEL_KINDS)
        self._tasks = "task-state" in self.kinds

    def wants(self, kind: str) -> bool:
        return kind in self.kinds

    def emit(self, kind: str, time: int, **attrs: Any) -> None:
        if kind not in self.kinds:
            return
        rec = TraceRecord(time, self.count, kind, attrs)
        self.count += 1
        line = rec.to_json()
        self._hash.update(line.encode())
        self._hash.update(b"\n")
        if self.keep:
            self.records.append(rec)
        if self.sink is not None:
            self.sink.write(line + "\n")

    def kernel(self, kind: str, time: int, event_id: int, **attrs: Any) -> None:
        if self._kernel:
            self.emit(kind, time, event=event_id, **attrs)

    def task_state(self, time: int, frame: Any, old: Any, new: Any) -> None:
        if self._tasks:
            self.emit("task-state", time, frame=frame.id, name=frame.name, old=old.value, new=new.value)

    def digest(self) -> str:
        return self._hash.hexdigest()


def trace_digest(records: Iterable[TraceRecord]) -> str:
    h = hashlib.sha256()
    for rec in records:
        h.update(rec.to_json().encode())
        h.update(b"\n")
    return h.hexdigest()


@dataclass(frozen=True)
class Divergence:
    index: int
    left: TraceRecord | None
    right: TraceRecord | None

    def describe(self) -> str:
        def show(rec: TraceRecord | None) -> str:
            return "<end of trace>" if rec is None else rec.to_json()

        return f"traces diverge at record {self.index}:\n  a: {show(self.left)}\n  b: {show(self.right)}"


def _comparable(rec: TraceRecord) -> tuple[int, str, list[tuple[str, Any]]]:
    return (rec.time, rec.kind, sorted(rec.attrs.items()))


def diff_traces(a: Iterable[TraceRecord], b: Iterable[TraceRecord]) -> Divergence | None:
    """First differing record, or None when the streams are equal.

    Records are compared on time, kind and attributes; ``seq`` is positional
    and therefore implied by the index.
    """
    ia, ib = iter(a), iter(b)
    index = 0
    while True:
        ra = next(ia, None)
        rb = next(ib, None)
        if ra is None and rb is None:
            return None
        if ra is None or rb is None or _comparable(ra) != _comparable(rb):
            return Divergence(index, ra, rb)
        index += 1


def write_trace(path: str | Path, records: Iterable[TraceRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_trace(path: str | Path) -> Iterator[TraceRecord]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield TraceRecord.from_json(line)
