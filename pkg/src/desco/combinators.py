"""Operation-level composition: racing, joining, timeouts and lazy chains.

``any_of`` and ``all_of`` take ownership of their inputs.  A race aborts its
losers at the instant the winner completes; a join aborts the remaining
inputs as soon as one of them fails.  Inputs must already share a result
type; map them to tagged values first if they do not.
"""

from __future__ import annotations

import inspect
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Any

from desco.kernel import Simulation
from desco.tasks import (
    Frame,
    OperationAborted,
    OperationHandle,
    TaskState,
    current_simulation,
    new_operation,
    sleep,
    spawn,
)

__all__ = [
    "AllOutcome",
    "ChainedOperation",
    "Finished",
    "RaceFailed",
    "RaceOutcome",
    "TimedOut",
    "TIMED_OUT",
    "all_of",
    "any_of",
    "chain",
    "pure",
    "with_timeout",
]


@dataclass(frozen=True)
class RaceOutcome:
    winner_index: int
    value: Any


@dataclass(frozen=True)
class AllOutcome:
    values: tuple[Any, ...]


@dataclass(frozen=True)
class Finished:
    value: Any


@dataclass(frozen=True)
class TimedOut:
    pass


TIMED_OUT = TimedOut()


class RaceFailed(Exception):
    """Every input of a race failed or was aborted."""

    def __init__(self, errors: Sequence[BaseException]) -> None:
        super().__init__(f"all {len(errors)} raced operations failed")
        self.errors = list(errors)


def _error_of(frame: Frame) -> BaseException:
    if frame.state is TaskState.ABORTED:
        return OperationAborted(f"{frame.name} #{frame.id} was aborted")
    assert frame.error is not None
    return frame.error


class _Group:
    """Shared plumbing: owned input handles plus the waiter registrations on them."""

    def __init__(self, sim: Simulation, name: str, ops: Sequence[OperationHandle]) -> None:
        if not ops:
            raise ValueError(f"{name} needs at least one operation")
        for op in ops:
            if not op.owning:
                raise ValueError(f"{name} takes ownership of its inputs; {op!r} is not owning")
        self.inputs = [op.transfer() for op in ops]
        self.frames = [h.frame for h in self.inputs]
        self.handle, self.res = new_operation(sim, name, on_abort=self._on_abort)
        self.res.frame.awaiting = tuple(self.frames)
        self._cbs: list[tuple[Frame, Callable[[Frame], None]]] = []

    def watch(self, index: int, callback: Callable[[int, Frame], None]) -> None:
        def cb(frame: Frame) -> None:
            callback(index, frame)

        frame = self.frames[index]
        frame.add_waiter(cb)
        self._cbs.append((frame, cb))

    def close(self, abort_others: bool) -> None:
        for frame, cb in self._cbs:
            frame.remove_waiter(cb)
        self._cbs.clear()
        self.res.frame.awaiting = ()
        inputs, self.inputs = self.inputs, []
        if abort_others:
            for h in inputs:
                h.frame.abort_tree()
        for h in inputs:
            h.release()

    def _on_abort(self) -> None:
        self.close(abort_others=True)


def any_of(sim: Simulation, ops: Sequence[OperationHandle]) -> OperationHandle:
    """Race ``ops``: the first to complete wins and every other input is aborted.

    Completions are observed in kernel order, so when inputs finish at the
    same instant the one whose completion event was scheduled first wins; for
    inputs started in list order that is the lowest index.
    """
    group = _Group(sim, "any", ops)
    res = group.res
    failures: dict[int, BaseException] = {}

    def win(index: int, frame: Frame) -> None:
        value = frame.value
        group.close(abort_others=True)
        res.resolve(RaceOutcome(index, value))

    def on_input(index: int, frame: Frame) -> None:
        if not res.pending:
            return
        if frame.state is TaskState.COMPLETED:
            win(index, frame)
            return
        failures[index] = _error_of(frame)
        if len(failures) == len(group.frames):
            errors = [failures[i] for i in range(len(group.frames))]
            group.close(abort_others=False)
            res.reject(RaceFailed(errors))

    for i, frame in enumerate(group.frames):
        if frame.state is TaskState.COMPLETED:
            win(i, frame)
            return group.handle
    for i, frame in enumerate(group.frames):
        if frame.state.terminal:
            failures[i] = _error_of(frame)
    if len(failures) == len(group.frames):
        errors = [failures[i] for i in range(len(group.frames))]
        group.close(abort_others=False)
        res.reject(RaceFailed(errors))
        return group.handle
    for i, frame in enumerate(group.frames):
        if not frame.state.terminal:
            group.watch(i, on_input)
    return group.handle


def all_of(sim: Simulation, ops: Sequence[OperationHandle]) -> OperationHandle:
    """Join ``ops``; values come back in input order.

    The first failure or abort among the inputs fails the join and aborts the
    inputs still pending.
    """
    group = _Group(sim, "all", ops)
    res = group.res
    values: list[Any] = [None] * len(group.frames)
    remaining = [0]

    def fail(frame: Frame) -> None:
        err = _error_of(frame)
        group.close(abort_others=True)
        res.reject(err)

    def on_input(index: int, frame: Frame) -> None:
        if not res.pending:
            return
        if frame.state is not TaskState.COMPLETED:
            fail(frame)
            return
        values[index] = frame.value
        remaining[0] -= 1
        if remaining[0] == 0:
            group.close(abort_others=False)
            res.resolve(AllOutcome(tuple(values)))

    for frame in group.frames:
        if frame.state.terminal and frame.state is not TaskState.COMPLETED:
            fail(frame)
            return group.handle
    for i, frame in enumerate(group.frames):
        if frame.state is TaskState.COMPLETED:
            values[i] = frame.value
        else:
            remaining[0] += 1
            group.watch(i, on_input)
    if remaining[0] == 0:
        group.close(abort_others=False)
        res.resolve(AllOutcome(tuple(values)))
    return group.handle


def with_timeout(sim: Simulation, op: OperationHandle, delay: int) -> OperationHandle:
    """Bound ``op`` by ``delay`` ticks.

    Completes with :class:`Finished` if ``op`` completes first (a completion at
    the deadline instant that is already settled wins), or with
    :data:`TIMED_OUT` after aborting ``op``.  A failure of ``op`` fails the
    result with the same error.
    """
    if delay < 0:
        raise ValueError(f"negative timeout {delay}")
    timer = sleep(sim, delay)
    group = _Group(sim, "timeout", [op, timer])
    res = group.res

    def settle(frame: Frame) -> None:
        if frame.state is TaskState.COMPLETED:
            group.close(abort_others=True)
            res.resolve(Finished(frame.value))
        else:
            err = _error_of(frame)
            group.close(abort_others=True)
            res.reject(err)

    def on_input(index: int, frame: Frame) -> None:
        if not res.pending:
            return
        if index == 0:
            settle(frame)
        else:
            group.close(abort_others=True)
            res.resolve(TIMED_OUT)

    inner = group.frames[0]
    if inner.state.terminal:
        settle(inner)
        return group.handle
    group.watch(0, on_input)
    group.watch(1, on_input)
    return group.handle


# -- lazy chains ---------------------------------------------------------


class _Pure:
    __slots__ = ("value",)

    def __init__(self, value: Any) -> None:
        self.value = value

    def __repr__(self) -> str:
        return f"pure({self.value!r})"


def pure(value: Any) -> _Pure:
    """A chain source that produces ``value`` without suspending."""
    return _Pure(value)


async def _settle_value(value: Any) -> Any:
    while True:
        if isinstance(value, (OperationHandle, ChainedOperation)) or inspect.iscoroutine(value):
            value = await value
        else:
            return value


class ChainedOperation:
    """A lazy pipeline: a source followed by continuation stages.

    Nothing runs until the chain is awaited or spawned.  Each stage receives
    the previous stage's value and may return a plain value, a handle, a
    coroutine, or another chain; awaitables are awaited before the next
    stage.  A stage error short-circuits the rest.
    """

    __slots__ = ("source", "stages", "_started")

    def __init__(self, source: Any, stages: tuple[Callable[[Any], Any], ...] = ()) -> None:
        self.source = source
        self.stages = stages
        self._started = False

    def __repr__(self) -> str:
        return f"<ChainedOperation {self.source!r} +{len(self.stages)} stages>"

    @property
    def materialized(self) -> bool:
        return self._started

    def then(self, fn: Callable[[Any], Any]) -> ChainedOperation:
        return ChainedOperation(self.source, self.stages + (fn,))

    async def _run(self) -> Any:
        src = self.source
        if isinstance(src, _Pure):
            value = src.value
        elif isinstance(src, (OperationHandle, ChainedOperation)) or inspect.iscoroutine(src):
            value = await _settle_value(src)
        elif callable(src):
            value = await _settle_value(src())
        else:
            value = src
        for stage in self.stages:
            value = await _settle_value(stage(value))
        return value

    def _materialize(self, sim: Simulation) -> OperationHandle:
        if self._started:
            raise RuntimeError("a chained operation can only be started once")
        self._started = True
        return spawn(sim, self._run(), name="chain")

    def __await__(self):
        handle = self._materialize(current_simulation())
        try:
            return (yield from handle.__await__())
        finally:
            handle.release()


def chain(first: Any, *stages: Callable[[Any], Any]) -> ChainedOperation:
    """Lazily sequence ``first`` with ``stages``; nested chains are flattened."""
    if isinstance(first, ChainedOperation):
        if first.materialized:
            raise RuntimeError("cannot extend a chain that has already started")
        return ChainedOperation(first.source, first.stages + tuple(stages))
    return ChainedOperation(first, tuple(stages))
