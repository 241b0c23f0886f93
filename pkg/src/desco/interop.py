"""Bridges between callback-style code and operations.

``from_callback`` upgrades a one-shot callback registration into an awaitable
operation; ``to_callback`` downgrades an operation into completion callbacks
delivered as kernel events.  ``wrap_immediate`` turns a plain function into an
operation that never suspends.  ``rip`` checks a hand-split (stack-ripped)
version of a single-suspension task against the task itself.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

from desco.kernel import Simulation
from desco.tasks import (
    Frame,
    OperationAborted,
    OperationHandle,
    TaskState,
    new_operation,
    spawn,
)
from desco.trace import KERNEL_KINDS, Divergence, TraceRecord, Tracer, diff_traces

__all__ = [
    "CallbackContractError",
    "RipDivergence",
    "RipRun",
    "RippedPair",
    "from_callback",
    "rip",
    "run_original",
    "to_callback",
    "wrap_immediate",
]

Registrar = Callable[[Callable[..., None], Callable[[BaseException], None]], Any]


class CallbackContractError(RuntimeError):
    """A one-shot callback was invoked more than once."""


def wrap_immediate(sim: Simulation, fn: Callable[..., Any], *args: Any) -> OperationHandle:
    """Run ``fn`` as an operation that finishes before this call returns."""

    async def body() -> Any:
        return fn(*args)

    return spawn(sim, body(), name=getattr(fn, "__name__", "wrapped"))


def from_callback(sim: Simulation, register: Registrar, name: str = "callback") -> OperationHandle:
    """Call ``register(on_value, on_error)`` and return an operation for its outcome.

    The registrar must invoke at most one of the two callbacks, at most once.
    A second invocation raises :class:`CallbackContractError` at the call site.
    """
    handle, res = new_operation(sim, name)
    fired = False

    def guard(kind: str) -> None:
        nonlocal fired
        if fired:
            raise CallbackContractError(f"{name}: {kind} callback invoked after the operation already fired")
        fired = True

    def on_value(value: Any = None) -> None:
        guard("completion")
        res.resolve(value)

    def on_error(error: BaseException) -> None:
        guard("error")
        if not isinstance(error, BaseException):
            error = RuntimeError(error)
        res.reject(error)

    register(on_value, on_error)
    return handle


def to_callback(
    sim: Simulation,
    op: OperationHandle,
    on_complete: Callable[[Any], Any],
    on_error: Callable[[BaseException], Any],
) -> None:
    """Deliver ``op``'s outcome to exactly one of the callbacks.

    Delivery is a zero-delay kernel event scheduled when ``op`` terminates (or
    now, if it already has), so callback code always runs from the event loop.
    """
    if not op.owning:
        raise ValueError("to_callback needs the owning handle")
    # a shared reference keeps the frame alive; the caller keeps the owner token
    owned = op.retain()
    frame = owned.frame

    def deliver(done: Frame) -> None:
        if done.state is TaskState.COMPLETED:
            value = done.value
            action = lambda: on_complete(value)  # noqa: E731
        else:
            err = done.error if done.state is TaskState.FAILED else OperationAborted(
                f"{done.name} #{done.id} was aborted")
            action = lambda: on_error(err)  # noqa: E731
        sim.schedule(0, action)
        owned.release()

    if frame.state.terminal:
        deliver(frame)
    else:
        frame.add_waiter(deliver)


# -- stack ripping -------------------------------------------------------


@dataclass
class RippedPair:
    """A single-suspension task split by hand into two callbacks.

    ``pre_stage(sim)`` runs the code before the suspension and returns the
    externalized state; ``post_stage(sim, state)`` runs after ``delay`` ticks
    with exactly that state.
    """

    pre_stage: Callable[[Simulation], Any]
    delay: int
    post_stage: Callable[[Simulation, Any], Any]
    external_state: Any = None

    def start(self, sim: Simulation, on_done: Callable[[Any], None] | None = None) -> None:
        state = self.pre_stage(sim)
        self.external_state = state

        def resume() -> None:
            result = self.post_stage(sim, state)
            if on_done is not None:
                on_done(result)

        sim.schedule(self.delay, resume)


@dataclass
class RipRun:
    result: Any
    finished_at: int | None
    failed: BaseException | None
    trace: list[TraceRecord] = field(default_factory=list)


class RipDivergence(AssertionError):
    def __init__(self, divergence: Divergence | None, detail: str = "") -> None:
        msg = divergence.describe() if divergence is not None else detail
        super().__init__(msg)
        self.divergence = divergence


def _traced_sim(setup: Callable[[Simulation], None] | None) -> tuple[Simulation, Tracer]:
    tracer = Tracer(kinds=KERNEL_KINDS | {"app"})
    sim = Simulation(tracer=tracer)
    if setup is not None:
        setup(sim)
    return sim, tracer


def run_original(body: Callable[[Simulation], Any], setup: Callable[[Simulation], None] | None = None) -> RipRun:
    sim, tracer = _traced_sim(setup)
    finished: list[int] = []

    async def outer() -> Any:
        try:
            return await body(sim)
        finally:
            finished.append(sim.now())

    handle = spawn(sim, outer())
    sim.run_to_completion()
    failed = handle.exception()
    result = handle.result() if handle.state is TaskState.COMPLETED else None
    handle.release()
    return RipRun(result, finished[0] if finished and failed is None else None, failed, tracer.records)


def run_ripped(pair: RippedPair, setup: Callable[[Simulation], None] | None = None) -> RipRun:
    sim, tracer = _traced_sim(setup)
    out: list[tuple[Any, int]] = []
    try:
        pair.start(sim, lambda r: out.append((r, sim.now())))
    except Exception as err:
        return RipRun(None, None, err, tracer.records)
    try:
        sim.run_to_completion()
    except Exception as err:
        return RipRun(None, None, err, tracer.records)
    result, at = out[0] if out else (None, None)
    return RipRun(result, at, None, tracer.records)


def rip(
    body: Callable[[Simulation], Any],
    pre_stage: Callable[[Simulation], Any],
    delay: int,
    post_stage: Callable[[Simulation, Any], Any],
    setup: Callable[[Simulation], None] | None = None,
) -> RippedPair:
    """Validate a manual rip of ``body`` and return the pair.

    ``body(sim)`` is an async function with one suspension of ``delay`` ticks.
    Both forms run in fresh simulations prepared by ``setup``; their kernel
    traces, results and finishing instants must agree, otherwise
    :class:`RipDivergence` names the first differing record.
    """
    pair = RippedPair(pre_stage, delay, post_stage)
    original = run_original(body, setup)
    ripped = run_ripped(pair, setup)
    div = diff_traces(original.trace, ripped.trace)
    if div is not None:
        raise RipDivergence(div)
    if (original.failed is None) != (ripped.failed is None):
        raise RipDivergence(None, f"original failed={original.failed!r}, ripped failed={ripped.failed!r}")
    if original.failed is None and (original.result, original.finished_at) != (ripped.result, ripped.finished_at):
        raise RipDivergence(
            None,
            f"original -> {original.result!r} at {original.finished_at}, "
            f"ripped -> {ripped.result!r} at {ripped.finished_at}",
        )
    return pair
