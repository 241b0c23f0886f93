"""Suspendable operations on top of the event kernel.

A task body is an ``async def`` coroutine.  Its Python frame already is the
saved continuation: locals survive every suspension and nothing else is
captured.  The body suspends only through the traps in this module
(``await handle``, ``await yield_now()``), which hand control back to
:class:`Frame` and, through it, to the kernel.

Frame lifetime is reference counted explicitly.  Every :class:`OperationHandle`
holds one reference, a task awaiting a frame holds one while it waits, and a
non-terminal frame holds one on itself so that fire-and-forget tasks keep
running.  Storage is released exactly once, when the count reaches zero.
Exactly one handle per frame may carry the owner token; only that handle can
abort the operation or take its result.
"""

from __future__ import annotations

import contextvars
import enum
import inspect
import types
from collections import deque
from collections.abc import Callable, Coroutine
from typing import Any

from desco.kernel import EventId, Simulation

__all__ = [
    "DeadlockError",
    "FrameMonitor",
    "FrameReleasedError",
    "IllegalTransition",
    "InvalidStateError",
    "Mailbox",
    "OperationAborted",
    "OperationHandle",
    "OwnershipError",
    "Resolver",
    "TaskState",
    "current_simulation",
    "find_frame_cycle",
    "new_operation",
    "sleep",
    "spawn",
    "yield_now",
]


class TaskState(enum.Enum):
    CREATED = "created"
    RUNNING = "running"
    SUSPENDED = "suspended"
    COMPLETED = "completed"
    FAILED = "failed"
    ABORTED = "aborted"

    # set per member below: ``terminal`` and the tuple of legal successors
    terminal: bool
    successors: tuple[TaskState, ...]


LEGAL_TRANSITIONS: dict[TaskState, frozenset[TaskState]] = {
    TaskState.CREATED: frozenset({TaskState.RUNNING}),
    TaskState.RUNNING: frozenset(
        {TaskState.SUSPENDED, TaskState.COMPLETED, TaskState.FAILED, TaskState.ABORTED}
    ),
    TaskState.SUSPENDED: frozenset({TaskState.RUNNING, TaskState.ABORTED}),
    TaskState.COMPLETED: frozenset(),
    TaskState.FAILED: frozenset(),
    TaskState.ABORTED: frozenset(),
}

# plain attributes: enum hashing is slow on the hot path
for _state, _legal in LEGAL_TRANSITIONS.items():
    _state.successors = tuple(_legal)
    _state.terminal = _state in (TaskState.COMPLETED, TaskState.FAILED, TaskState.ABORTED)
del _state, _legal


class OperationAborted(Exception):
    """Raised in whoever awaits an operation that was aborted."""


class IllegalTransition(RuntimeError):
    pass


class FrameReleasedError(RuntimeError):
    """A handle or frame was used after its storage was released."""


class OwnershipError(RuntimeError):
    """A non-owning handle tried to abort or take a result."""


class InvalidStateError(RuntimeError):
    pass


class DeadlockError(RuntimeError):
    """Awaiting would close a cycle in the frame reference graph."""


_current_sim: contextvars.ContextVar[Simulation] = contextvars.ContextVar("desco_simulation")


def current_simulation() -> Simulation:
    try:
        return _current_sim.get()
    except LookupError:
        raise RuntimeError("no simulation is running in this context") from None


class FrameMonitor:
    """Records every state transition and release; install as ``sim.frame_monitor``."""

    def __init__(self) -> None:
        self.transitions: list[tuple[int, TaskState, TaskState]] = []
        self.frees: dict[int, int] = {}
        self.created = 0

    def on_create(self, frame: Frame) -> None:
        self.created += 1

    def on_transition(self, frame: Frame, old: TaskState, new: TaskState) -> None:
        self.transitions.append((frame.id, old, new))

    def on_free(self, frame: Frame) -> None:
        self.frees[frame.id] = self.frees.get(frame.id, 0) + 1

    def illegal(self) -> list[tuple[int, TaskState, TaskState]]:
        return [t for t in self.transitions if t[2] not in LEGAL_TRANSITIONS[t[1]]]


_AWAIT = "await"
_YIELD = "yield"


class Frame:
    """Runtime record of one operation: state, result, waiters and continuation."""

    __slots__ = (
        "sim", "id", "name", "state", "value", "error", "coro", "waiters",
        "retain_count", "owner_issued", "pending_event", "awaiting", "on_abort",
        "freed", "_waiter_cb", "lingering", "__weakref__",
    )

    def __init__(self, sim: Simulation, name: str, coro: Coroutine[Any, Any, Any] | None = None) -> None:
        self.sim = sim
        self.id = fid = sim._frame_seq
        sim._frame_seq = fid + 1
        self.name = name
        self.state = TaskState.CREATED
        self.value: Any = None
        self.error: BaseException | None = None
        self.coro = coro
        self.waiters: list[Callable[[Frame], None]] = []
        # the frame's own reference, dropped when it terminates
        self.retain_count = 1
        self.owner_issued = False
        self.pending_event: EventId | None = None
        self.awaiting: tuple[Frame, ...] = ()
        self.on_abort: Callable[[], None] | None = None
        self.freed = False
        self._waiter_cb: Callable[[Frame], None] | None = None
        self.lingering = False
        sim.frames.add(self)
        monitor = sim._frame_monitor
        if monitor is not None:
            monitor.on_create(self)

    def __repr__(self) -> str:
        return f"<Frame #{self.id} {self.name} {self.state.value}>"

    # -- bookkeeping ---------------------------------------------------

    def _transition(self, new: TaskState) -> None:
        old = self.state
        sim = self.sim
        if not sim.observe_tasks:
            if new not in old.successors:
                raise IllegalTransition(f"{self!r}: {old.value} -> {new.value}")
            self.state = new
            return
        monitor = sim._frame_monitor
        if monitor is not None:
            # recorded before the check so audits see attempted illegal moves too
            monitor.on_transition(self, old, new)
        if new not in old.successors:
            raise IllegalTransition(f"{self!r}: {old.value} -> {new.value}")
        self.state = new
        if sim.tracer is not None:
            sim.tracer.task_state(sim.now(), self, old, new)

    def incref(self) -> None:
        if self.freed:
            raise FrameReleasedError(f"{self!r} was already released")
        self.retain_count += 1

    def decref(self) -> None:
        if self.freed or self.retain_count <= 0:
            raise FrameReleasedError(f"release of {self!r} after its count reached zero")
        self.retain_count -= 1
        if self.retain_count == 0:
            self._free()

    def _free(self) -> None:
        if self.freed:
            raise FrameReleasedError(f"double free of {self!r}")
        self.freed = True
        sim = self.sim
        monitor = sim._frame_monitor
        if monitor is not None:
            monitor.on_free(self)
        if self.lingering:
            self.lingering = False
            sim.finished_unreleased -= 1
        else:
            sim.frames.discard(self)
        # teardown: the body is dropped, not resumed
        self.coro = None
        if self.waiters:
            self.waiters.clear()
        self.on_abort = None
        # a failure's traceback would otherwise pin the body's locals
        self.value = None
        self.error = None

    def outcome(self) -> Any:
        if self.state is TaskState.COMPLETED:
            return self.value
        if self.state is TaskState.FAILED:
            assert self.error is not None
            raise self.error
        if self.state is TaskState.ABORTED:
            raise OperationAborted(f"{self.name} #{self.id} was aborted")
        raise InvalidStateError(f"{self!r} has not finished")

    def add_waiter(self, cb: Callable[[Frame], None]) -> None:
        self.waiters.append(cb)

    def remove_waiter(self, cb: Callable[[Frame], None]) -> None:
        for i, w in enumerate(self.waiters):
            if w is cb:
                del self.waiters[i]
                return

    # -- termination ---------------------------------------------------

    def _finish(self, state: TaskState, value: Any = None, error: BaseException | None = None) -> None:
        sim = self.sim
        if sim.observe_tasks or state not in self.state.successors:
            self._transition(state)
        else:
            self.state = state
        self.value = value
        self.error = error
        if self.pending_event is not None:
            sim.cancel(self.pending_event)
            self.pending_event = None
        if self.awaiting:
            self._detach()
        if state is not TaskState.ABORTED:
            # completed bodies can go now; aborted ones are dropped at free time
            self.coro = None
        waiters = self.waiters
        if waiters:
            self.waiters = []
            for cb in waiters:
                cb(self)
        sim.frames.discard(self)
        count = self.retain_count - 1
        if count > 0:
            # finished but still held by handles; counted, not stored, so a
            # cycle through a stored traceback and a handle stays collectable
            self.retain_count = count
            self.lingering = True
            sim.finished_unreleased += 1
        else:
            self.decref()

    def __del__(self) -> None:
        # collected as garbage without every handle being released
        if self.lingering:
            self.lingering = False
            self.sim.finished_unreleased -= 1

    def coro_done(self) -> None:
        # completed bodies can go now; aborted ones are dropped at free time
        if self.state is not TaskState.ABORTED:
            self.coro = None

    def _detach(self) -> None:
        targets, self.awaiting = self.awaiting, ()
        cb, self._waiter_cb = self._waiter_cb, None
        if cb is None:
            # combinator edges; the combinator holds its own handles
            return
        for t in targets:
            t.remove_waiter(cb)
            t.decref()

    def abort(self) -> bool:
        if self.state.terminal:
            return False
        hook, self.on_abort = self.on_abort, None
        if hook is not None:
            hook()
        self._finish(TaskState.ABORTED)
        return True

    def abort_tree(self) -> bool:
        """Abort this frame plus whatever it awaits that nothing else awaits.

        Plain :meth:`abort` is not transitive.  Combinators own their inputs'
        pending work, so a loser's outstanding sleep or receive goes with it.
        """
        chain: list[Frame] = []
        seen = {id(self)}
        stack = list(self.awaiting)
        while stack:
            f = stack.pop(0)
            if id(f) in seen:
                continue
            seen.add(id(f))
            chain.append(f)
            stack.extend(f.awaiting)
        aborted = self.abort()
        for f in chain:
            if not f.state.terminal and not f.waiters:
                f.abort()
        return aborted

    # -- leaf operations -----------------------------------------------

    def _start_leaf(self) -> None:
        if not self.sim.observe_tasks:
            self.state = TaskState.SUSPENDED
            return
        self._transition(TaskState.RUNNING)
        self._transition(TaskState.SUSPENDED)

    def _settle(self, state: TaskState, value: Any = None, error: BaseException | None = None) -> bool:
        if self.state.terminal:
            return False
        if self.state is TaskState.SUSPENDED:
            if self.sim.observe_tasks:
                self._transition(TaskState.RUNNING)
            else:
                self.state = TaskState.RUNNING
        self.on_abort = None
        self._finish(state, value, error)
        return True

    # -- coroutine driving ---------------------------------------------

    def _step(self, value: Any = None, exc: BaseException | None = None) -> None:
        sim = self.sim
        if sim.observe_tasks or self.state is not TaskState.SUSPENDED:
            self._transition(TaskState.RUNNING)
        else:
            self.state = TaskState.RUNNING
        prev = sim.current_task
        sim.current_task = self
        token = _current_sim.set(sim)
        try:
            self._drive(value, exc)
        finally:
            sim.current_task = prev
            _current_sim.reset(token)

    def _drive(self, value: Any, exc: BaseException | None) -> None:
        coro = self.coro
        assert coro is not None
        while True:
            try:
                if exc is not None:
                    trap = coro.throw(exc)
                else:
                    trap = coro.send(value)
            except StopIteration as stop:
                if self.state is TaskState.RUNNING:
                    self._finish(TaskState.COMPLETED, value=stop.value)
                return
            except Exception as err:
                if self.state is TaskState.RUNNING:
                    self._finish(TaskState.FAILED, error=err)
                return
            value = exc = None
            if self.state is not TaskState.RUNNING:
                # aborted from inside its own step; the trap is dropped
                return
            kind = trap[0] if isinstance(trap, tuple) and trap else None
            if kind == _AWAIT:
                target: Frame = trap[1]
                if target.freed:
                    exc = FrameReleasedError(f"{target!r} was released")
                    continue
                if target.state.terminal:
                    try:
                        value = target.outcome()
                    except Exception as err:
                        exc = err
                    continue
                if target is self or (target.awaiting and find_frame_cycle(target, self)):
                    exc = DeadlockError(f"{self!r} awaiting {target!r} closes a cycle")
                    continue
                target.retain_count += 1
                cb = self._wake
                self._waiter_cb = cb
                self.awaiting = (target,)
                target.waiters.append(cb)
                if self.sim.observe_tasks:
                    self._transition(TaskState.SUSPENDED)
                else:
                    self.state = TaskState.SUSPENDED
                return
            if kind == _YIELD:
                self.pending_event = self.sim.schedule(0, self._resume, owner=self)
                self._transition(TaskState.SUSPENDED)
                return
            exc = TypeError(f"task {self.name} yielded {trap!r}; only desco traps may suspend a task")

    def _wake(self, target: Frame) -> None:
        self._waiter_cb = None
        self.awaiting = ()
        if target.state is TaskState.COMPLETED:
            value, exc = target.value, None
        else:
            try:
                value, exc = target.outcome(), None
            except Exception as err:
                value, exc = None, err
        target.decref()
        self._step(value, exc)

    def _resume(self) -> None:
        self.pending_event = None
        self._step()


def find_frame_cycle(start: Frame, goal: Frame) -> bool:
    """True if ``goal`` is reachable from ``start`` along awaiting edges."""
    seen: set[int] = set()
    stack = [start]
    while stack:
        f = stack.pop()
        if f is goal:
            return True
        if f.id in seen:
            continue
        seen.add(f.id)
        stack.extend(f.awaiting)
    return False


def frame_graph_is_acyclic(sim: Simulation) -> bool:
    """Check the whole awaiting graph of ``sim`` for cycles (colouring DFS)."""
    colour: dict[int, int] = {}
    for root in sim.frames:
        if colour.get(root.id):
            continue
        stack: list[tuple[Frame, int]] = [(root, 0)]
        while stack:
            f, i = stack.pop()
            if i == 0:
                colour[f.id] = 1
            if i < len(f.awaiting):
                stack.append((f, i + 1))
                nxt = f.awaiting[i]
                c = colour.get(nxt.id, 0)
                if c == 1:
                    return False
                if c == 0:
                    stack.append((nxt, 0))
            else:
                colour[f.id] = 2
    return True


class OperationHandle:
    """Reference to an operation's frame.

    Handles are awaitable.  Awaiting a finished operation returns at once;
    otherwise the awaiting task suspends until the operation terminates.
    """

    __slots__ = ("_frame", "_owning", "_released", "__weakref__")

    def __init__(self, frame: Frame, owning: bool) -> None:
        if frame.freed:
            raise FrameReleasedError(f"{frame!r} was released")
        if owning:
            if frame.owner_issued:
                raise OwnershipError(f"{frame!r} already has an owner")
            frame.owner_issued = True
        frame.retain_count += 1
        self._frame = frame
        self._owning = owning
        self._released = False

    def __repr__(self) -> str:
        tag = "owning" if self._owning else "shared"
        return f"<OperationHandle {tag} {self._frame!r}>"

    @property
    def frame(self) -> Frame:
        if self._released:
            raise FrameReleasedError("handle was released")
        return self._frame

    @property
    def owning(self) -> bool:
        return self._owning

    @property
    def released(self) -> bool:
        return self._released

    @property
    def state(self) -> TaskState:
        return self.frame.state

    @property
    def name(self) -> str:
        return self._frame.name

    def done(self) -> bool:
        return self.frame.state.terminal

    def result(self) -> Any:
        """Take the result; raises the failure, or OperationAborted."""
        if not self._owning:
            raise OwnershipError("only the owning handle may take the result")
        return self.frame.outcome()

    def exception(self) -> BaseException | None:
        f = self.frame
        if f.state is TaskState.ABORTED:
            return OperationAborted(f"{f.name} #{f.id} was aborted")
        return f.error

    def abort(self) -> bool:
        if not self._owning:
            raise OwnershipError("abort requires the owning handle")
        return self.frame.abort()

    def retain(self) -> OperationHandle:
        return OperationHandle(self.frame, owning=False)

    def transfer(self) -> OperationHandle:
        """Move the owner token to a new handle; this one becomes non-owning."""
        if not self._owning:
            raise OwnershipError("only the owning handle can transfer ownership")
        frame = self.frame
        self._owning = False
        frame.owner_issued = False
        return OperationHandle(frame, owning=True)

    def release(self) -> None:
        if self._released:
            raise FrameReleasedError("handle released twice")
        self._released = True
        frame = self._frame
        if self._owning:
            frame.owner_issued = False
        count = frame.retain_count - 1
        if count > 0 and not frame.freed:
            frame.retain_count = count
        else:
            frame.decref()

    def __enter__(self) -> OperationHandle:
        return self

    def __exit__(self, *exc: object) -> None:
        if not self._released:
            self.release()

    def __del__(self) -> None:
        try:
            if not self._released:
                self.release()
        except Exception:
            pass

    def __await__(self):
        if self._released:
            raise FrameReleasedError("handle was released")
        frame = self._frame
        if frame.state.terminal:
            return frame.outcome()
        return (yield (_AWAIT, frame))


@types.coroutine
def yield_now():
    """Suspend the running task; it resumes at the same instant via a zero-delay event."""
    yield (_YIELD,)


class Resolver:
    """Completion side of a leaf operation."""

    __slots__ = ("frame",)

    def __init__(self, frame: Frame) -> None:
        self.frame = frame

    @property
    def pending(self) -> bool:
        return not self.frame.state.terminal

    def resolve(self, value: Any = None) -> bool:
        return self.frame._settle(TaskState.COMPLETED, value=value)

    def reject(self, error: BaseException) -> bool:
        return self.frame._settle(TaskState.FAILED, error=error)


def new_operation(
    sim: Simulation, name: str = "operation", on_abort: Callable[[], None] | None = None
) -> tuple[OperationHandle, Resolver]:
    """Create a suspended leaf operation whose completion is driven externally."""
    frame = Frame(sim, name)
    frame.on_abort = on_abort
    frame._start_leaf()
    handle = OperationHandle(frame, owning=True)
    return handle, Resolver(frame)


def spawn(sim: Simulation, body: Any, *args: Any, name: str | None = None) -> OperationHandle:
    """Start ``body`` and run it up to its first suspension before returning.

    ``body`` is a coroutine object, an async function (called with ``args``),
    or anything with a ``_materialize(sim)`` method such as a chained operation.
    """
    materialize = getattr(body, "_materialize", None)
    if materialize is not None:
        return materialize(sim)
    coro = body(*args) if callable(body) else body
    label = name or getattr(body, "__qualname__", "task")
    if not inspect.iscoroutine(coro):
        raise TypeError(f"spawn needs a coroutine, got {coro!r}")
    frame = Frame(sim, label, coro)
    handle = OperationHandle(frame, owning=True)
    frame._step()
    return handle


def sleep(sim: Simulation, delay: int) -> OperationHandle:
    """An operation completing with ``None`` after ``delay`` ticks."""
    if delay < 0:
        raise ValueError(f"negative sleep {delay}")
    handle, res = new_operation(sim, "sleep")
    frame = res.frame

    def fire() -> None:
        frame.pending_event = None
        res.resolve(None)

    frame.pending_event = sim.schedule(delay, fire, owner=frame)
    return handle


class Mailbox:
    """FIFO of items with awaitable ``get``; getters are served in call order."""

    def __init__(self, sim: Simulation, name: str = "mailbox") -> None:
        self.sim = sim
        self.name = name
        self.items: deque[Any] = deque()
        self._getters: deque[Resolver] = deque()

    def __len__(self) -> int:
        return len(self.items)

    def put(self, item: Any) -> None:
        while self._getters:
            res = self._getters.popleft()
            if res.resolve(item):
                return
        self.items.append(item)

    def get(self) -> OperationHandle:
        if self.items and not self._getters:
            handle, res = new_operation(self.sim, f"{self.name}.get")
            res.resolve(self.items.popleft())
            return handle

        def withdraw() -> None:
            try:
                self._getters.remove(res)
            except ValueError:
                pass

        handle, res = new_operation(self.sim, f"{self.name}.get", on_abort=withdraw)
        self._getters.append(res)
        return handle
