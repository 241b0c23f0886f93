"""Virtual-time event queue and scheduler.

Events fire in strict ``(fire_at, id)`` order.  Ids are issued in schedule
order, so events that share an instant run first-scheduled first.  Time is an
integer tick count; one tick is one nanosecond unless a scenario says
otherwise.
"""

from __future__ import annotations

import enum
import heapq
from collections.abc import Callable
from dataclasses import dataclass
from typing import Any

__all__ = [
    "EventId",
    "RunOutcome",
    "ScheduledEvent",
    "SimStats",
    "SimulationError",
    "Simulation",
    "TICKS_PER_SECOND",
]

EventId = int
TICKS_PER_SECOND = 1_000_000_000


class SimulationError(RuntimeError):
    """An event action raised; carries the instant and event id."""

    def __init__(self, time: int, event_id: EventId, cause: BaseException) -> None:
        super().__init__(f"event {event_id} at t={time} raised {cause!r}")
        self.time = time
        self.event_id = event_id
        self.cause = cause


class RunOutcome(enum.Enum):
    COMPLETED = "completed"
    BUDGET_EXHAUSTED = "budget-exhausted"


@dataclass(frozen=True)
class SimStats:
    events_executed: int
    final_time: int
    events_cancelled: int
    outcome: RunOutcome = RunOutcome.COMPLETED

    @property
    def budget_exhausted(self) -> bool:
        return self.outcome is RunOutcome.BUDGET_EXHAUSTED


class ScheduledEvent:
    __slots__ = ("fire_at", "id", "action", "live", "owner")

    def __init__(self, fire_at: int, id: EventId, action: Callable[[], Any], owner: Any = None) -> None:
        self.fire_at = fire_at
        self.id = id
        self.action = action
        self.live = True
        # frame (or anything) the event works for; used by leak checks
        self.owner = owner

    def __lt__(self, other: ScheduledEvent) -> bool:
        return (self.fire_at, self.id) < (other.fire_at, other.id)

    def __repr__(self) -> str:
        state = "live" if self.live else "dead"
        return f"<ScheduledEvent #{self.id} t={self.fire_at} {state}>"


class Simulation:
    """A single-threaded discrete-event simulation instance.

    Besides the event queue, the instance is the home of every task frame it
    runs (see :mod:`desco.tasks`) and of the optional trace sink.
    """

    def __init__(self, ticks_per_second: int = TICKS_PER_SECOND, tracer: Any = None) -> None:
        if ticks_per_second <= 0:
            raise ValueError("ticks_per_second must be positive")
        self.ticks_per_second = ticks_per_second
        # set the tracer here; task-state observation is decided from it once
        self.tracer = tracer
        self._frame_monitor: Any = None
        self._refresh_observers()
        self._now = 0
        self._next_id = 0
        self._heap: list[ScheduledEvent] = []
        self._pending: dict[EventId, ScheduledEvent] = {}
        self._executed = 0
        self._cancelled = 0
        self._current_event: ScheduledEvent | None = None
        # task-core bookkeeping, owned by desco.tasks: frames still running or
        # suspended, plus a count of finished frames some handle still holds
        self.frames: set[Any] = set()
        self.finished_unreleased = 0
        self.current_task: Any = None
        self._frame_seq = 0

    # -- observers -----------------------------------------------------

    @property
    def frame_monitor(self) -> Any:
        """Optional recorder of frame transitions and releases (see ``desco.tasks.FrameMonitor``)."""
        return self._frame_monitor

    @frame_monitor.setter
    def frame_monitor(self, value: Any) -> None:
        self._frame_monitor = value
        self._refresh_observers()

    def _refresh_observers(self) -> None:
        # lets task code skip per-transition hooks when nobody listens
        tr = self.tracer
        wants_tasks = tr is not None and getattr(tr, "wants", lambda k: False)("task-state")
        self.observe_tasks = self._frame_monitor is not None or wants_tasks

    # -- clock ---------------------------------------------------------

    def now(self) -> int:
        return self._now

    @property
    def events_scheduled(self) -> int:
        return self._next_id

    @property
    def events_executed(self) -> int:
        return self._executed

    @property
    def events_cancelled(self) -> int:
        return self._cancelled

    @property
    def current_event(self) -> ScheduledEvent | None:
        return self._current_event

    def next_frame_id(self) -> int:
        fid = self._frame_seq
        self._frame_seq += 1
        return fid

    # -- task conveniences (see desco.tasks) ----------------------------

    def spawn(self, body: Any, *args: Any, name: str | None = None) -> Any:
        from desco.tasks import spawn

        return spawn(self, body, *args, name=name)

    def sleep(self, delay: int) -> Any:
        from desco.tasks import sleep

        return sleep(self, delay)

    def live_frames(self) -> int:
        """Frames not yet released; run ``gc.collect()`` first for an exact count."""
        return len(self.frames) + self.finished_unreleased

    # -- queue ---------------------------------------------------------

    def schedule(self, delay: int, action: Callable[[], Any], owner: Any = None) -> EventId:
        if not isinstance(delay, int) or isinstance(delay, bool):
            raise TypeError(f"delay must be an integer tick count, got {delay!r}")
        if delay < 0:
            raise ValueError(f"negative delay {delay}: events cannot be scheduled in the past")
        eid = self._next_id
        self._next_id += 1
        ev = ScheduledEvent(self._now + delay, eid, action, owner)
        heapq.heappush(self._heap, ev)
        self._pending[eid] = ev
        if self.tracer is not None:
            self.tracer.kernel("schedule", self._now, eid, fire_at=ev.fire_at)
        return eid

    def cancel(self, event_id: EventId) -> bool:
        ev = self._pending.pop(event_id, None)
        if ev is None:
            return False
        ev.live = False
        self._cancelled += 1
        if self.tracer is not None:
            self.tracer.kernel("cancel", self._now, event_id, fire_at=ev.fire_at)
        return True

    def pending(self) -> list[ScheduledEvent]:
        """Live events in firing order."""
        return sorted(self._pending.values())

    def live_events(self, owner: Any) -> list[ScheduledEvent]:
        return [ev for ev in self.pending() if ev.owner is owner]

    def peek(self) -> int | None:
        self._drop_dead()
        return self._heap[0].fire_at if self._heap else None

    def _drop_dead(self) -> None:
        heap = self._heap
        while heap and not heap[0].live:
            heapq.heappop(heap)

    def _fire(self, ev: ScheduledEvent) -> None:
        del self._pending[ev.id]
        ev.live = False
        self._now = ev.fire_at
        self._executed += 1
        if self.tracer is not None:
            self.tracer.kernel("execute", ev.fire_at, ev.id)
        self._current_event = ev
        try:
            ev.action()
        except Exception as exc:
            raise SimulationError(ev.fire_at, ev.id, exc) from exc
        finally:
            self._current_event = None

    def _stats(self, outcome: RunOutcome = RunOutcome.COMPLETED) -> SimStats:
        return SimStats(self._executed, self._now, self._cancelled, outcome)

    # -- run loops -----------------------------------------------------

    def run_until(self, limit: int, max_events: int | None = None) -> SimStats:
        """Execute every live event with ``fire_at <= limit``; the clock ends at ``limit``.

        ``max_events`` bounds the events executed by this call.  When it runs
        out before the queue drains up to ``limit`` the clock stays at the last
        executed event and the outcome is ``BUDGET_EXHAUSTED``.
        """
        if limit < self._now:
            raise ValueError(f"limit {limit} is before the current time {self._now}")
        budget = max_events
        heap = self._heap
        while True:
            self._drop_dead()
            if not heap or heap[0].fire_at > limit:
                break
            if budget is not None:
                if budget == 0:
                    return self._stats(RunOutcome.BUDGET_EXHAUSTED)
                budget -= 1
            self._fire(heapq.heappop(heap))
        self._now = limit
        return self._stats()

    def run_to_completion(self, max_events: int = 10_000_000) -> SimStats:
        """Run until the queue is empty or ``max_events`` have executed in this call."""
        if max_events <= 0:
            raise ValueError("max_events must be positive")
        heap = self._heap
        budget = max_events
        while True:
            self._drop_dead()
            if not heap:
                return self._stats()
            if budget == 0:
                return self._stats(RunOutcome.BUDGET_EXHAUSTED)
            budget -= 1
            self._fire(heapq.heappop(heap))

    def step(self) -> bool:
        """Execute the next live event; False when the queue is empty."""
        self._drop_dead()
        if not self._heap:
            return False
        self._fire(heapq.heappop(self._heap))
        return True
