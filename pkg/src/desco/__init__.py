"""Deterministic discrete-event network simulation with suspendable operations."""

from desco.kernel import RunOutcome, SimStats, Simulation, SimulationError
from desco.tasks import (
    OperationAborted,
    OperationHandle,
    TaskState,
    sleep,
    spawn,
    yield_now,
)

__all__ = [
    "OperationAborted",
    "OperationHandle",
    "RunOutcome",
    "SimStats",
    "Simulation",
    "SimulationError",
    "TaskState",
    "sleep",
    "spawn",
    "yield_now",
]
