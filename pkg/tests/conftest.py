from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from desco import Simulation
from desco.trace import Tracer

settings.register_profile(
    "desco",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
    print_blob=True,
)
settings.load_profile("desco")


@pytest.fixture
def sim() -> Simulation:
    return Simulation()


@pytest.fixture
def traced() -> tuple[Simulation, Tracer]:
    tracer = Tracer()
    return Simulation(tracer=tracer), tracer


# -- acceptance reporting -----------------------------------------------------

ACCEPTANCE_LINES = pytest.StashKey[dict]()


class AcceptanceRecorder:
    """Context manager that records one pass/fail line per acceptance criterion."""

    def __init__(self, lines: dict[int, str], number: int, title: str) -> None:
        self.lines = lines
        self.number = number
        self.title = title
        self.details: list[str] = []

    def note(self, text: str) -> None:
        self.details.append(text)

    def __enter__(self) -> AcceptanceRecorder:
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        verdict = "PASS" if exc_type is None else "FAIL"
        extra = f" ({'; '.join(self.details)})" if self.details else ""
        reason = "" if exc is None else f": {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        line = f"criterion {self.number:>2} {verdict} {self.title}{extra}{reason}"
        self.lines[self.number] = line
        print(line)
        return False


@pytest.fixture
def criterion(request):
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, {})

    def make(number: int, title: str) -> AcceptanceRecorder:
        return AcceptanceRecorder(lines, number, title)

    return make


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(lines):
        terminalreporter.write_line(lines[number])
