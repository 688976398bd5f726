import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def synthesis():
    from pvfc.harness import _cached_synthesis
    from pvfc.plant import ElectricalParams

    el = ElectricalParams()
    return _cached_synthesis(el.R, el.L, el.frequency)


ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    """Collected by the terminal summary; a criterion fails if any of its parts fails."""
    prev = ACCEPTANCE_LINES.get(number)
    if prev is not None:
        passed = passed and prev[1]
        detail = prev[2] + "; " + detail
    ACCEPTANCE_LINES[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        title, ok, detail = ACCEPTANCE_LINES[n]
        terminalreporter.write_line(f"criterion {n} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
