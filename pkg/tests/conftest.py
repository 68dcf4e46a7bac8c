import os
import sys

from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


_criteria: list[tuple[str, str, float, str]] = []


def pytest_runtest_makereport(item, call):
    number = getattr(item.function, "criterion", None)
    if number is None or call.when != "call":
        return
    title = (item.function.__doc__ or item.name).strip().splitlines()[0]
    outcome = "PASS" if call.excinfo is None else "FAIL"
    _criteria.append((number, outcome, call.duration, title))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number, outcome, duration, title in sorted(_criteria, key=lambda c: int(c[0])):
        terminalreporter.write_line(f"criterion {number:>2}: {outcome} ({duration:6.1f}s) {title}")
