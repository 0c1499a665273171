"""Shared test configuration.

Hypothesis runs derandomized so the suite is reproducible, and a terminal
summary hook prints one CRITERION n PASS/FAIL line for every acceptance
test (named test_criterion_NN_*) after the run.
"""

import re

from hypothesis import HealthCheck, settings

settings.register_profile(
    "ci",
    derandomize=True,
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow,
                           HealthCheck.filter_too_much,
                           HealthCheck.function_scoped_fixture],
)
settings.load_profile("ci")

_CRITERION = re.compile(r"test_criterion_0*(\d+)_")


def pytest_terminal_summary(terminalreporter):
    verdicts = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            match = _CRITERION.search(getattr(report, "nodeid", "") or "")
            if match is None:
                continue
            number = int(match.group(1))
            ok = status == "passed"
            verdicts[number] = verdicts.get(number, True) and ok
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(verdicts):
        word = "PASS" if verdicts[number] else "FAIL"
        terminalreporter.write_line(f"CRITERION {number} {word}")
