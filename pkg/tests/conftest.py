"""Print one PASS/FAIL line per acceptance criterion after the run."""

import re

_RESULTS = {}
_PATTERN = re.compile(r"test_acceptance\.py::test_criterion_(\d+)([a-z]?)_(\w+)")


def pytest_runtest_logreport(report):
    m = _PATTERN.search(report.nodeid)
    if m is None:
        return
    key = (int(m.group(1)), m.group(2), m.group(3))
    if report.when == "call":
        _RESULTS[key] = report.outcome
    elif report.outcome != "passed":        # setup error or skip
        _RESULTS.setdefault(key, report.outcome)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num, sub, label in sorted(_RESULTS):
        outcome = _RESULTS[(num, sub, label)]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(
            f"criterion {num}{sub} {verdict}: {label.replace('_', ' ')}")
