import re

_RESULTS = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2))
    if report.when == "call" or report.outcome != "passed":
        prev = _RESULTS.get(key)
        if prev != "FAIL":
            _RESULTS[key] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for (n, name), verdict in sorted(_RESULTS.items()):
        terminalreporter.write_line(f"criterion {n:2d} {name.replace('_', ' ')}: {verdict}")
