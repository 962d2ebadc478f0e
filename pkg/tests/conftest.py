import re

ACCEPTANCE = "test_acceptance.py"
_results = {}


def pytest_runtest_logreport(report):
    if ACCEPTANCE not in report.nodeid:
        return
    match = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not match:
        return
    number = int(match.group(1))
    if report.when == "call" or (report.when == "setup" and report.failed):
        detail = dict(report.user_properties).get("detail", "")
        _results[number] = ("PASS" if report.passed else "FAIL", report.duration, detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        status, seconds, detail = _results[number]
        terminalreporter.write_line(f"criterion {number}: {status} ({seconds:.1f}s) {detail}".rstrip())
