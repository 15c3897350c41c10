import os
import re
import sys

sys.path.insert(0, os.path.dirname(__file__))

_criteria = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_c(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    key = int(m.group(1))
    name = m.group(2).replace("_", " ")
    _, status, secs = _criteria.get(key, (name, "PASS", 0.0))
    if report.failed:
        status = "FAIL"
    elif report.skipped and status == "PASS":
        status = "SKIP"
    _criteria[key] = (name, status, secs + report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria):
        name, status, secs = _criteria[key]
        terminalreporter.write_line(f"criterion {key:2d}  {status}  {name}  ({secs:.1f} s)")
