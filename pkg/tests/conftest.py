"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""

_criteria: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    detail = "; ".join(f"{k}={v}" for k, v in report.user_properties)
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria[name] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda n: int(n.split("_")[2])):
        status, detail = _criteria[name]
        terminalreporter.write_line(f"{status}  {name}" + (f"  [{detail}]" if detail else ""))
