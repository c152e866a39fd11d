"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

_ACCEPTANCE: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        detail = dict(report.user_properties).get("detail", "")
        _ACCEPTANCE[name] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda n: int(n.split("_")[2])):
        verdict, detail = _ACCEPTANCE[name]
        number = name.split("_")[2]
        terminalreporter.write_line(f"criterion {number}: {verdict}  {name}  {detail}")
