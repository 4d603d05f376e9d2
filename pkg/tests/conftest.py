"""Prints one PASS/FAIL line per acceptance criterion at the end of the run.

Acceptance tests attach ``criterion`` and ``detail`` through ``record_property``.
"""

_results: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "PASS" if report.outcome == "passed" else "FAIL"
        _results[props["criterion"]] = (status, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_results, key=lambda s: int(s.split()[0])):
        status, detail = _results[name]
        terminalreporter.write_line(f"{status}  {name}: {detail}")
