from collections import defaultdict

import pytest

CRITERIA = {
    1: "collaborative VAR-LASSO matches centralized and reference solver",
    2: "curious-node reconstruction and data-flow audit",
    3: "virtual battery LP agreement and surrogate accuracy ordering",
    4: "SVDD outlier bound and radius oracle",
    5: "forecast improvement, calibration and monotone training loss",
    6: "scheduler exactness and properties",
    7: "metric identities",
    8: "byte-identical CLI outputs",
}

_outcomes = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        # xfail counts against the criterion; only a clean pass is a pass
        ok = report.passed and not hasattr(report, "wasxfail")
        _outcomes[mark.args[0]].append((item.name, ok))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        runs = _outcomes.get(n)
        if not runs:
            continue
        status = "PASS" if all(ok for _, ok in runs) else "FAIL"
        failed = [name for name, ok in runs if not ok]
        extra = f"  (not met: {', '.join(failed)})" if failed else ""
        terminalreporter.write_line(f"criterion {n}: {status}  {title}{extra}")
