import pytest


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(label): acceptance criterion checked by this test"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    terminal = item.config.pluginmanager.get_plugin("terminalreporter")
    if terminal is not None:
        status = "PASS" if report.passed else "FAIL"
        terminal.write_line(f"[{status}] criterion: {marker.args[0]}")
