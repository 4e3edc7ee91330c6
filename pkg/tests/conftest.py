"""Collects outcomes of tests marked ``criterion`` and prints one line per criterion."""

import pytest

_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes.setdefault(marker.args[0], []).append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_outcomes, key=lambda s: int(s.split()[0])):
        status = "PASS" if all(_outcomes[label]) else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {label}")
