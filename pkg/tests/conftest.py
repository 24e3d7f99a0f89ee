import re

import pytest

_LINES: dict[str, str] = {}


def _order(key: str):
    m = re.match(r"(\d+)(.*)", key)
    return int(m.group(1)), m.group(2)


@pytest.fixture
def criterion():
    """Record the verdict line for one acceptance criterion (keys like "1" or "6a")."""

    def record(key, passed: bool, detail: str) -> bool:
        key = str(key)
        _LINES[key] = f"criterion {key:<3} {'PASS' if passed else 'FAIL'}  {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_LINES, key=_order):
        terminalreporter.write_line(_LINES[key])
