"""Collects the acceptance verdicts and prints them after the test run."""

import pytest

_VERDICTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """``verdict(k, ok, detail)`` records criterion ``k`` and asserts ``ok``."""

    def record(k: int, ok: bool, detail: str):
        _VERDICTS[k] = (bool(ok), detail)
        assert ok, f"criterion {k}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_VERDICTS):
        ok, detail = _VERDICTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
