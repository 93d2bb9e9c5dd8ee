import pytest

_CRITERIA = {}


def _line(number, ok, detail):
    return f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"


@pytest.fixture
def criterion():
    """Record ``(number, ok, detail)``; repeated numbers merge into one line."""

    def record(number: int, ok: bool, detail: str) -> bool:
        prev_ok, prev = _CRITERIA.get(number, (True, ""))
        ok_all = prev_ok and ok
        detail_all = f"{prev}; {detail}" if prev else detail
        _CRITERIA[number] = (ok_all, detail_all)
        print(_line(number, ok, detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_line(k, *_CRITERIA[k]))
