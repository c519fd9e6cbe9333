import pytest

_CRITERIA = {}


@pytest.fixture
def report_criterion(capsys):
    """Record and print the one-line verdict of an acceptance criterion."""
    def record(number, title, entries):
        ok = all(e.passed for e in entries)
        details = "; ".join(
            f"{e.name}={e.statistic:.4g} ({_bound(e)}{'' if e.passed else ', failed'})" for e in entries)
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number} {title}: {details}"
        _CRITERIA[number] = line
        with capsys.disabled():
            print("\n" + line)
        return ok, line
    return record


def _bound(e):
    if e.kind == "interval":
        return f"need in [{e.lower:g}, {e.critical:g}]"
    return ("need <= " if e.kind == "upper" else "need >= ") + f"{e.critical:g}"


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
