import numpy as np
import pytest


def random_distributions(rng, m, t, concentration=1.0):
    return rng.dirichlet(np.full(t, concentration), size=m)


@pytest.fixture
def rng():
    return np.random.default_rng(20240915)


_ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line; assert only when ``fatal``."""

    def record(label, ok, detail="", fatal=True):
        status = "PASS" if ok else ("FAIL" if fatal else "FAIL (non-fatal)")
        _ACCEPTANCE.append(f"[{status}] {label}: {detail}")
        print(_ACCEPTANCE[-1])
        if fatal:
            assert ok, f"{label}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
