import time

import numpy as np
import pytest

_RESULTS = []


class Criterion:
    """Records one pass/fail line per acceptance criterion."""

    def __init__(self, number, title):
        self.number, self.title = number, title
        self.start = time.perf_counter()
        self.detail = ""

    def check(self, ok, detail="", budget=None):
        elapsed = time.perf_counter() - self.start
        if budget is not None and elapsed >= budget:
            detail = f"{detail}; runtime {elapsed:.1f}s over the {budget:.0f}s budget"
            ok = False
        status = "PASS" if ok else "FAIL"
        line = f"[{status}] criterion {self.number}: {self.title}: {detail} ({elapsed:.2f}s)"
        _RESULTS.append(line)
        print(line)
        assert ok, line

    def note(self, status, detail):
        line = f"[{status}] criterion {self.number}: {self.title}: {detail}"
        _RESULTS.append(line)
        print(line)


@pytest.fixture
def criterion():
    return Criterion


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
