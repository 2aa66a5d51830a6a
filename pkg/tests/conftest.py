import time
from contextlib import contextmanager

import pytest

_RESULTS = {}


class Criterion:
    """Collects the measured values of one acceptance criterion."""

    def __init__(self, number: int, title: str, budget_s=None):
        self.number = number
        self.title = title
        self.budget_s = budget_s
        self.notes = []

    def note(self, text: str) -> None:
        self.notes.append(text)


@contextmanager
def criterion(number: int, title: str, budget_s=None):
    c = Criterion(number, title, budget_s)
    t0 = time.perf_counter()
    ok = False
    try:
        yield c
        elapsed = time.perf_counter() - t0
        if budget_s is not None:
            assert elapsed < budget_s, f"took {elapsed:.1f} s, budget {budget_s} s"
        ok = True
    finally:
        elapsed = time.perf_counter() - t0
        detail = "; ".join(c.notes + [f"{elapsed:.1f} s"])
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        _RESULTS[number] = line
        print(line)


@pytest.fixture
def acceptance():
    return criterion


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        terminalreporter.write_line(_RESULTS[n])
