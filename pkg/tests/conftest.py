from __future__ import annotations

from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
import pytest

from arbr_drqn.data import GroupBar, MinuteBar

FIXTURES = Path(__file__).parent / "fixtures"


def minute(i: int, o: float, h: float, lo: float, c: float, v: float = 100.0, m: float | None = None) -> MinuteBar:
    ts = datetime(2020, 1, 2, 9, 31) + timedelta(minutes=i)
    return MinuteBar(ts, o, h, lo, c, v, v * c if m is None else m)


def group(i: int, o: float, h: float, lo: float, c: float, v: float = 1000.0) -> GroupBar:
    start = datetime(2020, 1, 2, 9, 31) + timedelta(minutes=30 * i)
    return GroupBar(start, start + timedelta(minutes=29), o, h, lo, c, v, v * c, 30)


def random_groups(rng: np.random.Generator, n: int, base: float = 100.0) -> list[GroupBar]:
    """Valid OHLC groups from a multiplicative random walk."""
    out = []
    c = base
    for i in range(n):
        o = c * (1 + rng.normal(0, 0.003))
        c = o * (1 + rng.normal(0, 0.01))
        h = max(o, c) * (1 + abs(rng.normal(0, 0.004))) + 1e-6
        lo = min(o, c) * (1 - abs(rng.normal(0, 0.004))) - 1e-6
        out.append(group(i, o, h, lo, c, float(rng.integers(500, 5000))))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria append "criterion N: PASS|FAIL ..." lines here
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
