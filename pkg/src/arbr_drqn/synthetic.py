"""Seeded synthetic minute data standing in for the proprietary index series.

The calendar mimics an A-share session: weekdays, 09:31-11:30 and
13:01-15:00, i.e. 240 minutes or eight 30-minute groups per day.
"""

from __future__ import annotations

from datetime import date, datetime, timedelta

import numpy as np
from scipy.signal import lfilter

from .data import MinuteBar

# The nine sector indices the experiments are laid out for: (name, code).
INDEX_TABLE = (
    ("Materials", "399929"),
    ("Telecom", "399936"),
    ("Utilities", "399937"),
    ("Industrials", "399930"),
    ("Financials", "399934"),
    ("Energy", "399928"),
    ("Cons", "399932"),
    ("IT", "399935"),
    ("Health Care", "399933"),
)

MINUTES_PER_DAY = 240


def session_minutes(n_minutes: int, start: date = date(2016, 1, 4)) -> list[datetime]:
    out: list[datetime] = []
    day = start
    while len(out) < n_minutes:
        if day.weekday() < 5:
            for session_start in (datetime(day.year, day.month, day.day, 9, 31),
                                  datetime(day.year, day.month, day.day, 13, 1)):
                for m in range(120):
                    out.append(session_start + timedelta(minutes=m))
        day += timedelta(days=1)
    return out[:n_minutes]


def _bars_from_path(closes: np.ndarray, open0: float, wick: np.ndarray, volume: np.ndarray,
                    start: date) -> list[MinuteBar]:
    stamps = session_minutes(len(closes), start)
    opens = np.concatenate([[open0], closes[:-1]])
    highs = np.maximum(opens, closes) * (1.0 + wick)
    lows = np.minimum(opens, closes) * (1.0 - wick)
    money = volume * (opens + closes) / 2.0
    return [
        MinuteBar(ts, float(o), float(h), float(lo), float(c), float(v), float(m))
        for ts, o, h, lo, c, v, m in zip(stamps, opens, highs, lows, closes, volume, money)
    ]


def sawtooth_minutes(
    n_groups: int,
    period: int = 20,
    amplitude: float = 0.05,
    base: float = 100.0,
    group_len: int = 30,
    wick: float = 2e-4,
    start: date = date(2016, 1, 4),
) -> list[MinuteBar]:
    """Deterministic triangle wave: group closes run linearly between
    ``base*(1-amplitude)`` (troughs at multiples of ``period``) and
    ``base*(1+amplitude)``; minutes interpolate between group closes."""
    k = np.arange(n_groups + 1)
    phase = (k % period) / period
    tri = np.where(phase < 0.5, -1.0 + 4.0 * phase, 3.0 - 4.0 * phase)
    anchors = base * (1.0 + amplitude * tri)
    frac = np.arange(1, group_len + 1) / group_len
    closes = (anchors[:-1, None] + (anchors[1:] - anchors[:-1])[:, None] * frac).ravel()
    n = len(closes)
    volume = np.round(1000.0 * (1.0 + 0.2 * np.sin(2.0 * np.pi * np.arange(n) / 97.0)))
    return _bars_from_path(closes, anchors[0], np.full(n, wick), volume, start)


def regime_walk_minutes(
    n_groups: int,
    seed: int,
    base: float = 1000.0,
    group_len: int = 30,
    sigma: float = 8e-4,
    drifts: tuple[float, ...] = (4e-5, 0.0, -4e-5),
    switch_prob: float = 0.02,
    start: date = date(2016, 1, 4),
) -> list[MinuteBar]:
    """Geometric random walk whose drift follows a Markov regime chain.

    The regime may switch at each group boundary with probability
    ``switch_prob``; the new regime is drawn uniformly from the others.
    """
    rng = np.random.default_rng(seed)
    n = n_groups * group_len
    regime = int(rng.integers(len(drifts)))
    drift = np.empty(n)
    for g in range(n_groups):
        if g and rng.random() < switch_prob:
            regime = int((regime + rng.integers(1, len(drifts))) % len(drifts))
        drift[g * group_len:(g + 1) * group_len] = drifts[regime]
    # mild mean-reverting intraday component so sentiment indicators carry signal
    eps = rng.standard_normal(n)
    shock = lfilter([1.0], [1.0, 0.05], eps)
    logp = np.log(base) + np.cumsum(drift + sigma * shock)
    closes = np.round(np.exp(logp), 4)
    wick = np.abs(rng.normal(0.0, sigma / 2, size=n))
    volume = np.round(rng.lognormal(mean=9.0, sigma=0.4, size=n))
    return _bars_from_path(closes, round(base, 4), wick, volume, start)
