"""ARBR sentiment pair and the technical-indicator feature store.

Series functions (``sma``, ``ema``, ...) take plain price sequences and return
numpy arrays. ``sma``-style functions return only the defined positions, so
``len(sma(p, n)) == len(p) - n + 1``; :func:`indicator_columns` pads the
undefined head with NaN so every column lines up with the group index.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from datetime import datetime
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import GroupBar, zscore
from .errors import DegenerateError, DomainError, InsufficientHistoryError

logger = logging.getLogger(__name__)

DEFAULT_COLUMNS = (
    "open", "close", "high", "low", "volume", "money",
    "ma5", "ma10", "ma20", "ema12", "ema26",
    "macd_dif", "macd_dea", "macd_hist",
    "boll_mid", "boll_upper", "boll_lower",
    "bias6", "bias12", "bias24",
    "vol10", "vol20",
    "ar", "br",
)


@dataclass(frozen=True)
class IndicatorWindow:
    """The most recent N bars plus the close just before the first of them.

    ``prior_close`` is only needed by BR.
    """

    bars: Sequence[GroupBar]
    prior_close: float | None = None

    @property
    def n(self) -> int:
        return len(self.bars)


@dataclass(frozen=True)
class ArBrValue:
    ar: float
    br: float


def ar(window: IndicatorWindow) -> float:
    """Popularity: 100 * sum(high - open) / sum(open - low)."""
    if window.n < 1:
        raise InsufficientHistoryError("AR needs at least one bar")
    num = sum(b.high - b.open for b in window.bars)
    den = sum(b.open - b.low for b in window.bars)
    if den == 0:
        raise DegenerateError("AR denominator is zero (every open equals its low)")
    return 100.0 * num / den


def br(window: IndicatorWindow) -> float:
    """Willingness: 100 * sum(high - prev_close) / sum(prev_close - low).

    Negative summands are kept, not clamped.
    """
    if window.n < 1:
        raise InsufficientHistoryError("BR needs at least one bar")
    if window.prior_close is None:
        raise InsufficientHistoryError("BR needs the close preceding the window")
    prev = [window.prior_close] + [b.close for b in window.bars[:-1]]
    num = sum(b.high - p for b, p in zip(window.bars, prev))
    den = sum(p - b.low for b, p in zip(window.bars, prev))
    if den == 0:
        raise DegenerateError("BR denominator is zero")
    return 100.0 * num / den


def arbr(window: IndicatorWindow) -> ArBrValue:
    return ArBrValue(ar(window), br(window))


def _as_array(prices) -> np.ndarray:
    return np.asarray(prices, dtype=float)


def sma(prices, n: int) -> np.ndarray:
    x = _as_array(prices)
    if n < 1:
        raise ValueError("period must be >= 1")
    if n > len(x):
        raise InsufficientHistoryError(f"sma({n}) needs {n} values, got {len(x)}")
    return sliding_window_view(x, n).mean(axis=1)


def volume_ma(volumes, n: int) -> np.ndarray:
    return sma(volumes, n)


def ema(prices, n: int) -> np.ndarray:
    """Recursive smoothing with multiplier 2/(n+1), seeded with the first price."""
    x = _as_array(prices)
    if n < 1:
        raise ValueError("period must be >= 1")
    out = np.empty_like(x)
    if x.size == 0:
        return out
    k = 2.0 / (n + 1)
    out[0] = x[0]
    for i in range(1, len(x)):
        out[i] = out[i - 1] + k * (x[i] - out[i - 1])
    return out


def macd(prices, fast: int = 12, slow: int = 26, signal: int = 9):
    """Returns ``(dif, dea, hist)`` with ``hist = 2 * (dif - dea)``."""
    x = _as_array(prices)
    dif = ema(x, fast) - ema(x, slow)
    dea = ema(dif, signal)
    return dif, dea, 2.0 * (dif - dea)


def bollinger(prices, n: int = 20, k: float = 2.0):
    """Returns ``(mid, upper, lower)`` over the defined positions; population std."""
    x = _as_array(prices)
    if n < 2:
        raise ValueError("bollinger period must be >= 2")
    if n > len(x):
        raise InsufficientHistoryError(f"bollinger({n}) needs {n} values, got {len(x)}")
    win = sliding_window_view(x, n)
    mid = win.mean(axis=1)
    std = win.std(axis=1)
    return mid, mid + k * std, mid - k * std


def bias(prices, n: int) -> np.ndarray:
    """Percent deviation of price from its n-period SMA."""
    x = _as_array(prices)
    m = sma(x, n)
    if np.any(m == 0):
        raise DomainError("bias undefined where the moving average is zero")
    return 100.0 * (x[n - 1:] - m) / m


def _pad(values: np.ndarray, total: int) -> np.ndarray:
    out = np.full(total, np.nan)
    if len(values):
        out[total - len(values):] = values
    return out


def ar_series(opens, highs, lows, n: int) -> np.ndarray:
    """Rolling AR aligned to the input index (NaN before ``n - 1``)."""
    o, h, lo = _as_array(opens), _as_array(highs), _as_array(lows)
    out = np.full(len(o), np.nan)
    if len(o) < n:
        return out
    num = sliding_window_view(h - o, n).sum(axis=1)
    den = sliding_window_view(o - lo, n).sum(axis=1)
    if np.any(den == 0):
        t = int(np.argmax(den == 0)) + n - 1
        raise DegenerateError(f"AR denominator is zero at index {t}")
    out[n - 1:] = 100.0 * num / den
    return out


def br_series(highs, lows, closes, n: int) -> np.ndarray:
    """Rolling BR aligned to the input index (NaN before ``n``)."""
    h, lo, c = _as_array(highs), _as_array(lows), _as_array(closes)
    out = np.full(len(h), np.nan)
    if len(h) < n + 1:
        return out
    prev = c[:-1]
    num = sliding_window_view(h[1:] - prev, n).sum(axis=1)
    den = sliding_window_view(prev - lo[1:], n).sum(axis=1)
    if np.any(den == 0):
        t = int(np.argmax(den == 0)) + n
        raise DegenerateError(f"BR denominator is zero at index {t}")
    out[n:] = 100.0 * num / den
    return out


def _daily_arbr(groups: Sequence[GroupBar], n: int) -> tuple[np.ndarray, np.ndarray]:
    """AR/BR over calendar days, where the current day is built only from groups up to t."""
    T = len(groups)
    ar_out = np.full(T, np.nan)
    br_out = np.full(T, np.nan)
    days: list[list[float]] = []  # completed days: [open, high, low, close]
    cur: list[float] | None = None
    cur_date = None
    for t, g in enumerate(groups):
        d = g.start_ts.date()
        if cur is not None and d != cur_date:
            days.append(cur)
            cur = None
        if cur is None:
            cur = [g.open, g.high, g.low, g.close]
            cur_date = d
        else:
            cur = [cur[0], max(cur[1], g.high), min(cur[2], g.low), g.close]
        seq = days[-n:] + [cur] if n > 1 else [cur]
        seq = seq[-n:]
        if len(seq) == n:
            a = np.array(seq)
            den = np.sum(a[:, 0] - a[:, 2])
            if den == 0:
                raise DegenerateError(f"daily AR denominator is zero at index {t}")
            ar_out[t] = 100.0 * np.sum(a[:, 1] - a[:, 0]) / den
        prior = days[-(n + 1):] + [cur]
        if len(prior) >= n + 1:
            a = np.array(prior[-(n + 1):])
            prev = a[:-1, 3]
            den = np.sum(prev - a[1:, 2])
            if den == 0:
                raise DegenerateError(f"daily BR denominator is zero at index {t}")
            br_out[t] = 100.0 * np.sum(a[1:, 1] - prev) / den
    return ar_out, br_out


@dataclass(frozen=True)
class IndicatorConfig:
    """Periods for the feature store. Column names like ``ma30`` or ``bias9``
    carry their own period; the fields here cover the fixed-name columns."""

    columns: tuple[str, ...] = DEFAULT_COLUMNS
    macd: tuple[int, int, int] = (12, 26, 9)
    boll: tuple[int, float] = (20, 2.0)
    arbr_n: int = 26
    arbr_basis: str = "group"  # "group" or "day"

    def __post_init__(self):
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("duplicate feature column names")
        if self.arbr_basis not in ("group", "day"):
            raise ValueError("arbr_basis must be 'group' or 'day'")
        if self.arbr_n < 1:
            raise ValueError("arbr_n must be >= 1")


_PERIODIC = re.compile(r"^(ma|ema|bias|vol)(\d+)$")


def indicator_columns(groups: Sequence[GroupBar], config: IndicatorConfig | None = None) -> dict[str, np.ndarray]:
    """Every configured column as an array aligned to ``groups`` (NaN during warm-up).

    Value at index t only uses groups[0..t].
    """
    cfg = config or IndicatorConfig()
    T = len(groups)
    o = np.array([g.open for g in groups], dtype=float)
    h = np.array([g.high for g in groups], dtype=float)
    lo = np.array([g.low for g in groups], dtype=float)
    c = np.array([g.close for g in groups], dtype=float)
    v = np.array([g.volume for g in groups], dtype=float)
    m = np.array([g.money for g in groups], dtype=float)
    base = {"open": o, "close": c, "high": h, "low": lo, "volume": v, "money": m}
    cache: dict[str, np.ndarray] = {}

    def fits(n):
        return n <= T

    def get(name: str) -> np.ndarray:
        if name in cache:
            return cache[name]
        if name in base:
            out = base[name]
        elif name.startswith("macd_"):
            dif, dea, hist = macd(c, *cfg.macd)
            cache.update(macd_dif=dif, macd_dea=dea, macd_hist=hist)
            out = cache[name]
        elif name.startswith("boll_"):
            n, k = cfg.boll
            if fits(n):
                mid, up, low = bollinger(c, n, k)
                cache.update(boll_mid=_pad(mid, T), boll_upper=_pad(up, T), boll_lower=_pad(low, T))
            else:
                cache.update(boll_mid=np.full(T, np.nan), boll_upper=np.full(T, np.nan),
                             boll_lower=np.full(T, np.nan))
            out = cache[name]
        elif name in ("ar", "br"):
            if cfg.arbr_basis == "day":
                a, b = _daily_arbr(groups, cfg.arbr_n)
            else:
                a = ar_series(o, h, lo, cfg.arbr_n)
                b = br_series(h, lo, c, cfg.arbr_n)
            cache.update(ar=a, br=b)
            out = cache[name]
        else:
            mt = _PERIODIC.match(name)
            if not mt:
                raise KeyError(f"unknown indicator column {name!r}")
            kind, n = mt.group(1), int(mt.group(2))
            if kind == "ema":
                out = ema(c, n)
            elif not fits(n):
                out = np.full(T, np.nan)
            elif kind == "ma":
                out = _pad(sma(c, n), T)
            elif kind == "vol":
                out = _pad(volume_ma(v, n), T)
            else:
                out = _pad(bias(c, n), T)
        cache[name] = out
        return out

    return {name: get(name) for name in cfg.columns}


def warmup_length(columns: dict[str, np.ndarray]) -> int:
    """First index at which every column is defined (len if never)."""
    if not columns:
        return 0
    stacked = np.column_stack(list(columns.values()))
    ok = np.all(np.isfinite(stacked), axis=1)
    return int(np.argmax(ok)) if ok.any() else stacked.shape[0]


@dataclass(frozen=True)
class ColumnScaler:
    """Per-column z-score parameters (population std)."""

    columns: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, columns: Sequence[str], raw: np.ndarray, strict: bool = True) -> "ColumnScaler":
        """With ``strict=False`` a (numerically) constant column gets scale 1,
        so it maps to zeros instead of raising."""
        raw = np.asarray(raw, dtype=float)
        if raw.shape[0] < 2:
            raise InsufficientHistoryError("z-scoring needs at least 2 rows")
        mean = raw.mean(axis=0)
        std = raw.std(axis=0)
        flat = ~(std > 1e-12 * np.maximum(1.0, np.abs(mean)))
        if flat.any():
            names = [columns[j] for j in np.flatnonzero(flat)]
            if strict:
                raise DegenerateError(f"column {names[0]!r} is constant")
            logger.warning("constant feature columns %s left unscaled", names)
            std = np.where(flat, 1.0, std)
        return cls(tuple(columns), mean, std)

    def transform(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw, dtype=float) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnScaler":
        return cls(tuple(d["columns"]), np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float))


@dataclass(frozen=True)
class FeatureMatrix:
    """Rows newest-first (row 0 is time t, row n is t - n)."""

    dates: tuple[datetime, ...]
    columns: tuple[str, ...]
    values: np.ndarray
    raw: np.ndarray
    rows: tuple[int, ...] = field(default=())  # group index of each row

    @property
    def shape(self):
        return self.values.shape

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]


def build_feature_matrix(
    groups: Sequence[GroupBar],
    config: IndicatorConfig | None = None,
    lookback: int | None = None,
    end: int | None = None,
    scaler: ColumnScaler | None = None,
) -> FeatureMatrix:
    """Assemble the indicator store for rows ``end, end-1, ..., end-lookback``.

    ``lookback=None`` takes every row back to the end of warm-up. Columns are
    z-scored with ``scaler`` when given, otherwise with statistics of the rows
    being returned.
    """
    cfg = config or IndicatorConfig()
    cols = indicator_columns(groups, cfg)
    T = len(groups)
    end = T - 1 if end is None else end
    if not 0 <= end < T:
        raise InsufficientHistoryError(f"end index {end} outside 0..{T - 1}")
    for name, arr in cols.items():
        if not np.isfinite(arr[end]):
            raise InsufficientHistoryError(f"column {name!r} undefined at index {end}: not enough history")
    start = warmup_length({k: v[: end + 1] for k, v in cols.items()})
    if lookback is not None:
        if lookback < 0:
            raise ValueError("lookback must be >= 0")
        first = end - lookback
        if first < start:
            bad = next(k for k, v in cols.items() if not np.isfinite(v[first]))
            raise InsufficientHistoryError(f"column {bad!r} undefined at index {first}: not enough history")
        start = first
    idx = np.arange(end, start - 1, -1)
    raw = np.column_stack([cols[name][idx] for name in cfg.columns])
    if scaler is not None:
        values = scaler.transform(raw)
    else:
        values = np.empty_like(raw)
        for j, name in enumerate(cfg.columns):
            try:
                values[:, j] = zscore(raw[:, j])
            except DegenerateError:
                raise DegenerateError(f"column {name!r} is constant over the selected rows") from None
    return FeatureMatrix(
        dates=tuple(groups[i].end_ts for i in idx),
        columns=tuple(cfg.columns),
        values=values,
        raw=raw,
        rows=tuple(int(i) for i in idx),
    )


def correlation_matrix(fm: FeatureMatrix | np.ndarray, columns: Sequence[str] | None = None) -> np.ndarray:
    """Pearson correlation between feature columns."""
    if isinstance(fm, FeatureMatrix):
        x, names = fm.values, fm.columns
    else:
        x = np.asarray(fm, dtype=float)
        names = tuple(columns) if columns is not None else tuple(f"c{j}" for j in range(x.shape[1]))
    if x.shape[0] < 2:
        raise InsufficientHistoryError("correlation needs at least 2 rows")
    xc = x - x.mean(axis=0)
    std = np.sqrt((xc ** 2).mean(axis=0))
    for j, s in enumerate(std):
        if not s > 0:
            raise DegenerateError(f"column {names[j]!r} is constant")
    z = xc / std
    corr = (z.T @ z) / x.shape[0]
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    return np.clip(corr, -1.0, 1.0)
