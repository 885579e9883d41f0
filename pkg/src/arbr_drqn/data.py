"""Minute-bar ingestion, fixed-length grouping and return features."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from datetime import datetime
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateError,
    DomainError,
    InsufficientHistoryError,
    OrderingError,
    SchemaError,
    ValidationError,
)

REQUIRED_COLUMNS = ("timestamp", "open", "high", "low", "close", "volume", "money")
TIMESTAMP_FORMATS = ("%Y-%m-%d %H:%M", "%Y-%m-%d %H:%M:%S")
TIMESTAMP_OUT = "%Y-%m-%d %H:%M"


@dataclass(frozen=True, slots=True)
class MinuteBar:
    timestamp: datetime
    open: float
    high: float
    low: float
    close: float
    volume: float
    money: float


@dataclass(frozen=True, slots=True)
class GroupBar:
    start_ts: datetime
    end_ts: datetime
    open: float
    high: float
    low: float
    close: float
    volume: float
    money: float
    n_members: int


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    for fmt in TIMESTAMP_FORMATS:
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            continue
    raise ValueError(f"unparseable timestamp {text!r}")


def format_timestamp(ts: datetime) -> str:
    if ts.second:
        return ts.strftime("%Y-%m-%d %H:%M:%S")
    return ts.strftime(TIMESTAMP_OUT)


def fmt_float(x: float) -> str:
    """Machine-output float formatting: 17 significant digits, round-trip exact."""
    return format(float(x), ".17g")


def _check_bar(bar: MinuteBar, line: int) -> None:
    for name in ("open", "high", "low", "close", "volume", "money"):
        value = getattr(bar, name)
        if not math.isfinite(value):
            raise ValidationError(f"{name} is not finite", line)
        if value < 0:
            raise ValidationError(f"negative {name} {value}", line)
    if bar.high < bar.low:
        raise ValidationError(f"high {bar.high} < low {bar.low}", line)
    if not (bar.low <= bar.open <= bar.high):
        raise ValidationError(f"open {bar.open} outside [low, high]", line)
    if not (bar.low <= bar.close <= bar.high):
        raise ValidationError(f"close {bar.close} outside [low, high]", line)


def parse_minute_csv(
    source: IO[bytes] | IO[str] | bytes | str,
    schema: Mapping[str, str] | None = None,
) -> list[MinuteBar]:
    """Parse a minute OHLCV CSV.

    ``schema`` optionally maps canonical field names (``timestamp``, ``open``,
    ...) to the header names used in the file. Header matching is
    case-insensitive. Rows must already be in strictly increasing timestamp
    order; the parser checks rather than sorts.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty input: no header row") from None

    lowered = [h.strip().lower() for h in header]
    mapping = {k: k for k in REQUIRED_COLUMNS}
    if schema:
        mapping.update({k: v.strip().lower() for k, v in schema.items()})
    index = {}
    for field in REQUIRED_COLUMNS:
        wanted = mapping[field]
        if lowered.count(wanted) != 1:
            what = "missing" if wanted not in lowered else "duplicate"
            raise SchemaError(f"{what} column {wanted!r}")
        index[field] = lowered.index(wanted)

    bars: list[MinuteBar] = []
    prev_ts = None
    for line, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ValidationError(f"expected {len(header)} fields, got {len(row)}", line)
        try:
            ts = parse_timestamp(row[index["timestamp"]])
            values = [float(row[index[f]]) for f in REQUIRED_COLUMNS[1:]]
        except ValueError as exc:
            raise ValidationError(str(exc), line) from None
        bar = MinuteBar(ts, *values)
        _check_bar(bar, line)
        if prev_ts is not None and ts <= prev_ts:
            raise OrderingError(f"line {line}: timestamp {ts} not after {prev_ts}")
        prev_ts = ts
        bars.append(bar)
    return bars


def write_minute_csv(bars: Iterable[MinuteBar], out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(REQUIRED_COLUMNS)
    for b in bars:
        writer.writerow([format_timestamp(b.timestamp)] + [
            fmt_float(v) for v in (b.open, b.high, b.low, b.close, b.volume, b.money)
        ])


GROUP_COLUMNS = ("start_ts", "end_ts", "open", "high", "low", "close", "volume", "money", "n_members")


def write_group_csv(groups: Iterable[GroupBar], out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(GROUP_COLUMNS)
    for g in groups:
        writer.writerow(
            [format_timestamp(g.start_ts), format_timestamp(g.end_ts)]
            + [fmt_float(v) for v in (g.open, g.high, g.low, g.close, g.volume, g.money)]
            + [g.n_members]
        )


def read_group_csv(source: IO[str]) -> list[GroupBar]:
    reader = csv.DictReader(source)
    missing = set(GROUP_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise SchemaError(f"missing group columns {sorted(missing)}")
    out = []
    for row in reader:
        out.append(GroupBar(
            parse_timestamp(row["start_ts"]), parse_timestamp(row["end_ts"]),
            float(row["open"]), float(row["high"]), float(row["low"]), float(row["close"]),
            float(row["volume"]), float(row["money"]), int(row["n_members"]),
        ))
    return out


def _aggregate(members: Sequence[MinuteBar]) -> GroupBar:
    return GroupBar(
        start_ts=members[0].timestamp,
        end_ts=members[-1].timestamp,
        open=members[0].open,
        high=max(b.high for b in members),
        low=min(b.low for b in members),
        close=members[-1].close,
        volume=math.fsum(b.volume for b in members),
        money=math.fsum(b.money for b in members),
        n_members=len(members),
    )


def group_bars(bars: Sequence[MinuteBar], group_len: int = 30, reset_daily: bool = False) -> list[GroupBar]:
    """Aggregate consecutive minute bars into groups of ``group_len``.

    A trailing partial group is kept; it is recognisable by
    ``n_members < group_len``. With ``reset_daily`` a new group also starts
    whenever the calendar date changes.
    """
    if group_len < 1:
        raise ValueError("group_len must be >= 1")
    groups: list[GroupBar] = []
    current: list[MinuteBar] = []
    for bar in bars:
        if current and reset_daily and bar.timestamp.date() != current[0].timestamp.date():
            groups.append(_aggregate(current))
            current = []
        current.append(bar)
        if len(current) == group_len:
            groups.append(_aggregate(current))
            current = []
    if current:
        groups.append(_aggregate(current))
    return groups


def drop_partial(groups: Sequence[GroupBar], group_len: int) -> list[GroupBar]:
    return [g for g in groups if g.n_members >= group_len]


def closes_of(groups: Sequence[GroupBar] | Sequence[float]) -> np.ndarray:
    if len(groups) and hasattr(groups[0], "close"):
        return np.array([g.close for g in groups], dtype=float)
    return np.asarray(groups, dtype=float)


def log_return_window(groups: Sequence[GroupBar] | Sequence[float], t: int, window: int = 8) -> np.ndarray:
    """The ``window`` log returns ending at group ``t`` (inclusive)."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if t < window:
        raise InsufficientHistoryError(f"t={t} needs at least {window} prior groups")
    closes = closes_of(groups)
    if t >= len(closes):
        raise IndexError(f"t={t} out of range for {len(closes)} groups")
    seg = closes[t - window: t + 1]
    if np.any(seg <= 0):
        raise DomainError("log return of non-positive close")
    return np.log(seg[1:] / seg[:-1])


def log_return_matrix(closes: np.ndarray, window: int = 8) -> np.ndarray:
    """Row ``t`` holds ``log_return_window(closes, t, window)``; rows ``t < window`` are NaN."""
    closes = np.asarray(closes, dtype=float)
    if np.any(closes <= 0):
        raise DomainError("log return of non-positive close")
    r = np.full(len(closes), np.nan)
    r[1:] = np.log(closes[1:] / closes[:-1])
    out = np.full((len(closes), window), np.nan)
    for t in range(window, len(closes)):
        out[t] = r[t - window + 1: t + 1]
    return out


def zscore(series: Sequence[float]) -> np.ndarray:
    """Standardise with the population standard deviation."""
    x = np.asarray(series, dtype=float)
    if x.size < 2:
        raise InsufficientHistoryError("zscore needs at least 2 values")
    mu = x.mean()
    sigma = x.std()
    if not sigma > 0:
        raise DegenerateError("constant series has zero standard deviation")
    return (x - mu) / sigma
