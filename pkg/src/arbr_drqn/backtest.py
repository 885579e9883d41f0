"""Long-only portfolio simulation over grouped bars, metrics and the Kupiec test.

Cash, notionals and fees are kept as ``Decimal`` in a high-precision context,
so the ledger is exact: the fee total equals ``fee_rate * sum(notional)`` to the
last digit and a replay of the fill list reproduces the final portfolio
bit-for-bit. Prices stay floats; ``Decimal(float)`` converts them exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime
from decimal import ROUND_FLOOR, Context, Decimal, localcontext
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import chi2

from .data import GroupBar, format_timestamp
from .errors import DegenerateError, DomainError, InsufficientHistoryError, LookaheadError
from .serialize import write_csv, write_json

LEDGER = Context(prec=100)
REPORT_FORMAT = "arbr_drqn.report"
REPORT_VERSION = 1
GROUPS_PER_YEAR = 252 * 8


def D(x) -> Decimal:
    """Exact decimal value of an int or float price."""
    return x if isinstance(x, Decimal) else Decimal(x)


def rate(x: float) -> Decimal:
    """Rates are written by people ("0.001"), so they go through repr, not the binary value."""
    return Decimal(repr(float(x)))


@dataclass(frozen=True)
class Portfolio:
    cash: Decimal
    shares: int = 0
    fee_rate: Decimal = Decimal("0.001")
    trade_fraction: Decimal = Decimal(1)

    @classmethod
    def new(cls, cash: float | int | str, fee_rate: float = 0.001, trade_fraction: float = 1.0) -> "Portfolio":
        if fee_rate < 0:
            raise ValueError("fee_rate must be >= 0")
        if not 0 < trade_fraction <= 1:
            raise ValueError("trade_fraction must be in (0, 1]")
        cash_d = Decimal(str(cash)) if not isinstance(cash, Decimal) else cash
        if cash_d < 0:
            raise ValueError("cash must be >= 0")
        return cls(cash_d, 0, rate(fee_rate), rate(trade_fraction))

    def equity(self, price: float) -> Decimal:
        with localcontext(LEDGER):
            return self.cash + self.shares * D(price)


@dataclass(frozen=True)
class Fill:
    timestamp: datetime
    side: str  # "buy" | "sell"
    price: float
    quantity: int
    fee: Decimal
    index: int  # group index of execution
    correct: bool | None = None

    @property
    def notional(self) -> Decimal:
        with localcontext(LEDGER):
            return D(self.price) * self.quantity


def step(pf: Portfolio, action: int, bar: GroupBar, index: int = -1) -> tuple[Portfolio, Fill | None]:
    """Apply one action at the bar's close.

    Buy spends ``trade_fraction`` of cash on whole shares with the fee on top;
    sell liquidates every share with the fee taken from the proceeds. Orders
    that cannot be filled (no cash for one share, nothing to sell) are holds.
    """
    if action not in (-1, 0, 1):
        raise ValueError(f"action must be -1, 0 or 1, got {action}")
    price = D(bar.close)
    with localcontext(LEDGER):
        if action == 1:
            budget = pf.cash * pf.trade_fraction
            unit = price * (1 + pf.fee_rate)
            if unit <= 0:
                return pf, None
            qty = int((budget / unit).to_integral_value(rounding=ROUND_FLOOR))
            while qty > 0 and price * qty * (1 + pf.fee_rate) > pf.cash:
                qty -= 1
            if qty < 1:
                return pf, None
            fee = price * qty * pf.fee_rate
            new = replace(pf, cash=pf.cash - price * qty - fee, shares=pf.shares + qty)
            return new, Fill(bar.end_ts, "buy", bar.close, qty, fee, index)
        if action == -1:
            if pf.shares <= 0:
                return pf, None
            qty = pf.shares
            fee = price * qty * pf.fee_rate
            new = replace(pf, cash=pf.cash + price * qty - fee, shares=0)
            return new, Fill(bar.end_ts, "sell", bar.close, qty, fee, index)
    return pf, None


def reward(p_t: float, p_prev: float) -> float:
    """One-step price difference."""
    return p_t - p_prev


def cumulative_reward(rewards: Sequence[float]) -> float:
    return float(sum(rewards, 0.0))


def replay_fills(pf0: Portfolio, fills: Sequence[Fill]) -> Portfolio:
    """Rebuild the final portfolio from the fill list alone."""
    cash, shares = pf0.cash, pf0.shares
    with localcontext(LEDGER):
        for f in fills:
            gross = D(f.price) * f.quantity
            if f.side == "buy":
                cash = cash - gross - gross * pf0.fee_rate
                shares += f.quantity
            else:
                cash = cash + gross - gross * pf0.fee_rate
                shares -= f.quantity
    return replace(pf0, cash=cash, shares=shares)


# --------------------------------------------------------------------------- metrics


def annualized_return(curve, periods_per_year: float = GROUPS_PER_YEAR, mode: str = "compound") -> float:
    """Annualised return in percent from an equity curve (values or (ts, value) pairs)."""
    values = _curve_values(curve)
    if len(values) < 2:
        raise InsufficientHistoryError("annualized return needs at least 2 equity points")
    if np.any(values <= 0):
        raise DomainError("equity must stay positive")
    years = (len(values) - 1) / periods_per_year
    growth = values[-1] / values[0]
    if mode == "compound":
        return (growth ** (1.0 / years) - 1.0) * 100.0
    if mode == "simple":
        return (growth - 1.0) / years * 100.0
    raise ValueError(f"unknown annualisation mode {mode!r}")


def sharpe_ratio(period_returns, risk_free_per_period: float = 0.0,
                 periods_per_year: float = GROUPS_PER_YEAR) -> float:
    """sqrt(periods_per_year) * mean excess return / population std.

    Raises :class:`DegenerateError` when the std is zero; reports show that as NA.
    """
    r = np.asarray(period_returns, dtype=float)
    if r.size < 2:
        raise InsufficientHistoryError("sharpe needs at least 2 returns")
    sd = r.std()
    if not sd > 0:
        raise DegenerateError("zero return volatility: sharpe undefined")
    return float(math.sqrt(periods_per_year) * (r.mean() - risk_free_per_period) / sd)


def _curve_values(curve) -> np.ndarray:
    if len(curve) and isinstance(curve[0], tuple):
        return np.array([float(v) for _, v in curve])
    return np.asarray([float(v) for v in curve])


def sharpe_or_na(curve, risk_free_per_period: float = 0.0, periods_per_year: float = GROUPS_PER_YEAR):
    values = _curve_values(curve)
    if len(values) < 3:
        return None
    rets = values[1:] / values[:-1] - 1.0
    try:
        return sharpe_ratio(rets, risk_free_per_period, periods_per_year)
    except DegenerateError:
        return None


@dataclass(frozen=True)
class AccuracyCounts:
    buy_placed: int = 0
    buy_correct: int = 0
    sell_placed: int = 0
    sell_correct: int = 0
    unscored: int = 0

    @property
    def placed(self) -> int:
        return self.buy_placed + self.sell_placed

    @property
    def correct(self) -> int:
        return self.buy_correct + self.sell_correct

    @staticmethod
    def _pct(a: int, b: int):
        return 100.0 * a / b if b else None

    def as_dict(self) -> dict:
        return {
            "buy_placed": self.buy_placed,
            "buy_placed_pct": self._pct(self.buy_placed, self.placed),
            "buy_correct": self.buy_correct,
            "buy_correct_pct": self._pct(self.buy_correct, self.buy_placed),
            "sell_placed": self.sell_placed,
            "sell_placed_pct": self._pct(self.sell_placed, self.placed),
            "sell_correct": self.sell_correct,
            "sell_correct_pct": self._pct(self.sell_correct, self.sell_placed),
            "unscored": self.unscored,
        }


def score_fills(fills: Sequence[Fill], groups: Sequence[GroupBar], horizon: int = 1) -> list[Fill]:
    """Mark each fill correct/incorrect against the close ``horizon`` groups later.

    Fills too close to the end stay ``correct=None`` (unscored).
    """
    out = []
    for f in fills:
        j = f.index + horizon
        if f.index < 0 or j >= len(groups):
            out.append(replace(f, correct=None))
            continue
        later = groups[j].close
        ok = later > f.price if f.side == "buy" else later < f.price
        out.append(replace(f, correct=bool(ok)))
    return out


def order_accuracy(fills: Sequence[Fill], groups: Sequence[GroupBar], horizon: int = 1) -> AccuracyCounts:
    """A buy is right if the price is higher ``horizon`` groups later, a sell if
    it is lower; ties are wrong. Only scored fills count as placed."""
    counts = dict(buy_placed=0, buy_correct=0, sell_placed=0, sell_correct=0, unscored=0)
    for f in score_fills(fills, groups, horizon):
        if f.correct is None:
            counts["unscored"] += 1
            continue
        counts[f"{f.side}_placed"] += 1
        counts[f"{f.side}_correct"] += int(f.correct)
    return AccuracyCounts(**counts)


@dataclass(frozen=True)
class KupiecResult:
    T: int
    F: int
    alpha: float
    lr: float
    p_value: float
    reject: bool
    significance: float = 0.05

    def as_dict(self) -> dict:
        return {"T": self.T, "F": self.F, "alpha": self.alpha, "lr": self.lr,
                "p_value": self.p_value, "reject": self.reject, "significance": self.significance}


def _binom_loglik(T: int, F: int, p: float) -> float:
    # 0 * log(0) := 0
    a = (T - F) * math.log1p(-p) if T - F else 0.0
    b = F * math.log(p) if F else 0.0
    return a + b


def kupiec_lr(T: int, F: int, alpha: float, significance: float = 0.05) -> KupiecResult:
    """Proportion-of-failures likelihood ratio against benchmark rate ``alpha``.

    LR = -2 ln[(1-alpha)^(T-F) alpha^F] + 2 ln[(1-F/T)^(T-F) (F/T)^F],
    asymptotically chi-square with one degree of freedom.
    """
    if T <= 0:
        raise DomainError("Kupiec test needs T > 0")
    if not 0 <= F <= T:
        raise DomainError(f"need 0 <= F <= T, got F={F}, T={T}")
    if not 0 < alpha < 1:
        raise DomainError("alpha must be in (0, 1)")
    lr = -2.0 * _binom_loglik(T, F, alpha) + 2.0 * _binom_loglik(T, F, F / T)
    lr = max(lr, 0.0)
    p = float(chi2.sf(lr, 1))
    return KupiecResult(T, F, alpha, lr, p, p < significance, significance)


# --------------------------------------------------------------------------- engine

Policy = Callable[[int, Sequence[GroupBar]], int]


@dataclass(frozen=True)
class MetricsConfig:
    periods_per_year: float = GROUPS_PER_YEAR
    risk_free_per_period: float = 0.0
    annualization: str = "compound"
    accuracy_horizon: int = 1


@dataclass
class BacktestReport:
    equity_curve: list[tuple[datetime, float]]
    actions: list[int]
    fills: list[Fill]
    annual_return: float | None
    sharpe: float | None
    accuracy: AccuracyCounts
    cumulative_reward: float
    fee_total: Decimal
    final: Portfolio
    initial: Portfolio
    trace: list[dict] = field(default_factory=list)

    def metrics(self) -> dict:
        return {
            "annual_return": self.annual_return,
            "sharpe": self.sharpe,
            "cumulative_reward": self.cumulative_reward,
            "fee_total": float(self.fee_total),
            "initial_equity": float(self.initial.cash),
            "final_equity": self.equity_curve[-1][1],
            "final_cash": float(self.final.cash),
            "final_shares": self.final.shares,
            "orders": self.accuracy.as_dict(),
            "n_fills": len(self.fills),
        }


def _signal_value(x) -> int:
    v = getattr(x, "value", x)
    return int(v)


def run_backtest(policy: Policy, groups: Sequence[GroupBar], pf0: Portfolio,
                 metrics: MetricsConfig | None = None) -> BacktestReport:
    """Walk the groups in order; at each one ask the policy for an action given
    only ``groups[:t+1]``, execute it at the close and mark equity."""
    if not groups:
        raise InsufficientHistoryError("backtest needs at least one group")
    mc = metrics or MetricsConfig()
    pf = pf0
    curve: list[tuple[datetime, float]] = []
    actions: list[int] = []
    fills: list[Fill] = []
    held: list[bool] = []
    trace: list[dict] = []
    for t, bar in enumerate(groups):
        action = _signal_value(policy(t, groups[: t + 1]))
        pf, fill = step(pf, action, bar, t)
        if fill is not None:
            fills.append(fill)
        actions.append(action)
        held.append(pf.shares > 0)
        curve.append((bar.end_ts, float(pf.equity(bar.close))))
        rec = getattr(policy, "last_trace", None)
        if rec is not None:
            trace.append({"timestamp": bar.end_ts, **rec})
    closes = np.array([g.close for g in groups])
    rewards = [reward(closes[t], closes[t - 1]) for t in range(1, len(groups)) if held[t - 1]]
    with localcontext(LEDGER):
        fee_total = sum((f.fee for f in fills), Decimal(0))
    values = [v for _, v in curve]
    try:
        ann = annualized_return(values, mc.periods_per_year, mc.annualization)
    except (InsufficientHistoryError, DomainError):
        ann = None
    scored = score_fills(fills, groups, mc.accuracy_horizon)
    return BacktestReport(
        equity_curve=curve,
        actions=actions,
        fills=scored,
        annual_return=ann,
        sharpe=sharpe_or_na(values, mc.risk_free_per_period, mc.periods_per_year),
        accuracy=order_accuracy(fills, groups, mc.accuracy_horizon),
        cumulative_reward=cumulative_reward(rewards),
        fee_total=fee_total,
        final=pf,
        initial=pf0,
        trace=trace,
    )


def check_lookahead(make_policy: Callable[[Sequence[GroupBar]], Policy], groups: Sequence[GroupBar],
                    pf0: Portfolio, cuts: Sequence[int]) -> None:
    """Re-run on truncated histories and require identical actions and equity up to each cut.

    ``make_policy`` builds a fresh policy from the data it is allowed to see.
    """
    full = run_backtest(make_policy(groups), groups, pf0)
    for c in cuts:
        part = run_backtest(make_policy(groups[: c + 1]), groups[: c + 1], pf0)
        if part.actions != full.actions[: c + 1] or part.equity_curve != full.equity_curve[: c + 1]:
            bad = next((i for i, (a, b) in enumerate(zip(part.actions, full.actions)) if a != b), c)
            raise LookaheadError(f"policy output at group {bad} changes when data after {c} is removed")


# --------------------------------------------------------------------------- output


def report_document(report: BacktestReport, config_echo: dict | None = None, seed: int | None = None) -> dict:
    return {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "metrics": report.metrics(),
        "config": config_echo or {},
        "seed": seed,
    }


def write_report(report: BacktestReport, out_dir: Path | str, config_echo: dict | None = None,
                 seed: int | None = None, prefix: str = "") -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": out / f"{prefix}report.json",
        "equity": out / f"{prefix}equity.csv",
        "fills": out / f"{prefix}fills.csv",
    }
    write_json(paths["report"], report_document(report, config_echo, seed))
    write_csv(paths["equity"], ["timestamp", "equity"],
              ([format_timestamp(ts), v] for ts, v in report.equity_curve))
    write_csv(paths["fills"], ["timestamp", "side", "price", "qty", "fee", "correct"],
              ([format_timestamp(f.timestamp), f.side, f.price, f.quantity, float(f.fee), f.correct]
               for f in report.fills))
    if report.trace:
        paths["signals"] = out / f"{prefix}signals.csv"
        write_csv(paths["signals"], ["timestamp", "s1", "s2", "fused"],
                  ([format_timestamp(r["timestamp"]), r.get("s1"), r.get("s2"), r.get("fused")]
                   for r in report.trace))
    return paths
