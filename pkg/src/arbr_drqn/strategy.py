"""Trading signals: the ARBR rule, the DRQN signal, their fusion and two baselines.

The ``*Policy`` classes adapt signals to :func:`arbr_drqn.backtest.run_backtest`.
Each is called as ``policy(t, history)`` where ``t`` indexes the backtest
window and ``history`` holds the window's groups up to ``t``. Policies that
need indicator or state rows read them from arrays computed over the whole
series with ``offset`` mapping window index to series index; those arrays are
causal, and :func:`arbr_drqn.backtest.check_lookahead` verifies it end to end.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import drqn
from .agent import greedy_actions
from .drqn import QNetwork
from .errors import ConfigError, InsufficientHistoryError
from .indicators import sma

SOURCES = ("ARBR", "DRQN", "fused", "baseline")


@dataclass(frozen=True)
class Signal:
    value: int
    source: str = "baseline"

    def __post_init__(self):
        if self.value not in (-1, 0, 1):
            raise ValueError(f"signal value must be -1, 0 or 1, got {self.value}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown signal source {self.source!r}")


@dataclass(frozen=True)
class ArbrRuleConfig:
    ar_oversold: float = 80.0
    ar_overbought: float = 180.0
    br_oversold: float = 70.0
    br_overbought: float = 300.0
    divergence_margin: float = 1.0

    def __post_init__(self):
        if not self.ar_oversold < self.ar_overbought:
            raise ConfigError("ar_oversold must be below ar_overbought")
        if not self.br_oversold < self.br_overbought:
            raise ConfigError("br_oversold must be below br_overbought")


def arbr_signal(ar: float, br: float, cfg: ArbrRuleConfig | None = None) -> Signal:
    """Contrarian sentiment rule.

    Buy when both AR and BR sit below their oversold levels. Sell when both
    exceed their overbought levels, or when BR runs ahead of AR by more than
    the divergence margin while above its own overbought level.
    """
    c = cfg or ArbrRuleConfig()
    if not (np.isfinite(ar) and np.isfinite(br)):
        raise ValueError("AR and BR must be finite")
    if ar < c.ar_oversold and br < c.br_oversold:
        return Signal(1, "ARBR")
    if (ar > c.ar_overbought and br > c.br_overbought) or (
        br > ar * (1.0 + c.divergence_margin) and br > c.br_overbought
    ):
        return Signal(-1, "ARBR")
    return Signal(0, "ARBR")


def drqn_signal(net: QNetwork, states) -> Signal:
    q, _ = drqn.forward(net, states)
    return Signal(drqn.greedy_action(q), "DRQN")


def fuse(s1: Signal, s2: Signal) -> Signal:
    """Act only when both signals agree; otherwise hold."""
    return Signal(s1.value if s1.value == s2.value else 0, "fused")


def double_ma_signal(prices: Sequence[float], short_n: int = 5, long_n: int = 20, t: int | None = None) -> Signal:
    """+1 on the group where the short MA crosses above the long MA, -1 on the
    opposite cross, else 0."""
    if not 1 <= short_n < long_n:
        raise ConfigError("need 1 <= short_n < long_n")
    p = np.asarray(prices, dtype=float)
    t = len(p) - 1 if t is None else t
    if t < long_n:
        raise InsufficientHistoryError(f"double MA at t={t} needs t >= {long_n}")
    seg = p[t - long_n: t + 1]
    s = sma(seg, short_n)[-2:]
    lg = sma(seg, long_n)
    if s[0] <= lg[0] and s[1] > lg[1]:
        return Signal(1)
    if s[0] >= lg[0] and s[1] < lg[1]:
        return Signal(-1)
    return Signal(0)


def buy_and_hold_signal(t: int) -> Signal:
    return Signal(1 if t == 0 else 0)


# --------------------------------------------------------------------------- policies


class HoldPolicy:
    name = "hold"

    def __call__(self, t, history):
        return 0


class BuyHoldPolicy:
    name = "buy_hold"

    def __call__(self, t, history):
        return buy_and_hold_signal(t).value


class DoubleMaPolicy:
    name = "double_ma"

    def __init__(self, short_n: int = 5, long_n: int = 20):
        self.short_n, self.long_n = short_n, long_n

    def __call__(self, t, history):
        if len(history) <= self.long_n:
            return 0
        closes = [g.close for g in history[-(self.long_n + 1):]]
        return double_ma_signal(closes, self.short_n, self.long_n).value


class ArbrPolicy:
    name = "arbr"

    def __init__(self, ar: np.ndarray, br: np.ndarray, rule: ArbrRuleConfig | None = None, offset: int = 0):
        self.ar, self.br, self.rule, self.offset = ar, br, rule or ArbrRuleConfig(), offset

    def s1(self, t: int) -> int:
        i = self.offset + t
        a, b = self.ar[i], self.br[i]
        if not (np.isfinite(a) and np.isfinite(b)):
            return 0
        return arbr_signal(a, b, self.rule).value

    def __call__(self, t, history):
        return self.s1(t)


class DrqnPolicy:
    """Greedy DRQN actions for window groups ``0..n-1`` (series ``offset..offset+n-1``)."""

    name = "drqn"

    def __init__(self, net: QNetwork, states: np.ndarray, seq_len: int, offset: int, n: int):
        self.offset = offset
        ts = range(offset, offset + n)
        ok = [t for t in ts if t - seq_len + 1 >= 0 and np.all(np.isfinite(states[t - seq_len + 1: t + 1]))]
        acts = greedy_actions(net, states, seq_len, ok) if ok else []
        self._actions = dict(zip(ok, (int(a) for a in acts)))

    def s2(self, t: int) -> int:
        return self._actions.get(self.offset + t, 0)

    def __call__(self, t, history):
        return self.s2(t)


class FusedPolicy:
    name = "fused"

    def __init__(self, arbr: ArbrPolicy, net_policy: DrqnPolicy):
        self.arbr, self.net_policy = arbr, net_policy
        self.last_trace: dict | None = None

    def __call__(self, t, history):
        s1 = Signal(self.arbr.s1(t), "ARBR")
        s2 = Signal(self.net_policy.s2(t), "DRQN")
        f = fuse(s1, s2)
        self.last_trace = {"s1": s1.value, "s2": s2.value, "fused": f.value}
        return f.value
