"""Brute-force reference implementations used only by the tests.

Written as plain loops straight from the definitions, sharing no code with
the package.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from scipy.stats import binom


def ar(opens, highs, lows):
    num = 0.0
    den = 0.0
    for o, h, lo in zip(opens, highs, lows):
        num += h - o
        den += o - lo
    return 100.0 * num / den


def br(highs, lows, prev_closes):
    num = 0.0
    den = 0.0
    for h, lo, p in zip(highs, lows, prev_closes):
        num += h - p
        den += p - lo
    return 100.0 * num / den


def sma(xs, n):
    return [sum(xs[i - n + 1: i + 1]) / n for i in range(n - 1, len(xs))]


def ema(xs, n):
    k = 2.0 / (n + 1)
    out = []
    for x in xs:
        out.append(x if not out else k * x + (1 - k) * out[-1])
    return out


def macd(xs, fast=12, slow=26, signal=9):
    dif = [a - b for a, b in zip(ema(xs, fast), ema(xs, slow))]
    dea = ema(dif, signal)
    return dif, dea, [2 * (a - b) for a, b in zip(dif, dea)]


def bollinger(xs, n, k):
    mid, up, lo = [], [], []
    for i in range(n - 1, len(xs)):
        w = xs[i - n + 1: i + 1]
        m = sum(w) / n
        sd = math.sqrt(sum((v - m) ** 2 for v in w) / n)
        mid.append(m)
        up.append(m + k * sd)
        lo.append(m - k * sd)
    return mid, up, lo


def bias(xs, n):
    m = sma(xs, n)
    return [100.0 * (xs[i + n - 1] - m[i]) / m[i] for i in range(len(m))]


def pearson(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def kupiec_lr(T, F, alpha):
    """Binomial log-likelihood ratio via scipy's log-pmf; the binomial
    coefficient cancels in the difference."""
    return -2.0 * (binom.logpmf(F, T, alpha) - binom.logpmf(F, T, F / T))


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def lstm_q(params, seq):
    """Step-by-step scalar LSTM, gate rows ordered input, forget, output, candidate."""
    W, b, Wo, bo = (np.asarray(params[k]) for k in ("W", "b", "W_out", "b_out"))
    hdim = Wo.shape[1]
    w = W.shape[1] - hdim
    h = [0.0] * hdim
    c = [0.0] * hdim
    for x in seq:
        z = [sum(W[r, j] * x[j] for j in range(w)) + sum(W[r, w + j] * h[j] for j in range(hdim)) + b[r]
             for r in range(4 * hdim)]
        new_c, new_h = [], []
        for u in range(hdim):
            i = _sig(z[u])
            f = _sig(z[hdim + u])
            o = _sig(z[2 * hdim + u])
            g = math.tanh(z[3 * hdim + u])
            cu = f * c[u] + i * g
            new_c.append(cu)
            new_h.append(o * math.tanh(cu))
        h, c = new_h, new_c
    return [sum(Wo[a, j] * h[j] for j in range(hdim)) + bo[a] for a in range(3)]


def replay_ledger(cash, fee, actions, closes):
    """Exact rational replay written from the sizing rule: all-in floor buys, fee on top, full liquidation."""
    cash = Fraction(cash)
    fee = Fraction(fee)
    shares = 0
    fees = Fraction(0)
    notional = Fraction(0)
    for a, p in zip(actions, closes):
        p = Fraction(p)
        if a == 1:
            q = math.floor(cash / (p * (1 + fee)))
            if q >= 1:
                cash -= p * q * (1 + fee)
                shares += q
                fees += p * q * fee
                notional += p * q
        elif a == -1 and shares:
            cash += p * shares * (1 - fee)
            fees += p * shares * fee
            notional += p * shares
            shares = 0
    return cash, shares, fees, notional
