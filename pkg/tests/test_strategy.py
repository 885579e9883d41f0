import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from arbr_drqn import drqn
from arbr_drqn.backtest import Portfolio, check_lookahead, run_backtest
from arbr_drqn.drqn import QNetwork, TrainingConfig, init_network
from arbr_drqn.errors import ConfigError, InsufficientHistoryError
from arbr_drqn.strategy import (
    ArbrPolicy,
    ArbrRuleConfig,
    BuyHoldPolicy,
    DoubleMaPolicy,
    DrqnPolicy,
    FusedPolicy,
    Signal,
    arbr_signal,
    buy_and_hold_signal,
    double_ma_signal,
    drqn_signal,
    fuse,
)
from conftest import group, random_groups

VALUES = (-1, 0, 1)


def test_signal_validation():
    with pytest.raises(ValueError):
        Signal(2)
    with pytest.raises(ValueError):
        Signal(0, "news")


@pytest.mark.parametrize("ar,br,want", [
    (60, 50, 1),
    (100, 100, 0),
    (200, 400, -1),
    (150, 310, -1),  # BR more than double AR while overheated
    (160, 310, 0),   # divergence below the margin
    (60, 90, 0),     # only AR oversold
    (190, 250, 0),   # only AR overbought
])
def test_arbr_rule_examples(ar, br, want):
    assert arbr_signal(ar, br) == Signal(want, "ARBR")


def test_arbr_rule_config():
    with pytest.raises(ConfigError):
        ArbrRuleConfig(ar_oversold=200)
    with pytest.raises(ValueError):
        arbr_signal(float("nan"), 10)
    assert arbr_signal(100, 100, ArbrRuleConfig(ar_oversold=120, br_oversold=110)).value == 1


def test_fusion_truth_table():
    for a, b in itertools.product(VALUES, VALUES):
        f = fuse(Signal(a, "ARBR"), Signal(b, "DRQN"))
        assert f.value == (a if a == b else 0)
        assert f.source == "fused"
        assert f.value in {0, a} & {0, b}
        assert fuse(Signal(b), Signal(a)).value == f.value
    assert fuse(Signal(1), Signal(1)).value == 1
    assert fuse(Signal(1), Signal(-1)).value == 0


def test_drqn_signal():
    net = QNetwork(3, 2)
    assert drqn_signal(net, np.zeros((4, 3))) == Signal(0, "DRQN")
    net.params["b_out"][:] = [0, 0, 1]
    assert drqn_signal(net, np.zeros((4, 3))).value == 1


def test_drqn_signal_equals_greedy_selection(rng):
    net = init_network(TrainingConfig(hidden=4, seed=1), 5)
    for _ in range(1000):
        s = rng.normal(size=(2, 5))
        q, _ = drqn.forward(net, s)
        assert drqn_signal(net, s).value == drqn.select_action(q, 0.0, rng)


def test_double_ma_constant_prices():
    p = [10.0] * 40
    assert all(double_ma_signal(p, 5, 20, t).value == 0 for t in range(20, 40))


def test_double_ma_constructed_upward_cross():
    # flat at 10 for 20 groups, then one jump: short MA (3) leaves the long MA (6) at t=20
    p = [10.0] * 20 + [13.0, 13.0]
    assert double_ma_signal(p, 3, 6, 19).value == 0
    # by hand at t=20: short = (10+10+13)/3 = 11, long = (5*10+13)/6 = 10.5; at t=19 both 10
    assert double_ma_signal(p, 3, 6, 20).value == 1
    assert double_ma_signal(p, 3, 6, 21).value == 0


def test_double_ma_up_then_down_gives_one_cross_each_way():
    p = list(np.linspace(10, 20, 30)) + list(np.linspace(19.5, 5, 30))
    sig = [double_ma_signal(p, 5, 20, t).value for t in range(20, len(p))]
    assert [s for s in sig if s] == [-1]  # rising from the start: short is already above
    p = [10.0] * 20 + list(np.linspace(10.5, 20, 25)) + list(np.linspace(19.5, 5, 30))
    sig = [double_ma_signal(p, 5, 20, t).value for t in range(20, len(p))]
    assert [s for s in sig if s] == [1, -1]


@given(st.lists(st.floats(1, 100), min_size=25, max_size=80))
def test_double_ma_alternates(prices):
    sig = [double_ma_signal(prices, 3, 8, t).value for t in range(8, len(prices))]
    nz = [s for s in sig if s]
    assert all(a != b for a, b in zip(nz, nz[1:]))


def test_double_ma_errors():
    with pytest.raises(ConfigError):
        double_ma_signal([1.0] * 30, 20, 5)
    with pytest.raises(InsufficientHistoryError):
        double_ma_signal([1.0] * 30, 5, 20, 10)


def test_buy_and_hold_emits_one_buy():
    assert buy_and_hold_signal(0).value == 1 and buy_and_hold_signal(1).value == 0
    sig = [buy_and_hold_signal(t).value for t in range(500)]
    assert sig.count(1) == 1 and sig.count(-1) == 0


def test_signals_are_lookahead_free(rng):
    groups = random_groups(rng, 80)
    pf = Portfolio.new(100000)
    check_lookahead(lambda g: DoubleMaPolicy(5, 20), groups, pf, [25, 40, 79])
    check_lookahead(lambda g: BuyHoldPolicy(), groups, pf, [0, 30])


def fused_fixture(rng, n=60):
    groups = random_groups(rng, n)
    ar = rng.uniform(40, 260, n)
    br = rng.uniform(30, 450, n)
    states = rng.normal(size=(n, 5))
    net = init_network(TrainingConfig(hidden=4, seed=2), 5)
    return groups, ArbrPolicy(ar, br), DrqnPolicy(net, states, 3, offset=0, n=n)


def test_fused_backtest_only_executes_agreed_actions(rng):
    groups, arbr, dq = fused_fixture(rng)
    pol = FusedPolicy(arbr, dq)
    rep = run_backtest(pol, groups, Portfolio.new(100000))
    assert len(rep.trace) == len(groups)
    for t, (a, rec) in enumerate(zip(rep.actions, rep.trace)):
        s1, s2 = arbr.s1(t), dq.s2(t)
        assert (rec["s1"], rec["s2"]) == (s1, s2)
        assert a == rec["fused"] and a in {0, s1} & {0, s2}
    assert any(a != 0 for a in rep.actions)


def test_drqn_policy_holds_without_full_history(rng):
    n = 10
    states = rng.normal(size=(n, 5))
    states[:4] = np.nan
    net = init_network(TrainingConfig(hidden=4, seed=2), 5)
    pol = DrqnPolicy(net, states, 3, offset=0, n=n)
    assert [pol.s2(t) for t in range(6)] == [0] * 6
    # offset maps window index to series index
    shifted = DrqnPolicy(net, states, 3, offset=4, n=6)
    assert [shifted.s2(t) for t in range(2, 6)] == [pol.s2(t) for t in range(6, 10)]


def test_arbr_policy_nan_is_hold():
    pol = ArbrPolicy(np.array([np.nan, 60.0]), np.array([np.nan, 50.0]))
    assert pol.s1(0) == 0 and pol.s1(1) == 1
    assert pol(1, [group(0, 1, 1, 1, 1)]) == 1
