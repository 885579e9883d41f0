import math

import pytest

from arbr_drqn import experiments, pipeline
from arbr_drqn.backtest import Portfolio, kupiec_lr, run_backtest
from arbr_drqn.config import DEFAULT_CAPITAL_LEVELS, DEFAULT_KUPIEC_PERIODS, ExperimentSpec
from arbr_drqn.errors import ConfigError, DataError
from arbr_drqn.serialize import read_json
from arbr_drqn.strategy import BuyHoldPolicy, DoubleMaPolicy

from conftest import group

BASE = {
    "datasets": [
        {"name": "Alpha", "synthetic": {"seed": 1, "n_groups": 300}},
        {"name": "Beta", "synthetic": {"seed": 2, "n_groups": 300}},
    ],
    "training": {"episodes": 1, "hidden": 8, "batch_size": 16},
    "indicators": {"arbr_n": 5},
}


def make_spec(**over):
    return ExperimentSpec.model_validate({**BASE, **over})


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    spec = make_spec(strategies=["fused", "drqn-only", "arbr-only", "double_ma", "buy_hold", "hold"])
    out = tmp_path_factory.mktemp("exp")
    return spec, out, experiments.run_experiment(spec, out)


def test_default_spec_layouts():
    spec = make_spec()
    assert spec.capital_levels == list(DEFAULT_CAPITAL_LEVELS) == [100000.0, 200000.0, 300000.0]
    assert spec.kupiec_periods == [5, 10, 19, 20, 21, 37, 60, 73, 78, 80, 120, 240]
    assert spec.kupiec_periods == list(DEFAULT_KUPIEC_PERIODS)
    assert spec.kupiec_alpha == 0.5


def test_ablation_average_row_is_mean(run):
    _, _, res = run
    t = res.tables["ablation"]
    assert t.columns == ["index", "with_arbr_annual_return", "with_arbr_sharpe",
                         "without_arbr_annual_return", "without_arbr_sharpe"]
    assert [r[0] for r in t.rows] == ["Alpha", "Beta", "Average"]
    for j in range(1, len(t.columns)):
        vals = [r[j] for r in t.rows[:-1] if r[j] is not None]
        want = math.fsum(vals) / len(vals) if vals else None
        assert t.rows[-1][j] == pytest.approx(want, rel=1e-12) if want is not None else t.rows[-1][j] is None


def test_ablation_single_strategy_and_missing_model(run):
    _, _, res = run
    ct = experiments.run_ablation(make_spec(strategies=["fused"]), res.cells)
    assert experiments.ablation_layout(ct).columns == ["index", "with_arbr_annual_return", "with_arbr_sharpe"]
    with pytest.raises(ConfigError):
        experiments.run_ablation(make_spec(strategies=["buy_hold"]), res.cells)


def test_comparison_cells_decompose_into_single_backtests(run):
    spec, out, res = run
    t = res.tables["strategy_comparison"]
    assert t.columns == ["index", "evaluation_index", "hold_and_buy", "double_moving_average", "drqn_arbr",
                         "drqn_only", "arbr_only", "hold"]
    assert [r[1] for r in t.rows] == ["Annual Return", "Sharpe Ratio"] * 2
    ds = spec.datasets[0]
    groups = pipeline.load_groups(ds, spec)
    prep, net = pipeline.restore(read_json(out / "checkpoints" / "alpha_seed0.json"), groups)
    for strat, label in experiments.STRATEGY_LABELS.items():
        rep = pipeline.backtest(strat, prep, spec, net)
        assert t.column(label)[0] == rep.annual_return
        assert t.column(label)[1] == rep.sharpe
    # the hold column is all NA Sharpe and zero return
    assert t.column("hold")[1::2] == [None, None]
    assert t.column("hold")[0::2] == [0.0, 0.0]


def test_capital_table_layout(run):
    _, _, res = run
    t = res.tables["capital_sweep"]
    assert t.columns == ["index", "100000_annual_return", "100000_sharpe", "200000_annual_return",
                         "200000_sharpe", "300000_annual_return", "300000_sharpe"]
    assert t.column("100000_annual_return") == res.tables["ablation"].column("with_arbr_annual_return")[:-1]
    for r in t.rows:
        rets = [v for v in r[1::2] if v is not None]
        assert max(rets) - min(rets) < 1.0


def test_capital_scale_invariance_with_divisible_prices():
    groups = [group(i, c, c, c, c) for i, c in enumerate([100.0, 125.0, 112.5, 150.0, 137.5])]
    growth = set()
    for cash in DEFAULT_CAPITAL_LEVELS:
        rep = run_backtest(BuyHoldPolicy(), groups, Portfolio.new(cash, fee_rate=0.0))
        assert rep.final.cash == 0
        growth.add(rep.annual_return)
    assert len(growth) == 1


def test_flooring_deviation_is_small():
    spec = make_spec(strategies=["buy_hold"], backtest={"fee_rate": 0.0})
    prep = pipeline.prepare(pipeline.load_groups(spec.datasets[0], spec), spec)
    finals = []
    for cash in (1e5, 2e5, 3e5, 123457.0):
        rep = pipeline.backtest("buy_hold", prep, spec, None, cash)
        finals.append(rep.equity_curve[-1][1] / cash)
    assert max(finals) / min(finals) - 1 < 0.01


def test_baseline_sanity():
    rising = [group(i, 100 + i, 100 + i, 100 + i, 100 + i) for i in range(30)]
    assert run_backtest(BuyHoldPolicy(), rising, Portfolio.new(100000)).annual_return > 0
    flat = [group(i, 50, 50, 50, 50) for i in range(60)]
    assert run_backtest(DoubleMaPolicy(5, 20), flat, Portfolio.new(100000)).fills == []


def test_accuracy_table(run):
    spec, _, res = run
    t = res.tables["order_accuracy"]
    assert t.columns == ["index", "order", "placed", "placed_pct", "correct", "correct_pct"]
    assert [r[:2] for r in t.rows] == [["Alpha", "Buy"], ["Alpha", "Sell"], ["Beta", "Buy"], ["Beta", "Sell"]]
    for buy, sell in (t.rows[0:2], t.rows[2:4]):
        placed = buy[2] + sell[2]
        for r in (buy, sell):
            assert r[3] == (pytest.approx(100 * r[2] / placed) if placed else None)
            assert r[5] == (pytest.approx(100 * r[4] / r[2]) if r[2] else None)
            assert r[4] <= r[2]
        if buy[2] and sell[2]:
            assert buy[3] + sell[3] == pytest.approx(100.0)
    hold = experiments.run_accuracy_table(make_spec(strategies=["hold"]), [
        experiments.CellResult(c.dataset, c.seed, c.metrics, c.capital,
                               dict.fromkeys(c.accuracy, 0), c.kupiec_counts, c.curve, None, c.info)
        for c in res.cells])
    assert all(r[2] == r[4] == 0 and r[3] is None for r in hold.rows)


def test_kupiec_cells_are_standalone_calls(run):
    spec, _, res = run
    t = res.tables["kupiec_lr"]
    assert t.columns == ["index"] + [str(p) for p in DEFAULT_KUPIEC_PERIODS]
    for row, cell in zip(t.rows, res.cells):
        assert row[0] == cell.dataset
        for p, v in zip(spec.kupiec_periods, row[1:]):
            T, F = cell.kupiec_counts[p]
            assert v == (kupiec_lr(T, F, 0.5).lr if T else None)
    # longer periods see at least as many orders
    for cell in res.cells:
        Ts = [cell.kupiec_counts[p][0] for p in sorted(spec.kupiec_periods)]
        assert Ts == sorted(Ts)


def test_kupiec_period_slices():
    class Rep:
        fills = [type("F", (), {"index": i, "correct": c})() for i, c in
                 [(0, True), (5, False), (10, None), (12, True), (15, False)]]

    counts = experiments.kupiec_counts(Rep, 16, [1, 3, 100], groups_per_day=4)
    assert counts == {1: (2, 1), 3: (3, 2), 100: (4, 2)}
    assert kupiec_lr(4, 2, 0.5).lr == 0.0


def test_equity_curves(run):
    _, out, res = run
    for c in res.cells:
        lines = (out / "curves" / f"{c.dataset.lower()}_seed0_equity.csv").read_text().splitlines()
        assert lines[0] == "timestamp,buy_hold,model"
        assert len(lines) == 1 + c.info["n_eval"]


def test_manifest_and_rerun_noop(run):
    spec, out, res = run
    man = read_json(out / "manifest.json")
    assert man["config_hash"] == experiments.spec_hash(spec) == res.config_hash
    assert man["seeds"] == [0] and set(man["datasets"]) == {"Alpha", "Beta"}
    for rel, digest in man["outputs"].items():
        assert (out / rel).exists()
    again = experiments.run_experiment(spec, out)
    assert again.skipped and again.tables == {}
    forced = experiments.run_experiment(spec, out, force=True)
    assert not forced.skipped
    assert read_json(out / "manifest.json") == man


def test_worker_count_does_not_change_outputs(run, tmp_path):
    spec, out, _ = run
    par = spec.model_copy(update={"workers": 2})
    experiments.run_experiment(par, tmp_path)
    for rel in read_json(out / "manifest.json")["outputs"]:
        assert (tmp_path / rel).read_bytes() == (out / rel).read_bytes(), rel


def test_seed_aggregation():
    spec = make_spec(datasets=BASE["datasets"][:1], seeds=[0, 1], strategies=["fused", "buy_hold"])
    cells = experiments.run_cells(spec)
    assert [c.key for c in cells] == [("Alpha", 0), ("Alpha", 1)]
    ct = experiments.run_strategy_comparison(spec, cells)
    want = [c.metrics["fused"]["annual_return"] for c in cells]
    assert ct.get("Alpha", "fused")["annual_return"] == pytest.approx(sum(want) / 2, rel=1e-12)
    acc = experiments.run_accuracy_table(spec, cells)
    assert acc.rows[0][2] == sum(c.accuracy["buy_placed"] for c in cells)


def test_missing_dataset_file(tmp_path):
    spec = make_spec(datasets=[{"name": "X", "path": str(tmp_path / "nope.csv")}])
    with pytest.raises(DataError):
        experiments.run_cells(spec)
    with pytest.raises(ConfigError):
        experiments.run_cell(spec, "Y", 0)


def test_split_is_fitted_before_boundary(run):
    _, _, res = run
    for c in res.cells:
        assert c.info["train_rows"][1] < c.info["split"] < c.info["n_groups"]
