"""End-to-end wiring: dataset -> groups -> split -> features -> DRQN -> policies.

Everything fitted (scalers, PCA, network) sees only groups before the split
boundary; :func:`assert_no_leakage` re-checks that by fingerprint.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import synthetic
from .agent import Trainer
from .backtest import BacktestReport, Portfolio, run_backtest
from .config import DatasetSpec, PipelineConfig
from .data import GroupBar, drop_partial, group_bars, parse_minute_csv
from .drqn import QNetwork, network_from_dict
from .errors import ContractError, DataError, InsufficientHistoryError
from .features import FeaturePipeline, MarketFeatures, fingerprint, fit_pipeline, market_features
from .strategy import ArbrPolicy, BuyHoldPolicy, DoubleMaPolicy, DrqnPolicy, FusedPolicy, HoldPolicy

log = logging.getLogger(__name__)

CHECKPOINT_KIND = "arbr_drqn.run"


def dataset_minutes(ds: DatasetSpec, base_dir: Path | None = None):
    if ds.path is not None:
        p = Path(ds.path)
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        try:
            with open(p, "r", encoding="utf-8", newline="") as fh:
                return parse_minute_csv(fh)
        except FileNotFoundError:
            raise DataError(f"dataset {ds.name!r}: file not found: {p}") from None
    s = ds.synthetic
    if s.kind == "sawtooth":
        return synthetic.sawtooth_minutes(s.n_groups, s.period, s.amplitude, s.base or 100.0)
    return synthetic.regime_walk_minutes(s.n_groups, s.seed, s.base or 1000.0)


def load_groups(ds: DatasetSpec, cfg: PipelineConfig, base_dir: Path | None = None) -> list[GroupBar]:
    f = cfg.features
    groups = group_bars(dataset_minutes(ds, base_dir), f.group_len, f.reset_daily)
    return drop_partial(groups, f.group_len) if f.drop_partial else groups


def split_index(n: int, fraction: float) -> int:
    s = int(n * fraction)
    if not 0 < s < n:
        raise InsufficientHistoryError(f"split {fraction} of {n} groups is not strictly inside the dataset")
    return s


@dataclass
class Prepared:
    """A dataset with its feature pipeline fitted on the training slice."""

    groups: list[GroupBar]
    split: int
    market: MarketFeatures
    features: FeaturePipeline
    states: np.ndarray

    @property
    def eval_groups(self) -> list[GroupBar]:
        return self.groups[self.split:]


def prepare(groups: Sequence[GroupBar], cfg: PipelineConfig, split: int | None = None) -> Prepared:
    groups = list(groups)
    s = split_index(len(groups), cfg.split) if split is None else split
    fc = cfg.feature_config()
    mf = market_features(groups, fc)
    pipe = fit_pipeline(mf, s, fc)
    prep = Prepared(groups, s, mf, pipe, pipe.state_matrix(mf))
    assert_no_leakage(prep)
    return prep


def assert_no_leakage(prep: Prepared) -> None:
    if prep.features.train_rows[1] >= prep.split:
        raise ContractError("feature pipeline was fitted on rows at or after the split")
    if prep.features.train_fingerprint != fingerprint(prep.groups[: prep.split]):
        raise ContractError("feature pipeline fingerprint does not match the training slice")


def make_trainer(prep: Prepared, cfg: PipelineConfig, seed: int) -> Trainer:
    t = cfg.training
    return Trainer(prep.states, prep.market.closes, 0, prep.split, t.build(seed), t.episodes, t.reward_scale)


def train(prep: Prepared, cfg: PipelineConfig, seed: int,
          progress: Callable[[Trainer], None] | None = None, chunk: int = 1000) -> Trainer:
    tr = make_trainer(prep, cfg, seed)
    while not tr.done:
        tr.run(chunk)
        if progress is not None:
            progress(tr)
    return tr


def checkpoint_document(trainer: Trainer, prep: Prepared, cfg_echo: dict | None = None) -> dict:
    """Network, trainer state and the fitted feature pipeline in one document."""
    if trainer.t_last >= prep.split - 1:
        raise ContractError("trainer rewards reach past the split boundary")
    return trainer.checkpoint({
        "kind": CHECKPOINT_KIND,
        "features": prep.features.to_dict(),
        "data": {"split": prep.split, "n_groups": len(prep.groups),
                 "train_fingerprint": prep.features.train_fingerprint},
        "run_config": cfg_echo or {},
    })


def restore(checkpoint: dict, groups: Sequence[GroupBar]) -> tuple[Prepared, QNetwork]:
    """Rebuild the prepared dataset and network saved by :func:`checkpoint_document`."""
    if checkpoint.get("kind") != CHECKPOINT_KIND:
        raise ContractError("not a run checkpoint")
    groups = list(groups)
    data = checkpoint["data"]
    s = int(data["split"])
    if s >= len(groups) or fingerprint(groups[:s]) != data["train_fingerprint"]:
        raise ContractError("checkpoint was trained on different data")
    pipe = FeaturePipeline.from_dict(checkpoint["features"])
    mf = market_features(groups, pipe.config)
    prep = Prepared(groups, s, mf, pipe, pipe.state_matrix(mf))
    net = network_from_dict(checkpoint)
    if net.w != pipe.width:
        raise ContractError(f"network input width {net.w} != state width {pipe.width}")
    return prep, net


def make_policy(name: str, prep: Prepared, cfg: PipelineConfig, net: QNetwork | None = None):
    """Policy over the evaluation window (window index 0 is series index ``split``)."""
    s, n = prep.split, len(prep.groups) - prep.split
    if name == "hold":
        return HoldPolicy()
    if name == "buy_hold":
        return BuyHoldPolicy()
    if name == "double_ma":
        return DoubleMaPolicy(*cfg.backtest.double_ma)
    arbr = ArbrPolicy(prep.market.ar, prep.market.br, cfg.rule.build(), offset=s)
    if name == "arbr-only":
        return arbr
    if net is None:
        raise ContractError(f"strategy {name!r} needs a trained network")
    dq = DrqnPolicy(net, prep.states, cfg.training.seq_len, offset=s, n=n)
    if name == "drqn-only":
        return dq
    if name == "fused":
        return FusedPolicy(arbr, dq)
    raise ContractError(f"unknown strategy {name!r}")


def portfolio(cfg: PipelineConfig, capital: float | None = None) -> Portfolio:
    b = cfg.backtest
    return Portfolio.new(repr(float(capital if capital is not None else b.initial_capital)), b.fee_rate,
                         b.trade_fraction)


def backtest(name: str, prep: Prepared, cfg: PipelineConfig, net: QNetwork | None = None,
             capital: float | None = None) -> BacktestReport:
    return run_backtest(make_policy(name, prep, cfg, net), prep.eval_groups, portfolio(cfg, capital),
                        cfg.backtest.metrics())
