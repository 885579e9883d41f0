"""State construction: log-return window + PCA-reduced indicators + AR/BR.

All normalisation statistics and the PCA basis are fitted on the training
slice only and then applied unchanged to later data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import pca
from .data import GroupBar, closes_of, log_return_matrix
from .errors import DegenerateError, InsufficientHistoryError
from .indicators import ColumnScaler, IndicatorConfig, indicator_columns, warmup_length
from .serialize import sha256_bytes


@dataclass(frozen=True)
class StateVector:
    returns: np.ndarray
    pca_features: np.ndarray
    ar: float
    br: float

    @property
    def width(self) -> int:
        return len(self.returns) + len(self.pca_features) + 2

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.returns, self.pca_features, [self.ar, self.br]])


@dataclass(frozen=True)
class FeatureConfig:
    return_window: int = 8
    pca_k: int = 20
    indicators: IndicatorConfig = field(default_factory=IndicatorConfig)

    @property
    def state_width(self) -> int:
        return self.return_window + self.pca_k + 2


@dataclass
class MarketFeatures:
    """Per-group raw ingredients; every row depends only on groups up to it."""

    groups: Sequence[GroupBar]
    closes: np.ndarray
    returns: np.ndarray  # (T, window), NaN before the window fills
    indicators: np.ndarray  # (T, d), NaN during warm-up
    columns: tuple[str, ...]
    ar: np.ndarray
    br: np.ndarray
    ready: int  # first index where every ingredient is defined


def market_features(groups: Sequence[GroupBar], config: FeatureConfig) -> MarketFeatures:
    cols = indicator_columns(groups, config.indicators)
    closes = closes_of(groups)
    rets = log_return_matrix(closes, config.return_window)
    cfg_ind = config.indicators
    if "ar" in cols and "br" in cols:
        ar, br = cols["ar"], cols["br"]
    else:
        extra = indicator_columns(groups, IndicatorConfig(("ar", "br"), cfg_ind.macd, cfg_ind.boll,
                                                          cfg_ind.arbr_n, cfg_ind.arbr_basis))
        ar, br = extra["ar"], extra["br"]
    ind = np.column_stack([cols[c] for c in cfg_ind.columns])
    ready = max(warmup_length(cols), config.return_window,
                warmup_length({"ar": ar, "br": br}))
    return MarketFeatures(groups, closes, rets, ind, tuple(cfg_ind.columns), ar, br, ready)


def fingerprint(groups: Sequence[GroupBar]) -> str:
    """Hash of the exact numeric content of a slice of groups."""
    arr = np.array([[g.open, g.high, g.low, g.close, g.volume, g.money] for g in groups], dtype=float)
    stamps = "|".join(g.end_ts.isoformat() for g in groups).encode()
    return sha256_bytes(arr.tobytes() + stamps)


@dataclass
class FeaturePipeline:
    config: FeatureConfig
    scaler: ColumnScaler
    pca_model: pca.PcaModel
    ret_mean: float
    ret_std: float
    arbr_mean: np.ndarray
    arbr_std: np.ndarray
    train_fingerprint: str
    train_rows: tuple[int, int]  # [first, last] group indices used for fitting

    @property
    def width(self) -> int:
        return self.config.state_width

    def state_matrix(self, mf: MarketFeatures) -> np.ndarray:
        """Row t is the flattened state at group t; rows before ``mf.ready`` are NaN."""
        T = len(mf.closes)
        out = np.full((T, self.width), np.nan)
        if mf.ready >= T:
            return out
        sl = slice(mf.ready, T)
        rets = (mf.returns[sl] - self.ret_mean) / self.ret_std
        proj = pca.transform(self.pca_model, self.scaler.transform(mf.indicators[sl]))
        arbr = (np.column_stack([mf.ar[sl], mf.br[sl]]) - self.arbr_mean) / self.arbr_std
        out[sl] = np.concatenate([rets, proj, arbr], axis=1)
        return out

    def state_vector(self, mf: MarketFeatures, t: int) -> StateVector:
        row = self.state_matrix(mf)[t]
        if not np.all(np.isfinite(row)):
            raise InsufficientHistoryError(f"state undefined at group {t}")
        w, k = self.config.return_window, self.config.pca_k
        return StateVector(row[:w], row[w:w + k], float(row[-2]), float(row[-1]))

    def to_dict(self) -> dict:
        ic = self.config.indicators
        return {
            "config": {
                "return_window": self.config.return_window,
                "pca_k": self.config.pca_k,
                "indicators": {"columns": list(ic.columns), "macd": list(ic.macd), "boll": list(ic.boll),
                               "arbr_n": ic.arbr_n, "arbr_basis": ic.arbr_basis},
            },
            "scaler": self.scaler.to_dict(),
            "pca": self.pca_model.to_dict(),
            "ret_mean": self.ret_mean,
            "ret_std": self.ret_std,
            "arbr_mean": self.arbr_mean.tolist(),
            "arbr_std": self.arbr_std.tolist(),
            "train_fingerprint": self.train_fingerprint,
            "train_rows": list(self.train_rows),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeaturePipeline":
        c = d["config"]
        ic = c["indicators"]
        config = FeatureConfig(
            c["return_window"], c["pca_k"],
            IndicatorConfig(tuple(ic["columns"]), tuple(ic["macd"]), (int(ic["boll"][0]), float(ic["boll"][1])),
                            ic["arbr_n"], ic["arbr_basis"]),
        )
        return cls(config, ColumnScaler.from_dict(d["scaler"]), pca.PcaModel.from_dict(d["pca"]),
                   float(d["ret_mean"]), float(d["ret_std"]), np.array(d["arbr_mean"], dtype=float),
                   np.array(d["arbr_std"], dtype=float), d["train_fingerprint"], tuple(d["train_rows"]))


def fit_pipeline(mf: MarketFeatures, train_end: int, config: FeatureConfig) -> FeaturePipeline:
    """Fit scalers and PCA on groups ``[mf.ready, train_end)``."""
    first, last = mf.ready, train_end - 1
    if last - first + 1 < 2:
        raise InsufficientHistoryError(
            f"training slice has {max(0, last - first + 1)} usable groups after warm-up ({mf.ready})")
    sl = slice(first, last + 1)
    scaler = ColumnScaler.fit(mf.columns, mf.indicators[sl], strict=False)
    z = scaler.transform(mf.indicators[sl])
    model = pca.fit(z, config.pca_k)
    # each of the window's returns already appears as the newest return of some row
    r = mf.returns[sl]
    ret_mean = float(np.mean(r))
    ret_std = float(np.std(r))
    if not ret_std > 0:
        raise DegenerateError("training log returns are constant")
    arbr = np.column_stack([mf.ar[sl], mf.br[sl]])
    arbr_std = arbr.std(axis=0)
    if not np.all(arbr_std > 0):
        raise DegenerateError("training AR/BR series is constant")
    return FeaturePipeline(config, scaler, model, ret_mean, ret_std, arbr.mean(axis=0), arbr_std,
                           fingerprint(mf.groups[:train_end]), (first, last))
