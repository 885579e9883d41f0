"""Run and experiment configuration files.

Configs are JSON or YAML documents validated with pydantic; unknown keys are
rejected so typos surface with their field path. Each section converts to the
plain dataclass consumed by the numerical modules.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .backtest import GROUPS_PER_YEAR, MetricsConfig
from .drqn import TrainingConfig
from .errors import ConfigError
from .features import FeatureConfig
from .indicators import DEFAULT_COLUMNS, IndicatorConfig
from .strategy import ArbrRuleConfig

SCHEMA_VERSION = 1
STRATEGIES = ("fused", "drqn-only", "arbr-only", "double_ma", "buy_hold", "hold")
DEFAULT_CAPITAL_LEVELS = (100000.0, 200000.0, 300000.0)
DEFAULT_KUPIEC_PERIODS = (5, 10, 19, 20, 21, 37, 60, 73, 78, 80, 120, 240)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class IndicatorSection(_Section):
    columns: tuple[str, ...] = DEFAULT_COLUMNS
    macd: tuple[int, int, int] = (12, 26, 9)
    boll: tuple[int, float] = (20, 2.0)
    arbr_n: int = Field(26, ge=1)
    arbr_basis: Literal["group", "day"] = "group"

    def build(self) -> IndicatorConfig:
        return IndicatorConfig(tuple(self.columns), tuple(self.macd), tuple(self.boll), self.arbr_n, self.arbr_basis)


class FeatureSection(_Section):
    group_len: int = Field(30, ge=1)
    reset_daily: bool = False
    drop_partial: bool = True
    return_window: int = Field(8, ge=1)
    pca_k: int = Field(20, ge=1)

    def build(self, indicators: IndicatorSection) -> FeatureConfig:
        if self.pca_k > len(indicators.columns):
            raise ConfigError(f"features.pca_k={self.pca_k} exceeds the {len(indicators.columns)} indicator columns")
        return FeatureConfig(self.return_window, self.pca_k, indicators.build())


class TrainingSection(_Section):
    alpha: float = Field(1e-3, gt=0)
    gamma: float = Field(0.9, ge=0, lt=1)
    epsilon_start: float = Field(1.0, ge=0, le=1)
    epsilon_end: float = Field(0.05, ge=0, le=1)
    epsilon_decay_fraction: float = Field(0.2, gt=0, le=1)
    batch_size: int = Field(32, ge=1)
    seq_len: int = Field(8, ge=1)
    hidden: int = Field(32, ge=1)
    replay_capacity: int = Field(10_000, ge=1)
    target_sync: int = Field(200, ge=1)
    use_target: bool = True
    max_grad_norm: float | None = None
    episodes: int = Field(10, ge=0)
    reward_scale: float = Field(1.0, gt=0)

    def build(self, seed: int) -> TrainingConfig:
        d = self.model_dump(exclude={"episodes", "reward_scale"})
        return TrainingConfig(seed=seed, **d)


class RuleSection(_Section):
    ar_oversold: float = 80.0
    ar_overbought: float = 180.0
    br_oversold: float = 70.0
    br_overbought: float = 300.0
    divergence_margin: float = 1.0

    @model_validator(mode="after")
    def _ordered(self):
        if not self.ar_oversold < self.ar_overbought:
            raise ValueError("ar_oversold must be below ar_overbought")
        if not self.br_oversold < self.br_overbought:
            raise ValueError("br_oversold must be below br_overbought")
        return self

    def build(self) -> ArbrRuleConfig:
        return ArbrRuleConfig(**self.model_dump())


class BacktestSection(_Section):
    initial_capital: float = Field(100000.0, gt=0)
    fee_rate: float = Field(0.001, ge=0)
    trade_fraction: float = Field(1.0, gt=0, le=1)
    periods_per_year: float = Field(float(GROUPS_PER_YEAR), gt=0)
    risk_free_per_period: float = 0.0
    annualization: Literal["compound", "simple"] = "compound"
    accuracy_horizon: int = Field(1, ge=1)
    double_ma: tuple[int, int] = (5, 20)

    @field_validator("double_ma")
    @classmethod
    def _ma_order(cls, v):
        if not 1 <= v[0] < v[1]:
            raise ValueError("double_ma needs 1 <= short < long")
        return v

    def metrics(self) -> MetricsConfig:
        return MetricsConfig(self.periods_per_year, self.risk_free_per_period, self.annualization,
                             self.accuracy_horizon)


class SyntheticSource(_Section):
    kind: Literal["regime_walk", "sawtooth"] = "regime_walk"
    seed: int = 0
    n_groups: int = Field(600, ge=2)
    base: float | None = None
    period: int = Field(20, ge=2)
    amplitude: float = Field(0.05, gt=0, lt=1)


class DatasetSpec(_Section):
    name: str
    code: str | None = None
    path: str | None = None
    synthetic: SyntheticSource | None = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.path is None) == (self.synthetic is None):
            raise ValueError("exactly one of 'path' or 'synthetic' must be given")
        return self


class PipelineConfig(_Section):
    """Settings shared by single runs and experiments."""

    split: float = Field(0.7, gt=0, lt=1)
    indicators: IndicatorSection = IndicatorSection()
    features: FeatureSection = FeatureSection()
    training: TrainingSection = TrainingSection()
    rule: RuleSection = RuleSection()
    backtest: BacktestSection = BacktestSection()

    def feature_config(self) -> FeatureConfig:
        return self.features.build(self.indicators)


class RunConfig(PipelineConfig):
    version: Literal[1] = 1
    seed: int = 0
    dataset: DatasetSpec | None = None
    out: str = "runs/latest"


class ExperimentSpec(PipelineConfig):
    version: Literal[1] = 1
    datasets: list[DatasetSpec] = Field(min_length=1)
    strategies: list[Literal["fused", "drqn-only", "arbr-only", "double_ma", "buy_hold", "hold"]] = Field(
        default_factory=lambda: ["fused", "drqn-only", "arbr-only", "double_ma", "buy_hold"], min_length=1)
    capital_levels: list[float] = Field(default_factory=lambda: list(DEFAULT_CAPITAL_LEVELS), min_length=1)
    kupiec_periods: list[int] = Field(default_factory=lambda: list(DEFAULT_KUPIEC_PERIODS), min_length=1)
    kupiec_alpha: float = Field(0.5, gt=0, lt=1)
    kupiec_significance: float = Field(0.05, gt=0, lt=1)
    groups_per_day: int = Field(8, ge=1)
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    workers: int = Field(1, ge=1)

    @field_validator("strategies")
    @classmethod
    def _unique(cls, v):
        if len(set(v)) != len(v):
            raise ValueError("duplicate strategy")
        return v

    @field_validator("datasets")
    @classmethod
    def _unique_names(cls, v):
        names = [d.name for d in v]
        if len(set(names)) != len(names):
            raise ValueError("dataset names must be unique")
        return v


def reference_datasets(n_groups: int = 600, seed0: int = 0) -> list[DatasetSpec]:
    """Nine synthetic stand-ins named after the sector indices."""
    from .synthetic import INDEX_TABLE

    return [
        DatasetSpec(name=name, code=code, synthetic=SyntheticSource(seed=seed0 + i, n_groups=n_groups))
        for i, (name, code) in enumerate(INDEX_TABLE)
    ]


def _format_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def load_document(path: Path | str) -> dict[str, Any]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    try:
        doc = yaml.safe_load(text) if p.suffix in (".yaml", ".yml") else json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{p}: not valid {'YAML' if p.suffix in ('.yaml', '.yml') else 'JSON'}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return doc


def deep_merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def parse(model: type[BaseModel], doc: dict):
    try:
        return model.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from None


def resolve_run_config(path: Path | str | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults <- config file <- command-line overrides."""
    doc: dict = {}
    if path is not None:
        doc = load_document(path)
    if overrides:
        doc = deep_merge(doc, overrides)
    return parse(RunConfig, doc)


def load_experiment_spec(path: Path | str, overrides: dict | None = None) -> ExperimentSpec:
    doc = load_document(path)
    if overrides:
        doc = deep_merge(doc, overrides)
    return parse(ExperimentSpec, doc)
