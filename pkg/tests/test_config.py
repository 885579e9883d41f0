import json

import pytest

from arbr_drqn.config import (
    STRATEGIES,
    ExperimentSpec,
    RunConfig,
    load_experiment_spec,
    reference_datasets,
    parse,
    resolve_run_config,
)
from arbr_drqn.errors import ConfigError
from arbr_drqn.synthetic import INDEX_TABLE


def test_defaults_build_numerical_configs():
    cfg = RunConfig()
    assert cfg.feature_config().state_width == 30
    t = cfg.training.build(seed=4)
    assert (t.hidden, t.seq_len, t.batch_size, t.gamma, t.alpha, t.target_sync, t.seed) == (32, 8, 32, 0.9, 1e-3, 200, 4)
    assert cfg.rule.build().br_overbought == 300
    assert cfg.backtest.metrics().periods_per_year == 2016
    assert "hold" in STRATEGIES


def test_overrides_take_precedence(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 1\ntraining:\n  hidden: 8\n  episodes: 2\n")
    cfg = resolve_run_config(p, {"seed": 5, "training": {"episodes": 3}})
    assert (cfg.seed, cfg.training.hidden, cfg.training.episodes) == (5, 8, 3)


def test_unknown_and_invalid_fields_are_named(tmp_path):
    with pytest.raises(ConfigError, match="training.hiden"):
        parse(RunConfig, {"training": {"hiden": 3}})
    with pytest.raises(ConfigError, match="split"):
        parse(RunConfig, {"split": 1.5})
    with pytest.raises(ConfigError, match="rule"):
        parse(RunConfig, {"rule": {"ar_oversold": 500}})
    with pytest.raises(ConfigError, match="pca_k"):
        parse(RunConfig, {"features": {"pca_k": 30}}).feature_config()
    with pytest.raises(ConfigError):
        resolve_run_config(tmp_path / "missing.json")


def test_dataset_needs_exactly_one_source():
    with pytest.raises(ConfigError, match="exactly one"):
        parse(ExperimentSpec, {"datasets": [{"name": "a"}]})
    with pytest.raises(ConfigError, match="exactly one"):
        parse(ExperimentSpec, {"datasets": [{"name": "a", "path": "x.csv", "synthetic": {}}]})


def test_experiment_spec_validation(tmp_path):
    ds = [{"name": "a", "synthetic": {}}]
    with pytest.raises(ConfigError, match="datasets"):
        parse(ExperimentSpec, {"datasets": []})
    with pytest.raises(ConfigError, match="duplicate"):
        parse(ExperimentSpec, {"datasets": ds, "strategies": ["fused", "fused"]})
    with pytest.raises(ConfigError, match="unique"):
        parse(ExperimentSpec, {"datasets": ds * 2})
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"datasets": ds}))
    assert load_experiment_spec(p, {"workers": 3}).workers == 3


def test_reference_datasets():
    ds = reference_datasets(n_groups=100)
    assert len(ds) == 9 == len(INDEX_TABLE)
    assert len({d.synthetic.seed for d in ds}) == 9
    assert all(d.synthetic.n_groups == 100 for d in ds)
