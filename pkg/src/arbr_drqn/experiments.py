"""Experiment harness: ablation, capital sweep, strategy comparison, order
accuracy and Kupiec period sweep.

Each (dataset, seed) pair is an independent *cell*: load, fit features on the
training slice, train once, then run every backtest the tables need on the
evaluation slice. Cells run in a bounded process pool and are merged in key
order, so the worker count never changes the output. With several seeds the
per-dataset table values are means over seeds (order counts are pooled).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from . import __version__, pipeline
from .backtest import BacktestReport, kupiec_lr
from .config import ExperimentSpec
from .data import format_timestamp
from .errors import ConfigError
from .serialize import config_hash, read_json, sha256_bytes, write_csv, write_json

log = logging.getLogger(__name__)

MANIFEST_FORMAT = "arbr_drqn.experiment"
MANIFEST_VERSION = 1
NEEDS_NETWORK = ("fused", "drqn-only")
# column labels for the comparison layout, in display order
STRATEGY_LABELS = {
    "buy_hold": "hold_and_buy",
    "double_ma": "double_moving_average",
    "fused": "drqn_arbr",
    "drqn-only": "drqn_only",
    "arbr-only": "arbr_only",
    "hold": "hold",
}


def model_strategy(spec: ExperimentSpec) -> str:
    """The strategy the capital, accuracy and Kupiec tables are about."""
    for s in ("fused", "drqn-only"):
        if s in spec.strategies:
            return s
    return spec.strategies[0]


# --------------------------------------------------------------------------- cells


@dataclass
class CellResult:
    dataset: str
    seed: int
    metrics: dict[str, dict]  # strategy -> {annual_return, sharpe, ...}
    capital: dict[str, dict]  # repr(level) -> {annual_return, sharpe}
    accuracy: dict[str, int]
    kupiec_counts: dict[int, tuple[int, int]]  # period -> (T, F)
    curve: dict[str, list]  # timestamp / buy_hold / model equity
    checkpoint: dict | None
    info: dict

    @property
    def key(self) -> tuple[str, int]:
        return (self.dataset, self.seed)


def _brief(rep: BacktestReport) -> dict:
    return {
        "annual_return": rep.annual_return,
        "sharpe": rep.sharpe,
        "cumulative_reward": rep.cumulative_reward,
        "final_equity": rep.equity_curve[-1][1],
        "n_fills": len(rep.fills),
        "fee_total": float(rep.fee_total),
    }


def kupiec_counts(rep: BacktestReport, n_eval: int, periods: Sequence[int], groups_per_day: int) -> dict:
    """(T, F) over the last ``period`` trading days of the evaluation window.

    A slice longer than the window is clamped to the whole window.
    """
    out = {}
    for p in periods:
        lo = max(0, n_eval - p * groups_per_day)
        scored = [f for f in rep.fills if f.index >= lo and f.correct is not None]
        out[p] = (len(scored), sum(1 for f in scored if not f.correct))
    return out


def run_cell(spec: ExperimentSpec, dataset: str, seed: int, base_dir: Path | None = None) -> CellResult:
    ds = next((d for d in spec.datasets if d.name == dataset), None)
    if ds is None:
        raise ConfigError(f"no dataset named {dataset!r}")
    groups = pipeline.load_groups(ds, spec, base_dir)
    prep = pipeline.prepare(groups, spec)
    net = None
    checkpoint = None
    losses = 0
    if any(s in NEEDS_NETWORK for s in spec.strategies):
        trainer = pipeline.train(prep, spec, seed)
        net, losses = trainer.net, len(trainer.losses)
        checkpoint = pipeline.checkpoint_document(trainer, prep)
    model = model_strategy(spec)
    base = spec.backtest.initial_capital
    reports = {s: pipeline.backtest(s, prep, spec, net, base) for s in spec.strategies}
    if "buy_hold" not in reports:
        reports["buy_hold"] = pipeline.backtest("buy_hold", prep, spec, net, base)
    capital = {}
    for level in spec.capital_levels:
        rep = reports[model] if level == base else pipeline.backtest(model, prep, spec, net, level)
        capital[repr(float(level))] = {"annual_return": rep.annual_return, "sharpe": rep.sharpe}
    mrep = reports[model]
    acc = mrep.accuracy
    if acc.placed == 0:
        log.warning("dataset %s seed %d: %s placed no scored orders", dataset, seed, model)
    n_eval = len(prep.eval_groups)
    curve = {
        "timestamp": [format_timestamp(ts) for ts, _ in mrep.equity_curve],
        "buy_hold": [v for _, v in reports["buy_hold"].equity_curve],
        "model": [v for _, v in mrep.equity_curve],
    }
    return CellResult(
        dataset=dataset,
        seed=seed,
        metrics={s: _brief(reports[s]) for s in spec.strategies},
        capital=capital,
        accuracy={"buy_placed": acc.buy_placed, "buy_correct": acc.buy_correct,
                  "sell_placed": acc.sell_placed, "sell_correct": acc.sell_correct, "unscored": acc.unscored},
        kupiec_counts=kupiec_counts(mrep, n_eval, spec.kupiec_periods, spec.groups_per_day),
        curve=curve,
        checkpoint=checkpoint,
        info={"n_groups": len(groups), "split": prep.split, "n_eval": n_eval,
              "train_fingerprint": prep.features.train_fingerprint, "train_rows": list(prep.features.train_rows),
              "n_updates": losses, "model_strategy": model},
    )


def _cell_job(args):
    spec_doc, dataset, seed, base_dir = args
    return run_cell(ExperimentSpec.model_validate(spec_doc), dataset, seed, base_dir)


def run_cells(spec: ExperimentSpec, base_dir: Path | None = None) -> list[CellResult]:
    keys = [(d.name, s) for d in spec.datasets for s in spec.seeds]
    if spec.workers <= 1 or len(keys) <= 1:
        results = [run_cell(spec, d, s, base_dir) for d, s in keys]
    else:
        doc = spec.model_dump(mode="json")
        with ProcessPoolExecutor(max_workers=min(spec.workers, len(keys))) as pool:
            results = list(pool.map(_cell_job, [(doc, d, s, base_dir) for d, s in keys]))
    order = {k: i for i, k in enumerate(keys)}
    return sorted(results, key=lambda c: order[c.key])


# --------------------------------------------------------------------------- tables


@dataclass
class Table:
    name: str
    title: str
    columns: list[str]
    rows: list[list[Any]]

    def to_dict(self) -> dict:
        return {"name": self.name, "title": self.title, "columns": self.columns, "rows": self.rows}

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def write(self, out_dir: Path) -> list[Path]:
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_p, json_p = out_dir / f"{self.name}.csv", out_dir / f"{self.name}.json"
        write_csv(csv_p, self.columns, self.rows)
        write_json(json_p, self.to_dict())
        return [csv_p, json_p]

    def markdown(self, digits: int = 2) -> str:
        def cell(v):
            if v is None:
                return "NA"
            if isinstance(v, float):
                return f"{v:.{digits}f}"
            return str(v)

        lines = [f"### {self.title}", "", "| " + " | ".join(self.columns) + " |",
                 "|" + "---|" * len(self.columns)]
        lines += ["| " + " | ".join(cell(v) for v in r) + " |" for r in self.rows]
        return "\n".join(lines) + "\n"


def _mean(xs: Sequence[float | None]) -> float | None:
    vals = [x for x in xs if x is not None]
    return math.fsum(vals) / len(vals) if vals else None


@dataclass
class ComparisonTable:
    """Annual return (percent) and Sharpe (or NA) keyed by (index, strategy)."""

    entries: dict[tuple[str, str], dict] = field(default_factory=dict)
    datasets: list[str] = field(default_factory=list)
    strategies: list[str] = field(default_factory=list)

    def get(self, index: str, strategy: str) -> dict:
        return self.entries[(index, strategy)]

    def average(self, strategy: str) -> dict:
        rows = [self.entries[(d, strategy)] for d in self.datasets]
        return {"annual_return": _mean([r["annual_return"] for r in rows]),
                "sharpe": _mean([r["sharpe"] for r in rows])}

    def to_dict(self) -> dict:
        return {"rows": [{"index": d, "strategy": s, **self.entries[(d, s)]}
                         for d in self.datasets for s in self.strategies]}


def comparison_from_cells(cells: Sequence[CellResult], datasets: Sequence[str],
                          strategies: Sequence[str]) -> ComparisonTable:
    ct = ComparisonTable(datasets=list(datasets), strategies=list(strategies))
    for d in datasets:
        mine = [c for c in cells if c.dataset == d]
        for s in strategies:
            ct.entries[(d, s)] = {
                "annual_return": _mean([c.metrics[s]["annual_return"] for c in mine]),
                "sharpe": _mean([c.metrics[s]["sharpe"] for c in mine]),
            }
    return ct


def _names(spec: ExperimentSpec) -> list[str]:
    return [d.name for d in spec.datasets]


def _cells(spec, cells, base_dir):
    return run_cells(spec, base_dir) if cells is None else cells


def run_ablation(spec: ExperimentSpec, cells: Sequence[CellResult] | None = None,
                 base_dir: Path | None = None) -> ComparisonTable:
    present = [s for s in ("fused", "drqn-only") if s in spec.strategies]
    if not present:
        raise ConfigError("ablation needs 'fused' and/or 'drqn-only' in strategies")
    return comparison_from_cells(_cells(spec, cells, base_dir), _names(spec), present)


def ablation_layout(ct: ComparisonTable) -> Table:
    groups = {"fused": "with_arbr", "drqn-only": "without_arbr"}
    cols = ["index"]
    for s in ct.strategies:
        cols += [f"{groups[s]}_annual_return", f"{groups[s]}_sharpe"]
    rows = []
    for d in ct.datasets:
        r: list[Any] = [d]
        for s in ct.strategies:
            e = ct.get(d, s)
            r += [e["annual_return"], e["sharpe"]]
        rows.append(r)
    avg: list[Any] = ["Average"]
    for s in ct.strategies:
        a = ct.average(s)
        avg += [a["annual_return"], a["sharpe"]]
    rows.append(avg)
    return Table("ablation", "Ablation: with and without ARBR", cols, rows)


def run_capital_sweep(spec: ExperimentSpec, cells: Sequence[CellResult] | None = None,
                      base_dir: Path | None = None) -> Table:
    cells = _cells(spec, cells, base_dir)
    levels = [repr(float(x)) for x in spec.capital_levels]
    cols = ["index"]
    for lv in levels:
        tag = f"{float(lv):g}" if float(lv) != int(float(lv)) else str(int(float(lv)))
        cols += [f"{tag}_annual_return", f"{tag}_sharpe"]
    rows = []
    for d in _names(spec):
        mine = [c for c in cells if c.dataset == d]
        r: list[Any] = [d]
        for lv in levels:
            r += [_mean([c.capital[lv]["annual_return"] for c in mine]),
                  _mean([c.capital[lv]["sharpe"] for c in mine])]
        rows.append(r)
    return Table("capital_sweep", f"Returns at different initial capital ({model_strategy(spec)})", cols, rows)


def run_strategy_comparison(spec: ExperimentSpec, cells: Sequence[CellResult] | None = None,
                            base_dir: Path | None = None) -> ComparisonTable:
    order = [s for s in STRATEGY_LABELS if s in spec.strategies]
    return comparison_from_cells(_cells(spec, cells, base_dir), _names(spec), order)


def comparison_layout(ct: ComparisonTable) -> Table:
    cols = ["index", "evaluation_index"] + [STRATEGY_LABELS[s] for s in ct.strategies]
    rows = []
    for d in ct.datasets:
        rows.append([d, "Annual Return"] + [ct.get(d, s)["annual_return"] for s in ct.strategies])
        rows.append([d, "Sharpe Ratio"] + [ct.get(d, s)["sharpe"] for s in ct.strategies])
    return Table("strategy_comparison", "Comparison of strategies", cols, rows)


def equity_rows(cell: CellResult) -> tuple[list[str], list[list]]:
    c = cell.curve
    return ["timestamp", "buy_hold", "model"], [list(r) for r in zip(c["timestamp"], c["buy_hold"], c["model"])]


def accuracy_rows(index: str, counts: dict) -> list[list]:
    bp, bc, sp, sc = counts["buy_placed"], counts["buy_correct"], counts["sell_placed"], counts["sell_correct"]
    placed = bp + sp

    def pct(a, b):
        return 100.0 * a / b if b else None

    return [[index, "Buy", bp, pct(bp, placed), bc, pct(bc, bp)],
            [index, "Sell", sp, pct(sp, placed), sc, pct(sc, sp)]]


def run_accuracy_table(spec: ExperimentSpec, cells: Sequence[CellResult] | None = None,
                       base_dir: Path | None = None) -> Table:
    cells = _cells(spec, cells, base_dir)
    cols = ["index", "order", "placed", "placed_pct", "correct", "correct_pct"]
    rows = []
    for d in _names(spec):
        mine = [c for c in cells if c.dataset == d]
        pooled = {k: sum(c.accuracy[k] for c in mine) for k in ("buy_placed", "buy_correct", "sell_placed",
                                                                 "sell_correct")}
        if pooled["buy_placed"] + pooled["sell_placed"] == 0:
            log.warning("accuracy table: %s has no scored orders", d)
        rows += accuracy_rows(d, pooled)
    return Table("order_accuracy", f"Order accuracy ({model_strategy(spec)})", cols, rows)


def run_kupiec_sweep(spec: ExperimentSpec, cells: Sequence[CellResult] | None = None,
                     base_dir: Path | None = None) -> Table:
    cells = _cells(spec, cells, base_dir)
    cols = ["index"] + [str(p) for p in spec.kupiec_periods]
    rows = []
    for d in _names(spec):
        mine = [c for c in cells if c.dataset == d]
        r: list[Any] = [d]
        for p in spec.kupiec_periods:
            T = sum(c.kupiec_counts[p][0] for c in mine)
            F = sum(c.kupiec_counts[p][1] for c in mine)
            r.append(kupiec_lr(T, F, spec.kupiec_alpha, spec.kupiec_significance).lr if T else None)
        rows.append(r)
    return Table("kupiec_lr", f"Kupiec LR by period (alpha={spec.kupiec_alpha:g})", cols, rows)


# --------------------------------------------------------------------------- run directory


@dataclass
class ExperimentResult:
    out_dir: Path
    skipped: bool
    config_hash: str
    tables: dict[str, Table] = field(default_factory=dict)
    cells: list[CellResult] = field(default_factory=list)


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in name).strip("_").lower() or "dataset"


def spec_hash(spec: ExperimentSpec) -> str:
    return config_hash({"spec": spec.model_dump(mode="json"), "version": __version__})


def run_experiment(spec: ExperimentSpec, out_dir: Path | str, force: bool = False,
                   base_dir: Path | None = None) -> ExperimentResult:
    """Run every table the strategy set allows and write the run directory.

    A directory whose manifest already carries this spec's hash is left alone
    unless ``force``.
    """
    out = Path(out_dir)
    h = spec_hash(spec)
    manifest_p = out / "manifest.json"
    if manifest_p.exists() and not force:
        try:
            old = read_json(manifest_p)
        except ValueError:
            old = {}
        if old.get("config_hash") == h:
            log.info("%s already holds this experiment (hash %s); skipping", out, h[:12])
            return ExperimentResult(out, True, h)

    cells = run_cells(spec, base_dir)
    tables: dict[str, Table] = {}
    if any(s in spec.strategies for s in ("fused", "drqn-only")):
        tables["ablation"] = ablation_layout(run_ablation(spec, cells))
    tables["capital_sweep"] = run_capital_sweep(spec, cells)
    comparison = run_strategy_comparison(spec, cells)
    tables["strategy_comparison"] = comparison_layout(comparison)
    tables["order_accuracy"] = run_accuracy_table(spec, cells)
    tables["kupiec_lr"] = run_kupiec_sweep(spec, cells)

    written: list[Path] = []
    for t in tables.values():
        written += t.write(out / "tables")
    p = out / "tables" / "comparison.json"
    write_json(p, comparison.to_dict())
    written.append(p)
    md = "\n".join(t.markdown(4 if t.name == "kupiec_lr" else 2) for t in tables.values())
    p = out / "tables" / "tables.md"
    p.write_text(md, encoding="utf-8")
    written.append(p)
    for c in cells:
        stem = f"{_slug(c.dataset)}_seed{c.seed}"
        header, rows = equity_rows(c)
        p = out / "curves" / f"{stem}_equity.csv"
        p.parent.mkdir(parents=True, exist_ok=True)
        write_csv(p, header, rows)
        written.append(p)
        if c.checkpoint is not None:
            p = out / "checkpoints" / f"{stem}.json"
            p.parent.mkdir(parents=True, exist_ok=True)
            write_json(p, c.checkpoint)
            written.append(p)
        p = out / "cells" / f"{stem}.json"
        p.parent.mkdir(parents=True, exist_ok=True)
        write_json(p, {"dataset": c.dataset, "seed": c.seed, "metrics": c.metrics, "capital": c.capital,
                       "accuracy": c.accuracy,
                       "kupiec_counts": {str(k): list(v) for k, v in c.kupiec_counts.items()},
                       "info": c.info})
        written.append(p)

    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "package_version": __version__,
        "config_hash": h,
        "spec": spec.model_dump(mode="json"),
        "seeds": list(spec.seeds),
        "datasets": {c.dataset: {k: c.info[k] for k in ("n_groups", "split", "train_fingerprint")}
                     for c in cells},
        "outputs": {str(q.relative_to(out)): sha256_bytes(q.read_bytes()) for q in sorted(written)},
    }
    write_json(manifest_p, manifest)
    return ExperimentResult(out, False, h, tables, cells)

