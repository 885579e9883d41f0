"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, pipeline
from .agent import Trainer
from .backtest import kupiec_lr, write_report
from .config import RunConfig, STRATEGIES, load_experiment_spec, resolve_run_config
from .data import drop_partial, group_bars, parse_minute_csv, write_group_csv, write_minute_csv
from .errors import ArbrDrqnError, ConfigError, DataError
from .serialize import canonical_json, config_hash, read_json, sha256_bytes, write_csv, write_json
from .synthetic import regime_walk_minutes, sawtooth_minutes

log = logging.getLogger("arbr_drqn")


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common() -> argparse.ArgumentParser:
    # SUPPRESS so a flag given before or after the subcommand both work
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="JSON or YAML config file")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory")
    p.add_argument("--force", action="store_true", default=argparse.SUPPRESS)
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = _Parser(prog="arbr-drqn", description=__doc__.splitlines()[0], parents=[common])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="group minute bars into 30-minute bars")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--group-len", type=int, default=30)
    p.add_argument("--reset-daily", action="store_true")
    p.add_argument("--keep-partial", action="store_true", help="keep a trailing incomplete group")

    p = sub.add_parser("synth", parents=[common], help="write a seeded synthetic minute CSV")
    p.add_argument("output", type=Path)
    p.add_argument("--kind", choices=("regime_walk", "sawtooth"), default="regime_walk")
    p.add_argument("--n-groups", type=int, default=600)

    p = sub.add_parser("train", parents=[common], help="train the DRQN on the training split")
    p.add_argument("--data", type=Path, help="minute CSV (overrides the config's dataset)")
    p.add_argument("--episodes", type=int)
    p.add_argument("--steps", type=int, help="stop once this many environment steps (counted from the start) are done")
    p.add_argument("--resume", type=Path, help="continue from a checkpoint")

    p = sub.add_parser("backtest", parents=[common], help="backtest a strategy on the evaluation split")
    p.add_argument("--data", type=Path)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--strategy", choices=STRATEGIES, default="fused")

    p = sub.add_parser("experiment", parents=[common], help="run an experiment spec")
    p.add_argument("spec", type=Path)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("kupiec", parents=[common], help="Kupiec proportion-of-failures LR")
    p.add_argument("T", type=int, help="orders")
    p.add_argument("F", type=int, help="failed orders")
    p.add_argument("--alpha", type=float, default=0.5, help="benchmark failure rate")
    p.add_argument("--significance", type=float, default=0.05)
    return ap


def _opts(args) -> dict:
    return {k: getattr(args, k, d) for k, d in
            (("config", None), ("seed", None), ("out", None), ("force", False), ("quiet", False))}


def run_config(args, data: Path | None = None, episodes: int | None = None) -> RunConfig:
    o = _opts(args)
    over: dict = {}
    if o["seed"] is not None:
        over["seed"] = o["seed"]
    if o["out"] is not None:
        over["out"] = str(o["out"])
    if data is not None:
        over["dataset"] = {"name": data.stem, "path": str(data)}
    if episodes is not None:
        over["training"] = {"episodes": episodes}
    return resolve_run_config(o["config"], over)


def _groups(cfg: RunConfig):
    if cfg.dataset is None:
        raise ConfigError("no dataset: pass --data or set 'dataset' in the config")
    return pipeline.load_groups(cfg.dataset, cfg)


def _write_manifest(out: Path, kind: str, cfg_doc: dict, seed: int | None, files: list[Path], extra=None) -> None:
    write_json(out / "manifest.json", {
        "format": f"arbr_drqn.{kind}",
        "version": 1,
        "package_version": __version__,
        "config": cfg_doc,
        "config_hash": config_hash(cfg_doc),
        "seed": seed,
        "outputs": {str(p.relative_to(out)): sha256_bytes(p.read_bytes()) for p in sorted(files)},
        **(extra or {}),
    })


# --------------------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    try:
        with open(args.input, "r", encoding="utf-8", newline="") as fh:
            bars = parse_minute_csv(fh)
    except FileNotFoundError:
        raise DataError(f"input not found: {args.input}") from None
    groups = group_bars(bars, args.group_len, args.reset_daily)
    if not args.keep_partial:
        groups = drop_partial(groups, args.group_len)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    with open(args.output, "w", encoding="utf-8", newline="") as fh:
        write_group_csv(groups, fh)
    log.info("%d minute bars -> %d groups -> %s", len(bars), len(groups), args.output)
    return 0


def cmd_synth(args) -> int:
    seed = _opts(args)["seed"] or 0
    bars = (sawtooth_minutes(args.n_groups) if args.kind == "sawtooth"
            else regime_walk_minutes(args.n_groups, seed))
    args.output.parent.mkdir(parents=True, exist_ok=True)
    with open(args.output, "w", encoding="utf-8", newline="") as fh:
        write_minute_csv(bars, fh)
    return 0


def cmd_train(args) -> int:
    cfg = run_config(args, args.data, args.episodes)
    out = Path(cfg.out)
    groups = _groups(cfg)
    cfg_doc = cfg.model_dump(mode="json")
    if args.resume:
        ck = read_json(args.resume)
        prep, _ = pipeline.restore(ck, groups)
        trainer = Trainer.from_state_dict(ck, prep.states, prep.market.closes, 0, prep.split)
        log.info("resuming at step %d of %d", trainer.step, trainer.total_steps)
    else:
        prep = pipeline.prepare(groups, cfg)
        trainer = pipeline.make_trainer(prep, cfg, cfg.seed)
    target = trainer.total_steps if args.steps is None else min(trainer.total_steps, args.steps)
    while trainer.step < target:
        trainer.run(min(1000, target - trainer.step))
        last = trainer.losses[-1][1] if trainer.losses else float("nan")
        log.info("step %d/%d loss %.6g", trainer.step, trainer.total_steps, last)
    out.mkdir(parents=True, exist_ok=True)
    ck_p, loss_p = out / "checkpoint.json", out / "losses.csv"
    write_json(ck_p, pipeline.checkpoint_document(trainer, prep, cfg_doc))
    write_csv(loss_p, ["step", "loss"], trainer.losses)
    _write_manifest(out, "train", cfg_doc, trainer.config.seed, [ck_p, loss_p],
                    {"step": trainer.step, "total_steps": trainer.total_steps})
    return 0


def cmd_backtest(args) -> int:
    cfg = run_config(args, args.data)
    out = Path(cfg.out)
    groups = _groups(cfg)
    net = None
    extra = {"strategy": args.strategy}
    if args.checkpoint is not None:
        ck = read_json(args.checkpoint)
        prep, net = pipeline.restore(ck, groups)
        if prep.split != pipeline.split_index(len(groups), cfg.split):
            raise ConfigError("checkpoint split differs from the configured split")
        extra["checkpoint_sha256"] = sha256_bytes(Path(args.checkpoint).read_bytes())
    elif args.strategy in ("fused", "drqn-only"):
        raise UsageError(f"strategy {args.strategy!r} needs --checkpoint")
    else:
        prep = pipeline.prepare(groups, cfg)
    rep = pipeline.backtest(args.strategy, prep, cfg, net)
    cfg_doc = cfg.model_dump(mode="json")
    paths = write_report(rep, out, {**cfg_doc, **extra}, cfg.seed)
    _write_manifest(out, "backtest", cfg_doc, cfg.seed, list(paths.values()), extra)
    m = rep.metrics()
    log.info("%s: annual return %s, sharpe %s, %d fills", args.strategy, m["annual_return"], m["sharpe"],
             m["n_fills"])
    return 0


def cmd_experiment(args) -> int:
    from .experiments import run_experiment

    o = _opts(args)
    over: dict = {}
    if o["seed"] is not None:
        over["seeds"] = [o["seed"]]
    if args.workers is not None:
        over["workers"] = args.workers
    spec = load_experiment_spec(args.spec, over)
    out = o["out"] or Path("runs") / args.spec.stem
    res = run_experiment(spec, out, force=o["force"], base_dir=args.spec.resolve().parent)
    if res.skipped:
        print(f"{out}: up to date (hash {res.config_hash[:12]}); use --force to rerun")
    else:
        print(f"{out}: wrote {len(res.tables)} tables for {len(res.cells)} cells")
    return 0


def cmd_kupiec(args) -> int:
    r = kupiec_lr(args.T, args.F, args.alpha, args.significance)
    sys.stdout.write(canonical_json(r.as_dict()) + "\n")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "train": cmd_train,
    "backtest": cmd_backtest,
    "experiment": cmd_experiment,
    "kupiec": cmd_kupiec,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    logging.basicConfig(level=logging.WARNING if _opts(args)["quiet"] else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except ArbrDrqnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON input: {exc}", file=sys.stderr)
        return 2
