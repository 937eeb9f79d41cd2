from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence

from model.request.experiment_config import ExperimentConfig, load_experiment
from service import experiment
from service.batch_runner import BenchOverrides, run_bench_all
from service.config_loader import AppConfig, ConfigError, load_app_config
from service.export_runner import export_compare, export_reference, export_train
from service.exprlang import DomainError
from service.systems import PRESETS
from service.training import TrainingDomainError

APP_ROOT = Path(__file__).resolve().parent
DEFAULT_APP_CONFIG = APP_ROOT / "config" / "lieode_config.json"

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_NUMERICAL_FAILURE = 2


def _setup_logging(log_dir: Path) -> logging.Logger:
    """Log to stdout and to logs/lieode_YYYYMMDD_HHMMSS.log"""
    log_dir.mkdir(parents=True, exist_ok=True)
    log_file = log_dir / f"lieode_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"

    logger = logging.getLogger("lieode")
    logger.setLevel(logging.INFO)
    for h in list(logger.handlers):
        logger.removeHandler(h)
        h.close()

    fmt = logging.Formatter("%(asctime)s | %(message)s", datefmt="%Y-%m-%d %H:%M:%S")

    fh = logging.FileHandler(log_file, encoding="utf-8")
    fh.setFormatter(fmt)
    logger.addHandler(fh)

    ch = logging.StreamHandler(sys.stdout)
    ch.setFormatter(fmt)
    logger.addHandler(ch)

    logger.info(f"Log file: {log_file}")
    return logger


def _rooted(p: Path) -> Path:
    return p if p.is_absolute() else APP_ROOT / p


def _add_selection(sub: argparse.ArgumentParser) -> None:
    group = sub.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", choices=sorted(PRESETS), help="built-in system")
    group.add_argument("--config", type=Path, help="experiment JSON file")


def _add_overrides(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--restarts", type=int, default=None)
    sub.add_argument("--max-iters", type=int, default=None, dest="max_iters")
    sub.add_argument("--out", type=Path, default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lieode",
        description="Affine-flow seeded neural-network IVP solver with an RK45 oracle.",
    )
    parser.add_argument("--app-config", type=Path, default=DEFAULT_APP_CONFIG, dest="app_config")
    subs = parser.add_subparsers(dest="command", required=True)

    train = subs.add_parser("train", help="train the trial solution and compare with rk45")
    _add_selection(train)
    _add_overrides(train)

    ref = subs.add_parser("reference", help="integrate with rk45 only")
    _add_selection(ref)
    _add_overrides(ref)

    compare = subs.add_parser("compare", help="train per optimizer / base from identical seeds")
    _add_selection(compare)
    _add_overrides(compare)
    compare.add_argument("--methods", default="bfgs,gd", help="comma list of bfgs, gd")
    compare.add_argument("--seeds", type=int, default=1, help="consecutive seeds per method")
    compare.add_argument("--bases", default=None, help="comma list of lie, initial")

    bench = subs.add_parser("bench-all", help="train every preset and write a summary table")
    bench.add_argument("--seed", type=int, default=None)
    bench.add_argument("--restarts", type=int, default=None)
    bench.add_argument("--max-iters", type=int, default=None, dest="max_iters")
    bench.add_argument("--out", type=Path, default=None, help="export root")
    bench.add_argument("--presets", default=None, help="comma list, default all")
    return parser


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = experiment.preset_config(args.preset) if args.preset else load_experiment(args.config)
    return experiment.apply_overrides(
        cfg,
        seed=args.seed,
        restarts=args.restarts,
        max_iters=args.max_iters,
    )


def _banner(log: logging.Logger, title: str, lines: Sequence[str] = ()) -> None:
    log.info("=" * 60)
    log.info(f"  {title}")
    for line in lines:
        log.info(f"  {line}")
    log.info("=" * 60)


def cmd_train(args: argparse.Namespace, app: AppConfig, log: logging.Logger) -> int:
    exp = experiment.resolve(_experiment_config(args), log_every=app.log_every)
    out = experiment.output_dir_for(exp, app, args.out)
    _banner(log, f"TRAIN {exp.name}", [
        f"System   : {exp.system.name} (n={exp.system.dim})",
        f"Base     : {exp.base_kind}",
        f"Grid     : {exp.train_grid.size} points on [{exp.train_grid[0]}, {exp.train_grid[-1]}]",
        f"Hidden   : {exp.hidden_units}",
        f"Restarts : {exp.restarts} from seed {exp.seed}",
        f"Threads  : {app.threads}",
    ])
    outcome = experiment.run_train(exp, app)
    export_train(outcome, out, digits=app.csv_digits)
    r = outcome.report
    _banner(log, "DONE", [
        f"status     : {r.status}",
        f"final loss : {r.final_loss}",
        f"rmse train : {r.rmse_train}",
        f"rmse test  : {r.rmse_extrapolation}",
        f"output     : {out}",
    ])
    if r.status == "domain_error":
        return EXIT_USER_ERROR
    return EXIT_NUMERICAL_FAILURE if outcome.failed else EXIT_OK


def cmd_reference(args: argparse.Namespace, app: AppConfig, log: logging.Logger) -> int:
    exp = experiment.resolve(_experiment_config(args), log_every=app.log_every)
    out = experiment.output_dir_for(exp, app, args.out)
    _banner(log, f"REFERENCE {exp.name}", [
        f"Span : [0, {exp.span_end}]",
        f"rtol : {app.reference_rtol} | atol : {app.reference_atol}",
    ])
    times, states, sol = experiment.run_reference(exp, app)
    export_reference(exp, times, states, out, digits=app.csv_digits)
    log.info(f"  rk45: {sol.accepted_steps} accepted, {sol.rejected_steps} rejected steps")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace, app: AppConfig, log: logging.Logger) -> int:
    methods = experiment.parse_methods(args.methods)
    bases = experiment.parse_bases(args.bases)
    cfg = _experiment_config(args)
    _banner(log, f"COMPARE {cfg.label}", [
        f"Methods : {methods}",
        f"Bases   : {bases or [cfg.base]}",
        f"Seeds   : {args.seeds} from {cfg.seed}",
    ])
    outcome = experiment.run_compare(
        cfg, methods, seeds=args.seeds, bases=bases, log_every=app.log_every, threads=app.threads
    )
    out = experiment.output_dir_for(outcome.experiment, app, args.out)
    export_compare(outcome, out, digits=app.csv_digits)
    rep = outcome.report
    _banner(log, "DONE", [
        f"bfgs wins : {rep.bfgs_wins} / {len(rep.seeds)}" if rep.bfgs_wins is not None else "bfgs wins : n/a",
        f"lie wins  : {rep.lie_wins} / {len(rep.seeds)}" if rep.lie_wins is not None else "lie wins  : n/a",
        f"output    : {out}",
    ])
    return EXIT_OK


def cmd_bench_all(args: argparse.Namespace, app: AppConfig, log: logging.Logger) -> int:
    presets = None
    if args.presets:
        presets = [p.strip() for p in args.presets.split(",") if p.strip()]
        unknown = [p for p in presets if p not in PRESETS]
        if unknown or not presets:
            raise ConfigError(f"unknown presets {unknown}, expected {sorted(PRESETS)}", "presets")
    _banner(log, "BENCH ALL", [
        f"Presets     : {presets or list(PRESETS)}",
        f"Max workers : {app.max_workers}",
    ])
    start = time.perf_counter()
    result = run_bench_all(
        app,
        presets=presets,
        overrides=BenchOverrides(seed=args.seed, restarts=args.restarts, max_iters=args.max_iters),
        export_root=args.out,
    )
    elapsed = time.perf_counter() - start
    lines = [f"{row.preset:<12} | {row.status:<20} | L={row.our_loss} | rmse={row.our_rmse}" for row in result.summary.rows]
    _banner(log, "ALL DONE", [
        f"run_id : {result.run_id}",
        *lines,
        f"Jobs   : {result.jobs_total} (ok: {result.jobs_ok}, error: {result.jobs_error})",
        f"Time   : {elapsed:.1f}s ({elapsed / 60:.1f} min)",
    ])
    return EXIT_OK if result.jobs_error == 0 else EXIT_NUMERICAL_FAILURE


COMMANDS = {
    "train": cmd_train,
    "reference": cmd_reference,
    "compare": cmd_compare,
    "bench-all": cmd_bench_all,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        app = load_app_config(_rooted(args.app_config))
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USER_ERROR
    app = replace(app, export_root=_rooted(app.export_root), log_dir=_rooted(app.log_dir))
    log = _setup_logging(app.log_dir)

    try:
        return COMMANDS[args.command](args, app, log)
    except (ValueError, KeyError) as e:
        # config, parse and validation errors
        log.error(f"  ERROR: {e}")
        return EXIT_USER_ERROR
    except (DomainError, TrainingDomainError) as e:
        log.error(f"  DOMAIN ERROR: {e}")
        return EXIT_USER_ERROR
    except ArithmeticError as e:
        log.error(f"  NUMERICAL FAILURE: {e}")
        return EXIT_NUMERICAL_FAILURE


if __name__ == "__main__":
    raise SystemExit(main())
