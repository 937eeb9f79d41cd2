from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from model.types import TrainReport
from service import reference
from service.experiment import CompareOutcome, Experiment, TrainOutcome
from service.file_utils import ensure_dir, write_csv, write_json, write_matrix_csv

log = logging.getLogger("lieode")


@dataclass(frozen=True)
class ExportResult:
    export_dir: Path
    files: list[Path]


def trajectory_header(variables: Sequence[str], with_reference: bool) -> list[str]:
    header = ["t", *(f"yhat_{v}" for v in variables)]
    if with_reference:
        header += [f"ref_{v}" for v in variables]
    return header


def write_loss_history(path: Path, report: TrainReport, digits: int = 17) -> Path:
    rows = ([r.iteration, r.loss, r.grad_norm] for r in report.loss_history)
    return write_csv(path, ["iteration", "loss", "grad_norm"], rows, digits)


def _write_trajectory(path: Path, outcome: TrainOutcome, times: np.ndarray, digits: int) -> Path:
    exp = outcome.experiment
    assert outcome.trial is not None
    yhat = outcome.trial.values_at(times)
    blocks = [yhat]
    if outcome.reference is not None:
        blocks.append(reference.sample(outcome.reference, times))
    header = trajectory_header(exp.system.variables, outcome.reference is not None)
    return write_matrix_csv(path, header, times, *blocks, digits=digits)


def export_train(outcome: TrainOutcome, export_dir: Path, digits: int = 17) -> ExportResult:
    """
    trajectory.csv (train grid), extrapolation.csv (test grid),
    loss_history.csv and report.json. Whatever exists is written even when
    the run failed.
    """
    ensure_dir(export_dir)
    files: list[Path] = []
    exp = outcome.experiment
    if outcome.trial is not None:
        files.append(_write_trajectory(export_dir / "trajectory.csv", outcome, exp.train_grid, digits))
        files.append(_write_trajectory(export_dir / "extrapolation.csv", outcome, exp.test_grid, digits))
    if outcome.train_report is not None:
        files.append(write_loss_history(export_dir / "loss_history.csv", outcome.train_report, digits))
    files.append(write_json(export_dir / "report.json", outcome.report.to_json()))
    log.info(f"  [{exp.name}] wrote {len(files)} files to {export_dir}")
    return ExportResult(export_dir=export_dir, files=files)


def export_reference(
    exp: Experiment,
    times: np.ndarray,
    states: np.ndarray,
    export_dir: Path,
    digits: int = 17,
) -> ExportResult:
    path = write_matrix_csv(
        export_dir / "reference.csv",
        ["t", *exp.system.variables],
        times,
        states,
        digits=digits,
    )
    log.info(f"  [{exp.name}] wrote {path}")
    return ExportResult(export_dir=export_dir, files=[path])


def export_compare(outcome: CompareOutcome, export_dir: Path, digits: int = 17) -> ExportResult:
    ensure_dir(export_dir)
    files = [
        write_loss_history(export_dir / run.history_csv, outcome.histories[run.label], digits)
        for run in outcome.report.runs
    ]
    files.append(write_json(export_dir / "compare.json", outcome.report.to_json()))
    log.info(f"  [{outcome.experiment.name}] wrote {len(files)} files to {export_dir}")
    return ExportResult(export_dir=export_dir, files=files)
