from __future__ import annotations

import logging
import time
import uuid
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence

from model.response.run_report import BenchRow, BenchSummary
from service import experiment
from service.config_loader import AppConfig
from service.export_runner import export_train
from service.file_utils import ensure_dir, write_csv, write_json, write_xlsx
from service.systems import PRESETS

log = logging.getLogger("lieode")


@dataclass(frozen=True)
class BenchRunResult:
    run_id: str
    export_dir: Path
    summary: BenchSummary
    jobs_total: int
    jobs_ok: int
    jobs_error: int


@dataclass(frozen=True)
class BenchOverrides:
    seed: Optional[int] = None
    restarts: Optional[int] = None
    max_iters: Optional[int] = None


def _run_preset(name: str, app: AppConfig, export_dir: Path, overrides: BenchOverrides) -> BenchRow:
    """One bench job: train a preset, export its artifacts and summarise it in a row."""
    start = time.perf_counter()
    cfg = experiment.apply_overrides(
        experiment.preset_config(name),
        seed=overrides.seed,
        restarts=overrides.restarts,
        max_iters=overrides.max_iters,
    )
    exp = experiment.resolve(cfg, log_every=app.log_every)
    outcome = experiment.run_train(exp, app)
    export_train(outcome, export_dir / name, digits=app.csv_digits)
    r = outcome.report
    if outcome.error:
        status = "error"
    elif outcome.failed:
        status = r.status
    else:
        status = "ok"
    return BenchRow(
        preset=name,
        paper_loss=exp.paper_loss,
        our_loss=r.final_loss,
        paper_rmse=exp.paper_rmse,
        our_rmse=r.rmse_train,
        extrapolation_rmse=r.rmse_extrapolation,
        wall_time=time.perf_counter() - start,
        status=status,
        error=outcome.error,
    )


def write_summary(summary: BenchSummary, export_dir: Path, digits: int = 17) -> list[Path]:
    header = BenchRow.columns()
    rows = [row.values() for row in summary.rows]
    return [
        write_csv(export_dir / "bench_summary.csv", header, rows, digits),
        write_json(export_dir / "bench_summary.json", summary.to_json()),
        write_xlsx(export_dir / "bench_summary.xlsx", "Bench", header, rows),
    ]


def run_bench_all(
    app: AppConfig,
    presets: Sequence[str] | None = None,
    overrides: BenchOverrides = BenchOverrides(),
    export_root: Path | None = None,
) -> BenchRunResult:
    """
    - Train every preset (best of its restarts) and compare against rk45
    - Presets run in separate processes, up to app.max_workers at a time
    - A preset that raises is recorded as an error row; the others still run
    - Export under <export_root>/<run_id>/<preset>/ plus bench_summary.{csv,json,xlsx}
    """
    names = list(presets) if presets is not None else list(PRESETS)
    if not names:
        raise ValueError("preset list is empty, nothing to do")

    run_id = f"bench_{datetime.now().strftime('%Y%m%d_%H%M%S')}_{uuid.uuid4().hex[:8]}"
    export_dir = ensure_dir((export_root or app.export_root) / run_id)
    start = time.perf_counter()

    rows: dict[str, BenchRow] = {}
    jobs_error = 0
    max_workers = min(app.max_workers, len(names))

    def _record(name: str, row: Optional[BenchRow], err: Optional[Exception]) -> None:
        nonlocal jobs_error
        if err is not None:
            log.error(f"  [{name}] FAILED: {err}")
            row = BenchRow(preset=name, status="error", error=f"{type(err).__name__}: {err}")
        assert row is not None
        if row.status != "ok":
            jobs_error += 1
        rows[name] = row

    if max_workers == 1:
        for name in names:
            try:
                _record(name, _run_preset(name, app, export_dir, overrides), None)
            except Exception as e:
                _record(name, None, e)
    else:
        with ProcessPoolExecutor(max_workers=max_workers) as ex:
            futs = {ex.submit(_run_preset, name, app, export_dir, overrides): name for name in names}
            for fut in as_completed(futs):
                name = futs[fut]
                try:
                    _record(name, fut.result(), None)
                except Exception as e:
                    _record(name, None, e)

    summary = BenchSummary(rows=[rows[n] for n in names], total_seconds=time.perf_counter() - start)
    write_summary(summary, export_dir, app.csv_digits)
    return BenchRunResult(
        run_id=run_id,
        export_dir=export_dir,
        summary=summary,
        jobs_total=len(names),
        jobs_ok=len(names) - jobs_error,
        jobs_error=jobs_error,
    )
