"""
Experiment pipelines: turn an ExperimentConfig into a system, base and grids,
then train, integrate the reference, or compare optimizers / bases.

Nothing here writes files; export_runner does that from the returned outcomes.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from model.request.experiment_config import ExperimentConfig, parse_experiment
from model.response.run_report import CompareReport, CompareRun, NetPayload, RunReport, Timings
from model.types import AffineField, OdeSystem, OptimizerConfig, TrainReport
from service import reference, systems, training
from service.config_loader import AppConfig, ConfigError
from service.file_utils import sanitize_folder_name
from service.linflow import AffineFlowBase, BaseSolution
from service.neuralnet import ScalarNet
from service.reference import DenseSolution
from service.trial import TrialSolution

log = logging.getLogger("lieode")

CUSTOM_N_POINTS = 40
CUSTOM_HIDDEN_UNITS = 30
CUSTOM_TEST_POINTS = 200
CUSTOM_RESTARTS = 1

METHOD_ALIASES = {"bfgs": "bfgs", "gd": "gradient_descent", "gradient_descent": "gradient_descent"}


@dataclass(frozen=True)
class Experiment:
    name: str
    config: ExperimentConfig
    system: OdeSystem
    linear_part: AffineField
    base: BaseSolution
    base_kind: str
    train_grid: np.ndarray
    test_grid: np.ndarray
    hidden_units: int
    restarts: int
    seed: int
    optimizer: OptimizerConfig
    paper_loss: Optional[float] = None
    paper_rmse: Optional[float] = None

    @property
    def span_end(self) -> float:
        return float(max(self.train_grid[-1], self.test_grid[-1]))


@dataclass
class TrainOutcome:
    experiment: Experiment
    report: RunReport
    trial: Optional[TrialSolution] = None
    train_report: Optional[TrainReport] = None
    reference: Optional[DenseSolution] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None or (self.train_report is not None and self.train_report.failed)


@dataclass
class CompareOutcome:
    experiment: Experiment
    report: CompareReport
    histories: dict[str, TrainReport] = field(default_factory=dict)


def apply_overrides(
    cfg: ExperimentConfig,
    seed: Optional[int] = None,
    restarts: Optional[int] = None,
    max_iters: Optional[int] = None,
    output_dir: Optional[str] = None,
) -> ExperimentConfig:
    """CLI flags win over the file; the result is re-validated so the echo stays exact."""
    raw = cfg.model_dump(mode="json")
    if seed is not None:
        raw["seed"] = seed
    if restarts is not None:
        raw["restarts"] = restarts
    if max_iters is not None:
        raw["optimizer"]["max_iters"] = max_iters
    if output_dir is not None:
        raw["output_dir"] = output_dir
    return parse_experiment(raw)


def _custom_system(cfg: ExperimentConfig) -> tuple[OdeSystem, AffineField]:
    spec = cfg.system
    assert spec is not None and cfg.train_interval is not None
    params = {**spec.params, **cfg.params}
    horizon = cfg.test_interval[1] if cfg.test_interval else cfg.train_interval[1]
    system = systems.from_expressions(
        dim=spec.dim,
        rhs_sources=spec.rhs,
        params=params,
        y0=spec.y0,
        horizon=horizon,
        name=spec.name,
        variables=spec.variables,
    )
    if spec.linear_A is None:
        linear = AffineField.zero(spec.dim)
    else:
        c = spec.linear_c if spec.linear_c is not None else [0.0] * spec.dim
        linear = AffineField(A=np.array(spec.linear_A, dtype=float), c=np.array(c, dtype=float))
    return system, linear


def resolve(cfg: ExperimentConfig, log_every: int = 100) -> Experiment:
    """Fill unset fields from the preset (or custom defaults) and build the base solution."""
    preset = None
    if cfg.preset is not None:
        preset = systems.builtin(cfg.preset)
        if cfg.params:
            try:
                preset = preset.with_params(cfg.params)
            except ValueError as e:
                raise ConfigError(str(e), "params") from e
        system, linear = preset.system, preset.linear_part
        train_interval = cfg.train_interval or preset.train_interval
        n_points = cfg.n_points or preset.n_points
        hidden_units = cfg.hidden_units or preset.hidden_units
        test_interval = cfg.test_interval or preset.test_interval
        test_points = cfg.test_points or preset.test_points
        restarts = cfg.restarts or preset.restarts
    else:
        system, linear = _custom_system(cfg)
        assert cfg.train_interval is not None
        train_interval = cfg.train_interval
        n_points = cfg.n_points or CUSTOM_N_POINTS
        hidden_units = cfg.hidden_units or CUSTOM_HIDDEN_UNITS
        test_interval = cfg.test_interval or train_interval
        test_points = cfg.test_points or CUSTOM_TEST_POINTS
        restarts = cfg.restarts or CUSTOM_RESTARTS

    if not (test_interval[0] <= train_interval[0] and train_interval[1] <= test_interval[1]):
        raise ConfigError(
            f"{list(test_interval)} must contain train_interval {list(train_interval)}", "test_interval"
        )

    if cfg.paper_literal_base:
        if preset is None or preset.literal_base is None:
            raise ConfigError(f"'{system.name}' has no printed closed-form base", "paper_literal_base")
        base: BaseSolution = preset.literal_base
        base_kind = "literal"
    elif cfg.base == "initial":
        base = AffineFlowBase(AffineField.zero(system.dim), system.y0)
        base_kind = "initial"
    else:
        base = AffineFlowBase(linear, system.y0)
        base_kind = "lie"

    optimizer = cfg.optimizer.to_config(restarts=restarts, log_every=log_every)
    # the echo written to report.json: every default filled in
    resolved = cfg.model_copy(
        update={
            "params": dict(system.params) if preset is not None else dict(cfg.params),
            "train_interval": (float(train_interval[0]), float(train_interval[1])),
            "n_points": n_points,
            "hidden_units": hidden_units,
            "test_interval": (float(test_interval[0]), float(test_interval[1])),
            "test_points": test_points,
            "restarts": restarts,
            "optimizer": cfg.optimizer.model_copy(update={"log_every": optimizer.log_every}),
        }
    )

    return Experiment(
        name=cfg.label,
        config=resolved,
        system=system,
        linear_part=linear,
        base=base,
        base_kind=base_kind,
        train_grid=np.linspace(train_interval[0], train_interval[1], n_points),
        test_grid=np.linspace(test_interval[0], test_interval[1], test_points),
        hidden_units=hidden_units,
        restarts=restarts,
        seed=cfg.seed,
        optimizer=optimizer,
        paper_loss=preset.reported_loss if preset else None,
        paper_rmse=preset.reported_rmse if preset else None,
    )


def preset_config(name: str) -> ExperimentConfig:
    return parse_experiment({"preset": name})


def run_reference(exp: Experiment, app: AppConfig) -> tuple[np.ndarray, np.ndarray, DenseSolution]:
    """rk45 over [0, end] sampled on the sorted union of train and test grids."""
    sol = reference.rk45(exp.system, (0.0, exp.span_end), rtol=app.reference_rtol, atol=app.reference_atol)
    times = np.union1d(exp.train_grid, exp.test_grid)
    return times, reference.sample(sol, times), sol


def _base_report(exp: Experiment) -> dict[str, Any]:
    return {
        "name": exp.name,
        "system": exp.system.name,
        "variables": list(exp.system.variables),
        "base": exp.base_kind,
        "method": exp.optimizer.method,
        "seed": exp.seed,
        "config": exp.config.model_dump(mode="json"),
        "paper_loss": exp.paper_loss,
        "paper_rmse": exp.paper_rmse,
    }


def run_train(exp: Experiment, app: AppConfig) -> TrainOutcome:
    start = time.perf_counter()
    log.info(
        f"  [{exp.name}] train | base={exp.base_kind} | m={exp.hidden_units} | "
        f"points={exp.train_grid.size} | restarts={exp.restarts} | method={exp.optimizer.method}"
    )
    try:
        trial, tr = training.fit(
            exp.system,
            exp.base,
            exp.train_grid,
            exp.hidden_units,
            exp.optimizer,
            seed=exp.seed,
            threads=app.threads,
        )
    except training.TrainingDomainError as e:
        log.error(f"  [{exp.name}] training aborted: {e}")
        report = RunReport(
            **_base_report(exp),
            status="domain_error",
            iterations=0,
            final_loss=None,
            loss_per_component=[],
            error=str(e),
            timings=Timings(total_seconds=time.perf_counter() - start),
        )
        return TrainOutcome(experiment=exp, report=report, error=str(e))
    train_seconds = time.perf_counter() - start

    state = training.loss_and_grad(trial, exp.system, trial.params())
    sol: Optional[DenseSolution] = None
    error: Optional[str] = None

    ref_start = time.perf_counter()
    rmse_train = rmse_test = None
    per_train: list[float] = []
    per_test: list[float] = []
    try:
        sol = reference.rk45(exp.system, (0.0, exp.span_end), rtol=app.reference_rtol, atol=app.reference_atol)
        per_train = training.rmse_per_component(trial, reference.sample(sol, exp.train_grid), exp.train_grid).tolist()
        per_test = training.rmse_per_component(trial, reference.sample(sol, exp.test_grid), exp.test_grid).tolist()
        rmse_train = float(np.mean(per_train))
        rmse_test = float(np.mean(per_test))
    except (ArithmeticError, reference.OutOfSpanError) as e:
        error = f"reference: {e}"
        log.error(f"  [{exp.name}] reference failed: {e}")
    ref_seconds = time.perf_counter() - ref_start

    report = RunReport(
        **_base_report(exp),
        status=tr.status,
        best_seed=tr.seed,
        iterations=tr.iterations,
        final_loss=tr.final_loss,
        loss_per_component=state.per_component.tolist(),
        restart_losses=list(tr.restart_losses),
        rmse_train=rmse_train,
        rmse_train_per_component=per_train,
        rmse_extrapolation=rmse_test,
        rmse_extrapolation_per_component=per_test,
        error=error,
        nets=[NetPayload(**net.to_dict()) for net in trial.nets],
        timings=Timings(
            train_seconds=train_seconds,
            reference_seconds=ref_seconds,
            total_seconds=time.perf_counter() - start,
        ),
    )
    outcome = TrainOutcome(
        experiment=exp,
        report=report,
        trial=trial,
        train_report=replace(tr, rmse=rmse_train),
        reference=sol,
        error=error,
    )
    rmse_text = f"{rmse_train:.6e}" if rmse_train is not None else "n/a"
    log.info(
        f"  [{exp.name}] done | L={tr.final_loss:.6e} | rmse={rmse_text} | "
        f"status={tr.status} | {train_seconds:.1f}s"
    )
    return outcome


def parse_methods(text: str) -> list[str]:
    names = [s.strip() for s in text.split(",") if s.strip()]
    if not names:
        raise ConfigError("at least one optimizer method is required", "methods")
    unknown = [s for s in names if s not in METHOD_ALIASES]
    if unknown:
        raise ConfigError(f"unknown methods {unknown}, expected {sorted(METHOD_ALIASES)}", "methods")
    return list(dict.fromkeys(METHOD_ALIASES[s] for s in names))


def parse_bases(text: Optional[str]) -> list[str]:
    if not text:
        return []
    names = list(dict.fromkeys(s.strip() for s in text.split(",") if s.strip()))
    unknown = [s for s in names if s not in ("lie", "initial")]
    if unknown or not names:
        raise ConfigError(f"unknown bases {unknown}, expected 'lie' and/or 'initial'", "bases")
    return names


def _wins(losses: Mapping[int, Mapping[str, float]], better: str, worse: str) -> Optional[int]:
    pairs = [v for v in losses.values() if better in v and worse in v]
    if not pairs:
        return None
    return sum(1 for v in pairs if v[better] < v[worse])


def run_compare(
    cfg: ExperimentConfig,
    methods: Sequence[str],
    seeds: int = 1,
    bases: Sequence[str] = (),
    log_every: int = 100,
    threads: int = 1,
) -> CompareOutcome:
    """
    Every (base, method) pair trains once per seed from identical initial
    parameters, one restart each, so loss histories line up row for row.
    """
    if not methods:
        raise ConfigError("at least one optimizer method is required", "methods")
    if seeds < 1:
        raise ConfigError(f"must be >= 1, got {seeds}", "seeds")
    base_list = list(bases) or [cfg.base]
    if len(base_list) > 1 and cfg.paper_literal_base:
        raise ConfigError("cannot compare bases together with paper_literal_base", "bases")

    exp0 = resolve(cfg, log_every=log_every)
    report = CompareReport(name=exp0.name, seeds=[cfg.seed + i for i in range(seeds)])
    histories: dict[str, TrainReport] = {}
    by_method: dict[int, dict[str, float]] = {}
    by_base: dict[int, dict[str, float]] = {}

    for base_kind in base_list:
        exp = exp0 if base_kind == cfg.base else resolve(cfg.model_copy(update={"base": base_kind}), log_every)
        for method in methods:
            opt = replace(exp.optimizer, method=method, restarts=1)  # type: ignore[arg-type]
            for s in report.seeds:
                label = f"{base_kind}_{method}_seed{s}"
                _, tr = training.fit(
                    exp.system, exp.base, exp.train_grid, exp.hidden_units, opt, seed=s, threads=threads
                )
                histories[label] = tr
                report.runs.append(
                    CompareRun(
                        label=label,
                        method=method,
                        base=exp.base_kind,
                        seed=s,
                        final_loss=tr.final_loss,
                        iterations=tr.iterations,
                        status=tr.status,
                        history_csv=f"loss_history_{label}.csv",
                    )
                )
                log.info(
                    f"  [{exp.name}] compare {label} | L={tr.final_loss:.6e} | "
                    f"iters={tr.iterations} | {tr.status}"
                )
                if base_kind == base_list[0]:
                    by_method.setdefault(s, {})[method] = tr.final_loss
                if method == methods[0]:
                    by_base.setdefault(s, {})[base_kind] = tr.final_loss

    report.bfgs_wins = _wins(by_method, "bfgs", "gradient_descent")
    report.lie_wins = _wins(by_base, "lie", "initial")
    return CompareOutcome(experiment=exp0, report=report, histories=histories)


def trial_from_report(report: RunReport | Mapping[str, Any]) -> TrialSolution:
    """Rebuild a trained trial solution from report.json without retraining."""
    if not isinstance(report, RunReport):
        report = RunReport.model_validate(report)
    if not report.nets:
        raise ConfigError("report holds no trained networks", "nets")
    exp = resolve(parse_experiment(report.config))
    nets = [ScalarNet.from_dict(net.model_dump()) for net in report.nets]
    return TrialSolution.build(exp.base, nets, exp.train_grid)


def output_dir_for(exp: Experiment, app: AppConfig, override: Optional[Path] = None) -> Path:
    if override is not None:
        return override
    if exp.config.output_dir:
        return Path(exp.config.output_dir)
    return app.export_root / sanitize_folder_name(exp.name)
