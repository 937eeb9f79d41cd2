from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Sequence

import numpy as np

from model.types import LossState, OdeSystem, OptimizerConfig, TrainReport
from service import neuralnet, optimizer
from service.exprlang import DomainError
from service.linflow import BaseSolution
from service.optimizer import Objective
from service.reference import DenseSolution, sample
from service.trial import TrialSolution, grid_arrays

log = logging.getLogger("lieode")


class TrainingDomainError(ArithmeticError):
    def __init__(self, t: float, cause: Exception) -> None:
        self.t = t
        super().__init__(f"right-hand side failed at grid time t={t!r}: {cause}")


def _partial(trial: TrialSolution, system: OdeSystem, rows: slice) -> tuple[np.ndarray, np.ndarray]:
    """Squared-residual sums per component and unscaled gradient over a block of grid rows."""
    arr = grid_arrays(trial, rows)
    t = trial.grid[rows]
    try:
        F = system.f(t, arr.yhat)
        J = system.jac(t, arr.yhat)
    except DomainError as e:
        idx = e.index if e.index is not None else 0
        raise TrainingDomainError(float(t[idx]), e) from e
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(J))):
        bad = int(np.flatnonzero(~np.isfinite(F).all(axis=-1) | ~np.isfinite(J).all(axis=(-2, -1)))[0])
        raise TrainingDomainError(float(t[bad]), ValueError("non-finite right-hand side"))

    R = arr.yhat_dt - F
    # W[i, j] = sum_k R[i, k] * df_k/dy_j (t_i, yhat_i): how net j feeds every residual
    W = np.einsum("ik,ikj->ij", R, J)
    grad = np.einsum("ij,jip->jp", R, arr.sens_deriv) - np.einsum("ij,jip->jp", W, arr.sens_value)
    return np.sum(R * R, axis=0), grad.reshape(-1)


def _chunks(n_rows: int, threads: int) -> list[slice]:
    threads = max(1, min(threads, n_rows))
    bounds = np.linspace(0, n_rows, threads + 1).astype(int)
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def loss_and_grad(
    trial: TrialSolution,
    system: OdeSystem,
    p: Sequence[float],
    threads: int = 1,
) -> LossState:
    """
    L(p) = (1/k) sum_i sum_c r_ci^2 with r_ci = yhat_c'(t_i) - f_c(t_i, yhat(t_i)).

    With threads > 1 the grid is split into contiguous blocks evaluated in a
    thread pool; block results are reduced in block order.
    """
    p = np.asarray(p, dtype=float).reshape(-1)
    current = trial.with_params(p)
    k = current.grid.size
    blocks = _chunks(k, threads)
    if len(blocks) == 1:
        parts = [_partial(current, system, blocks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(blocks)) as ex:
            parts = list(ex.map(lambda rows: _partial(current, system, rows), blocks))

    sq = np.zeros(system.dim)
    grad = np.zeros(p.size)
    for part_sq, part_grad in parts:
        sq = sq + part_sq
        grad = grad + part_grad
    per_component = sq / k
    return LossState(p=p, L=float(np.sum(per_component)), g=(2.0 / k) * grad, per_component=per_component)


def make_objective(trial: TrialSolution, system: OdeSystem, threads: int = 1) -> Objective:
    def objective(p: np.ndarray) -> tuple[float, np.ndarray]:
        state = loss_and_grad(trial, system, p, threads)
        return state.L, state.g

    return objective


def initial_params(dim: int, hidden_units: int, seed: int) -> np.ndarray:
    """Net k of restart seed s is seeded with (s, k) so components differ."""
    return np.concatenate(
        [neuralnet.init(hidden_units, seed=(seed * 1009 + k)).flatten() for k in range(dim)]
    )


def fit(
    system: OdeSystem,
    base: BaseSolution,
    grid: Sequence[float],
    hidden_units: int,
    cfg: OptimizerConfig,
    seed: int = 0,
    threads: int = 1,
) -> tuple[TrialSolution, TrainReport]:
    """Train from cfg.restarts seeded initialisations (seed, seed+1, ...); lowest final loss wins."""
    nets = [neuralnet.ScalarNet.zeros(hidden_units) for _ in range(system.dim)]
    template = TrialSolution.build(base, nets, grid)
    objective = make_objective(template, system, threads)

    best: TrainReport | None = None
    losses: list[float] = []
    start = time.perf_counter()
    for r in range(cfg.restarts):
        run_seed = seed + r
        p0 = initial_params(system.dim, hidden_units, run_seed)
        label = f" {system.name} seed={run_seed}"
        report = optimizer.minimize(objective, p0, cfg, label=label)
        report = replace(report, seed=run_seed)
        losses.append(report.final_loss)
        log.info(
            f"  [{system.name}] restart {r + 1}/{cfg.restarts} | seed={run_seed} | "
            f"L={report.final_loss:.6e} | iters={report.iterations} | {report.status}"
        )
        if best is None or report.final_loss < best.final_loss:
            best = report

    assert best is not None
    best = replace(best, restart_losses=losses, wall_time=time.perf_counter() - start)
    return template.with_params(best.final_p), best


def rmse_per_component(trial: TrialSolution, reference: np.ndarray, eval_times: Sequence[float]) -> np.ndarray:
    """sqrt(mean_i (yhat_k(t_i) - y_k(t_i))^2) for each component k."""
    reference = np.asarray(reference, dtype=float)
    yhat = trial.values_at(eval_times)
    if reference.shape != yhat.shape:
        raise ValueError(f"rmse: reference has shape {reference.shape}, trial gives {yhat.shape}")
    return np.sqrt(np.mean((yhat - reference) ** 2, axis=0))


def rmse(trial: TrialSolution, reference: DenseSolution | np.ndarray, eval_times: Sequence[float]) -> float:
    """
    Average over components of the per-component RMSE.

    ``reference`` is either a DenseSolution (sampled at eval_times) or an
    already sampled (len(eval_times), n) array.
    """
    if isinstance(reference, DenseSolution):
        reference = sample(reference, eval_times)
    return float(np.mean(rmse_per_component(trial, reference, eval_times)))
