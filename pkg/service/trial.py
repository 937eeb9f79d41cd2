from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from model.types import FlowTable, TrialEval
from service import neuralnet
from service.linflow import BaseSolution
from service.neuralnet import ScalarNet


@dataclass(frozen=True)
class TrialSolution:
    """
    yhat_k(t) = ybar_k(t) + t * N_k(t)

    ybar comes from ``base``; its values on ``grid`` are computed once and kept
    in ``table``. The t factor makes yhat(0) = ybar(0) whatever the nets are.
    """

    base: BaseSolution
    nets: tuple[ScalarNet, ...]
    grid: np.ndarray
    table: FlowTable

    def __post_init__(self) -> None:
        if len(self.nets) != self.base.dim:
            raise ValueError(f"trial: {len(self.nets)} nets for a {self.base.dim}-dimensional system")
        widths = {net.m for net in self.nets}
        if len(widths) != 1:
            raise ValueError(f"trial: nets must share one hidden width, got {sorted(widths)}")

    @staticmethod
    def build(base: BaseSolution, nets: Sequence[ScalarNet], grid: Sequence[float]) -> "TrialSolution":
        grid = np.asarray(grid, dtype=float).reshape(-1)
        if grid.size == 0:
            raise ValueError("trial: training grid is empty")
        return TrialSolution(base=base, nets=tuple(nets), grid=grid, table=base.table(grid))

    @property
    def dim(self) -> int:
        return len(self.nets)

    @property
    def hidden_units(self) -> int:
        return self.nets[0].m

    @property
    def net_size(self) -> int:
        return neuralnet.param_count(self.hidden_units)

    @property
    def param_size(self) -> int:
        return self.dim * self.net_size

    def params(self) -> np.ndarray:
        return np.concatenate([net.flatten() for net in self.nets])

    def with_params(self, p: Sequence[float]) -> "TrialSolution":
        p = np.asarray(p, dtype=float).reshape(-1)
        if p.size != self.param_size:
            raise ValueError(f"trial: expected {self.param_size} parameters, got {p.size}")
        size = self.net_size
        nets = tuple(
            ScalarNet.unflatten(self.hidden_units, p[k * size : (k + 1) * size])
            for k in range(self.dim)
        )
        return TrialSolution(base=self.base, nets=nets, grid=self.grid, table=self.table)

    def _base_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        row = self.table.lookup(t)
        if row is not None:
            return self.table.values[row], self.table.derivs[row]
        on_demand = self.base.table([t])
        return on_demand.values[0], on_demand.derivs[0]

    def values_at(self, times: Sequence[float]) -> np.ndarray:
        """yhat at arbitrary times, shape (len(times), n)."""
        times = np.asarray(times, dtype=float).reshape(-1)
        order = np.argsort(times, kind="stable")
        base = np.empty((times.size, self.dim))
        base[order] = self.base.table(times[order]).values
        corr = np.stack([neuralnet.forward(net, times) for net in self.nets], axis=-1)
        return base + times[:, None] * corr


def eval_at(trial: TrialSolution, t: float) -> TrialEval:
    t = float(t)
    ybar, dybar = trial._base_at(t)
    n, size = trial.dim, trial.net_size
    yhat = np.empty(n)
    yhat_dt = np.empty(n)
    sens_value = np.empty((n, size))
    sens_deriv = np.empty((n, size))
    for k, net in enumerate(trial.nets):
        ev = neuralnet.eval_full(net, t)
        yhat[k] = ybar[k] + t * ev.value
        yhat_dt[k] = dybar[k] + ev.value + t * ev.dt
        sens_value[k] = t * ev.grad_p
        sens_deriv[k] = ev.grad_p + t * ev.grad_p_dt
    return TrialEval(t=t, yhat=yhat, yhat_dt=yhat_dt, sens_value=sens_value, sens_deriv=sens_deriv)


def eval_grid(trial: TrialSolution) -> list[TrialEval]:
    return [eval_at(trial, t) for t in trial.grid]


@dataclass(frozen=True)
class GridArrays:
    """Vectorised eval_grid: yhat (k, n), yhat_dt (k, n), sens_* (n, k, P)."""

    yhat: np.ndarray
    yhat_dt: np.ndarray
    sens_value: np.ndarray
    sens_deriv: np.ndarray


def grid_arrays(trial: TrialSolution, rows: slice = slice(None)) -> GridArrays:
    t = trial.grid[rows]
    ybar = trial.table.values[rows]
    dybar = trial.table.derivs[rows]
    k, n, size = t.size, trial.dim, trial.net_size
    yhat = np.empty((k, n))
    yhat_dt = np.empty((k, n))
    sens_value = np.empty((n, k, size))
    sens_deriv = np.empty((n, k, size))
    tc = t[:, None]
    for j, net in enumerate(trial.nets):
        b = neuralnet.eval_batch(net, t)
        yhat[:, j] = ybar[:, j] + t * b.value
        yhat_dt[:, j] = dybar[:, j] + b.value + t * b.dt
        sens_value[j] = tc * b.grad_p
        sens_deriv[j] = b.grad_p + tc * b.grad_p_dt
    return GridArrays(yhat=yhat, yhat_dt=yhat_dt, sens_value=sens_value, sens_deriv=sens_deriv)
