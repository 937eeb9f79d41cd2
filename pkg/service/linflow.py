from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from model.types import AffineField, FlowTable

SCALE_TARGET = 0.5
SERIES_RTOL = 1e-17
MAX_SERIES_TERMS = 60


def expm(M: np.ndarray) -> np.ndarray:
    """
    Matrix exponential by scaling and squaring around a truncated Taylor core.

    M is scaled by 2^-k until ||M/2^k||_1 <= 0.5, the series is summed until the
    next term is negligible next to the running sum, and the result is squared k
    times.
    """
    M = np.array(M, dtype=float, ndmin=2)
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"expm needs a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("expm needs a finite matrix")
    n = M.shape[0]

    norm = float(np.linalg.norm(M, 1))
    k = 0
    if norm > SCALE_TARGET:
        k = int(np.ceil(np.log2(norm / SCALE_TARGET)))
    X = M / (2.0 ** k)

    result = np.eye(n)
    term = np.eye(n)
    for j in range(1, MAX_SERIES_TERMS + 1):
        term = term @ X / j
        term_norm = float(np.linalg.norm(term, 1))
        result = result + term
        if term_norm < SERIES_RTOL * float(np.linalg.norm(result, 1)):
            break

    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(k):
            result = result @ result
    if not np.all(np.isfinite(result)):
        raise OverflowError(f"matrix exponential overflows (||M||_1 = {norm:.3g})")
    return result


def flow(field: AffineField, y0: Sequence[float], t: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact solution of y' = A y + c, y(0) = y0, and its derivative at time t."""
    y0 = np.asarray(y0, dtype=float).reshape(-1)
    if y0.size != field.dim:
        raise ValueError(f"flow: y0 has length {y0.size}, field has dimension {field.dim}")
    if not np.isfinite(t):
        raise ValueError(f"flow: time must be finite, got {t}")
    if t == 0.0:
        y = y0.copy()
    else:
        z = expm(t * field.augmented()) @ np.append(y0, 1.0)
        y = z[:-1]
    return y, field.apply(y)


def _is_uniform(times: np.ndarray) -> bool:
    if times.size < 3:
        return False
    steps = np.diff(times)
    return bool(np.allclose(steps, steps[0], rtol=1e-12, atol=0.0))


def flow_table(field: AffineField, y0: Sequence[float], times: Sequence[float]) -> FlowTable:
    """
    Flow evaluated on a sorted time grid.

    On a uniform grid one step propagator exp(h * [[A, c], [0, 0]]) is built and
    applied repeatedly; otherwise every row is an independent exponential.
    """
    times = np.asarray(times, dtype=float).reshape(-1)
    if times.size == 0:
        raise ValueError("flow_table: empty time grid")
    if np.any(np.diff(times) < 0):
        raise ValueError("flow_table: times must be sorted ascending")
    n = field.dim
    values = np.empty((times.size, n))

    if _is_uniform(times):
        h = times[1] - times[0]
        step = expm(h * field.augmented())
        z = np.append(flow(field, y0, times[0])[0], 1.0)
        values[0] = z[:-1]
        for i in range(1, times.size):
            z = step @ z
            z[-1] = 1.0
            values[i] = z[:-1]
    else:
        for i, t in enumerate(times):
            values[i] = flow(field, y0, float(t))[0]

    derivs = field.apply(values)
    for arr in (times, values, derivs):
        arr.setflags(write=False)
    return FlowTable(times=times, values=values, derivs=derivs)


class BaseSolution(Protocol):
    """First term of the trial solution: values and time derivatives on a grid."""

    dim: int

    def table(self, times: Sequence[float]) -> FlowTable: ...


@dataclass(frozen=True)
class AffineFlowBase:
    field: AffineField
    y0: np.ndarray

    @property
    def dim(self) -> int:
        return self.field.dim

    def table(self, times: Sequence[float]) -> FlowTable:
        return flow_table(self.field, self.y0, times)


@dataclass(frozen=True)
class ExponentialSumBase:
    """
    Base given in closed form, component k = sum_j coef_kj * exp(rate_kj * t).

    Used to reproduce printed base formulas verbatim; a constant term is a
    term with rate 0.
    """

    terms: tuple[tuple[tuple[float, float], ...], ...]

    @property
    def dim(self) -> int:
        return len(self.terms)

    def table(self, times: Sequence[float]) -> FlowTable:
        times = np.asarray(times, dtype=float).reshape(-1)
        values = np.zeros((times.size, self.dim))
        derivs = np.zeros((times.size, self.dim))
        for k, component in enumerate(self.terms):
            for coef, rate in component:
                e = coef * np.exp(rate * times)
                values[:, k] += e
                derivs[:, k] += rate * e
        return FlowTable(times=times, values=values, derivs=derivs)
