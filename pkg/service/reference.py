"""
Numerical oracle trajectories: fixed-step RK4 and adaptive Dormand-Prince 5(4).

Both return a DenseSolution: knots plus f at the knots, interpolated between
knots by cubic Hermite polynomials.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from model.types import OdeSystem

log = logging.getLogger("lieode")

# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# 5th-order weights minus embedded 4th-order weights
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
PI_BETA = 0.04
PI_ALPHA = 0.2 - 0.75 * PI_BETA


class StepSizeError(ArithmeticError):
    def __init__(self, t: float, h: float) -> None:
        self.t = t
        self.h = h
        super().__init__(f"step size underflow at t={t!r} (h={h:.3e})")


class OutOfSpanError(ValueError):
    pass


@dataclass(frozen=True)
class DenseSolution:
    """Ascending knots ``times``; ``t0``/``t1`` keep the integration direction."""

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    t0: float
    t1: float
    accepted_steps: int
    rejected_steps: int
    rtol: float | None = None
    atol: float | None = None

    @property
    def dim(self) -> int:
        return int(self.states.shape[1])

    def end_state(self) -> np.ndarray:
        return self.states[-1] if self.t1 >= self.t0 else self.states[0]


def _dense(
    times: list[float],
    states: list[np.ndarray],
    derivs: list[np.ndarray],
    t0: float,
    t1: float,
    accepted: int,
    rejected: int,
    rtol: float | None = None,
    atol: float | None = None,
) -> DenseSolution:
    T = np.asarray(times)
    Y = np.asarray(states)
    D = np.asarray(derivs)
    if T[-1] < T[0]:
        T, Y, D = T[::-1].copy(), Y[::-1].copy(), D[::-1].copy()
    for arr in (T, Y, D):
        arr.setflags(write=False)
    return DenseSolution(T, Y, D, t0, t1, accepted, rejected, rtol, atol)


def _check_finite(y: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(y)):
        raise ArithmeticError(f"non-finite state at t={t!r}")


def rk4(system: OdeSystem, t_span: Sequence[float], steps: int, y0: Sequence[float] | None = None) -> DenseSolution:
    """Classic four-stage Runge-Kutta with ``steps`` uniform steps."""
    if steps < 1:
        raise ValueError(f"rk4: steps must be >= 1, got {steps}")
    t0, t1 = float(t_span[0]), float(t_span[1])
    h = (t1 - t0) / steps
    y = np.array(system.y0 if y0 is None else y0, dtype=float)
    f = system.f
    times, states, derivs = [t0], [y.copy()], [f(t0, y)]
    t = t0
    for i in range(steps):
        k1 = derivs[-1]
        k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = f(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t0 + (i + 1) * h
        _check_finite(y, t)
        times.append(t)
        states.append(y.copy())
        derivs.append(f(t, y))
    times[-1] = t1
    return _dense(times, states, derivs, t0, t1, steps, 0)


def _error_norm(err: np.ndarray, y: np.ndarray, y_new: np.ndarray, rtol: float, atol: float) -> float:
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(system: OdeSystem, t0: float, y0: np.ndarray, f0: np.ndarray, direction: float,
                  rtol: float, atol: float) -> float:
    scale = atol + np.abs(y0) * rtol
    d0 = float(np.sqrt(np.mean((y0 / scale) ** 2)))
    d1 = float(np.sqrt(np.mean((f0 / scale) ** 2)))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + direction * h0 * f0
    f1 = system.f(t0 + direction * h0, y1)
    d2 = float(np.sqrt(np.mean(((f1 - f0) / scale) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 5.0)
    return min(100.0 * h0, h1)


def rk45(
    system: OdeSystem,
    t_span: Sequence[float],
    rtol: float = 1e-9,
    atol: float = 1e-9,
    y0: Sequence[float] | None = None,
    max_steps: int = 1_000_000,
) -> DenseSolution:
    """Adaptive Dormand-Prince 5(4) with a PI step-size controller. t_span may run backwards."""
    if not (rtol > 0 and atol > 0):
        raise ValueError(f"rk45: tolerances must be positive, got rtol={rtol}, atol={atol}")
    t0, t1 = float(t_span[0]), float(t_span[1])
    direction = 1.0 if t1 >= t0 else -1.0
    y = np.array(system.y0 if y0 is None else y0, dtype=float)
    f = system.f
    fy = f(t0, y)
    times, states, derivs = [t0], [y.copy()], [fy]
    if t1 == t0:
        return _dense(times, states, derivs, t0, t1, 0, 0, rtol, atol)

    h = _initial_step(system, t0, y, fy, direction, rtol, atol)
    t = t0
    err_prev = 1e-4
    accepted = rejected = 0
    K = np.empty((7, y.size))

    while direction * (t1 - t) > 0:
        if accepted + rejected >= max_steps:
            raise StepSizeError(t, h)
        h_min = 10.0 * np.finfo(float).eps * max(abs(t), 1.0)
        if h < h_min:
            raise StepSizeError(t, h)
        last = h >= direction * (t1 - t)
        if last:
            h = direction * (t1 - t)
        hs = direction * h

        K[0] = fy
        for s in range(1, 7):
            K[s] = f(t + _C[s] * hs, y + hs * (np.asarray(_A[s]) @ K[:s]))
        y_new = y + hs * (_B[:6] @ K[:6])
        # FSAL: K[6] is f(t + h, y_new)
        err = _error_norm(hs * (_E @ K), y, y_new, rtol, atol)

        if err <= 1.0:
            t = t1 if last else t + hs
            _check_finite(y_new, t)
            y, fy = y_new, K[6].copy()
            times.append(t)
            states.append(y.copy())
            derivs.append(fy)
            accepted += 1
            if err == 0.0:
                factor = MAX_FACTOR
            else:
                factor = SAFETY * err ** -PI_ALPHA * err_prev ** PI_BETA
                factor = min(MAX_FACTOR, max(MIN_FACTOR, factor))
            err_prev = max(err, 1e-4)
            h = h * factor
        else:
            rejected += 1
            h = h * max(MIN_FACTOR, SAFETY * err ** -PI_ALPHA)

    log.debug(f"rk45 {system.name}: {accepted} accepted, {rejected} rejected steps")
    return _dense(times, states, derivs, t0, t1, accepted, rejected, rtol, atol)


def sample(sol: DenseSolution, times: Sequence[float]) -> np.ndarray:
    """States at ``times`` by cubic Hermite interpolation on the knot interval containing each time."""
    q = np.asarray(times, dtype=float).reshape(-1)
    T = sol.times
    lo, hi = T[0], T[-1]
    outside = (q < lo) | (q > hi)
    if np.any(outside):
        bad = float(q[np.flatnonzero(outside)[0]])
        raise OutOfSpanError(f"time {bad!r} outside solution span [{lo!r}, {hi!r}]")
    if T.size == 1:
        return np.repeat(sol.states[:1], q.size, axis=0)

    i = np.clip(np.searchsorted(T, q, side="right") - 1, 0, T.size - 2)
    h = (T[i + 1] - T[i])[:, None]
    s = ((q - T[i])[:, None]) / h
    s2, s3 = s * s, s * s * s
    h00 = 2.0 * s3 - 3.0 * s2 + 1.0
    h10 = s3 - 2.0 * s2 + s
    h01 = -2.0 * s3 + 3.0 * s2
    h11 = s3 - s2
    Y, D = sol.states, sol.derivs
    return h00 * Y[i] + h10 * h * D[i] + h01 * Y[i + 1] + h11 * h * D[i + 1]
