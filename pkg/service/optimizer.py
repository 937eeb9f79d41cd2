"""
Full-batch minimisers over a flat parameter vector.

``Objective`` is any callable p -> (L, dL/dp). Both minimisers return a
TrainReport whose history holds one row per accepted iterate (row 0 is p0).
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from model.types import HistoryRow, OptimizerConfig, TrainReport, TrainStatus

log = logging.getLogger("lieode")

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class LineSearchResult:
    alpha: float
    p: np.ndarray
    L: float
    g: np.ndarray
    evals: int


class _Phi:
    """phi(alpha) = L(p + alpha d), caching the last gradient evaluation."""

    def __init__(self, fun: Objective, p: np.ndarray, d: np.ndarray) -> None:
        self.fun = fun
        self.p = p
        self.d = d
        self.evals = 0
        self.cache: dict[float, tuple[np.ndarray, float, np.ndarray]] = {}

    def __call__(self, alpha: float) -> tuple[float, float]:
        if alpha not in self.cache:
            x = self.p + alpha * self.d
            L, g = self.fun(x)
            self.evals += 1
            self.cache[alpha] = (x, float(L), np.asarray(g, dtype=float))
        _, L, g = self.cache[alpha]
        return L, float(g @ self.d)

    def result(self, alpha: float) -> LineSearchResult:
        x, L, g = self.cache[alpha]
        return LineSearchResult(alpha=alpha, p=x, L=L, g=g, evals=self.evals)


def _cubic_min(a: float, fa: float, dfa: float, b: float, fb: float, dfb: float) -> Optional[float]:
    d1 = dfa + dfb - 3.0 * (fa - fb) / (a - b)
    rad = d1 * d1 - dfa * dfb
    if rad < 0.0:
        return None
    d2 = np.sign(b - a) * np.sqrt(rad)
    denom = dfb - dfa + 2.0 * d2
    if denom == 0.0:
        return None
    x = b - (b - a) * (dfb + d2 - d1) / denom
    return float(x) if np.isfinite(x) else None


def _interpolate(lo: float, f_lo: float, df_lo: float, hi: float, f_hi: float, df_hi: float) -> float:
    """Trial step inside [lo, hi] by cubic, then quadratic, then bisection."""
    left, right = min(lo, hi), max(lo, hi)
    width = right - left
    with np.errstate(all="ignore"):
        x = _cubic_min(lo, f_lo, df_lo, hi, f_hi, df_hi)
    if x is None or not (left + 0.1 * width <= x <= right - 0.1 * width):
        dx = hi - lo
        denom = 2.0 * (f_hi - f_lo - df_lo * dx)
        x = lo - df_lo * dx * dx / denom if denom > 0.0 else None
        if x is None or not (left + 0.1 * width <= x <= right - 0.1 * width):
            x = 0.5 * (lo + hi)
    return float(x)


def strong_wolfe(
    fun: Objective,
    p: np.ndarray,
    L0: float,
    g0: np.ndarray,
    d: np.ndarray,
    alpha0: float = 1.0,
    c1: float = 1e-4,
    c2: float = 0.9,
    max_evals: int = 40,
    alpha_max: float = 1e10,
) -> Optional[LineSearchResult]:
    """
    Bracketing phase followed by zoom. Returns None when no step satisfying
    both strong Wolfe conditions is found within ``max_evals`` evaluations.
    """
    phi = _Phi(fun, p, d)
    dphi0 = float(g0 @ d)
    if not dphi0 < 0.0:
        return None

    def _zoom(lo: float, f_lo: float, df_lo: float, hi: float, f_hi: float, df_hi: float):
        while phi.evals < max_evals:
            a = _interpolate(lo, f_lo, df_lo, hi, f_hi, df_hi)
            if a == lo or a == hi:
                return None
            f_a, df_a = phi(a)
            if not np.isfinite(f_a) or f_a > L0 + c1 * a * dphi0 or f_a >= f_lo:
                hi, f_hi, df_hi = a, f_a, df_a
            else:
                if abs(df_a) <= -c2 * dphi0:
                    return a
                if df_a * (hi - lo) >= 0.0:
                    hi, f_hi, df_hi = lo, f_lo, df_lo
                lo, f_lo, df_lo = a, f_a, df_a
        return None

    prev, f_prev, df_prev = 0.0, L0, dphi0
    alpha = alpha0
    first = True
    while phi.evals < max_evals:
        f_a, df_a = phi(alpha)
        if not np.isfinite(f_a) or f_a > L0 + c1 * alpha * dphi0 or (not first and f_a >= f_prev):
            if not np.isfinite(f_a):
                f_a, df_a = np.inf, 0.0
            found = _zoom(prev, f_prev, df_prev, alpha, f_a, df_a)
            return phi.result(found) if found is not None else None
        if abs(df_a) <= -c2 * dphi0:
            return phi.result(alpha)
        if df_a >= 0.0:
            found = _zoom(alpha, f_a, df_a, prev, f_prev, df_prev)
            return phi.result(found) if found is not None else None
        prev, f_prev, df_prev = alpha, f_a, df_a
        alpha = min(2.0 * alpha, alpha_max)
        first = False
    return None


def _grad_norm(g: np.ndarray) -> float:
    return float(np.max(np.abs(g))) if g.size else 0.0


def _converged(L: float, gnorm: float, cfg: OptimizerConfig) -> Optional[TrainStatus]:
    if gnorm <= cfg.grad_tol:
        return "converged_grad"
    if L <= cfg.loss_tol:
        return "converged_loss"
    return None


def bfgs_minimize(fun: Objective, p0: np.ndarray, cfg: OptimizerConfig, label: str = "") -> TrainReport:
    """
    Dense inverse-Hessian BFGS with a strong Wolfe line search.

    H starts as the identity and is rescaled by s'y / y'y before the first
    update. Updates with s'y <= eps * |s| |y| are skipped. When the line search
    fails, H is reset to the identity once before the run is declared failed.
    """
    start = time.perf_counter()
    p = np.array(p0, dtype=float).reshape(-1)
    if not np.all(np.isfinite(p)):
        raise ValueError("bfgs_minimize: p0 must be finite")
    L, g = fun(p)
    L = float(L)
    n = p.size
    H = np.eye(n)
    fresh_H = True
    history = [HistoryRow(0, L, _grad_norm(g))]
    status: TrainStatus = _converged(L, history[0].grad_norm, cfg) or "max_iters"
    L_prev: Optional[float] = None

    k = 0
    while k < cfg.max_iters and status == "max_iters":
        d = -H @ g
        dphi0 = float(g @ d)
        if not dphi0 < 0.0:
            H = np.eye(n)
            fresh_H = True
            d = -g
            dphi0 = float(g @ d)

        alpha0 = 1.0
        if fresh_H and L_prev is not None and dphi0 < 0.0:
            alpha0 = min(1.0, 1.01 * 2.0 * (L - L_prev) / dphi0)
            if not alpha0 > 0.0:
                alpha0 = 1.0
        step = strong_wolfe(
            fun, p, L, g, d,
            alpha0=alpha0,
            c1=cfg.wolfe_c1,
            c2=cfg.wolfe_c2,
            max_evals=cfg.max_line_evals,
        )
        if step is None and not fresh_H:
            log.info(f"    [bfgs{label}] iter {k}: line search failed, resetting inverse Hessian")
            H = np.eye(n)
            fresh_H = True
            continue
        if step is None:
            log.warning(f"    [bfgs{label}] iter {k}: line search failed at L={L:.6e}")
            status = "line_search_failure"
            break

        s = step.p - p
        y = step.g - g
        p, L_prev, L, g = step.p, L, step.L, step.g
        k += 1

        sy = float(s @ y)
        if sy > cfg.curvature_eps * float(np.linalg.norm(s) * np.linalg.norm(y)):
            if fresh_H:
                H = np.eye(n) * (sy / float(y @ y))
            rho = 1.0 / sy
            Hy = H @ y
            # H+ = (I - rho s y') H (I - rho y s') + rho s s'
            H = (
                H
                - rho * (np.outer(s, Hy) + np.outer(Hy, s))
                + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s)
            )
            fresh_H = False

        gnorm = _grad_norm(g)
        history.append(HistoryRow(k, L, gnorm))
        if cfg.log_every and k % cfg.log_every == 0:
            log.info(f"    [bfgs{label}] iter {k} | L={L:.6e} | |g|={gnorm:.3e}")
        status = _converged(L, gnorm, cfg) or "max_iters"

    return TrainReport(
        loss_history=history,
        final_p=p,
        final_loss=L,
        status=status,
        wall_time=time.perf_counter() - start,
        method="bfgs",
    )


def gd_minimize(fun: Objective, p0: np.ndarray, cfg: OptimizerConfig, label: str = "") -> TrainReport:
    """Gradient descent: each step starts at cfg.learning_rate and halves until Armijo holds."""
    start = time.perf_counter()
    p = np.array(p0, dtype=float).reshape(-1)
    if not np.all(np.isfinite(p)):
        raise ValueError("gd_minimize: p0 must be finite")
    L, g = fun(p)
    L = float(L)
    history = [HistoryRow(0, L, _grad_norm(g))]
    status: TrainStatus = _converged(L, history[0].grad_norm, cfg) or "max_iters"

    k = 0
    while k < cfg.max_iters and status == "max_iters":
        gg = float(g @ g)
        alpha = cfg.learning_rate
        accepted = None
        for _ in range(cfg.max_line_evals):
            x = p - alpha * g
            L_new, g_new = fun(x)
            if np.isfinite(L_new) and L_new <= L - cfg.wolfe_c1 * alpha * gg:
                accepted = (x, float(L_new), np.asarray(g_new, dtype=float))
                break
            alpha *= 0.5
        if accepted is None:
            log.warning(f"    [gd{label}] iter {k}: backtracking failed at L={L:.6e}")
            status = "line_search_failure"
            break
        p, L, g = accepted
        k += 1
        gnorm = _grad_norm(g)
        history.append(HistoryRow(k, L, gnorm))
        if cfg.log_every and k % cfg.log_every == 0:
            log.info(f"    [gd{label}] iter {k} | L={L:.6e} | |g|={gnorm:.3e}")
        status = _converged(L, gnorm, cfg) or "max_iters"

    return TrainReport(
        loss_history=history,
        final_p=p,
        final_loss=L,
        status=status,
        wall_time=time.perf_counter() - start,
        method="gradient_descent",
    )


def minimize(fun: Objective, p0: np.ndarray, cfg: OptimizerConfig, label: str = "") -> TrainReport:
    if cfg.method == "bfgs":
        return bfgs_minimize(fun, p0, cfg, label)
    return gd_minimize(fun, p0, cfg, label)
