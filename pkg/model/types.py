from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Literal, Mapping, Optional

import numpy as np


# rhs(t, y, params): t scalar or (k,), y (n,) or (k, n) -> same shape as y
RhsFn = Callable[[Any, np.ndarray, Mapping[str, float]], np.ndarray]
# jac(t, y, params): y (n,) or (k, n) -> (n, n) or (k, n, n)
JacobianFn = Callable[[Any, np.ndarray, Mapping[str, float]], np.ndarray]

TrainStatus = Literal["converged_grad", "converged_loss", "max_iters", "line_search_failure"]
OptimizerMethod = Literal["bfgs", "gradient_descent"]


@dataclass(frozen=True)
class OdeSystem:
    """y' = f(t, y), y(0) = y0 on [0, horizon]."""

    name: str
    dim: int
    rhs: RhsFn
    jacobian: JacobianFn
    params: Mapping[str, float]
    y0: np.ndarray
    horizon: float
    variables: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        y0 = np.asarray(self.y0, dtype=float).reshape(-1)
        if self.dim < 1:
            raise ValueError(f"system '{self.name}': dim must be positive, got {self.dim}")
        if y0.shape != (self.dim,):
            raise ValueError(
                f"system '{self.name}': y0 has length {y0.size}, expected {self.dim}"
            )
        if not self.horizon > 0:
            raise ValueError(f"system '{self.name}': horizon must be > 0, got {self.horizon}")
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "params", dict(self.params))
        if not self.variables:
            object.__setattr__(
                self, "variables", tuple(f"y{i + 1}" for i in range(self.dim))
            )

    def f(self, t: Any, y: np.ndarray) -> np.ndarray:
        return self.rhs(t, np.asarray(y, dtype=float), self.params)

    def jac(self, t: Any, y: np.ndarray) -> np.ndarray:
        return self.jacobian(t, np.asarray(y, dtype=float), self.params)


@dataclass(frozen=True)
class AffineField:
    """The linear operator X1 as the vector field y' = A y + c."""

    A: np.ndarray
    c: np.ndarray

    def __post_init__(self) -> None:
        A = np.array(self.A, dtype=float, ndmin=2)
        c = np.array(self.c, dtype=float).reshape(-1)
        if A.shape != (c.size, c.size):
            raise ValueError(f"affine field: A has shape {A.shape}, c has length {c.size}")
        A.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", c)

    @property
    def dim(self) -> int:
        return int(self.c.size)

    @staticmethod
    def linear(A: Any) -> "AffineField":
        A = np.array(A, dtype=float, ndmin=2)
        return AffineField(A=A, c=np.zeros(A.shape[0]))

    @staticmethod
    def zero(dim: int) -> "AffineField":
        return AffineField(A=np.zeros((dim, dim)), c=np.zeros(dim))

    def augmented(self) -> np.ndarray:
        """[[A, c], [0, 0]] so that the affine flow becomes a linear one."""
        n = self.dim
        M = np.zeros((n + 1, n + 1))
        M[:n, :n] = self.A
        M[:n, n] = self.c
        return M

    def apply(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=float) @ self.A.T + self.c


@dataclass(frozen=True)
class FlowTable:
    times: np.ndarray
    values: np.ndarray
    derivs: np.ndarray

    def __len__(self) -> int:
        return int(self.times.size)

    def lookup(self, t: float) -> Optional[int]:
        """Row index holding exactly time t, if any."""
        i = int(np.searchsorted(self.times, t))
        if i < self.times.size and self.times[i] == t:
            return i
        return None


@dataclass(frozen=True)
class NetEval:
    value: float
    dt: float
    grad_p: np.ndarray
    grad_p_dt: np.ndarray


@dataclass(frozen=True)
class TrialEval:
    t: float
    yhat: np.ndarray
    yhat_dt: np.ndarray
    # row k: d yhat_k / d p_k and d yhat'_k / d p_k, p_k = parameters of net k only
    sens_value: np.ndarray
    sens_deriv: np.ndarray


@dataclass(frozen=True)
class LossState:
    p: np.ndarray
    L: float
    g: np.ndarray
    per_component: np.ndarray


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 1000
    grad_tol: float = 1e-8
    loss_tol: float = 1e-10
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_line_evals: int = 40
    curvature_eps: float = 1e-10
    learning_rate: float = 0.1
    restarts: int = 1
    method: OptimizerMethod = "bfgs"
    log_every: int = 100

    def __post_init__(self) -> None:
        if not 0.0 < self.wolfe_c1 < self.wolfe_c2 < 1.0:
            raise ValueError(
                f"wolfe constants must satisfy 0 < c1 < c2 < 1, "
                f"got c1={self.wolfe_c1}, c2={self.wolfe_c2}"
            )
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")
        if self.method not in ("bfgs", "gradient_descent"):
            raise ValueError(f"unknown optimizer method '{self.method}'")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass(frozen=True)
class HistoryRow:
    iteration: int
    loss: float
    grad_norm: float


@dataclass(frozen=True)
class TrainReport:
    loss_history: list[HistoryRow]
    final_p: np.ndarray
    final_loss: float
    status: TrainStatus
    wall_time: float
    method: OptimizerMethod = "bfgs"
    seed: Optional[int] = None
    rmse: Optional[float] = None
    restart_losses: list[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return self.loss_history[-1].iteration if self.loss_history else 0

    @property
    def failed(self) -> bool:
        return self.status == "line_search_failure"


@dataclass(frozen=True)
class JacobianCheckReport:
    passed: bool
    max_rel_error: float
    trials: int
    tol: float
    # (trial, row, col, analytic, finite-difference) for entries above tol
    failures: list[tuple[int, int, int, float, float]] = field(default_factory=list)
