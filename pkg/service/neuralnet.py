from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from model.types import NetEval


@dataclass(frozen=True)
class ScalarNet:
    """
    N(t) = sum_j w2_j * tanh(w1_j * t + b1_j) + b2

    Flat parameter layout: [w1 (m), b1 (m), w2 (m), b2].
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float

    def __post_init__(self) -> None:
        w1 = np.array(self.w1, dtype=float).reshape(-1)
        b1 = np.array(self.b1, dtype=float).reshape(-1)
        w2 = np.array(self.w2, dtype=float).reshape(-1)
        if not (w1.size == b1.size == w2.size) or w1.size == 0:
            raise ValueError(
                f"ScalarNet: inconsistent layer sizes w1={w1.size}, b1={b1.size}, w2={w2.size}"
            )
        for arr in (w1, b1, w2):
            arr.setflags(write=False)
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "w2", w2)
        object.__setattr__(self, "b2", float(self.b2))

    @property
    def m(self) -> int:
        return int(self.w1.size)

    @property
    def param_count(self) -> int:
        return param_count(self.m)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.w1, self.b1, self.w2, [self.b2]])

    @staticmethod
    def unflatten(m: int, p: Sequence[float]) -> "ScalarNet":
        p = np.asarray(p, dtype=float).reshape(-1)
        if p.size != param_count(m):
            raise ValueError(f"ScalarNet: expected {param_count(m)} parameters for m={m}, got {p.size}")
        return ScalarNet(w1=p[:m], b1=p[m : 2 * m], w2=p[2 * m : 3 * m], b2=p[3 * m])

    @staticmethod
    def zeros(m: int) -> "ScalarNet":
        return ScalarNet.unflatten(m, np.zeros(param_count(m)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "m": self.m,
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2,
        }

    @staticmethod
    def from_dict(raw: dict[str, Any]) -> "ScalarNet":
        net = ScalarNet(w1=raw["w1"], b1=raw["b1"], w2=raw["w2"], b2=raw["b2"])
        if "m" in raw and int(raw["m"]) != net.m:
            raise ValueError(f"ScalarNet: declared m={raw['m']} but layers have {net.m} units")
        return net


def param_count(m: int) -> int:
    return 3 * m + 1


def init(m: int, seed: int) -> ScalarNet:
    """w1, b1 ~ U(-1, 1); w2 ~ U(-1, 1) / sqrt(m); b2 = 0."""
    if m < 1:
        raise ValueError(f"hidden width must be >= 1, got {m}")
    rng = np.random.default_rng(seed)
    w1 = rng.uniform(-1.0, 1.0, m)
    b1 = rng.uniform(-1.0, 1.0, m)
    w2 = rng.uniform(-1.0, 1.0, m) / np.sqrt(m)
    return ScalarNet(w1=w1, b1=b1, w2=w2, b2=0.0)


def forward(net: ScalarNet, t: Any) -> Any:
    """N(t) for a scalar t (returns float) or an array of times."""
    t_arr = np.asarray(t, dtype=float)
    z = np.multiply.outer(t_arr, net.w1) + net.b1
    out = np.tanh(z) @ net.w2 + net.b2
    return float(out) if t_arr.ndim == 0 else out


@dataclass(frozen=True)
class NetBatch:
    """eval_full over a vector of times; row i belongs to times[i]."""

    value: np.ndarray
    dt: np.ndarray
    grad_p: np.ndarray
    grad_p_dt: np.ndarray


def eval_batch(net: ScalarNet, times: Sequence[float]) -> NetBatch:
    t = np.asarray(times, dtype=float).reshape(-1, 1)
    w1, b1, w2 = net.w1, net.b1, net.w2
    s = np.tanh(t * w1 + b1)
    d = 1.0 - s * s
    w2d = w2 * d

    value = s @ w2 + net.b2
    dt = w2d @ w1

    k, m = s.shape
    grad_p = np.empty((k, param_count(m)))
    grad_p[:, :m] = w2d * t
    grad_p[:, m : 2 * m] = w2d
    grad_p[:, 2 * m : 3 * m] = s
    grad_p[:, 3 * m] = 1.0

    # d(dt)/dz_j = -2 w2_j w1_j s_j d_j
    curv = -2.0 * w2d * w1 * s
    grad_p_dt = np.empty_like(grad_p)
    grad_p_dt[:, :m] = w2d + curv * t
    grad_p_dt[:, m : 2 * m] = curv
    grad_p_dt[:, 2 * m : 3 * m] = w1 * d
    grad_p_dt[:, 3 * m] = 0.0
    return NetBatch(value=value, dt=dt, grad_p=grad_p, grad_p_dt=grad_p_dt)


def eval_full(net: ScalarNet, t: float) -> NetEval:
    b = eval_batch(net, [t])
    return NetEval(
        value=float(b.value[0]),
        dt=float(b.dt[0]),
        grad_p=b.grad_p[0],
        grad_p_dt=b.grad_p_dt[0],
    )
