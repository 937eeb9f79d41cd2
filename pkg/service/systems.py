"""
IVP systems y' = f(t, y) and the four shipped benchmark presets.

Right-hand sides and Jacobians accept a single state of shape (n,) or a batch of
states of shape (k, n); the Jacobian then has shape (k, n, n).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from model.types import AffineField, JacobianCheckReport, OdeSystem
from service import exprlang
from service.linflow import ExponentialSumBase


class UnknownSystemError(KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown system"


@dataclass(frozen=True)
class SystemPreset:
    system: OdeSystem
    linear_part: AffineField
    train_interval: tuple[float, float]
    n_points: int
    hidden_units: int
    test_interval: tuple[float, float]
    test_points: int = 200
    restarts: int = 5
    reported_loss: Optional[float] = None
    reported_rmse: Optional[float] = None
    # printed closed-form base, when the source prints one
    literal_base: Optional[ExponentialSumBase] = None
    linear_part_fn: Optional[Callable[[Mapping[str, float]], AffineField]] = field(
        default=None, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        (a0, a1), (b0, b1) = self.train_interval, self.test_interval
        if not (b0 <= a0 < a1 <= b1):
            raise ValueError(
                f"preset '{self.system.name}': test interval {self.test_interval} "
                f"must contain train interval {self.train_interval}"
            )

    @property
    def name(self) -> str:
        return self.system.name

    def with_params(self, overrides: Mapping[str, float]) -> "SystemPreset":
        """Same preset with some parameters replaced; X1 is rebuilt from them."""
        unknown = set(overrides) - set(self.system.params)
        if unknown:
            raise ValueError(f"preset '{self.name}' has no parameters {sorted(unknown)}")
        params = {**self.system.params, **{k: float(v) for k, v in overrides.items()}}
        system = replace(self.system, params=params)
        linear = self.linear_part_fn(params) if self.linear_part_fn else self.linear_part
        return replace(self, system=system, linear_part=linear)


def _batch_shape(y: np.ndarray) -> tuple[int, ...]:
    return y.shape[:-1]


# --------------------------------------------------------------------------- #
# Food chain: x' = ax - bxy, y' = -cy + dxy - eyz, z' = -fz + gyz
# --------------------------------------------------------------------------- #
def _food_chain_rhs(t: Any, y: np.ndarray, p: Mapping[str, float]) -> np.ndarray:
    x, u, z = y[..., 0], y[..., 1], y[..., 2]
    return np.stack(
        [
            p["a"] * x - p["b"] * x * u,
            -p["c"] * u + p["d"] * x * u - p["e"] * u * z,
            -p["f"] * z + p["g"] * u * z,
        ],
        axis=-1,
    )


def _food_chain_jac(t: Any, y: np.ndarray, p: Mapping[str, float]) -> np.ndarray:
    x, u, z = y[..., 0], y[..., 1], y[..., 2]
    J = np.zeros(_batch_shape(y) + (3, 3))
    J[..., 0, 0] = p["a"] - p["b"] * u
    J[..., 0, 1] = -p["b"] * x
    J[..., 1, 0] = p["d"] * u
    J[..., 1, 1] = -p["c"] + p["d"] * x - p["e"] * z
    J[..., 1, 2] = -p["e"] * u
    J[..., 2, 1] = p["g"] * z
    J[..., 2, 2] = -p["f"] + p["g"] * u
    return J


def _food_chain_linear(p: Mapping[str, float]) -> AffineField:
    return AffineField.linear(np.diag([p["a"], -p["c"], -p["f"]]))


# --------------------------------------------------------------------------- #
# Van der Pol after the Lienard transform: x' = mu (x - x^3/3 - y), y' = x / mu
# --------------------------------------------------------------------------- #
def _van_der_pol_rhs(t: Any, y: np.ndarray, p: Mapping[str, float]) -> np.ndarray:
    mu = p["mu"]
    x, v = y[..., 0], y[..., 1]
    return np.stack([mu * (x - x**3 / 3.0 - v), x / mu], axis=-1)


def _van_der_pol_jac(t: Any, y: np.ndarray, p: Mapping[str, float]) -> np.ndarray:
    mu = p["mu"]
    x = y[..., 0]
    J = np.zeros(_batch_shape(y) + (2, 2))
    J[..., 0, 0] = mu * (1.0 - x * x)
    J[..., 0, 1] = -mu
    J[..., 1, 0] = 1.0 / mu
    return J


def _van_der_pol_linear(p: Mapping[str, float]) -> AffineField:
    mu = p["mu"]
    return AffineField.linear([[0.0, -mu], [1.0 / mu, 0.0]])


# --------------------------------------------------------------------------- #
# Lorenz
# --------------------------------------------------------------------------- #
def _lorenz_rhs(t: Any, y: np.ndarray, p: Mapping[str, float]) -> np.ndarray:
    y1, y2, y3 = y[..., 0], y[..., 1], y[..., 2]
    return np.stack(
        [
            p["sigma"] * (y2 - y1),
            p["rho"] * y1 - y2 - y1 * y3,
            -p["beta"] * y3 + y1 * y2,
        ],
        axis=-1,
    )


def _lorenz_jac(t: Any, y: np.ndarray, p: Mapping[str, float]) -> np.ndarray:
    y1, y2, y3 = y[..., 0], y[..., 1], y[..., 2]
    J = np.zeros(_batch_shape(y) + (3, 3))
    J[..., 0, 0] = -p["sigma"]
    J[..., 0, 1] = p["sigma"]
    J[..., 1, 0] = p["rho"] - y3
    J[..., 1, 1] = -1.0
    J[..., 1, 2] = -y1
    J[..., 2, 0] = y2
    J[..., 2, 1] = y1
    J[..., 2, 2] = -p["beta"]
    return J


def _lorenz_linear(p: Mapping[str, float]) -> AffineField:
    # diagonal split: -sigma y1 d1 - y2 d2 - beta y3 d3
    return AffineField.linear(np.diag([-p["sigma"], -1.0, -p["beta"]]))


# --------------------------------------------------------------------------- #
# Rossler: x' = -y - z, y' = x + a y, z' = b + z (x - c)
# --------------------------------------------------------------------------- #
def _rossler_rhs(t: Any, y: np.ndarray, p: Mapping[str, float]) -> np.ndarray:
    x, v, z = y[..., 0], y[..., 1], y[..., 2]
    return np.stack([-v - z, x + p["a"] * v, p["b"] + z * (x - p["c"])], axis=-1)


def _rossler_jac(t: Any, y: np.ndarray, p: Mapping[str, float]) -> np.ndarray:
    x, z = y[..., 0], y[..., 2]
    J = np.zeros(_batch_shape(y) + (3, 3))
    J[..., 0, 1] = -1.0
    J[..., 0, 2] = -1.0
    J[..., 1, 0] = 1.0
    J[..., 1, 1] = p["a"]
    J[..., 2, 0] = z
    J[..., 2, 2] = x - p["c"]
    return J


def _rossler_linear(p: Mapping[str, float]) -> AffineField:
    # -z dx + x dy - c z dz
    return AffineField.linear([[0.0, 0.0, -1.0], [1.0, 0.0, 0.0], [0.0, 0.0, -p["c"]]])


def _food_chain() -> SystemPreset:
    params = {k: 1.0 for k in "abcdefg"}
    system = OdeSystem(
        name="food_chain",
        dim=3,
        rhs=_food_chain_rhs,
        jacobian=_food_chain_jac,
        params=params,
        y0=np.array([0.5, 1.0, 2.0]),
        horizon=3.0,
        variables=("x", "y", "z"),
    )
    return SystemPreset(
        system=system,
        linear_part=_food_chain_linear(params),
        train_interval=(0.0, 3.0),
        n_points=100,
        hidden_units=100,
        test_interval=(0.0, 3.5),
        restarts=5,
        reported_loss=7.303e-5,
        reported_rmse=0.00851,
        linear_part_fn=_food_chain_linear,
    )


def _van_der_pol() -> SystemPreset:
    params = {"mu": 1.0}
    system = OdeSystem(
        name="van_der_pol",
        dim=2,
        rhs=_van_der_pol_rhs,
        jacobian=_van_der_pol_jac,
        params=params,
        y0=np.array([1.0, 2.0]),
        horizon=10.0,
        variables=("x", "y"),
    )
    return SystemPreset(
        system=system,
        linear_part=_van_der_pol_linear(params),
        train_interval=(0.0, 10.0),
        n_points=40,
        hidden_units=50,
        test_interval=(0.0, 11.0),
        restarts=10,
        reported_loss=2.07e-4,
        reported_rmse=0.082,
        linear_part_fn=_van_der_pol_linear,
    )


def _lorenz() -> SystemPreset:
    params = {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0}
    system = OdeSystem(
        name="lorenz",
        dim=3,
        rhs=_lorenz_rhs,
        jacobian=_lorenz_jac,
        params=params,
        y0=np.array([1.0, 5.0, 10.0]),
        horizon=0.5,
    )
    printed = ExponentialSumBase(
        terms=(((1.0, -10.0),), ((5.0, -1.0),), ((10.0, -28.0),)),
    )
    return SystemPreset(
        system=system,
        linear_part=_lorenz_linear(params),
        train_interval=(0.0, 0.5),
        n_points=40,
        hidden_units=30,
        test_interval=(0.0, 0.6),
        restarts=5,
        literal_base=printed,
        linear_part_fn=_lorenz_linear,
    )


def _rossler() -> SystemPreset:
    params = {"a": 0.2, "b": 0.2, "c": 5.7}
    system = OdeSystem(
        name="rossler",
        dim=3,
        rhs=_rossler_rhs,
        jacobian=_rossler_jac,
        params=params,
        y0=np.array([1.0, 5.0, 10.0]),
        horizon=1.0,
        variables=("x", "y", "z"),
    )
    printed = ExponentialSumBase(
        terms=(
            ((-0.754386, 0.0), (1.75439, -5.7)),
            ((5.30779, 0.0), (-0.307787, -5.7)),
            ((10.0, -5.7),),
        ),
    )
    return SystemPreset(
        system=system,
        linear_part=_rossler_linear(params),
        train_interval=(0.0, 1.0),
        n_points=40,
        hidden_units=50,
        test_interval=(0.0, 1.4),
        test_points=200,
        restarts=5,
        reported_loss=3.266e-6,
        reported_rmse=4.747e-5,
        literal_base=printed,
        linear_part_fn=_rossler_linear,
    )


PRESETS: dict[str, Callable[[], SystemPreset]] = {
    "food_chain": _food_chain,
    "van_der_pol": _van_der_pol,
    "lorenz": _lorenz,
    "rossler": _rossler,
}


def builtin(name: str) -> SystemPreset:
    factory = PRESETS.get(name)
    if factory is None:
        raise UnknownSystemError(
            f"unknown system '{name}', expected one of {sorted(PRESETS)}"
        )
    return factory()


def from_expressions(
    dim: int,
    rhs_sources: Sequence[str],
    params: Mapping[str, float],
    y0: Sequence[float],
    horizon: float,
    name: str = "custom",
    variables: Sequence[str] | None = None,
) -> OdeSystem:
    """System whose components are expression strings over t, the variables and params."""
    if len(rhs_sources) != dim:
        raise ValueError(f"system '{name}': {len(rhs_sources)} rhs expressions for dim={dim}")
    names = tuple(variables) if variables else tuple(f"y{i + 1}" for i in range(dim))
    if len(names) != dim:
        raise ValueError(f"system '{name}': {len(names)} variable names for dim={dim}")
    exprs = [exprlang.parse(src, names, tuple(params)) for src in rhs_sources]

    def _components(y: np.ndarray) -> list[Any]:
        return [y[..., i] for i in range(dim)]

    def rhs(t: Any, y: np.ndarray, p: Mapping[str, float]) -> np.ndarray:
        comps = _components(y)
        t = np.broadcast_to(t, y.shape[:-1]) if y.ndim > 1 else t
        out = [np.broadcast_to(exprlang.evaluate(e, t, comps, p), y.shape[:-1]) for e in exprs]
        return np.stack(out, axis=-1).astype(float)

    def jacobian(t: Any, y: np.ndarray, p: Mapping[str, float]) -> np.ndarray:
        comps = _components(y)
        t = np.broadcast_to(t, y.shape[:-1]) if y.ndim > 1 else t
        J = np.zeros(y.shape[:-1] + (dim, dim))
        for j in range(dim):
            for k, e in enumerate(exprs):
                J[..., k, j] = exprlang.evaluate_dual(e, t, comps, p, seed=j).deriv
        return J

    return OdeSystem(
        name=name,
        dim=dim,
        rhs=rhs,
        jacobian=jacobian,
        params=dict(params),
        y0=np.asarray(y0, dtype=float),
        horizon=horizon,
        variables=names,
    )


def jacobian_check(
    system: OdeSystem,
    trials: int = 50,
    tol: float = 1e-6,
    seed: int = 0,
    radius: float = 1.0,
) -> JacobianCheckReport:
    """Analytic Jacobian against central differences at random states around y0."""
    if trials < 1:
        raise ValueError(f"jacobian_check: trials must be >= 1, got {trials}")
    rng = np.random.default_rng(seed)
    n = system.dim
    scale = radius * np.maximum(1.0, np.abs(system.y0))
    worst = 0.0
    failures: list[tuple[int, int, int, float, float]] = []
    for trial in range(trials):
        y = system.y0 + rng.uniform(-1.0, 1.0, n) * scale
        t = float(rng.uniform(0.0, system.horizon))
        J = system.jac(t, y)
        for j in range(n):
            h = 1e-6 * max(1.0, abs(y[j]))
            up, down = y.copy(), y.copy()
            up[j] += h
            down[j] -= h
            column = (system.f(t, up) - system.f(t, down)) / (up[j] - down[j])
            for i in range(n):
                err = abs(J[i, j] - column[i]) / max(1.0, abs(column[i]))
                worst = max(worst, err)
                if err > tol:
                    failures.append((trial, i, j, float(J[i, j]), float(column[i])))
    return JacobianCheckReport(
        passed=not failures,
        max_rel_error=worst,
        trials=trials,
        tol=tol,
        failures=failures,
    )
