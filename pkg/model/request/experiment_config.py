from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from model.types import OptimizerConfig
from service.config_loader import ConfigError

Interval = tuple[float, float]


def _ordered(value: Optional[Interval], name: str) -> Optional[Interval]:
    if value is not None and not value[0] < value[1]:
        raise ValueError(f"{name} must satisfy start < end, got {list(value)}")
    return value


class CustomSystemSpec(BaseModel):
    """Inline system: one expression per component over t, the variables and params."""

    model_config = ConfigDict(extra="forbid")

    name: str = "custom"
    dim: int = Field(ge=1)
    rhs: list[str]
    y0: list[float]
    params: dict[str, float] = Field(default_factory=dict)
    variables: Optional[list[str]] = None
    linear_A: Optional[list[list[float]]] = None
    linear_c: Optional[list[float]] = None

    @model_validator(mode="after")
    def _dimensions(self) -> "CustomSystemSpec":
        n = self.dim
        if len(self.rhs) != n:
            raise ValueError(f"rhs has {len(self.rhs)} expressions, dim is {n}")
        if len(self.y0) != n:
            raise ValueError(f"y0 has {len(self.y0)} values, dim is {n}")
        if self.variables is not None:
            if len(self.variables) != n:
                raise ValueError(f"variables has {len(self.variables)} names, dim is {n}")
            if len(set(self.variables)) != n or "t" in self.variables:
                raise ValueError("variables must be distinct and must not be 't'")
        if self.linear_A is not None and (
            len(self.linear_A) != n or any(len(row) != n for row in self.linear_A)
        ):
            raise ValueError(f"linear_A must be {n}x{n}")
        if self.linear_c is not None:
            if self.linear_A is None:
                raise ValueError("linear_c requires linear_A")
            if len(self.linear_c) != n:
                raise ValueError(f"linear_c has {len(self.linear_c)} values, dim is {n}")
        return self


class OptimizerSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    method: Literal["bfgs", "gradient_descent"] = "bfgs"
    max_iters: int = Field(1000, ge=0)
    grad_tol: float = Field(1e-8, ge=0)
    loss_tol: float = Field(1e-10, ge=0)
    wolfe_c1: float = Field(1e-4, gt=0, lt=1)
    wolfe_c2: float = Field(0.9, gt=0, lt=1)
    max_line_evals: int = Field(40, ge=1)
    curvature_eps: float = Field(1e-10, ge=0)
    learning_rate: float = Field(0.1, gt=0)
    log_every: Optional[int] = Field(None, ge=0)

    @model_validator(mode="after")
    def _wolfe_order(self) -> "OptimizerSettings":
        if not self.wolfe_c1 < self.wolfe_c2:
            raise ValueError(f"wolfe_c1 ({self.wolfe_c1}) must be below wolfe_c2 ({self.wolfe_c2})")
        return self

    def to_config(self, restarts: int, log_every: int) -> OptimizerConfig:
        return OptimizerConfig(
            max_iters=self.max_iters,
            grad_tol=self.grad_tol,
            loss_tol=self.loss_tol,
            wolfe_c1=self.wolfe_c1,
            wolfe_c2=self.wolfe_c2,
            max_line_evals=self.max_line_evals,
            curvature_eps=self.curvature_eps,
            learning_rate=self.learning_rate,
            restarts=restarts,
            method=self.method,
            log_every=log_every if self.log_every is None else self.log_every,
        )


class ExperimentConfig(BaseModel):
    """
    One experiment. Exactly one of ``preset`` / ``system``; unset fields fall
    back to the preset (or to the custom-system defaults in experiment.py).
    """

    model_config = ConfigDict(extra="forbid")

    name: Optional[str] = None
    preset: Optional[str] = None
    system: Optional[CustomSystemSpec] = None
    params: dict[str, float] = Field(default_factory=dict)
    train_interval: Optional[Interval] = None
    n_points: Optional[int] = Field(None, ge=1)
    hidden_units: Optional[int] = Field(None, ge=1)
    optimizer: OptimizerSettings = Field(default_factory=OptimizerSettings)
    seed: int = Field(0, ge=0)
    restarts: Optional[int] = Field(None, ge=1)
    test_interval: Optional[Interval] = None
    test_points: Optional[int] = Field(None, ge=2)
    base: Literal["lie", "initial"] = "lie"
    paper_literal_base: bool = False
    output_dir: Optional[str] = None

    @field_validator("train_interval")
    @classmethod
    def _train_ordered(cls, v: Optional[Interval]) -> Optional[Interval]:
        return _ordered(v, "train_interval")

    @field_validator("test_interval")
    @classmethod
    def _test_ordered(cls, v: Optional[Interval]) -> Optional[Interval]:
        return _ordered(v, "test_interval")

    @model_validator(mode="after")
    def _one_system(self) -> "ExperimentConfig":
        if (self.preset is None) == (self.system is None):
            raise ValueError("exactly one of 'preset' or 'system' must be given")
        if self.system is not None and self.train_interval is None:
            raise ValueError("custom systems need 'train_interval'")
        if self.paper_literal_base and self.base != "lie":
            raise ValueError("paper_literal_base replaces the 'lie' base and cannot be combined with base='initial'")
        if self.train_interval is not None and self.train_interval[0] != 0.0:
            raise ValueError(f"train_interval must start at 0, got {list(self.train_interval)}")
        return self

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        return self.preset if self.preset else (self.system.name if self.system else "run")


def _flatten(err: ValidationError) -> str:
    lines = []
    for item in err.errors():
        where = ".".join(str(p) for p in item.get("loc", ())) or "config"
        lines.append(f"{where}: {item.get('msg', '')}")
    return "\n".join(lines)


def parse_experiment(raw: Any) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(_flatten(e)) from e


def load_experiment(path: Path) -> ExperimentConfig:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", str(path)) from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}", str(path)) from e
    return parse_experiment(raw)
