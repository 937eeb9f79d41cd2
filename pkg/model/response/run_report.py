from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field


class NetPayload(BaseModel):
    m: int
    w1: list[float]
    b1: list[float]
    w2: list[float]
    b2: float


class Timings(BaseModel):
    train_seconds: float = 0.0
    reference_seconds: float = 0.0
    total_seconds: float = 0.0


class RunReport(BaseModel):
    """report.json of a train run. Everything except ``timings`` is reproducible from config + seed."""

    name: str
    system: str
    variables: list[str]
    base: str
    method: str
    status: str
    seed: int
    best_seed: Optional[int] = None
    iterations: int
    final_loss: Optional[float] = None
    loss_per_component: list[float]
    restart_losses: list[float] = Field(default_factory=list)
    rmse_train: Optional[float] = None
    rmse_train_per_component: list[float] = Field(default_factory=list)
    rmse_extrapolation: Optional[float] = None
    rmse_extrapolation_per_component: list[float] = Field(default_factory=list)
    paper_loss: Optional[float] = None
    paper_rmse: Optional[float] = None
    error: Optional[str] = None
    config: dict[str, Any]
    nets: list[NetPayload] = Field(default_factory=list)
    timings: Timings = Field(default_factory=Timings)

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


class CompareRun(BaseModel):
    label: str
    method: str
    base: str
    seed: int
    final_loss: float
    iterations: int
    status: str
    history_csv: str


class CompareReport(BaseModel):
    name: str
    runs: list[CompareRun] = Field(default_factory=list)
    seeds: list[int] = Field(default_factory=list)
    # seeds on which bfgs ended strictly below gradient descent
    bfgs_wins: Optional[int] = None
    # seeds on which the lie base ended strictly below the initial-value base
    lie_wins: Optional[int] = None

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


class BenchRow(BaseModel):
    preset: str
    paper_loss: Optional[float] = None
    our_loss: Optional[float] = None
    paper_rmse: Optional[float] = None
    our_rmse: Optional[float] = None
    extrapolation_rmse: Optional[float] = None
    wall_time: float = 0.0
    status: str = "ok"
    error: Optional[str] = None

    @staticmethod
    def columns() -> list[str]:
        return list(BenchRow.model_fields)

    def values(self) -> list[Any]:
        return [getattr(self, c) for c in self.columns()]


class BenchSummary(BaseModel):
    rows: list[BenchRow] = Field(default_factory=list)
    total_seconds: float = 0.0

    @property
    def failed(self) -> bool:
        return any(r.status != "ok" for r in self.rows)

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)
