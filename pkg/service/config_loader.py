from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional

THREADS_ENV = "LIEODE_THREADS"


class ConfigError(ValueError):
    def __init__(self, message: str, field: str | None = None) -> None:
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


@dataclass(frozen=True)
class AppConfig:
    export_root: Path
    log_dir: Path
    max_workers: int
    threads: int
    reference_rtol: float
    reference_atol: float
    log_every: int
    csv_digits: int

    def to_public_dict(self) -> dict[str, Any]:
        return {
            "export_root": str(self.export_root),
            "log_dir": str(self.log_dir),
            "max_workers": self.max_workers,
            "threads": self.threads,
            "reference_rtol": self.reference_rtol,
            "reference_atol": self.reference_atol,
            "log_every": self.log_every,
            "csv_digits": self.csv_digits,
        }


def _positive_float(raw: Mapping[str, Any], key: str, default: float) -> float:
    value = float(raw.get(key, default))
    if not value > 0:
        raise ConfigError(f"must be > 0, got {value}", key)
    return value


def _threads_from_env(env: Mapping[str, str], fallback: int) -> int:
    text = env.get(THREADS_ENV, "").strip()
    if not text:
        return fallback
    try:
        return max(1, int(text))
    except ValueError:
        raise ConfigError(f"expected an integer, got '{text}'", THREADS_ENV) from None


def load_app_config(path: Optional[Path] = None, env: Optional[Mapping[str, str]] = None) -> AppConfig:
    """Runtime settings; a missing file means all defaults."""
    raw: dict[str, Any] = {}
    if path is not None and path.exists():
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}", str(path)) from e
    env = os.environ if env is None else env
    threads = max(1, int(raw.get("threads", 1)))
    return AppConfig(
        export_root=Path(str(raw.get("export_root", "exports"))),
        log_dir=Path(str(raw.get("log_dir", "logs"))),
        max_workers=min(8, max(1, int(raw.get("max_workers", 4)))),
        threads=_threads_from_env(env, threads),
        reference_rtol=_positive_float(raw, "reference_rtol", 1e-9),
        reference_atol=_positive_float(raw, "reference_atol", 1e-9),
        log_every=max(0, int(raw.get("log_every", 100))),
        csv_digits=min(17, max(6, int(raw.get("csv_digits", 17)))),
    )
