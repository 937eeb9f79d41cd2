from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from openpyxl import Workbook


def ensure_dir(p: Path) -> Path:
    p.mkdir(parents=True, exist_ok=True)
    return p


def sanitize_folder_name(name: str) -> str:
    bad = '<>:"/\\|?* '
    out = "".join("_" if c in bad else c for c in name.strip())
    return out or "run"


def fmt_number(x: Any, digits: int = 17) -> str:
    """Round-trippable decimal text; None becomes an empty cell."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), f".{digits}g")
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]], digits: int = 17) -> Path:
    ensure_dir(path.parent)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([fmt_number(v, digits) for v in row])
    return path


def write_matrix_csv(
    path: Path,
    header: Sequence[str],
    times: Sequence[float],
    *blocks: np.ndarray,
    digits: int = 17,
) -> Path:
    """One row per time: t followed by the columns of every (k, n) block."""
    times = np.asarray(times, dtype=float).reshape(-1)
    mats = [np.asarray(b, dtype=float).reshape(times.size, -1) for b in blocks]
    rows = (
        [t, *(v for m in mats for v in m[i])]
        for i, t in enumerate(times)
    )
    return write_csv(path, header, rows, digits)


def write_json(path: Path, payload: str | dict[str, Any]) -> Path:
    ensure_dir(path.parent)
    text = payload if isinstance(payload, str) else json.dumps(payload, indent=2, ensure_ascii=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def write_xlsx(path: Path, title: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    ensure_dir(path.parent)
    wb = Workbook()
    ws = wb.active
    ws.title = title
    ws.append(list(header))
    for row in rows:
        ws.append(["" if v is None else v for v in row])
    wb.save(str(path))
    return path
