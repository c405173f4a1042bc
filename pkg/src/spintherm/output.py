"""Result records and their on-disk form.

A run directory holds one CSV per table, ``result.json`` (config echo, code
version, seeds, scalars) and ``run.log`` (timestamps and worker count).
Only ``run.log`` varies between identical runs.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError

PROB_SUM_TOL = 1e-10


@dataclass
class Table:
    columns: list
    rows: np.ndarray | list
    probability_columns: tuple = ()


@dataclass
class Scalar:
    value: float
    stderr: float | None = None
    tolerance: float | None = None
    stochastic: bool = False


@dataclass
class ResultRecord:
    metadata: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    scalars: dict = field(default_factory=dict)

    def add_scalar(self, name, value, stderr=None, tolerance=None, stochastic=False):
        if stochastic and stderr is None:
            raise ValueError(f"stochastic scalar '{name}' needs a standard error")
        self.scalars[name] = Scalar(float(value), None if stderr is None else float(stderr),
                                    tolerance, stochastic)

    def scalar(self, name) -> float:
        return self.scalars[name].value


def fmt_float(x) -> str:
    """17 significant digits: round-trip exact for IEEE doubles."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_json_safe(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(obj, Path):
        return str(obj)
    return obj


def validate_probabilities(name: str, table: Table):
    if not table.probability_columns:
        return
    rows = np.asarray(table.rows, dtype=float)
    for col in table.probability_columns:
        j = table.columns.index(col)
        total = float(rows[:, j].sum())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise DomainError(
                f"probability column '{col}' of table '{name}' sums to {total!r}",
                quantity=f"{name}.{col}",
            )


def table_csv(table: Table) -> str:
    lines = [",".join(table.columns)]
    for row in table.rows:
        lines.append(",".join(fmt_float(v) for v in row))
    return "\n".join(lines) + "\n"


def atomic_write(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def record_json(record: ResultRecord) -> str:
    payload = {
        "metadata": record.metadata,
        "tables": {name: {"file": f"{name}.csv", "columns": t.columns,
                          "probability_columns": list(t.probability_columns)}
                   for name, t in record.tables.items()},
        "scalars": {
            name: {k: v for k, v in (("value", s.value), ("stderr", s.stderr),
                                     ("tolerance", s.tolerance)) if v is not None}
            for name, s in record.scalars.items()
        },
    }
    return json.dumps(_json_safe(payload), indent=2, sort_keys=False) + "\n"


def write_record(record: ResultRecord, out_dir: Path, *, csv: bool = True, json_: bool = True,
                 run_log: dict | None = None) -> list:
    """Validate and write a record; returns the paths written."""
    for name, table in record.tables.items():
        validate_probabilities(name, table)
    out_dir = Path(out_dir)
    written = []
    if csv:
        for name, table in record.tables.items():
            path = out_dir / f"{name}.csv"
            atomic_write(path, table_csv(table))
            written.append(path)
    if json_:
        path = out_dir / "result.json"
        atomic_write(path, record_json(record))
        written.append(path)
    if run_log is not None:
        path = out_dir / "run.log"
        atomic_write(path, "".join(f"{k}={v}\n" for k, v in run_log.items()))
        written.append(path)
    return written
