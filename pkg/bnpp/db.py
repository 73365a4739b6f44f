from __future__ import annotations

import json
import math
import sqlite3
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable


@dataclass(frozen=True)
class Record:
    id: int
    experiment: str
    run_id: str
    rep: int
    cell: dict[str, Any]
    metric: str
    value: float


@dataclass(frozen=True)
class Aggregate:
    cell: dict[str, Any]
    metric: str
    mean: float
    std: float
    n: int


SCHEMA = """
PRAGMA journal_mode=WAL;

CREATE TABLE IF NOT EXISTS records (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  experiment TEXT NOT NULL,
  run_id TEXT NOT NULL,
  rep INTEGER NOT NULL,
  cell TEXT NOT NULL,
  metric TEXT NOT NULL,
  value REAL NOT NULL
);

CREATE INDEX IF NOT EXISTS idx_records_run
  ON records(run_id, experiment);
"""


def connect(db_path: Path) -> sqlite3.Connection:
    db_path.parent.mkdir(parents=True, exist_ok=True)
    con = sqlite3.connect(str(db_path), check_same_thread=False, timeout=30)
    con.row_factory = sqlite3.Row
    con.executescript(SCHEMA)
    return con


def _cell_key(cell: dict[str, Any]) -> str:
    return json.dumps(cell, sort_keys=True)


def _row_to_record(r: sqlite3.Row) -> Record:
    return Record(
        id=int(r["id"]),
        experiment=str(r["experiment"]),
        run_id=str(r["run_id"]),
        rep=int(r["rep"]),
        cell=dict(json.loads(r["cell"])),
        metric=str(r["metric"]),
        value=float(r["value"]),
    )


def insert_records(
    con: sqlite3.Connection,
    experiment: str,
    run_id: str,
    rows: Iterable[tuple[int, dict[str, Any], str, float]],
) -> int:
    """Store ``(rep, cell, metric, value)`` rows; returns how many were written."""
    cur = con.executemany(
        "INSERT INTO records(experiment, run_id, rep, cell, metric, value) VALUES(?, ?, ?, ?, ?, ?)",
        ((experiment, run_id, rep, _cell_key(cell), metric, float(value)) for rep, cell, metric, value in rows),
    )
    con.commit()
    return cur.rowcount


def list_records(con: sqlite3.Connection, *, run_id: str | None = None, experiment: str | None = None) -> list[Record]:
    clauses, args = [], []
    if run_id is not None:
        clauses.append("run_id=?")
        args.append(run_id)
    if experiment is not None:
        clauses.append("experiment=?")
        args.append(experiment)
    where = f" WHERE {' AND '.join(clauses)}" if clauses else ""
    rows = con.execute(f"SELECT * FROM records{where} ORDER BY rep, id", args).fetchall()
    return [_row_to_record(r) for r in rows]


def aggregate(con: sqlite3.Connection, run_id: str) -> list[Aggregate]:
    """Mean, sample standard deviation and count per (cell, metric) of a run."""
    rows = con.execute(
        """
        SELECT cell, metric, AVG(value) AS mean, COUNT(*) AS n,
               SUM(value * value) AS sq
        FROM records WHERE run_id=?
        GROUP BY cell, metric
        ORDER BY MIN(id)
        """,
        (run_id,),
    ).fetchall()
    out = []
    for r in rows:
        n, mean = int(r["n"]), float(r["mean"])
        var = (float(r["sq"]) - n * mean * mean) / (n - 1) if n > 1 else 0.0
        out.append(Aggregate(dict(json.loads(r["cell"])), str(r["metric"]), mean, math.sqrt(max(var, 0.0)), n))
    return out
