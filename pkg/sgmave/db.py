"""Database ledger for simulation runs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional
import json
import uuid

from sqlalchemy import (
    Boolean,
    Column,
    DateTime,
    Float,
    Integer,
    MetaData,
    String,
    Table,
    Text,
    create_engine,
    func,
    select,
)
from sqlalchemy.engine import Engine

from .sim import ReplicationSummary

metadata = MetaData()


sim_runs = Table(
    "sim_runs",
    metadata,
    Column("run_id", String(32), primary_key=True),
    Column("model", String(16), nullable=False),
    Column("corr", String(8), nullable=False),
    Column("n", Integer, nullable=False),
    Column("p0", Integer, nullable=False),
    Column("reps", Integer, nullable=False),
    Column("seed", Integer, nullable=False),
    Column("penalties", String(64), nullable=False),
    Column("failures", Integer, nullable=False),
    Column("version", String(16), nullable=False),
    Column("options", Text),
    Column("created_at", DateTime(timezone=True), server_default=func.now()),
)


sim_replications = Table(
    "sim_replications",
    metadata,
    Column("id", Integer, primary_key=True, autoincrement=True),
    Column("run_id", String(32), nullable=False, index=True),
    Column("rep", Integer, nullable=False),
    Column("method", String(16)),
    Column("group_index", Integer),
    Column("vcc", Float),
    Column("tcc", Float),
    Column("ms", Integer),
    Column("tpr", Float),
    Column("fpr", Float),
    Column("exact", Boolean),
    Column("seconds", Float),
    Column("selected_lambda", Float),
    Column("gmave_converged", Boolean),
    Column("descent_violations", Integer),
    Column("error", Text),
)


@dataclass(frozen=True)
class ReplicationRow:
    run_id: str
    rep: int
    method: Optional[str]
    group_index: Optional[int]
    vcc: Optional[float] = None
    tcc: Optional[float] = None
    ms: Optional[int] = None
    tpr: Optional[float] = None
    fpr: Optional[float] = None
    exact: Optional[bool] = None
    seconds: Optional[float] = None
    selected_lambda: Optional[float] = None
    gmave_converged: Optional[bool] = None
    descent_violations: Optional[int] = None
    error: Optional[str] = None


def get_engine(database_url: str) -> Engine:
    return create_engine(database_url)


def create_tables(engine: Engine) -> None:
    metadata.create_all(engine)


def _replication_rows(run_id: str, summary: ReplicationSummary) -> List[dict]:
    rows = []
    for outcome in summary.outcomes:
        if not outcome.ok:
            # executemany needs the same keys in every row
            failed = {column.name: None for column in sim_replications.columns if column.name != "id"}
            failed.update(run_id=run_id, rep=outcome.rep, error=outcome.error)
            rows.append(failed)
            continue
        for result in outcome.methods:
            for l in range(len(result.vcc)):
                rows.append(
                    {
                        "run_id": run_id,
                        "rep": outcome.rep,
                        "method": result.method,
                        "group_index": l,
                        "vcc": result.vcc[l],
                        "tcc": result.tcc[l],
                        "ms": result.ms[l] if result.ms is not None else None,
                        "tpr": result.tpr[l] if result.tpr is not None else None,
                        "fpr": result.fpr[l] if result.fpr is not None else None,
                        "exact": result.exact,
                        "seconds": result.seconds,
                        "selected_lambda": result.selected_lambda,
                        "gmave_converged": outcome.gmave_converged,
                        "descent_violations": outcome.descent_violations,
                        "error": None,
                    }
                )
    return rows


def store_run(
    engine: Engine,
    summary: ReplicationSummary,
    *,
    version: str,
    options: Optional[dict] = None,
) -> str:
    """Persist a run and all of its per-replication metric rows; returns the run id."""

    run_id = uuid.uuid4().hex
    config = summary.config
    with engine.begin() as conn:
        conn.execute(
            sim_runs.insert(),
            {
                "run_id": run_id,
                "model": config.model,
                "corr": config.corr,
                "n": config.n,
                "p0": config.p0,
                "reps": config.reps,
                "seed": config.seed,
                "penalties": ",".join(config.penalties),
                "failures": summary.failures,
                "version": version,
                "options": json.dumps(options or {}),
            },
        )
        rows = _replication_rows(run_id, summary)
        if rows:
            conn.execute(sim_replications.insert(), rows)
    return run_id


def fetch_replications(engine: Engine, *, run_id: Optional[str] = None) -> List[ReplicationRow]:
    stmt = select(sim_replications).order_by(
        sim_replications.c.run_id, sim_replications.c.rep, sim_replications.c.id
    )
    if run_id is not None:
        stmt = stmt.where(sim_replications.c.run_id == run_id)

    with engine.begin() as conn:
        rows = conn.execute(stmt).fetchall()

    return [
        ReplicationRow(
            run_id=row.run_id,
            rep=row.rep,
            method=row.method,
            group_index=row.group_index,
            vcc=row.vcc,
            tcc=row.tcc,
            ms=row.ms,
            tpr=row.tpr,
            fpr=row.fpr,
            exact=row.exact,
            seconds=row.seconds,
            selected_lambda=row.selected_lambda,
            gmave_converged=row.gmave_converged,
            descent_violations=row.descent_violations,
            error=row.error,
        )
        for row in rows
    ]


def list_runs(engine: Engine) -> List[dict]:
    stmt = select(sim_runs).order_by(sim_runs.c.created_at.desc())
    with engine.begin() as conn:
        rows = conn.execute(stmt).fetchall()
    return [
        {
            "run_id": row.run_id,
            "model": row.model,
            "corr": row.corr,
            "n": row.n,
            "p0": row.p0,
            "reps": row.reps,
            "seed": row.seed,
            "penalties": row.penalties.split(","),
            "failures": row.failures,
            "version": row.version,
            "options": json.loads(row.options) if row.options else {},
        }
        for row in rows
    ]


__all__ = [
    "ReplicationRow",
    "create_tables",
    "fetch_replications",
    "get_engine",
    "list_runs",
    "metadata",
    "sim_replications",
    "sim_runs",
    "store_run",
]
