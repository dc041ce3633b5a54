"""Command line interface for SgMAVE."""
from __future__ import annotations

from pathlib import Path
from typing import NoReturn, Optional, Tuple
import json
import logging

import numpy as np
import pandas as pd
import typer

from . import __version__
from .config import Settings, load_settings
from .datasets import PreparedData, load_table, parse_group_spec, prepare
from .db import create_tables, get_engine, store_run
from .models import FitResult
from .pipeline import fit_sgmave, normalize_method
from .sim import SimConfig, run_replications

app = typer.Typer(help="Shrinkage group-wise MAVE: fit data sets, dump paths and run simulations")

TOOL = "sgmave"

logger = logging.getLogger(__name__)


def _setup_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@app.callback()
def main(
    ctx: typer.Context,
    verbose: bool = typer.Option(False, "-v", "--verbose", help="Enable verbose logging"),
    database_url: Optional[str] = typer.Option(None, help="Record simulation runs in this database"),
    max_iter: Optional[int] = typer.Option(None, help="Override the gMAVE iteration cap"),
    tol: Optional[float] = typer.Option(None, help="Override the gMAVE convergence tolerance"),
) -> None:
    """Load configuration and prepare context."""

    _setup_logging(verbose)
    overrides = {}
    if database_url:
        overrides["database_url"] = database_url
    if max_iter is not None:
        overrides["max_iter"] = max_iter
    if tol is not None:
        overrides["tol"] = tol

    try:
        settings = load_settings(**overrides)
    except RuntimeError as exc:
        _fail(str(exc))
    ctx.obj = {"settings": settings}


def _get_settings(ctx: typer.Context) -> Settings:
    if not ctx.obj or "settings" not in ctx.obj:
        raise typer.BadParameter("Configuration has not been loaded. Ensure the callback ran correctly.")
    return ctx.obj["settings"]


def _fail(message: str) -> NoReturn:
    typer.echo(f"Error: {message}", err=True)
    raise typer.Exit(code=1)


def _parse_lambda(value: str) -> Optional[float]:
    if value.strip().lower() == "auto":
        return None
    try:
        lam = float(value)
    except ValueError:
        raise typer.BadParameter(f"--lambda must be 'auto' or a number, got '{value}'")
    if not np.isfinite(lam) or lam < 0:
        raise typer.BadParameter("--lambda must be a finite non-negative number")
    return lam


def _parse_switch(value: str, option: str) -> bool:
    lowered = value.strip().lower()
    if lowered not in {"on", "off"}:
        raise typer.BadParameter(f"{option} must be 'on' or 'off'")
    return lowered == "on"


def _load_and_fit(
    settings: Settings,
    data: Path,
    response: str,
    groups: str,
    penalty: str,
    lambda_value: str,
    standardize: str,
) -> Tuple[PreparedData, FitResult]:
    lam = _parse_lambda(lambda_value)
    use_standardize = _parse_switch(standardize, "--standardize")
    try:
        method = normalize_method(penalty)
    except ValueError as exc:
        raise typer.BadParameter(str(exc))
    if method == "gmave" and lam is not None:
        logger.warning("--lambda is ignored with --penalty none")
    try:
        prepared = prepare(load_table(data), response, parse_group_spec(groups), standardize=use_standardize)
        result = fit_sgmave(prepared.dataset, prepared.groups, penalty=method, lambda_=lam, options=settings.fit)
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        _fail(str(exc))
    return prepared, result


def _warn_unconverged(result: FitResult) -> None:
    if not result.gmave_converged:
        typer.echo("Warning: gMAVE did not converge; see the artifact's convergence flags.", err=True)
    if not result.shrinkage_converged:
        typer.echo("Warning: coordinate descent hit the sweep limit on part of the path.", err=True)


def fit_record(prepared: PreparedData, result: FitResult, settings: Settings, *, seed: int) -> dict:
    """Self-describing JSON artifact of one fit."""

    columns = prepared.columns
    return {
        "tool": TOOL,
        "version": __version__,
        "options": {
            **settings.fit.to_record(),
            "penalty": "none" if result.penalty in ("none", "gmave") else result.penalty,
            "standardize": prepared.standardized,
            "seed": seed,
            "response": prepared.response,
        },
        "columns": list(columns),
        "permutation": list(prepared.permutation),
        "groups": prepared.group_records(),
        "dropped_columns": list(prepared.dropped_columns),
        "basis_unshrunk": [block.tolist() for block in result.basis_unshrunk.blocks],
        "basis": [block.tolist() for block in result.basis.blocks],
        "alpha": result.alpha.values.tolist(),
        "support": [
            [columns[prepared.groups.offsets[l] + s] for s in support] for l, support in enumerate(result.support)
        ],
        "selected_lambda": result.selected_lambda,
        "path": [record.to_record() for record in result.path],
        "indices": result.indices.tolist(),
        "converged": {"gmave": result.gmave_converged, "shrinkage": result.shrinkage_converged},
        "gmave_iterations": result.gmave_iterations,
    }


def path_frame(prepared: PreparedData, result: FitResult) -> pd.DataFrame:
    rows = []
    for record in result.path:
        row = {"lambda": record.lambda_, "rss": record.rss, "df": record.df, "bic": record.bic}
        row.update({f"alpha_{column}": value for column, value in zip(prepared.columns, record.alpha.values)})
        rows.append(row)
    return pd.DataFrame(rows)


def _write_json(payload: dict, out: Optional[Path]) -> None:
    text = json.dumps(payload, indent=2, allow_nan=True)
    if out is None:
        typer.echo(text)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text + "\n", encoding="utf-8")


@app.command("fit")
def fit_command(
    ctx: typer.Context,
    data: Path = typer.Option(..., "--data", help="CSV file with a header row"),
    response: str = typer.Option(..., "--response", help="Name of the response column"),
    groups: str = typer.Option(..., "--groups", help='JSON list of {"columns": [...], "dim": int}, inline or a file'),
    penalty: str = typer.Option("scad", "--penalty", help="lasso, scad, mcp or none"),
    lambda_value: str = typer.Option("auto", "--lambda", help="'auto' for BIC selection or a fixed value"),
    standardize: str = typer.Option("on", "--standardize", help="on or off"),
    seed: int = typer.Option(0, "--seed", help="Recorded in the artifact; the fit itself is deterministic"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the JSON artifact here instead of stdout"),
) -> None:
    """Fit one data set and write the JSON artifact."""

    settings = _get_settings(ctx)
    prepared, result = _load_and_fit(settings, data, response, groups, penalty, lambda_value, standardize)
    record = fit_record(prepared, result, settings, seed=seed)
    _write_json(record, out)
    _warn_unconverged(result)
    if out is not None:
        support = "; ".join(
            f"{group['name']}: {', '.join(names) or '-'}" for group, names in zip(record["groups"], record["support"])
        )
        typer.echo(f"Wrote {out} (selected lambda: {result.selected_lambda}; support {support})")


@app.command("path")
def path_command(
    ctx: typer.Context,
    data: Path = typer.Option(..., "--data", help="CSV file with a header row"),
    response: str = typer.Option(..., "--response", help="Name of the response column"),
    groups: str = typer.Option(..., "--groups", help="JSON group specification, inline or a file"),
    penalty: str = typer.Option("scad", "--penalty", help="lasso, scad or mcp"),
    lambda_value: str = typer.Option("auto", "--lambda", help="'auto' for the full grid or a fixed value"),
    standardize: str = typer.Option("on", "--standardize", help="on or off"),
    seed: int = typer.Option(0, "--seed", help="Accepted for symmetry with fit"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the CSV here instead of stdout"),
) -> None:
    """Dump the regularisation path as CSV: lambda, rss, df, bic and one alpha column per predictor."""

    settings = _get_settings(ctx)
    if normalize_method(penalty) == "gmave":
        raise typer.BadParameter("The path command needs a penalty (lasso, scad or mcp)")
    prepared, result = _load_and_fit(settings, data, response, groups, penalty, lambda_value, standardize)
    frame = path_frame(prepared, result)
    _warn_unconverged(result)
    if out is None:
        typer.echo(frame.to_csv(index=False), nl=False)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False)
    typer.echo(f"Wrote {len(frame)} path rows to {out}")


@app.command("simulate")
def simulate_command(
    ctx: typer.Context,
    model: str = typer.Option(..., "--model", help="illus, m3.1, m3.2, m3.3, m3.4c1, m3.4c2, m3.5 or m3.6"),
    corr: Optional[str] = typer.Option(None, "--corr", help="ar, cs or iid; defaults to the model's design"),
    n: Optional[int] = typer.Option(None, "--n", help="Sample size per replication"),
    p0: Optional[int] = typer.Option(None, "--p0", help="Predictors per group"),
    reps: int = typer.Option(50, "--reps", help="Number of replications"),
    penalties: str = typer.Option("gmave,scad", "--penalties", help="Comma-separated methods"),
    seed: int = typer.Option(0, "--seed", help="Base seed for the replication streams"),
    out_dir: Path = typer.Option(Path("."), "--out-dir", help="Directory for summary.csv and summary.json"),
    threads: Optional[int] = typer.Option(None, "--threads", help="Worker processes (defaults to SGMAVE_THREADS)"),
    timings: bool = typer.Option(False, "--timings", help="Add mean seconds per replication to the summaries"),
) -> None:
    """Run Monte-Carlo replications and write per-method summary tables."""

    settings = _get_settings(ctx)
    if reps < 1:
        raise typer.BadParameter("--reps must be at least 1")
    if threads is not None and threads < 1:
        raise typer.BadParameter("--threads must be at least 1")
    try:
        config = SimConfig(
            model=model,
            corr=corr,
            n=n,
            p0=p0,
            reps=reps,
            penalties=tuple(part for part in penalties.split(",") if part.strip()),
            seed=seed,
        )
    except ValueError as exc:
        _fail(str(exc))

    summary = run_replications(config, settings.fit, threads=threads or settings.threads)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = summary.to_frame(timings=timings)
    frame.to_csv(out_dir / "summary.csv", index=False)
    record = {"tool": TOOL, "version": __version__, **summary.to_record(timings=timings)}
    record["config"]["options"] = settings.fit.to_record()
    (out_dir / "summary.json").write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")

    if settings.database_url:
        engine = get_engine(settings.database_url)
        create_tables(engine)
        run_id = store_run(engine, summary, version=__version__, options=settings.fit.to_record())
        typer.echo(f"Recorded run {run_id} in the ledger.")

    if summary.unconverged or summary.descent_violations:
        typer.echo(
            f"Warning: gMAVE left {summary.unconverged} replication(s) unconverged and recorded "
            f"{summary.descent_violations} non-descending basis step(s).",
            err=True,
        )

    with pd.option_context("display.width", 200, "display.max_columns", None):
        typer.echo(frame.to_string(index=False))
    typer.echo(f"Wrote summary.csv and summary.json to {out_dir} ({summary.failures} failed replication(s)).")


if __name__ == "__main__":  # pragma: no cover
    app()
