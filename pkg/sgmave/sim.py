"""Simulation designs and the Monte-Carlo replication harness."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import logging
import time

import numpy as np
import pandas as pd

from .config import FitOptions
from .gmave import gmave_fit
from .metrics import selection_metrics, tcc, vcc
from .models import Dataset, GroupStructure
from .pipeline import normalize_method, shrink
from .shrinkage import build_design

logger = logging.getLogger(__name__)

CORRELATIONS = ("ar", "cs", "iid")
NOISE_SCALE = 0.5
RHO = 0.5

METHOD_LABELS = {
    "gmave": "gMAVE",
    "lasso": "SgMAVE-LASSO",
    "scad": "SgMAVE-SCAD",
    "mcp": "SgMAVE-MCP",
}


def _unit(*entries: float, size: int) -> np.ndarray:
    vector = np.zeros(size)
    vector[: len(entries)] = entries
    return vector


@dataclass(frozen=True)
class SimModel:
    """One simulation design: group layout, true directions and link function.

    ``directions(p0)`` returns the raw (unnormalised) coefficient matrices
    that enter the response equation, one p0 x d_l matrix per group.
    """

    model_id: str
    dims: Tuple[int, ...]
    default_p0: int
    default_n: int
    default_corr: str
    directions: Callable[[int], List[np.ndarray]]
    link: Callable[[List[np.ndarray]], np.ndarray]

    @property
    def g(self) -> int:
        return len(self.dims)

    def groups(self, p0: Optional[int] = None) -> GroupStructure:
        p0 = p0 or self.default_p0
        return GroupStructure(sizes=(p0,) * self.g, dims=self.dims)

    def truth(self, p0: Optional[int] = None) -> List[np.ndarray]:
        """True bases with unit-norm columns."""

        return [B / np.linalg.norm(B, axis=0, keepdims=True) for B in self.directions(p0 or self.default_p0)]

    def supports(self, p0: Optional[int] = None) -> List[Tuple[int, ...]]:
        return [
            tuple(int(s) for s in np.flatnonzero(np.any(B != 0, axis=1)))
            for B in self.directions(p0 or self.default_p0)
        ]


def _columns(*vectors: np.ndarray) -> np.ndarray:
    return np.column_stack(vectors)


def _rational(numerator: np.ndarray, shift: np.ndarray) -> np.ndarray:
    return numerator / (0.5 + (1.5 + shift) ** 2)


MODELS: Dict[str, SimModel] = {
    "illus": SimModel(
        "illus",
        (1, 1),
        10,
        150,
        "iid",
        lambda p0: [_columns(_unit(1, -1, size=p0)), _columns(_unit(1, 1, size=p0))],
        lambda z: z[0][:, 0] + np.sin(0.2 * np.pi * z[1][:, 0]),
    ),
    "m3.1": SimModel(
        "m3.1",
        (1, 1),
        20,
        200,
        "ar",
        lambda p0: [_columns(_unit(1, 1, 1, size=p0)), _columns(_unit(1, 1, size=p0))],
        lambda z: z[0][:, 0] * (1.0 + z[1][:, 0]),
    ),
    "m3.2": SimModel(
        "m3.2",
        (1, 1),
        20,
        200,
        "ar",
        lambda p0: [_columns(_unit(1, 1, 1, size=p0)), _columns(_unit(1, 1, size=p0))],
        lambda z: _rational(z[0][:, 0], z[1][:, 0]),
    ),
    "m3.3": SimModel(
        "m3.3",
        (1, 1),
        20,
        200,
        "ar",
        lambda p0: [_columns(_unit(1, 1, 1, size=p0)), _columns(_unit(1, 1, size=p0))],
        lambda z: np.exp(0.5 * z[0][:, 0]) + np.sin(0.2 * np.pi * z[1][:, 0]),
    ),
    "m3.4c1": SimModel(
        "m3.4c1",
        (2, 1),
        20,
        200,
        "ar",
        lambda p0: [_columns(_unit(1, 1, size=p0), _unit(1, -1, size=p0)), _columns(_unit(1, 1, size=p0))],
        lambda z: 2.5 * _rational(z[0][:, 0], z[0][:, 1]) + z[1][:, 0],
    ),
    "m3.4c2": SimModel(
        "m3.4c2",
        (2, 1),
        20,
        200,
        "ar",
        lambda p0: [_columns(_unit(1, 1, size=p0), _unit(0, 0, 1, 1, size=p0)), _columns(_unit(1, 1, size=p0))],
        lambda z: 2.5 * _rational(z[0][:, 0], z[0][:, 1]) + z[1][:, 0],
    ),
    "m3.5": SimModel(
        "m3.5",
        (1, 1, 1),
        20,
        200,
        "ar",
        lambda p0: [
            _columns(_unit(1, -1, size=p0)),
            _columns(_unit(1, 1, size=p0)),
            _columns(_unit(1, -1, size=p0)),
        ],
        lambda z: z[0][:, 0] + 2.0 * _rational(z[1][:, 0], z[2][:, 0]),
    ),
    "m3.6": SimModel(
        "m3.6",
        (1, 1, 1),
        20,
        200,
        "ar",
        lambda p0: [
            _columns(_unit(1, -1, size=p0)),
            _columns(_unit(1, 1, size=p0)),
            _columns(_unit(1, -1, size=p0)),
        ],
        lambda z: z[0][:, 0] + 0.2 * (2.0 + z[1][:, 0]) ** 2 + 2.0 * np.sin(0.2 * np.pi * z[2][:, 0]),
    ),
}


def get_model(model_id: str) -> SimModel:
    try:
        return MODELS[model_id.lower()]
    except KeyError as exc:
        raise ValueError(f"Unknown model '{model_id}'; expected one of {', '.join(MODELS)}") from exc


@dataclass(frozen=True)
class SimConfig:
    model: str
    corr: Optional[str] = None
    n: Optional[int] = None
    p0: Optional[int] = None
    reps: int = 50
    penalties: Tuple[str, ...] = ("gmave", "scad")
    seed: int = 0

    def __post_init__(self) -> None:
        design = get_model(self.model)
        object.__setattr__(self, "model", design.model_id)
        object.__setattr__(self, "corr", (self.corr or design.default_corr).lower())
        object.__setattr__(self, "n", int(self.n or design.default_n))
        object.__setattr__(self, "p0", int(self.p0 or design.default_p0))
        methods = tuple(dict.fromkeys(normalize_method(m) for m in self.penalties))
        object.__setattr__(self, "penalties", methods)
        if self.corr not in CORRELATIONS:
            raise ValueError(f"Unknown correlation '{self.corr}'; expected one of {', '.join(CORRELATIONS)}")
        if self.reps < 1:
            raise ValueError(f"reps must be at least 1, got {self.reps}")
        if self.n < 2:
            raise ValueError(f"n must be at least 2, got {self.n}")
        if not methods:
            raise ValueError("At least one method is required")
        required = 1 + max(max(support) for support in design.supports(design.default_p0))
        if self.p0 < required:
            raise ValueError(f"p0={self.p0} is smaller than the true support of model {self.model}")

    @property
    def design(self) -> SimModel:
        return get_model(self.model)

    def to_record(self) -> Dict[str, object]:
        return {
            "model": self.model,
            "corr": self.corr,
            "n": self.n,
            "p0": self.p0,
            "reps": self.reps,
            "penalties": list(self.penalties),
            "seed": self.seed,
        }


def covariance(p: int, corr: str) -> np.ndarray:
    if corr == "ar":
        idx = np.arange(p)
        return RHO ** np.abs(idx[:, None] - idx[None, :])
    if corr == "cs":
        return np.full((p, p), RHO) + (1.0 - RHO) * np.eye(p)
    if corr == "iid":
        return np.eye(p)
    raise ValueError(f"Unknown correlation '{corr}'")


def gen_predictors(n: int, p: int, corr: str, rng: np.random.Generator) -> np.ndarray:
    """Rows drawn independently from N(0, Sigma) through a Cholesky factor."""

    if p < 1:
        raise ValueError("p must be positive")
    factor = np.linalg.cholesky(covariance(p, corr))
    return rng.standard_normal((n, p)) @ factor.T


def gen_response(
    model: str | SimModel,
    V: np.ndarray,
    rng: Optional[np.random.Generator] = None,
    *,
    epsilon: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Model equation plus ``0.5 * epsilon``; ``epsilon`` defaults to fresh N(0, 1) draws."""

    design = model if isinstance(model, SimModel) else get_model(model)
    V = np.asarray(V, dtype=float)
    n, p = V.shape
    if p % design.g:
        raise ValueError(f"Model {design.model_id} needs a multiple of {design.g} columns, got {p}")
    groups = design.groups(p // design.g)
    indices = [V[:, groups.columns(l)] @ B for l, B in enumerate(design.directions(p // design.g))]
    if epsilon is None:
        if rng is None:
            raise ValueError("Either rng or epsilon must be provided")
        epsilon = rng.standard_normal(n)
    return design.link(indices) + NOISE_SCALE * np.asarray(epsilon, dtype=float)


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    """PCG64 stream keyed on (seed, replication)."""

    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(rep)])))


def simulate_dataset(config: SimConfig, rep: int) -> Tuple[Dataset, GroupStructure]:
    rng = replication_rng(config.seed, rep)
    design = config.design
    groups = design.groups(config.p0)
    V = gen_predictors(config.n, groups.p, config.corr, rng)
    y = gen_response(design, V, rng)
    return Dataset(V=V, y=y), groups


@dataclass(frozen=True)
class MethodOutcome:
    method: str
    vcc: Tuple[float, ...]
    tcc: Tuple[float, ...]
    ms: Optional[Tuple[int, ...]] = None
    tpr: Optional[Tuple[float, ...]] = None
    fpr: Optional[Tuple[float, ...]] = None
    exact: Optional[bool] = None
    seconds: float = 0.0
    selected_lambda: Optional[float] = None


@dataclass(frozen=True)
class ReplicationOutcome:
    rep: int
    methods: Tuple[MethodOutcome, ...] = ()
    error: Optional[str] = None
    gmave_converged: Optional[bool] = None
    descent_violations: int = 0

    @property
    def ok(self) -> bool:
        return self.error is None


def run_replication(config: SimConfig, rep: int, options: Optional[FitOptions] = None) -> ReplicationOutcome:
    """Generate one data set, fit every requested method and score it against the truth."""

    options = options or FitOptions()
    design = config.design
    truth = design.truth(config.p0)
    supports = design.supports(config.p0)
    try:
        dataset, groups = simulate_dataset(config, rep)
        start = time.perf_counter()
        gmave_output = gmave_fit(dataset, groups, options)
        base_seconds = time.perf_counter() - start
        shared_design = None
        outcomes = []
        for method in config.penalties:
            start = time.perf_counter()
            if method != "gmave" and shared_design is None:
                shared_design = build_design(dataset, groups, gmave_output)
            fit = shrink(dataset, groups, gmave_output, penalty=method, options=options, design=shared_design)
            seconds = base_seconds + time.perf_counter() - start
            accuracy_v = tuple(vcc(fit.basis.blocks[l], truth[l]) for l in range(groups.g))
            accuracy_t = tuple(tcc(fit.basis.blocks[l], truth[l]) for l in range(groups.g))
            if method == "gmave":
                outcomes.append(MethodOutcome(method, accuracy_v, accuracy_t, seconds=seconds))
                continue
            selection = selection_metrics(fit.basis.blocks, supports, groups)
            outcomes.append(
                MethodOutcome(
                    method,
                    accuracy_v,
                    accuracy_t,
                    ms=selection.ms,
                    tpr=selection.tpr,
                    fpr=selection.fpr,
                    exact=selection.exact,
                    seconds=seconds,
                    selected_lambda=fit.selected_lambda,
                )
            )
        return ReplicationOutcome(
            rep=rep,
            methods=tuple(outcomes),
            gmave_converged=gmave_output.converged,
            descent_violations=gmave_output.descent_violations,
        )
    except Exception as exc:  # recorded and skipped by the harness
        logger.warning("Replication %s failed: %s", rep, exc)
        return ReplicationOutcome(rep=rep, error=f"{type(exc).__name__}: {exc}")


@dataclass(frozen=True)
class GroupSummary:
    vcc: float
    vcc_sd: Optional[float]
    tcc: float
    tcc_sd: Optional[float]
    ms: Optional[float] = None
    tpr: Optional[float] = None
    fpr: Optional[float] = None

    def to_record(self) -> Dict[str, object]:
        return {
            "vcc": self.vcc,
            "vcc_sd": self.vcc_sd,
            "tcc": self.tcc,
            "tcc_sd": self.tcc_sd,
            "ms": self.ms,
            "tpr": self.tpr,
            "fpr": self.fpr,
        }


@dataclass(frozen=True)
class MethodSummary:
    method: str
    groups: Tuple[GroupSummary, ...]
    n_ok: int
    exact_rate: Optional[float] = None
    mean_seconds: float = 0.0

    @property
    def label(self) -> str:
        return METHOD_LABELS[self.method]

    def to_record(self, *, timings: bool = False) -> Dict[str, object]:
        record = {
            "method": self.label,
            "groups": [group.to_record() for group in self.groups],
            "exact_rate": self.exact_rate,
            "n_ok": self.n_ok,
        }
        if timings:
            record["mean_seconds"] = self.mean_seconds
        return record


@dataclass(frozen=True)
class ReplicationSummary:
    """Per-method averages over the successful replications.

    Spreads (``*_sd``) are standard deviations across replications and are
    ``None`` with fewer than two successful replications.
    """

    config: SimConfig
    methods: Tuple[MethodSummary, ...]
    failures: int
    outcomes: Tuple[ReplicationOutcome, ...] = field(default=(), repr=False)

    @property
    def descent_violations(self) -> int:
        """Basis steps that raised the fixed-weight objective, summed over replications."""

        return sum(outcome.descent_violations for outcome in self.outcomes if outcome.ok)

    @property
    def unconverged(self) -> int:
        return sum(1 for outcome in self.outcomes if outcome.ok and outcome.gmave_converged is False)

    def to_frame(self, *, timings: bool = False) -> pd.DataFrame:
        rows = []
        for summary in self.methods:
            row: Dict[str, object] = {"method": summary.label}
            for l, group in enumerate(summary.groups, start=1):
                for key, value in group.to_record().items():
                    row[f"g{l}_{key}"] = value
            row["exact_rate"] = summary.exact_rate
            if timings:
                row["mean_seconds"] = summary.mean_seconds
            row["n_ok"] = summary.n_ok
            row["failures"] = self.failures
            rows.append(row)
        return pd.DataFrame(rows)

    def to_record(self, *, timings: bool = False) -> Dict[str, object]:
        return {
            "config": self.config.to_record(),
            "methods": [summary.to_record(timings=timings) for summary in self.methods],
            "failures": self.failures,
            "unconverged": self.unconverged,
            "descent_violations": self.descent_violations,
            "errors": [outcome.error for outcome in self.outcomes if not outcome.ok],
        }


def _mean_sd(values: Sequence[float]) -> Tuple[float, Optional[float]]:
    array = np.asarray(values, dtype=float)
    if array.size == 0:
        return float("nan"), None
    sd = float(np.std(array, ddof=1)) if array.size > 1 else None
    return float(np.mean(array)), sd


def summarize(config: SimConfig, outcomes: Sequence[ReplicationOutcome]) -> ReplicationSummary:
    """Aggregate per-replication outcomes in replication order."""

    outcomes = sorted(outcomes, key=lambda outcome: outcome.rep)
    succeeded = [outcome for outcome in outcomes if outcome.ok]
    g = config.design.g
    methods = []
    for position, method in enumerate(config.penalties):
        rows = [outcome.methods[position] for outcome in succeeded]
        groups = []
        for l in range(g):
            v_mean, v_sd = _mean_sd([row.vcc[l] for row in rows])
            t_mean, t_sd = _mean_sd([row.tcc[l] for row in rows])
            if method == "gmave":
                groups.append(GroupSummary(v_mean, v_sd, t_mean, t_sd))
                continue
            groups.append(
                GroupSummary(
                    v_mean,
                    v_sd,
                    t_mean,
                    t_sd,
                    ms=float(np.mean([row.ms[l] for row in rows])) if rows else None,
                    tpr=float(np.mean([row.tpr[l] for row in rows])) if rows else None,
                    fpr=float(np.mean([row.fpr[l] for row in rows])) if rows else None,
                )
            )
        exact = None
        if method != "gmave" and rows:
            exact = float(np.mean([bool(row.exact) for row in rows]))
        seconds = float(np.mean([row.seconds for row in rows])) if rows else 0.0
        methods.append(MethodSummary(method, tuple(groups), len(rows), exact, seconds))
    return ReplicationSummary(
        config=config,
        methods=tuple(methods),
        failures=len(outcomes) - len(succeeded),
        outcomes=tuple(outcomes),
    )


def _run_indexed(args: Tuple[SimConfig, int, Optional[FitOptions]]) -> ReplicationOutcome:
    config, rep, options = args
    return run_replication(config, rep, options)


def run_replications(
    config: SimConfig,
    options: Optional[FitOptions] = None,
    *,
    threads: int = 1,
) -> ReplicationSummary:
    """Run ``config.reps`` independent replications, optionally across worker processes."""

    tasks = [(config, rep, options) for rep in range(config.reps)]
    logger.info(
        "Running %s replications of %s (%s, n=%s, p0=%s) with %s worker(s)",
        config.reps,
        config.model,
        config.corr,
        config.n,
        config.p0,
        threads,
    )
    if threads > 1 and config.reps > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_run_indexed, tasks))
    else:
        outcomes = []
        for task in tasks:
            outcomes.append(_run_indexed(task))
            logger.debug("Finished replication %s/%s", task[1] + 1, config.reps)
    summary = summarize(config, outcomes)
    if summary.failures:
        logger.warning("%s of %s replications failed", summary.failures, config.reps)
    return summary


__all__ = [
    "CORRELATIONS",
    "METHOD_LABELS",
    "MODELS",
    "MethodOutcome",
    "MethodSummary",
    "ReplicationOutcome",
    "ReplicationSummary",
    "SimConfig",
    "SimModel",
    "covariance",
    "gen_predictors",
    "gen_response",
    "get_model",
    "replication_rng",
    "run_replication",
    "run_replications",
    "simulate_dataset",
    "summarize",
]
