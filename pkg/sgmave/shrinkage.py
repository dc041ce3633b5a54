"""Shrinkage indices for the gMAVE basis: penalised least squares by coordinate descent."""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, Optional, Sequence
import logging
import math

import numpy as np

from .gmave import GMaveResult
from .models import Dataset, GroupedBasis, GroupStructure, PathRecord, RegularizationPath, ShrinkageVector

logger = logging.getLogger(__name__)

PENALTIES = ("lasso", "scad", "mcp")


class PenaltyError(ValueError):
    """Raised for invalid penalty parameters or threshold preconditions."""


@dataclass(frozen=True)
class PenaltySpec:
    kind: str
    lambda_: float = 0.0
    a: float = 3.7
    gamma: float = 3.0

    def __post_init__(self) -> None:
        kind = self.kind.lower()
        if kind not in PENALTIES:
            raise PenaltyError(f"Unknown penalty '{self.kind}'; expected one of {', '.join(PENALTIES)}")
        object.__setattr__(self, "kind", kind)
        if not np.isfinite(self.lambda_) or self.lambda_ < 0:
            raise PenaltyError(f"lambda must be a finite non-negative number, got {self.lambda_}")
        if self.a <= 2:
            raise PenaltyError(f"SCAD shape a must exceed 2, got {self.a}")
        if self.gamma <= 1:
            raise PenaltyError(f"MCP shape gamma must exceed 1, got {self.gamma}")

    def with_lambda(self, lambda_: float) -> "PenaltySpec":
        return replace(self, lambda_=float(lambda_))


@dataclass(frozen=True)
class ShrinkageDesign:
    """Pairwise regression behind the shrinkage indices.

    Row (i, j) of ``X`` is ``(B_l b_l^i) * (v_l^j - v_l^i)`` per group, ``r``
    holds ``y^j - a^i`` and ``w`` the refined kernel weights; ``n`` is the
    sample size so that the weights sum to ``n``.
    """

    X: np.ndarray
    r: np.ndarray
    w: np.ndarray
    n: int

    def __post_init__(self) -> None:
        for name in ("X", "r", "w"):
            array = np.array(getattr(self, name), dtype=float, copy=True)
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        if self.X.ndim != 2 or self.X.shape[0] != self.r.shape[0] or self.r.shape != self.w.shape:
            raise PenaltyError("Design, response and weights have inconsistent shapes")

    @property
    def p(self) -> int:
        return int(self.X.shape[1])

    @cached_property
    def gram(self) -> np.ndarray:
        return (self.X * self.w[:, None]).T @ self.X / self.n

    @cached_property
    def cross(self) -> np.ndarray:
        return self.X.T @ (self.w * self.r) / self.n

    @cached_property
    def curvature(self) -> np.ndarray:
        return np.diag(self.gram).copy()

    def residuals(self, alpha: np.ndarray) -> np.ndarray:
        return self.r - self.X @ np.asarray(alpha, dtype=float)

    def weighted_rss(self, alpha: np.ndarray) -> float:
        return float(np.sum(self.w * self.residuals(alpha) ** 2))


def build_design(dataset: Dataset, groups: GroupStructure, gmave_output: GMaveResult) -> ShrinkageDesign:
    """Assemble the n^2 x p shrinkage regression from the refined gMAVE pass."""

    local, basis = gmave_output.local, gmave_output.basis
    n = dataset.n
    gradients = np.hstack(
        [local.group_coefficients(groups, l) @ basis.blocks[l].T for l in range(groups.g)]
    )
    differences = dataset.V[None, :, :] - dataset.V[:, None, :]
    X = (gradients[:, None, :] * differences).reshape(n * n, groups.p)
    r = (dataset.y[None, :] - local.a[:, None]).reshape(n * n)
    return ShrinkageDesign(X=X, r=r, w=np.asarray(local.weights).reshape(n * n), n=n)


def soft_threshold(z, t):
    """``sign(z) * max(|z| - t, 0)``."""

    if np.any(np.asarray(t) < 0):
        raise PenaltyError("Threshold must be non-negative")
    result = np.sign(z) * np.maximum(np.abs(z) - t, 0.0)
    return float(result) if np.ndim(result) == 0 else result


def _scad_value(t: float, lam: float, a: float) -> float:
    if t <= lam:
        return lam * t
    if t <= a * lam:
        return (2 * a * lam * t - t**2 - lam**2) / (2 * (a - 1))
    return lam**2 * (a + 1) / 2


def _mcp_value(t: float, lam: float, gamma: float) -> float:
    return lam * t - t**2 / (2 * gamma) if t <= gamma * lam else gamma * lam**2 / 2


def _global_minimizer(z: float, v: float, candidates: Iterable[float], penalty) -> float:
    # candidates are the stationary points of each piece plus the knots
    magnitude = abs(z)
    best = min(sorted(set(candidates)), key=lambda t: 0.5 * v * t * t - magnitude * t + penalty(t))
    return math.copysign(best, z) if best > 0 else 0.0


def _check_threshold_args(lam: float, v: float) -> None:
    if v <= 0:
        raise PenaltyError(f"Coordinate curvature must be positive, got v={v}")
    if lam < 0:
        raise PenaltyError(f"Threshold must be non-negative, got {lam}")


def scad_threshold(z: float, lam: float, a: float, v: float) -> float:
    """Global minimiser of ``v/2 x^2 - z x + SCAD_{lam,a}(|x|)``.

    For ``v (a - 1) <= 1`` the middle piece is concave and the minimiser
    can jump; ties go to the smaller magnitude.
    """

    if a <= 2:
        raise PenaltyError(f"SCAD shape a must exceed 2, got {a}")
    _check_threshold_args(lam, v)
    magnitude = abs(z)
    candidates = [0.0, lam, a * lam, min(max((magnitude - lam) / v, 0.0), lam), max(magnitude / v, a * lam)]
    curvature = v - 1.0 / (a - 1.0)
    if curvature > 0:
        candidates.append(min(max((magnitude - a * lam / (a - 1.0)) / curvature, lam), a * lam))
    return _global_minimizer(z, v, candidates, lambda t: _scad_value(t, lam, a))


def mcp_threshold(z: float, lam: float, gamma: float, v: float) -> float:
    """Global minimiser of ``v/2 x^2 - z x + MCP_{lam,gamma}(|x|)``."""

    if gamma <= 1:
        raise PenaltyError(f"MCP shape gamma must exceed 1, got {gamma}")
    _check_threshold_args(lam, v)
    magnitude = abs(z)
    candidates = [0.0, gamma * lam, max(magnitude / v, gamma * lam)]
    curvature = v - 1.0 / gamma
    if curvature > 0:
        candidates.append(min(max((magnitude - lam) / curvature, 0.0), gamma * lam))
    return _global_minimizer(z, v, candidates, lambda t: _mcp_value(t, lam, gamma))


def _coordinate_update(z: float, v: float, penalty: PenaltySpec) -> float:
    # SCAD and MCP act on sqrt(v) * alpha with knots lam / sqrt(v), so the
    # slope at zero stays lam and each coordinate problem is convex
    lam = penalty.lambda_
    if penalty.kind == "lasso":
        return soft_threshold(z, lam) / v
    root = math.sqrt(v)
    if penalty.kind == "scad":
        return scad_threshold(z / root, lam / root, penalty.a, 1.0) / root
    return mcp_threshold(z / root, lam / root, penalty.gamma, 1.0) / root


def coordinate_penalty(xs: float, v: float, penalty: PenaltySpec) -> float:
    """Penalty charged to one coordinate with curvature ``v`` at ``|xs|``."""

    lam, xs = penalty.lambda_, abs(xs)
    if penalty.kind == "lasso":
        return lam * xs
    root = math.sqrt(v)
    if penalty.kind == "scad":
        return _scad_value(root * xs, lam / root, penalty.a)
    return _mcp_value(root * xs, lam / root, penalty.gamma)


def penalty_value(alpha: np.ndarray, penalty: PenaltySpec, curvature: np.ndarray) -> float:
    """Sum of the coordinate penalties at ``alpha``."""

    x = np.abs(np.asarray(alpha, dtype=float))
    if penalty.kind == "lasso":
        return float(penalty.lambda_ * x.sum())
    return float(sum(coordinate_penalty(xs, v, penalty) for xs, v in zip(x, curvature) if v > 0))


def _penalty_slope(xs: float, v: float, penalty: PenaltySpec) -> float:
    lam = penalty.lambda_
    if penalty.kind == "lasso":
        return lam
    if penalty.kind == "scad":
        if v * xs <= lam:
            return lam
        return max(penalty.a * lam - v * xs, 0.0) / (penalty.a - 1)
    return max(lam - v * xs / penalty.gamma, 0.0)


def penalized_objective(design: ShrinkageDesign, penalty: PenaltySpec, alpha: np.ndarray) -> float:
    """``RSS / (2n) + penalty``; equals the pairwise objective with ``lambda_n = 2 n lambda``."""

    return design.weighted_rss(alpha) / (2.0 * design.n) + penalty_value(alpha, penalty, design.curvature)


def kkt_residual(design: ShrinkageDesign, penalty: PenaltySpec, alpha: np.ndarray) -> float:
    """Largest violation of the coordinate-wise stationarity conditions."""

    alpha = np.asarray(alpha, dtype=float)
    gradient = design.cross - design.gram @ alpha
    worst = 0.0
    for s, (gs, xs, v) in enumerate(zip(gradient, alpha, design.curvature)):
        if v <= 0:
            continue
        slope = _penalty_slope(abs(xs), v, penalty)
        if xs != 0.0:
            violation = abs(gs - math.copysign(slope, xs))
        else:
            violation = max(abs(gs) - slope, 0.0)
        worst = max(worst, violation)
    return float(worst)


def lambda_max(design: ShrinkageDesign) -> float:
    """Smallest lambda whose LASSO solution is identically zero."""

    return float(np.max(np.abs(design.cross))) if design.p else 0.0


def lambda_grid(design: ShrinkageDesign, n_lambda: int = 50, min_ratio: float = 1e-3) -> np.ndarray:
    """Log-spaced decreasing grid from ``lambda_max`` down to ``min_ratio * lambda_max``."""

    top = lambda_max(design)
    if top <= 0 or n_lambda <= 1:
        return np.array([top])
    return top * np.logspace(0.0, np.log10(min_ratio), n_lambda)


def coordinate_descent(
    design: ShrinkageDesign,
    penalty: PenaltySpec,
    alpha0: Optional[np.ndarray] = None,
    *,
    max_sweeps: int = 1000,
    tol: float = 1e-10,
) -> ShrinkageVector:
    """Cyclic coordinate descent on the weighted Gram form of the shrinkage objective."""

    G, c, v = design.gram, design.cross, design.curvature
    p = design.p
    alpha = np.zeros(p) if alpha0 is None else np.array(alpha0, dtype=float, copy=True)
    alpha[v <= 0] = 0.0
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        q = G @ alpha
        largest = 0.0
        for s in range(p):
            vs = v[s]
            if vs <= 0:
                continue
            z = c[s] - q[s] + vs * alpha[s]
            new = _coordinate_update(z, vs, penalty)
            delta = new - alpha[s]
            if delta != 0.0:
                q += delta * G[:, s]
                alpha[s] = new
                largest = max(largest, abs(delta) * math.sqrt(vs))
        if largest <= tol:
            converged = True
            break

    residual = kkt_residual(design, penalty, alpha)
    if not converged:
        logger.warning(
            "Coordinate descent hit %s sweeps at lambda=%.4g (KKT residual %.2e)",
            max_sweeps,
            penalty.lambda_,
            residual,
        )
    return ShrinkageVector(values=alpha, converged=converged, sweeps=sweeps, kkt_residual=residual)


def fit_path(
    design: ShrinkageDesign,
    penalty: PenaltySpec | str,
    lambda_grid: Sequence[float] | Iterable[float],
    *,
    alpha0: Optional[np.ndarray] = None,
    max_sweeps: int = 1000,
    tol: float = 1e-10,
) -> RegularizationPath:
    """Warm-started solutions from the largest to the smallest lambda."""

    spec = penalty if isinstance(penalty, PenaltySpec) else PenaltySpec(kind=penalty)
    grid = np.asarray(list(lambda_grid), dtype=float)
    if grid.size == 0:
        raise PenaltyError("Lambda grid is empty")
    if grid.size > 1 and np.any(np.diff(grid) >= 0):
        raise PenaltyError("Lambda grid must be strictly decreasing")

    records = []
    warm = alpha0
    for lam in grid:
        solution = coordinate_descent(design, spec.with_lambda(lam), warm, max_sweeps=max_sweeps, tol=tol)
        records.append(PathRecord(lambda_=float(lam), alpha=solution))
        warm = solution.values
    logger.debug("Fitted %s path over %s lambdas", spec.kind, grid.size)
    return RegularizationPath(tuple(records))


def assemble_estimator(alpha: ShrinkageVector | np.ndarray, basis: GroupedBasis) -> GroupedBasis:
    """Row-wise shrinkage of the unshrunk basis: ``B_l -> diag(alpha_l) B_l``."""

    values = alpha.values if isinstance(alpha, ShrinkageVector) else np.ravel(alpha)
    if values.shape[0] != basis.p:
        raise PenaltyError(f"alpha has {values.shape[0]} entries but the basis has {basis.p} rows")
    blocks, offset = [], 0
    for block in basis.blocks:
        pl = block.shape[0]
        blocks.append(values[offset : offset + pl, None] * block)
        offset += pl
    return GroupedBasis(tuple(blocks))


__all__ = [
    "PENALTIES",
    "PenaltyError",
    "PenaltySpec",
    "ShrinkageDesign",
    "assemble_estimator",
    "build_design",
    "coordinate_descent",
    "coordinate_penalty",
    "fit_path",
    "kkt_residual",
    "lambda_grid",
    "lambda_max",
    "mcp_threshold",
    "penalized_objective",
    "penalty_value",
    "scad_threshold",
    "soft_threshold",
]
