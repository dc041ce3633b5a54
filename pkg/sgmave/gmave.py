"""Group-wise minimum average variance estimation (gMAVE)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np
from scipy import linalg

from .config import FitOptions
from .models import (
    Dataset,
    GroupedBasis,
    GroupStructure,
    LocalFit,
    orthonormalize_block,
    sign_normalize,
    validate,
)
from .smoothing import KernelConfig, default_bandwidth, index_weights, initial_bandwidth, initial_weights

logger = logging.getLogger(__name__)

DESCENT_SLACK = 1e-9
START_GAP = 0.05


class RankDeficiencyError(RuntimeError):
    """Raised when the basis update is singular even after the ridge guard."""


@dataclass(frozen=True)
class GMaveResult:
    """Output of :func:`gmave_fit`.

    ``basis`` is the updated estimator used by the shrinkage stage and
    ``local`` carries the refined weights and local coefficients expressed
    in that basis, so ``b^T basis^T (v^j - v^i)`` reproduces the refit.
    """

    basis: GroupedBasis
    local: LocalFit
    alternation_basis: GroupedBasis
    converged: bool
    iterations: int
    bandwidth: float
    objective_trace: Tuple[Tuple[float, float], ...] = ()
    descent_violations: int = 0
    start: str = "moment"


def pair_differences(V: np.ndarray) -> np.ndarray:
    """``D[i, j] = v^j - v^i`` as an n x n x p array."""

    V = np.asarray(V, dtype=float)
    return V[None, :, :] - V[:, None, :]


def gmave_objective(dataset: Dataset, basis: GroupedBasis, local: LocalFit) -> float:
    """Weighted pairwise residual sum of squares of the local linear expansion."""

    U = basis.project(dataset.V)
    fitted = local.a[:, None] + np.einsum("id,ijd->ij", local.b, U[None, :, :] - U[:, None, :])
    residual = dataset.y[None, :] - fitted
    return float(np.sum(local.weights * residual**2))


def initial_basis(dataset: Dataset, groups: GroupStructure) -> GroupedBasis:
    """Leading left singular vectors of each group's covariance-with-response matrix."""

    yc = dataset.y - dataset.y.mean()
    blocks = []
    for l in range(groups.g):
        Vl = dataset.V[:, groups.columns(l)]
        Vl = Vl - Vl.mean(axis=0)
        dl = groups.dims[l]
        U, s, _ = np.linalg.svd(Vl.T * yc[None, :], full_matrices=False)
        if s.size < dl or s[0] <= 0 or s[dl - 1] <= 1e-12 * s[0]:
            logger.debug("Covariance start for group %s is degenerate; using coordinate vectors", l + 1)
            block = np.eye(groups.sizes[l])[:, :dl]
        else:
            block = U[:, :dl]
        blocks.append(sign_normalize(block))
    return GroupedBasis(tuple(blocks))


def solve_local(
    dataset: Dataset,
    groups: GroupStructure,
    basis: GroupedBasis,
    weights: np.ndarray,
    *,
    previous: Optional[LocalFit] = None,
    ridge: float = 1e-8,
) -> LocalFit:
    """Weighted local linear fit at every anchor for a fixed basis."""

    n = dataset.n
    U = basis.project(dataset.V)
    D = U[None, :, :] - U[:, None, :]
    X = np.concatenate([np.ones((n, n, 1)), D], axis=2)
    W = np.asarray(weights, dtype=float)

    A = np.einsum("ij,ijk,ijl->ikl", W, X, X)
    rhs = np.einsum("ij,ijk,j->ik", W, X, dataset.y)
    dim = A.shape[1]
    eps = ridge * np.trace(A, axis1=1, axis2=2) / dim
    guarded = A + eps[:, None, None] * np.eye(dim)[None, :, :]

    eigenvalues = np.linalg.eigvalsh(A)
    top = eigenvalues[:, -1]
    degenerate = (top <= 0) | (eigenvalues[:, 0] <= ridge * np.maximum(top, 0)) | ~np.isfinite(top)

    coefficients = np.zeros((n, dim))
    ok = ~degenerate | (previous is None)
    ok &= np.trace(guarded, axis1=1, axis2=2) > 0
    if np.any(ok):
        coefficients[ok] = np.linalg.solve(guarded[ok], rhs[ok][:, :, None])[:, :, 0]
    if previous is not None and np.any(degenerate):
        coefficients[degenerate, 0] = previous.a[degenerate]
        coefficients[degenerate, 1:] = previous.b[degenerate]
    if np.any(degenerate):
        logger.warning("%s of %s anchors have degenerate local designs", int(degenerate.sum()), n)

    return LocalFit(a=coefficients[:, 0], b=coefficients[:, 1:], weights=W, degenerate=degenerate)


def _unknown_index(groups: GroupStructure, active: Sequence[int]) -> List[np.ndarray]:
    """Flat positions ``t * p + s`` of vec(B_l) for each active block (column-major)."""

    index = []
    for l in active:
        rows = np.arange(groups.offsets[l], groups.offsets[l + 1])
        cols = np.arange(groups.dim_offsets[l], groups.dim_offsets[l + 1])
        index.append((cols[:, None] * groups.p + rows[None, :]).ravel())
    return index


def _ridge_solve(M: np.ndarray, r: np.ndarray, ridge: float) -> np.ndarray:
    eps = ridge * np.trace(M) / M.shape[0]
    factor = linalg.cho_factor(M + eps * np.eye(M.shape[0]))
    return linalg.cho_solve(factor, r)


def basis_normal_equations(
    dataset: Dataset,
    groups: GroupStructure,
    local: LocalFit,
    *,
    differences: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Normal equations of the basis step on the full ``d * p`` coefficient grid.

    Row (i, j) of the underlying regression is ``sum_l (b_l^i kron (v_l^j - v_l^i))^T vec(B_l)``
    with response ``y^j - a^i``; anchors flagged degenerate contribute no rows.
    """

    D = pair_differences(dataset.V) if differences is None else differences
    W = np.where(local.degenerate[:, None], 0.0, local.weights)
    residual = dataset.y[None, :] - local.a[:, None]

    S = np.matmul(np.transpose(D * W[:, :, None], (0, 2, 1)), D)
    T = np.einsum("ij,ijs->is", W * residual, D)
    d, p = groups.d, groups.p
    M = np.einsum("it,iu,isr->tsur", local.b, local.b, S, optimize=True).reshape(d * p, d * p)
    rhs = (local.b.T @ T).reshape(d * p)
    return M, rhs


def _basis_update(
    dataset: Dataset,
    groups: GroupStructure,
    local: LocalFit,
    previous: GroupedBasis,
    *,
    ridge: float,
    differences: Optional[np.ndarray] = None,
) -> Tuple[List[np.ndarray], List[bool]]:
    """Unnormalised joint least squares update of every block that has signal."""

    usable = ~local.degenerate
    active = [
        l
        for l in range(groups.g)
        if np.any(local.group_coefficients(groups, l)[usable] != 0.0)
    ]
    blocks = [np.array(block) for block in previous.blocks]
    updated = [False] * groups.g
    if not active:
        logger.debug("All local slopes vanish; keeping the previous basis")
        return blocks, updated

    M_full, rhs_full = basis_normal_equations(dataset, groups, local, differences=differences)
    index_blocks = _unknown_index(groups, active)
    index = np.concatenate(index_blocks)
    M = M_full[np.ix_(index, index)]
    r = rhs_full[index]
    try:
        solution = _ridge_solve(M, r, ridge)
    except linalg.LinAlgError as exc:
        offset = 0
        for l, block_index in zip(active, index_blocks):
            size = block_index.size
            sub = M[offset : offset + size, offset : offset + size]
            if np.linalg.eigvalsh(sub)[0] <= 0:
                raise RankDeficiencyError(f"Basis block {l + 1} ({groups.names[l]}) is rank-deficient") from exc
            offset += size
        raise RankDeficiencyError("Basis update is rank-deficient") from exc

    offset = 0
    for l in active:
        pl, dl = groups.sizes[l], groups.dims[l]
        chunk = solution[offset : offset + pl * dl]
        offset += pl * dl
        blocks[l] = chunk.reshape(dl, pl).T
        updated[l] = True
    return blocks, updated


def _orthonormal_blocks(groups: GroupStructure, raw: Sequence[np.ndarray]) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    Qs, Rs = [], []
    for l, block in enumerate(raw):
        Q, R = orthonormalize_block(block)
        diag = np.abs(np.diag(R))
        if diag.size == 0 or diag.min() <= 1e-10 * max(diag.max(), np.finfo(float).tiny):
            raise RankDeficiencyError(f"Basis block {l + 1} ({groups.names[l]}) is rank-deficient")
        Qs.append(Q)
        Rs.append(R)
    return Qs, Rs


def solve_basis(
    dataset: Dataset,
    groups: GroupStructure,
    local: LocalFit,
    previous: GroupedBasis,
    *,
    ridge: float = 1e-8,
) -> GroupedBasis:
    """Joint basis update for fixed local coefficients, then per-block orthonormalisation."""

    raw, _ = _basis_update(dataset, groups, local, previous, ridge=ridge)
    Qs, _ = _orthonormal_blocks(groups, raw)
    return GroupedBasis(tuple(Qs))


def linear_start(dataset: Dataset, groups: GroupStructure, fallback: GroupedBasis) -> GroupedBasis:
    """Least-squares start: each group's slice of the joint OLS direction, completed from ``fallback``.

    Unlike the response-moment start this undoes correlation between
    predictors, which matters when a common factor dominates the second moment.
    """

    Vc = dataset.V - dataset.V.mean(axis=0)
    coef = linalg.lstsq(Vc, dataset.y - dataset.y.mean())[0]
    scale = max(float(np.linalg.norm(coef)), np.finfo(float).tiny)
    blocks = []
    for l in range(groups.g):
        beta = coef[groups.columns(l)]
        reference = np.asarray(fallback.blocks[l])
        norm = float(np.linalg.norm(beta))
        if norm <= 1e-8 * scale:
            blocks.append(reference)
            continue
        Q, _ = np.linalg.qr(np.column_stack([beta / norm, reference]))
        blocks.append(sign_normalize(Q[:, : groups.dims[l]]))
    return GroupedBasis(tuple(blocks))


@dataclass(frozen=True)
class _Alternation:
    start: str
    basis: GroupedBasis
    local: Optional[LocalFit]
    converged: bool
    iterations: int
    best_gap: float
    trace: Tuple[Tuple[float, float], ...]
    violations: int


def _alternate(
    dataset: Dataset,
    groups: GroupStructure,
    start: str,
    basis: GroupedBasis,
    kernel: KernelConfig,
    options: FitOptions,
    differences: np.ndarray,
) -> _Alternation:
    n, p = dataset.n, dataset.p
    weights = initial_weights(dataset.V, initial_bandwidth(n, p, options.initial_inflation))
    local: Optional[LocalFit] = None
    trace: List[Tuple[float, float]] = []
    violations = 0
    converged = False
    best_basis, best_gap = basis, np.inf
    iterations = 0

    for iteration in range(1, options.max_iter + 1):
        iterations = iteration
        if iteration > 1:
            weights = index_weights(basis.project(dataset.V), kernel)
        local = solve_local(dataset, groups, basis, weights, previous=local, ridge=options.ridge)
        before = gmave_objective(dataset, basis, local)
        raw, _ = _basis_update(dataset, groups, local, basis, ridge=options.ridge, differences=differences)
        after = gmave_objective(dataset, GroupedBasis(tuple(raw)), local)
        trace.append((before, after))
        if after > before + DESCENT_SLACK * (1.0 + abs(before)):
            violations += 1
            logger.debug("Basis step increased the objective: %.12g -> %.12g", before, after)

        Qs, _ = _orthonormal_blocks(groups, raw)
        updated = GroupedBasis(tuple(Qs))
        gap = updated.projection_gap(basis)
        logger.debug("gMAVE iteration %s (%s start): objective %.6g, projection gap %.3e", iteration, start, after, gap)
        basis = updated
        if gap < best_gap:
            best_basis, best_gap = basis, gap
        if gap < options.tol:
            converged = True
            break

    if not converged:
        basis = best_basis
    return _Alternation(start, basis, local, converged, iterations, float(best_gap), tuple(trace), violations)


def gmave_fit(dataset: Dataset, groups: GroupStructure, options: Optional[FitOptions] = None) -> GMaveResult:
    """Alternate local and basis steps to convergence, then run the refined pass.

    With ``options.multi_start`` the alternation also runs from
    :func:`linear_start` when it differs from the response-moment start, and
    the run whose refined local fit has the smaller weighted residual wins.
    """

    options = options or FitOptions()
    validate(dataset, groups, max_index_dim=options.max_index_dim)
    n = dataset.n
    h = options.bandwidth or default_bandwidth(n, groups.d)
    kernel = KernelConfig(h)
    differences = pair_differences(dataset.V)

    moment = initial_basis(dataset, groups)
    starts = [("moment", moment)]
    if options.multi_start:
        linear = linear_start(dataset, groups, moment)
        if linear.projection_gap(moment) > START_GAP:
            starts.append(("linear", linear))

    best = None
    for name, start in starts:
        run = _alternate(dataset, groups, name, start, kernel, options, differences)
        refined_weights = index_weights(run.basis.project(dataset.V), kernel)
        refined_local = solve_local(dataset, groups, run.basis, refined_weights, previous=run.local, ridge=options.ridge)
        criterion = gmave_objective(dataset, run.basis, refined_local) / n
        logger.debug("%s start: criterion %.8g after %s iterations", name, criterion, run.iterations)
        if best is None or criterion < best[0]:
            best = (criterion, run, refined_local)
    _, run, refined_local = best

    if run.converged:
        logger.info("gMAVE converged after %s iterations (%s start)", run.iterations, run.start)
    else:
        logger.warning("gMAVE did not converge in %s iterations (best gap %.3e)", options.max_iter, run.best_gap)

    basis = run.basis
    raw, _ = _basis_update(dataset, groups, refined_local, basis, ridge=options.ridge, differences=differences)
    Qs, Rs = _orthonormal_blocks(groups, raw)

    # express the refined slopes in the orthonormalised basis: b^T R^T Q^T == b^T raw^T
    b = np.array(refined_local.b)
    for l, R in enumerate(Rs):
        cols = groups.index_columns(l)
        b[:, cols] = b[:, cols] @ R.T
    local_tilde = LocalFit(
        a=refined_local.a,
        b=b,
        weights=refined_local.weights,
        degenerate=refined_local.degenerate,
    )
    return GMaveResult(
        basis=GroupedBasis(tuple(Qs)),
        local=local_tilde,
        alternation_basis=basis,
        converged=run.converged,
        iterations=run.iterations,
        bandwidth=h,
        objective_trace=run.trace,
        descent_violations=run.violations,
        start=run.start,
    )


__all__ = [
    "GMaveResult",
    "RankDeficiencyError",
    "basis_normal_equations",
    "gmave_fit",
    "gmave_objective",
    "initial_basis",
    "linear_start",
    "pair_differences",
    "solve_basis",
    "solve_local",
]
