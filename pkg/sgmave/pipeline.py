"""High level orchestration helpers for SgMAVE."""
from __future__ import annotations

from typing import Optional
import logging

import numpy as np

from .config import FitOptions
from .gmave import GMaveResult, gmave_fit
from .models import Dataset, FitResult, GroupStructure, RegularizationPath, ShrinkageVector, support_of
from .shrinkage import PENALTIES, PenaltySpec, ShrinkageDesign, assemble_estimator, build_design, fit_path, lambda_grid
from .tuning import score_path, select_lambda

logger = logging.getLogger(__name__)

UNPENALIZED = ("none", "gmave")


def normalize_method(method: str) -> str:
    method = method.strip().lower()
    if method in UNPENALIZED:
        return "gmave"
    if method not in PENALTIES:
        raise ValueError(f"Unknown method '{method}'; expected one of none, gmave, {', '.join(PENALTIES)}")
    return method


def unshrunk_result(dataset: Dataset, groups: GroupStructure, gmave_output: GMaveResult) -> FitResult:
    """Wrap the plain gMAVE estimate as a fit with unit shrinkage indices."""

    basis = gmave_output.basis
    return FitResult(
        groups=groups,
        basis_unshrunk=basis,
        basis=basis,
        alpha=ShrinkageVector(values=np.ones(groups.p)),
        path=RegularizationPath(()),
        selected_lambda=None,
        support=support_of(basis.blocks),
        indices=basis.project(dataset.V),
        gmave_converged=gmave_output.converged,
        gmave_iterations=gmave_output.iterations,
        penalty="none",
    )


def shrink(
    dataset: Dataset,
    groups: GroupStructure,
    gmave_output: GMaveResult,
    *,
    penalty: str = "scad",
    lambda_: Optional[float] = None,
    options: Optional[FitOptions] = None,
    design: Optional[ShrinkageDesign] = None,
) -> FitResult:
    """Shrinkage stage: path, BIC selection and assembly of the sparse basis."""

    options = options or FitOptions()
    method = normalize_method(penalty)
    if method == "gmave":
        return unshrunk_result(dataset, groups, gmave_output)

    design = design if design is not None else build_design(dataset, groups, gmave_output)
    if lambda_ is None:
        grid = lambda_grid(design, options.n_lambda, options.lambda_min_ratio)
    else:
        grid = np.array([float(lambda_)])
    spec = PenaltySpec(kind=method, a=options.scad_a, gamma=options.mcp_gamma)
    path = fit_path(design, spec, grid, max_sweeps=options.max_sweeps, tol=options.cd_tol)
    path = score_path(path, design, groups, dataset.n)
    selected, record = select_lambda(path)
    basis = assemble_estimator(record.alpha, gmave_output.basis)
    return FitResult(
        groups=groups,
        basis_unshrunk=gmave_output.basis,
        basis=basis,
        alpha=record.alpha,
        path=path,
        selected_lambda=selected,
        support=support_of(basis.blocks),
        indices=basis.project(dataset.V),
        gmave_converged=gmave_output.converged,
        gmave_iterations=gmave_output.iterations,
        penalty=method,
    )


def fit_sgmave(
    dataset: Dataset,
    groups: GroupStructure,
    *,
    penalty: str = "scad",
    lambda_: Optional[float] = None,
    options: Optional[FitOptions] = None,
) -> FitResult:
    """Run gMAVE and the shrinkage stage end to end."""

    options = options or FitOptions()
    gmave_output = gmave_fit(dataset, groups, options)
    result = shrink(dataset, groups, gmave_output, penalty=penalty, lambda_=lambda_, options=options)
    if not result.shrinkage_converged:
        logger.warning("At least one shrinkage solve stopped at the sweep limit")
    return result


__all__ = ["UNPENALIZED", "fit_sgmave", "normalize_method", "shrink", "unshrunk_result"]
