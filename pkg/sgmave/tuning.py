"""BIC-type selection of the shrinkage tuning parameter."""
from __future__ import annotations

from typing import Tuple
import logging
import math
import sys

import numpy as np

from .models import GroupStructure, PathRecord, RegularizationPath, ShrinkageVector
from .shrinkage import ShrinkageDesign

logger = logging.getLogger(__name__)

BIC_SENTINEL = -sys.float_info.max


class TuningError(ValueError):
    """Raised when a path cannot be scored or selected from."""


def rss(design: ShrinkageDesign, alpha: ShrinkageVector | np.ndarray) -> float:
    """Refined-weight pairwise residual sum of squares at ``alpha`` (not divided by n)."""

    values = alpha.values if isinstance(alpha, ShrinkageVector) else np.ravel(alpha)
    if values.shape[0] != design.p:
        raise TuningError(f"alpha has {values.shape[0]} entries, design has {design.p} columns")
    return design.weighted_rss(values)


def effective_df(alpha: ShrinkageVector | np.ndarray, groups: GroupStructure) -> float:
    """``sum_l d_l * |M_lambda^l|``."""

    values = alpha.values if isinstance(alpha, ShrinkageVector) else np.ravel(alpha)
    return float(
        sum(dl * np.count_nonzero(values[groups.columns(l)]) for l, dl in enumerate(groups.dims))
    )


def bic(rss_value: float, df: float, n: int) -> float:
    """``log(RSS) + df * log(n) / n``; a zero RSS yields ``BIC_SENTINEL``."""

    if rss_value < 0 or not math.isfinite(rss_value):
        raise TuningError(f"RSS must be a finite non-negative number, got {rss_value}")
    if rss_value == 0:
        logger.warning("RSS is exactly zero; returning the BIC sentinel")
        return BIC_SENTINEL
    return math.log(rss_value) + df * math.log(n) / n


def score_path(
    path: RegularizationPath,
    design: ShrinkageDesign,
    groups: GroupStructure,
    n: int,
) -> RegularizationPath:
    """Fill rss/df/bic on every record of a fitted path."""

    scored = []
    for record in path:
        value = rss(design, record.alpha)
        df = effective_df(record.alpha, groups)
        criterion = bic(value, df, n)
        scored.append(
            PathRecord(
                lambda_=record.lambda_,
                alpha=record.alpha,
                rss=value,
                df=df,
                bic=criterion,
                degenerate=value == 0,
            )
        )
    return RegularizationPath(tuple(scored))


def select_lambda(path: RegularizationPath) -> Tuple[float, PathRecord]:
    """Minimum-BIC record; ties go to the largest lambda."""

    records = list(path)
    if not records:
        raise TuningError("Cannot select from an empty path")
    if any(record.bic is None for record in records):
        raise TuningError("Path records must be scored before selection")
    ordered = sorted(records, key=lambda record: record.lambda_, reverse=True)
    best = min(record.bic for record in ordered)
    chosen = next(record for record in ordered if record.bic == best)
    logger.info("Selected lambda=%.6g (BIC %.6g, %s active)", chosen.lambda_, chosen.bic, chosen.n_active)
    return chosen.lambda_, chosen


__all__ = ["BIC_SENTINEL", "TuningError", "bic", "effective_df", "rss", "score_path", "select_lambda"]
