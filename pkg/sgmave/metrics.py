"""Subspace accuracy and selection metrics against a known truth."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple
import logging

import numpy as np
from scipy import linalg

from .models import GroupStructure

logger = logging.getLogger(__name__)

CLAMP_WARN = 1e-8


class MetricInputError(ValueError):
    """Raised when the reference basis is unusable."""


@dataclass(frozen=True)
class SelectionMetrics:
    ms: Tuple[int, ...]
    tpr: Tuple[float, ...]
    fpr: Tuple[float, ...]
    fpr_undefined: Tuple[bool, ...]

    @property
    def exact(self) -> bool:
        """True when every group selected exactly its true support."""

        return all(t == 1.0 for t in self.tpr) and all(f == 0.0 for f in self.fpr)


def _as_matrix(B) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    return B.reshape(-1, 1) if B.ndim == 1 else B


def _squared_cosines(Bhat, Bstar) -> Tuple[np.ndarray, int]:
    Bhat, Bstar = _as_matrix(Bhat), _as_matrix(Bstar)
    if Bhat.shape[0] != Bstar.shape[0]:
        raise MetricInputError(f"Bases live in different spaces: {Bhat.shape} vs {Bstar.shape}")
    if not np.any(Bstar):
        raise MetricInputError("Reference basis is the zero matrix")
    d = max(Bhat.shape[1], Bstar.shape[1])
    if not np.any(Bhat):
        return np.zeros(d), d
    Q_hat, Q_star = linalg.orth(Bhat), linalg.orth(Bstar)
    # eigenvalues of Q_hat^T P_star Q_hat are the squared singular values of Q_hat^T Q_star
    phi2 = linalg.svdvals(Q_hat.T @ Q_star) ** 2
    excursion = max(float(np.max(phi2, initial=0.0)) - 1.0, -float(np.min(phi2, initial=0.0)))
    if excursion > CLAMP_WARN:
        logger.warning("Squared canonical correlations left [0, 1] by %.3e before clamping", excursion)
    phi2 = np.clip(phi2, 0.0, 1.0)
    if phi2.size < d:
        phi2 = np.concatenate([phi2, np.zeros(d - phi2.size)])
    return phi2, d


def vcc(Bhat_l, Bstar_l) -> float:
    """Vector correlation coefficient ``sqrt(prod phi_t^2)``."""

    phi2, _ = _squared_cosines(Bhat_l, Bstar_l)
    return float(np.sqrt(np.prod(phi2)))


def tcc(Bhat_l, Bstar_l) -> float:
    """Trace correlation coefficient ``sqrt(mean phi_t^2)``."""

    phi2, d = _squared_cosines(Bhat_l, Bstar_l)
    return float(np.sqrt(np.sum(phi2) / d))


def selection_metrics(
    Bhat_blocks: Sequence[np.ndarray],
    true_supports: Sequence[Sequence[int]],
    groups: GroupStructure,
) -> SelectionMetrics:
    """Model size, true and false positive rates of the nonzero rows per group."""

    if len(Bhat_blocks) != groups.g or len(true_supports) != groups.g:
        raise MetricInputError("Need one block and one true support per group")
    ms, tpr, fpr, undefined = [], [], [], []
    for block, truth, pl in zip(Bhat_blocks, true_supports, groups.sizes):
        selected = set(np.flatnonzero(np.any(_as_matrix(block) != 0.0, axis=1)).tolist())
        truth = set(int(s) for s in truth)
        if not truth:
            raise MetricInputError("True support must be non-empty")
        negatives = pl - len(truth)
        ms.append(len(selected))
        tpr.append(len(selected & truth) / len(truth))
        if negatives == 0:
            fpr.append(0.0)
            undefined.append(True)
        else:
            fpr.append(len(selected - truth) / negatives)
            undefined.append(False)
    return SelectionMetrics(tuple(ms), tuple(tpr), tuple(fpr), tuple(undefined))


__all__ = ["MetricInputError", "SelectionMetrics", "selection_metrics", "tcc", "vcc"]
