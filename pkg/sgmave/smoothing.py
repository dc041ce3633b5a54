"""Gaussian kernel weights for local linear smoothing over index values."""
from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

logger = logging.getLogger(__name__)

_LOG_TINY = float(np.log(np.finfo(float).tiny))


class DegenerateWeightsError(RuntimeError):
    """Raised when a kernel row carries no mass (bandwidth far too small)."""


@dataclass(frozen=True)
class KernelConfig:
    """Bandwidth of the Gaussian product kernel."""

    bandwidth: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.bandwidth) or self.bandwidth <= 0:
            raise ValueError(f"Bandwidth must be positive, got {self.bandwidth}")


def default_bandwidth(n: int, d: int) -> float:
    """Normal-reference bandwidth ``{4/(d+2)}^{1/(d+4)} n^{-1/(d+4)}``."""

    if n < 2 or d < 1:
        raise ValueError(f"default_bandwidth needs n >= 2 and d >= 1, got n={n}, d={d}")
    return float((4.0 / (d + 2.0)) ** (1.0 / (d + 4.0)) * float(n) ** (-1.0 / (d + 4.0)))


def _normalize_log_kernel(log_kernel: np.ndarray) -> np.ndarray:
    # log-sum-exp per row so the normalising constant never underflows
    row_norm = logsumexp(log_kernel, axis=1, keepdims=True)
    bad = np.flatnonzero(row_norm[:, 0] < _LOG_TINY)
    if bad.size:
        raise DegenerateWeightsError(
            f"Kernel row {int(bad[0])} has an unnormalized sum that underflows; the bandwidth is too small"
        )
    weights = np.exp(log_kernel - row_norm)
    return weights / weights.sum(axis=1, keepdims=True)


def kernel_weights(Z: np.ndarray, config: KernelConfig) -> np.ndarray:
    """Row-stochastic weights from projected differences ``Z[i, j] = B^T (v^j - v^i)``.

    ``Z`` is an n x n x d array; constants of the Gaussian density are
    dropped since they cancel after normalisation.
    """

    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 2:
        Z = Z[:, :, None]
    if not np.all(np.isfinite(Z)):
        raise ValueError("Projected differences must be finite")
    sq = np.sum(Z**2, axis=2)
    return _normalize_log_kernel(-sq / (2.0 * config.bandwidth**2))


def index_weights(U: np.ndarray, config: KernelConfig) -> np.ndarray:
    """Kernel weights from index values ``U = V B`` (n x d) without forming ``Z``."""

    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U.reshape(-1, 1)
    sq = cdist(U, U, metric="sqeuclidean")
    return _normalize_log_kernel(-sq / (2.0 * config.bandwidth**2))


def initial_weights(V: np.ndarray, h0: float) -> np.ndarray:
    """Full-dimensional kernel weights used before any basis estimate exists."""

    return index_weights(V, KernelConfig(h0))


def initial_bandwidth(n: int, p: int, inflation: float = 2.0) -> float:
    return inflation * default_bandwidth(n, p)


__all__ = [
    "DegenerateWeightsError",
    "KernelConfig",
    "default_bandwidth",
    "index_weights",
    "initial_bandwidth",
    "initial_weights",
    "kernel_weights",
]
