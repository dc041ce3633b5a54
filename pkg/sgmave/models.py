"""Domain models used across the SgMAVE package."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

logger = logging.getLogger(__name__)

SIGN_THRESHOLD = 1e-12
ORTHONORMAL_TOL = 1e-8


class DataValidationError(ValueError):
    """Raised when a dataset or group structure violates its invariants."""


def _frozen(values, *, dtype=float) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class GroupStructure:
    """Partition of the p predictors into g contiguous groups.

    ``sizes`` are the group sizes p_l, ``dims`` the index dimensions d_l and
    ``gamma`` the optional p x p_l group basis matrices used by
    :func:`apply_group_bases`.
    """

    sizes: Tuple[int, ...]
    dims: Tuple[int, ...]
    gamma: Optional[Tuple[np.ndarray, ...]] = None
    names: Optional[Tuple[str, ...]] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.gamma is not None:
            object.__setattr__(self, "gamma", tuple(_frozen(m) for m in self.gamma))
        if self.names is None:
            object.__setattr__(self, "names", tuple(f"group{l + 1}" for l in range(len(self.sizes))))
        else:
            object.__setattr__(self, "names", tuple(self.names))

    @property
    def g(self) -> int:
        return len(self.sizes)

    @property
    def p(self) -> int:
        return int(sum(self.sizes))

    @property
    def d(self) -> int:
        return int(sum(self.dims))

    @property
    def offsets(self) -> Tuple[int, ...]:
        return tuple(int(x) for x in np.concatenate(([0], np.cumsum(self.sizes))))

    @property
    def dim_offsets(self) -> Tuple[int, ...]:
        return tuple(int(x) for x in np.concatenate(([0], np.cumsum(self.dims))))

    def columns(self, l: int) -> slice:
        """Predictor columns of group ``l``."""

        return slice(self.offsets[l], self.offsets[l + 1])

    def index_columns(self, l: int) -> slice:
        """Columns of the n x d index matrix belonging to group ``l``."""

        return slice(self.dim_offsets[l], self.dim_offsets[l + 1])

    def to_record(self) -> Dict[str, object]:
        return {"names": list(self.names), "sizes": list(self.sizes), "dims": list(self.dims)}


@dataclass(frozen=True)
class Dataset:
    """Predictors ``V`` (n x p, already in group coordinates) and response ``y``."""

    V: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        V = np.array(self.V, dtype=float, copy=True)
        if V.ndim == 1:
            V = V.reshape(-1, 1)
        V.setflags(write=False)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "y", _frozen(np.ravel(self.y)))

    @property
    def n(self) -> int:
        return int(self.V.shape[0])

    @property
    def p(self) -> int:
        return int(self.V.shape[1])


@dataclass(frozen=True)
class GroupedBasis:
    """Block-diagonal basis ``B = B_1 (+) ... (+) B_g`` stored block by block."""

    blocks: Tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        blocks = []
        for block in self.blocks:
            array = np.array(block, dtype=float, copy=True)
            if array.ndim == 1:
                array = array.reshape(-1, 1)
            array.setflags(write=False)
            blocks.append(array)
        object.__setattr__(self, "blocks", tuple(blocks))

    @property
    def g(self) -> int:
        return len(self.blocks)

    @property
    def p(self) -> int:
        return int(sum(block.shape[0] for block in self.blocks))

    @property
    def d(self) -> int:
        return int(sum(block.shape[1] for block in self.blocks))

    def to_matrix(self) -> np.ndarray:
        """The full p x d block-diagonal matrix."""

        full = np.zeros((self.p, self.d))
        row = col = 0
        for block in self.blocks:
            pl, dl = block.shape
            full[row : row + pl, col : col + dl] = block
            row += pl
            col += dl
        return full

    def project(self, V: np.ndarray) -> np.ndarray:
        """Index values ``B^T v`` for every row of ``V`` (n x d)."""

        return np.asarray(V, dtype=float) @ self.to_matrix()

    def projection_gap(self, other: "GroupedBasis") -> float:
        """Frobenius distance between the block projection matrices of two bases."""

        total = 0.0
        for mine, theirs in zip(self.blocks, other.blocks):
            total += float(np.sum((projection_matrix(mine) - projection_matrix(theirs)) ** 2))
        return float(np.sqrt(total))

    def to_record(self) -> List[List[List[float]]]:
        return [block.tolist() for block in self.blocks]


@dataclass(frozen=True)
class LocalFit:
    """Per-anchor local linear coefficients plus the kernel weights they used.

    ``b`` is stored as an n x d array whose group ``l`` columns are selected
    with :meth:`GroupStructure.index_columns`. ``degenerate`` flags anchors
    whose local design was rank-deficient.
    """

    a: np.ndarray
    b: np.ndarray
    weights: np.ndarray
    degenerate: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        object.__setattr__(self, "a", _frozen(self.a))
        b = np.array(self.b, dtype=float, copy=True)
        if b.ndim == 1:
            b = b.reshape(-1, 1)
        b.setflags(write=False)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "weights", _frozen(self.weights))
        if self.degenerate is None:
            object.__setattr__(self, "degenerate", _frozen(np.zeros(self.a.shape[0]), dtype=bool))
        else:
            object.__setattr__(self, "degenerate", _frozen(self.degenerate, dtype=bool))

    @property
    def n(self) -> int:
        return int(self.a.shape[0])

    def group_coefficients(self, groups: GroupStructure, l: int) -> np.ndarray:
        return self.b[:, groups.index_columns(l)]


@dataclass(frozen=True)
class ShrinkageVector:
    """Shrinkage indices alpha with the solver diagnostics that produced them."""

    values: np.ndarray
    converged: bool = True
    sweeps: int = 0
    kkt_residual: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _frozen(np.ravel(self.values)))

    def active(self) -> np.ndarray:
        return np.flatnonzero(self.values != 0.0)

    def group_values(self, groups: GroupStructure, l: int) -> np.ndarray:
        return self.values[groups.columns(l)]


@dataclass(frozen=True)
class PathRecord:
    lambda_: float
    alpha: ShrinkageVector
    rss: Optional[float] = None
    df: Optional[float] = None
    bic: Optional[float] = None
    degenerate: bool = False

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.alpha.values))

    def to_record(self) -> Dict[str, object]:
        return {
            "lambda": float(self.lambda_),
            "rss": self.rss,
            "df": self.df,
            "bic": self.bic,
            "n_active": self.n_active,
        }


@dataclass(frozen=True)
class RegularizationPath:
    """Path records ordered by strictly decreasing lambda."""

    records: Tuple[PathRecord, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        lambdas = self.lambdas
        if lambdas.size > 1 and np.any(np.diff(lambdas) >= 0):
            raise DataValidationError("Regularization path lambdas must be strictly decreasing")

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([record.lambda_ for record in self.records], dtype=float)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass(frozen=True)
class FitResult:
    """Everything produced by one shrinkage group-wise MAVE fit."""

    groups: GroupStructure
    basis_unshrunk: GroupedBasis
    basis: GroupedBasis
    alpha: ShrinkageVector
    path: RegularizationPath
    selected_lambda: Optional[float]
    support: Tuple[Tuple[int, ...], ...]
    indices: np.ndarray
    gmave_converged: bool = True
    gmave_iterations: int = 0
    penalty: str = "none"

    @property
    def shrinkage_converged(self) -> bool:
        return all(record.alpha.converged for record in self.path) if len(self.path) else True


def support_of(blocks: Sequence[np.ndarray]) -> Tuple[Tuple[int, ...], ...]:
    """Nonzero-row index sets of each block."""

    return tuple(tuple(int(s) for s in np.flatnonzero(np.any(np.asarray(b) != 0.0, axis=1))) for b in blocks)


def projection_matrix(block: np.ndarray) -> np.ndarray:
    block = np.asarray(block, dtype=float)
    if not np.any(block):
        return np.zeros((block.shape[0], block.shape[0]))
    q, _ = np.linalg.qr(block)
    return q @ q.T


def sign_normalize(Q: np.ndarray, R: Optional[np.ndarray] = None):
    """Flip columns so the first entry above ``SIGN_THRESHOLD`` is positive.

    When ``R`` is given the matching rows are flipped too, so ``Q @ R`` is
    unchanged.
    """

    Q = np.array(Q, dtype=float, copy=True)
    R = None if R is None else np.array(R, dtype=float, copy=True)
    for t in range(Q.shape[1]):
        nonzero = np.flatnonzero(np.abs(Q[:, t]) > SIGN_THRESHOLD)
        if nonzero.size and Q[nonzero[0], t] < 0:
            Q[:, t] = -Q[:, t]
            if R is not None:
                R[t, :] = -R[t, :]
    return Q if R is None else (Q, R)


def orthonormalize_block(block: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Span-preserving QR factorisation ``block = Q R`` with the sign convention."""

    Q, R = np.linalg.qr(np.asarray(block, dtype=float))
    return sign_normalize(Q, R)


def validate(dataset: Dataset, groups: GroupStructure, *, max_index_dim: int = 3) -> None:
    """Check every dataset/group invariant; raise on the first violation.

    A total index dimension above ``max_index_dim`` only logs a warning.
    """

    n, p = dataset.V.shape
    if n < 2:
        raise DataValidationError(f"Need at least 2 observations, got {n}")
    if p < 1:
        raise DataValidationError("Need at least one predictor")
    if dataset.y.shape[0] != n:
        raise DataValidationError(f"Response has {dataset.y.shape[0]} entries but predictors have {n} rows")
    if not np.all(np.isfinite(dataset.V)):
        raise DataValidationError("Predictors contain non-finite values")
    if not np.all(np.isfinite(dataset.y)):
        raise DataValidationError("Response contains non-finite values")
    if len(groups.sizes) == 0 or len(groups.sizes) != len(groups.dims):
        raise DataValidationError("Group sizes and dims must be non-empty and of equal length")
    for l, (pl, dl) in enumerate(zip(groups.sizes, groups.dims)):
        if pl < 1:
            raise DataValidationError(f"Group {l + 1} has non-positive size {pl}")
        if not 1 <= dl <= pl:
            raise DataValidationError(f"Group {l + 1} needs 1 <= d_l <= p_l, got d_l={dl}, p_l={pl}")
    if groups.p != p:
        raise DataValidationError(f"Group sizes sum to {groups.p} but the data have {p} columns")
    if groups.gamma is not None:
        _check_gamma(groups)
    if groups.d > max_index_dim:
        logger.warning(
            "Total index dimension d=%s exceeds the recommended maximum %s; fitting anyway",
            groups.d,
            max_index_dim,
        )


def _check_gamma(groups: GroupStructure) -> None:
    gamma = groups.gamma or ()
    if len(gamma) != groups.g:
        raise DataValidationError(f"Expected {groups.g} group basis matrices, got {len(gamma)}")
    ambient = gamma[0].shape[0]
    for l, (matrix, pl) in enumerate(zip(gamma, groups.sizes)):
        if matrix.shape != (ambient, pl):
            raise DataValidationError(f"Gamma_{l + 1} must be {ambient} x {pl}, got {matrix.shape}")
        if not np.allclose(matrix.T @ matrix, np.eye(pl), atol=ORTHONORMAL_TOL):
            raise DataValidationError(f"Gamma_{l + 1} does not have orthonormal columns")
    for l in range(groups.g):
        for m in range(l + 1, groups.g):
            if not np.allclose(gamma[l].T @ gamma[m], 0.0, atol=ORTHONORMAL_TOL):
                raise DataValidationError(f"Gamma_{l + 1} and Gamma_{m + 1} are not orthogonal")


def apply_group_bases(X: np.ndarray, groups: GroupStructure) -> np.ndarray:
    """Map raw predictors to group coordinates ``V_l = Gamma_l^T x`` row by row."""

    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if groups.gamma is None:
        return X.copy()
    _check_gamma(groups)
    if X.shape[1] != groups.gamma[0].shape[0]:
        raise DataValidationError(
            f"Predictors have {X.shape[1]} columns but Gamma matrices have {groups.gamma[0].shape[0]} rows"
        )
    return np.hstack([X @ matrix for matrix in groups.gamma])


__all__ = [
    "DataValidationError",
    "Dataset",
    "GroupStructure",
    "GroupedBasis",
    "LocalFit",
    "ShrinkageVector",
    "PathRecord",
    "RegularizationPath",
    "FitResult",
    "apply_group_bases",
    "orthonormalize_block",
    "projection_matrix",
    "sign_normalize",
    "support_of",
    "validate",
]
