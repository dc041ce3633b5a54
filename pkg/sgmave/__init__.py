"""Shrinkage group-wise minimum average variance estimation."""

__version__ = "0.1.0"

from .config import FitOptions, Settings, load_settings
from .gmave import GMaveResult, RankDeficiencyError, gmave_fit
from .metrics import MetricInputError, selection_metrics, tcc, vcc
from .models import DataValidationError, Dataset, FitResult, GroupedBasis, GroupStructure, validate
from .pipeline import fit_sgmave, shrink
from .shrinkage import PenaltyError
from .sim import SimConfig, run_replications
from .smoothing import DegenerateWeightsError
from .tuning import TuningError

__all__ = [
    "__version__",
    "DataValidationError",
    "Dataset",
    "DegenerateWeightsError",
    "FitOptions",
    "FitResult",
    "GMaveResult",
    "GroupStructure",
    "GroupedBasis",
    "MetricInputError",
    "PenaltyError",
    "RankDeficiencyError",
    "Settings",
    "SimConfig",
    "TuningError",
    "fit_sgmave",
    "gmave_fit",
    "load_settings",
    "run_replications",
    "selection_metrics",
    "shrink",
    "tcc",
    "validate",
    "vcc",
]
