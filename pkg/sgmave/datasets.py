"""CSV ingestion, group specifications and predictor standardisation."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple
import json
import logging

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, TypeAdapter, ValidationError

from .models import Dataset, GroupStructure

logger = logging.getLogger(__name__)


class DatasetError(RuntimeError):
    """Raised when an input table or group specification cannot be used."""


class GroupSpecEntry(BaseModel):
    columns: List[str] = Field(..., min_length=1)
    dim: int = Field(..., ge=1)
    name: Optional[str] = None


_GROUP_SPEC = TypeAdapter(List[GroupSpecEntry])


def parse_group_spec(spec: str) -> List[GroupSpecEntry]:
    """Parse a JSON group specification, given inline or as a path to a file."""

    text = spec
    candidate = Path(spec)
    if not spec.lstrip().startswith("[") and candidate.is_file():
        text = candidate.read_text(encoding="utf-8")
    try:
        entries = _GROUP_SPEC.validate_python(json.loads(text))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"Group specification is not valid JSON: {exc}") from exc
    except ValidationError as exc:
        errors = "; ".join(f"{'.'.join(map(str, err.get('loc', ())))}: {err.get('msg', '')}" for err in exc.errors())
        raise DatasetError(f"Invalid group specification: {errors}") from exc
    if not entries:
        raise DatasetError("Group specification must list at least one group")
    return entries


def load_table(path: str | Path) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except FileNotFoundError as exc:
        raise DatasetError(f"Data file not found: {path}") from exc
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DatasetError(f"Could not parse {path}: {exc}") from exc
    logger.info("Loaded %s rows and %s columns from %s", len(frame), len(frame.columns), path)
    return frame


@dataclass(frozen=True)
class PreparedData:
    """A data set in contiguous group order plus the bookkeeping to map back.

    ``permutation[k]`` is the position in the user's predictor columns of
    internal column k.
    """

    dataset: Dataset
    groups: GroupStructure
    columns: Tuple[str, ...]
    permutation: Tuple[int, ...]
    dropped_columns: Tuple[str, ...] = ()
    response: str = "y"
    standardized: bool = False

    def group_records(self) -> List[dict]:
        return [
            {
                "name": self.groups.names[l],
                "columns": list(self.columns[self.groups.columns(l)]),
                "dim": self.groups.dims[l],
            }
            for l in range(self.groups.g)
        ]


def _numeric(frame: pd.DataFrame, columns: Sequence[str]) -> np.ndarray:
    bad = [column for column in columns if not pd.api.types.is_numeric_dtype(frame[column])]
    if bad:
        raise DatasetError(f"Non-numeric cells in column(s): {', '.join(bad)}")
    values = frame[list(columns)].to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        missing = [column for column in columns if not np.all(np.isfinite(frame[column].to_numpy(dtype=float)))]
        raise DatasetError(f"Missing or non-finite values in column(s): {', '.join(missing)}")
    return values


def prepare(
    frame: pd.DataFrame,
    response: str,
    spec: Sequence[GroupSpecEntry],
    *,
    standardize: bool = True,
) -> PreparedData:
    """Reorder predictors into contiguous groups and optionally standardise them.

    The groups must partition the non-response columns. With ``standardize``
    each predictor is centred and scaled to unit sample standard deviation;
    constant predictors are dropped first.
    """

    if response not in frame.columns:
        raise DatasetError(f"Response column '{response}' not found")
    predictors = [column for column in frame.columns if column != response]
    listed = [column for entry in spec for column in entry.columns]
    missing = sorted(set(listed) - set(predictors))
    if missing:
        raise DatasetError(f"Group specification names unknown column(s): {', '.join(missing)}")
    duplicated = sorted({column for column in listed if listed.count(column) > 1})
    if duplicated:
        raise DatasetError(f"Column(s) assigned to more than one group: {', '.join(duplicated)}")
    uncovered = [column for column in predictors if column not in set(listed)]
    if uncovered:
        raise DatasetError(f"Group specification is not a partition; unassigned column(s): {', '.join(uncovered)}")

    y = _numeric(frame, [response])[:, 0]
    dropped: List[str] = []
    entries = [list(entry.columns) for entry in spec]
    if standardize:
        for columns in entries:
            for column in list(columns):
                if np.ptp(_numeric(frame, [column])) == 0:
                    columns.remove(column)
                    dropped.append(column)
        if dropped:
            logger.warning("Dropping zero-variance column(s): %s", ", ".join(dropped))
    for entry, columns in zip(spec, entries):
        if len(columns) < entry.dim:
            raise DatasetError(
                f"Group {entry.name or entry.columns} keeps {len(columns)} column(s) but asks for dim={entry.dim}"
            )

    ordered = [column for columns in entries for column in columns]
    V = _numeric(frame, ordered)
    if standardize:
        V = (V - V.mean(axis=0)) / V.std(axis=0, ddof=1)
    names = tuple(entry.name or f"group{l + 1}" for l, entry in enumerate(spec))
    groups = GroupStructure(
        sizes=tuple(len(columns) for columns in entries),
        dims=tuple(entry.dim for entry in spec),
        names=names,
    )
    return PreparedData(
        dataset=Dataset(V=V, y=y),
        groups=groups,
        columns=tuple(ordered),
        permutation=tuple(predictors.index(column) for column in ordered),
        dropped_columns=tuple(dropped),
        response=response,
        standardized=standardize,
    )


__all__ = ["DatasetError", "GroupSpecEntry", "PreparedData", "load_table", "parse_group_spec", "prepare"]
