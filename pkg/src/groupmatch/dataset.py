"""Grouped covariate data: parsing, validation, and subset bookkeeping.

A :class:`Dataset` is an immutable table of subjects (or items), each with a
string id, a group label, and a vector of finite covariate values.  A
:class:`SubsetState` is a boolean keep-vector over one dataset's rows.  All
search algorithms manipulate these two types only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataParseError, InfeasibleSubsetError, ValidationError

__all__ = [
    "ColumnSchema",
    "Dataset",
    "SubsetState",
    "load_dataset",
    "write_dataset",
    "group_proportions",
    "is_feasible",
]


@dataclass(frozen=True)
class ColumnSchema:
    """Maps CSV columns to dataset roles."""

    id_column: str
    group_column: str
    covariate_columns: tuple[str, ...]

    def __post_init__(self):
        if not self.covariate_columns:
            raise ValidationError("schema needs at least one covariate column")
        cols = (self.id_column, self.group_column, *self.covariate_columns)
        if len(set(cols)) != len(cols):
            raise ValidationError(f"schema columns overlap: {cols}")


class Dataset:
    """Immutable grouped covariate table.

    Attributes:
        subject_ids: one opaque string per row.
        groups: group label per row.
        covariates: (N, K) float array, all finite.
        covariate_names: K column names.
        group_labels: distinct labels in canonical (lexicographic) order.
        group_codes: per-row index into ``group_labels``.
        group_index: label -> sorted array of row indices.
    """

    def __init__(
        self,
        subject_ids: Sequence[str],
        groups: Sequence[str],
        covariates,
        covariate_names: Sequence[str],
    ):
        ids = [str(s) for s in subject_ids]
        labels = [str(g) for g in groups]
        values = np.asarray(covariates, dtype=float)
        if values.ndim != 2:
            raise ValidationError("covariates must be a 2-D array")
        n, k = values.shape
        if n < 2:
            raise ValidationError(f"need at least 2 rows, got {n}")
        if k < 1:
            raise ValidationError("need at least one covariate")
        if len(ids) != n or len(labels) != n:
            raise ValidationError("ids, groups, and covariates disagree on row count")
        if len(covariate_names) != k:
            raise ValidationError("covariate_names length does not match covariates")
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise ValidationError(
                f"non-finite covariate value at row {bad[0]}, column "
                f"{covariate_names[bad[1]]!r}"
            )
        seen: set[str] = set()
        for s in ids:
            if s in seen:
                raise ValidationError(f"duplicate subject id {s!r}")
            seen.add(s)
        uniq = sorted(set(labels))
        if len(uniq) < 2:
            raise ValidationError(f"need at least 2 groups, got {len(uniq)}")

        self.subject_ids: tuple[str, ...] = tuple(ids)
        self.groups: tuple[str, ...] = tuple(labels)
        self.covariate_names: tuple[str, ...] = tuple(str(c) for c in covariate_names)
        self.group_labels: tuple[str, ...] = tuple(uniq)
        code_of = {g: i for i, g in enumerate(uniq)}
        self.group_codes = np.array([code_of[g] for g in labels], dtype=np.intp)
        self.group_codes.setflags(write=False)
        self.covariates = values
        self.covariates.setflags(write=False)
        self.group_index: dict[str, np.ndarray] = {}
        for g, c in code_of.items():
            idx = np.flatnonzero(self.group_codes == c)
            idx.setflags(write=False)
            self.group_index[g] = idx
        self._id_to_row = {s: i for i, s in enumerate(ids)}

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_groups(self) -> int:
        return len(self.group_labels)

    def group_sizes(self) -> np.ndarray:
        """Row counts per group, in canonical label order."""
        return np.bincount(self.group_codes, minlength=self.n_groups)

    def covariate_column(self, name: str) -> np.ndarray:
        try:
            j = self.covariate_names.index(name)
        except ValueError:
            raise ValidationError(f"unknown covariate {name!r}") from None
        return self.covariates[:, j]

    def row_of(self, subject_id: str) -> int:
        return self._id_to_row[subject_id]

    def full_subset(self) -> "SubsetState":
        return SubsetState(np.ones(self.n_subjects, dtype=bool))

    def __repr__(self) -> str:
        return (
            f"Dataset(N={self.n_subjects}, K={self.n_covariates}, "
            f"groups={ {g: int(len(self.group_index[g])) for g in self.group_labels} })"
        )


@dataclass(frozen=True)
class SubsetState:
    """Boolean keep-indicators over a dataset's rows.

    Small value object: copy freely, compare by content.
    """

    keep: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.keep, dtype=bool).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "keep", arr)

    @property
    def n_kept(self) -> int:
        return int(self.keep.sum())

    def kept_per_group(self, dataset: Dataset) -> np.ndarray:
        """Kept counts per group in canonical label order."""
        if len(self.keep) != dataset.n_subjects:
            raise ValidationError("keep-vector length does not match dataset")
        return np.bincount(
            dataset.group_codes[self.keep], minlength=dataset.n_groups
        )

    def kept_ids(self, dataset: Dataset) -> list[str]:
        return [dataset.subject_ids[i] for i in np.flatnonzero(self.keep)]

    def removed_ids(self, dataset: Dataset) -> list[str]:
        return [dataset.subject_ids[i] for i in np.flatnonzero(~self.keep)]

    def key(self) -> bytes:
        return self.keep.tobytes()

    def __eq__(self, other) -> bool:
        if not isinstance(other, SubsetState):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    def __repr__(self) -> str:
        return f"SubsetState(kept={self.n_kept}/{len(self.keep)})"


def is_feasible(
    dataset: Dataset,
    keep: np.ndarray,
    *,
    min_group_size: int = 2,
    locked_groups: Iterable[str] = (),
) -> bool:
    """True iff every unlocked group retains at least ``min_group_size``
    members and every locked group retains all of its members."""
    counts = np.bincount(dataset.group_codes[keep], minlength=dataset.n_groups)
    sizes = dataset.group_sizes()
    locked = set(locked_groups)
    for i, g in enumerate(dataset.group_labels):
        if g in locked:
            if counts[i] != sizes[i]:
                return False
        elif counts[i] < min_group_size:
            return False
    return True


def group_proportions(dataset: Dataset, state: SubsetState) -> np.ndarray:
    """Kept-group proportions in canonical label order; sums to 1.

    Raises InfeasibleSubsetError when any group has no kept members.
    """
    counts = state.kept_per_group(dataset)
    if np.any(counts == 0):
        empty = [g for g, c in zip(dataset.group_labels, counts) if c == 0]
        raise InfeasibleSubsetError(f"groups with no kept members: {empty}")
    return counts / counts.sum()


def _parse_float(cell: str, row: int, column: str) -> float:
    text = cell.strip() if cell is not None else ""
    if not text:
        raise DataParseError(f"empty covariate cell at row {row}, column {column!r}")
    try:
        value = float(text)
    except ValueError:
        raise DataParseError(
            f"non-numeric covariate value {cell!r} at row {row}, column {column!r}"
        ) from None
    if not np.isfinite(value):
        raise DataParseError(
            f"non-finite covariate value {cell!r} at row {row}, column {column!r}"
        )
    return value


def load_dataset(
    path: str | Path,
    schema: ColumnSchema,
    *,
    delimiter: str = ",",
) -> Dataset:
    """Read a delimited text file (header row required) into a Dataset.

    Row order is preserved.  Raises DataParseError for malformed cells and
    ValidationError for contract violations (duplicate ids, <2 groups).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None:
            raise DataParseError(f"{path}: empty file, header row required")
        header = set(reader.fieldnames)
        needed = {schema.id_column, schema.group_column, *schema.covariate_columns}
        missing = sorted(needed - header)
        if missing:
            raise DataParseError(f"{path}: missing columns {missing}")
        ids: list[str] = []
        groups: list[str] = []
        rows: list[list[float]] = []
        for lineno, record in enumerate(reader, start=2):
            ids.append((record[schema.id_column] or "").strip())
            groups.append((record[schema.group_column] or "").strip())
            rows.append(
                [
                    _parse_float(record[c], lineno, c)
                    for c in schema.covariate_columns
                ]
            )
    if not rows:
        raise DataParseError(f"{path}: no data rows")
    return Dataset(ids, groups, np.array(rows, dtype=float), schema.covariate_columns)


def write_dataset(
    dataset: Dataset,
    path: str | Path,
    *,
    delimiter: str = ",",
    id_column: str = "id",
    group_column: str = "group",
) -> ColumnSchema:
    """Write a dataset back to CSV; returns the schema that reads it back."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow([id_column, group_column, *dataset.covariate_names])
        for i in range(dataset.n_subjects):
            writer.writerow(
                [
                    dataset.subject_ids[i],
                    dataset.groups[i],
                    *(repr(float(v)) for v in dataset.covariates[i]),
                ]
            )
    return ColumnSchema(id_column, group_column, dataset.covariate_names)


