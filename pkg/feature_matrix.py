#!/usr/bin/env python3
"""
Feature matrices for before/after event comparison

A and B are patients x events presence matrices for the windows before and
after the index date; X and Y aggregate them into fixed-size patient groups.
All matrices are scipy sparse; most entries are zero.
"""

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple, Union

import numpy as np
from loguru import logger
from scipy import sparse

from cohort_ingest import Cohort, window_masks
from errors import GroupSizeExceedsCohort

DEFAULT_GROUP_SIZE = 100
DUMP_HEADER = ("group", "code", "count")


class RemainderPolicy(str, Enum):
    MERGE = "merge"
    DROP = "drop"


@dataclass(frozen=True)
class EventIndex:
    """Sorted event universe; positions maps code text -> column"""
    codes: Tuple[str, ...]
    positions: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        codes = tuple(self.codes)
        if list(codes) != sorted(set(codes)):
            raise ValueError("event index codes must be unique and sorted")
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "positions", {c: i for i, c in enumerate(codes)})

    @classmethod
    def from_codes(cls, codes: Iterable[str]) -> "EventIndex":
        return cls(tuple(sorted(set(codes))))

    def __len__(self) -> int:
        return len(self.codes)

    def __contains__(self, code) -> bool:
        return str(code) in self.positions


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Groups x events patient counts plus the size of every group"""
    entries: sparse.csr_matrix
    group_sizes: Tuple[int, ...]
    index: Optional[EventIndex] = None
    remainder_policy: RemainderPolicy = RemainderPolicy.MERGE

    @property
    def n_groups(self) -> int:
        return self.entries.shape[0]

    @property
    def n_events(self) -> int:
        return self.entries.shape[1]

    @property
    def n_patients(self) -> int:
        return int(sum(self.group_sizes))

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.entries.sum(axis=0), dtype=np.int64).ravel()

    def column(self, e: int) -> np.ndarray:
        return self.entries[:, e].toarray().ravel()

    def dense(self) -> np.ndarray:
        return self.entries.toarray()


# =============================================================================
# EVENT INDEX AND PATIENT MATRICES
# =============================================================================

def _labels(cohort: Cohort, level3: bool) -> np.ndarray:
    """Column label of every vocabulary code (its rollup when level3)"""
    vocabulary = cohort.event_table().vocabulary
    if level3:
        return np.array([c.rollup3().text for c in vocabulary], dtype=object)
    return np.array([c.text for c in vocabulary], dtype=object)


def _window_hits(cohort: Cohort) -> Tuple[np.ndarray, np.ndarray]:
    table = cohort.event_table()
    delta = table.day - table.index_day[table.patient]
    return window_masks(delta, cohort.window_days)


def build_event_index(cohort: Cohort, level3: bool = False) -> EventIndex:
    """Every distinct code (or level-3 parent) seen in some patient's before or after window"""
    table = cohort.event_table()
    before, after = _window_hits(cohort)
    seen = np.unique(table.code[before | after])
    labels = _labels(cohort, level3)
    index = EventIndex.from_codes(labels[seen].tolist())
    logger.info(f"Event index: E={len(index)} ({'level 1-3' if level3 else 'level 1-5'})")
    return index


def build_patient_matrices(cohort: Cohort, index: EventIndex,
                           level3: bool = False) -> Tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """
    Binary N x E matrices A (before window) and B (after window).

    Several events mapping to one column for one patient count once.
    """
    table = cohort.event_table()
    labels = _labels(cohort, level3)
    column_of = np.array([index.positions.get(label, -1) for label in labels], dtype=np.int64)
    before, after = _window_hits(cohort)
    shape = (cohort.N, len(index))
    return (
        _presence(table.patient[before], column_of[table.code[before]], shape),
        _presence(table.patient[after], column_of[table.code[after]], shape),
    )


def _presence(rows: np.ndarray, cols: np.ndarray, shape: Tuple[int, int]) -> sparse.csr_matrix:
    keep = cols >= 0
    rows, cols = rows[keep], cols[keep]
    if shape[1] == 0 or len(rows) == 0:
        return sparse.csr_matrix(shape, dtype=np.int32)
    cells = np.unique(rows * shape[1] + cols)
    return sparse.csr_matrix(
        (np.ones(len(cells), dtype=np.int32), (cells // shape[1], cells % shape[1])),
        shape=shape,
    )


# =============================================================================
# GROUPING
# =============================================================================

def group(M: sparse.spmatrix, group_size: int = DEFAULT_GROUP_SIZE,
          remainder_policy: Union[RemainderPolicy, str] = RemainderPolicy.MERGE,
          index: Optional[EventIndex] = None) -> FeatureMatrix:
    """
    Sum consecutive blocks of group_size patient rows.

    G = N // group_size. The N mod group_size leftover patients join the
    last group under MERGE and are discarded under DROP.
    """
    policy = RemainderPolicy(remainder_policy)
    if group_size < 1:
        raise ValueError(f"group_size must be >= 1, got {group_size}")
    n_patients = M.shape[0]
    if group_size > n_patients:
        raise GroupSizeExceedsCohort(group_size, n_patients)

    n_groups = n_patients // group_size
    rows = np.arange(n_patients)
    assignment = rows // group_size
    if policy is RemainderPolicy.MERGE:
        assignment = np.minimum(assignment, n_groups - 1)
    else:
        rows = rows[: n_groups * group_size]
        assignment = assignment[: n_groups * group_size]

    summing = sparse.csr_matrix(
        (np.ones(len(rows), dtype=np.int32), (assignment, rows)),
        shape=(n_groups, n_patients),
    )
    entries = sparse.csr_matrix(summing @ sparse.csr_matrix(M), dtype=np.int32)
    entries.sort_indices()
    sizes = np.bincount(assignment, minlength=n_groups)
    return FeatureMatrix(
        entries=entries,
        group_sizes=tuple(int(s) for s in sizes),
        index=index,
        remainder_policy=policy,
    )


# =============================================================================
# DEBUG DUMP
# =============================================================================

def dump_matrix(X: FeatureMatrix, Y: FeatureMatrix, path: Union[str, Path]) -> Tuple[Path, Path]:
    """
    Write the non-zero entries of X and Y as `group,code,count` CSVs.

    X goes to <stem>.before<suffix>, Y to <stem>.after<suffix>; groups are
    numbered from 1 and rows are sorted by (group, code).
    """
    path = Path(path)
    targets = (
        path.with_name(f"{path.stem}.before{path.suffix}"),
        path.with_name(f"{path.stem}.after{path.suffix}"),
    )
    for matrix, target in zip((X, Y), targets):
        _write_entries(matrix, target)
    logger.info(f"Dumped feature matrices to {targets[0]} and {targets[1]}")
    return targets


def _write_entries(matrix: FeatureMatrix, target: Path) -> None:
    codes = matrix.index.codes if matrix.index is not None else None
    entries = matrix.entries.tocsr()
    entries.sort_indices()
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(DUMP_HEADER)
        for g in range(entries.shape[0]):
            start, stop = entries.indptr[g], entries.indptr[g + 1]
            for col, count in zip(entries.indices[start:stop], entries.data[start:stop]):
                if count:
                    writer.writerow((g + 1, codes[col] if codes else col, int(count)))
