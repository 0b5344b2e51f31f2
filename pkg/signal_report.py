#!/usr/bin/env python3
"""
Signal reports: filter, rank and render per-event statistics

Two orderings are supported (ascending p-value, descending R1) with an
optional chapter filter for topic tables such as the neoplasm view.
"""

import csv
import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import FrozenSet, Iterable, List, Optional, TextIO, Union

from loguru import logger

from errors import UsageError
from stats import DEFAULT_ALPHA, EventStats

DEFAULT_TOP_K = 30
REPORT_HEADER = ("rank", "readcode", "term", "p_value", "NB", "NA", "R1", "R2_percent")


class RankBy(str, Enum):
    PVALUE_ASC = "pvalue_asc"
    R1_DESC = "r1_desc"


class ReportFormat(str, Enum):
    CSV = "csv"
    JSON = "json"


@dataclass(frozen=True)
class ChapterFilter:
    """Keep codes whose first character is in chapters, or whose full code is listed"""
    chapters: FrozenSet[str] = frozenset()
    extra_codes: FrozenSet[str] = frozenset()

    def accepts(self, code: str) -> bool:
        return code[:1] in self.chapters or code in self.extra_codes


NEOPLASM_FILTER = ChapterFilter(chapters=frozenset({"B"}), extra_codes=frozenset({"170..00"}))


@dataclass(frozen=True)
class ReportSpec:
    rank_by: RankBy = RankBy.PVALUE_ASC
    alpha: float = DEFAULT_ALPHA
    top_k: Optional[int] = DEFAULT_TOP_K
    chapter_filter: Optional[ChapterFilter] = None
    level3: bool = False

    def __post_init__(self):
        object.__setattr__(self, "rank_by", RankBy(self.rank_by))
        if not 0.0 < self.alpha <= 1.0:
            raise UsageError(f"report alpha must lie in (0, 1], got {self.alpha}")
        if self.top_k is not None and self.top_k < 1:
            raise UsageError(f"top_k must be >= 1, got {self.top_k}")


@dataclass(frozen=True)
class SignalRow:
    rank: int
    code: str
    term: str
    p_value: float
    n_before: int
    n_after: int
    r1: float
    r2: float

    @property
    def r2_percent(self) -> float:
        return self.r2 * 100.0


# =============================================================================
# RANKING
# =============================================================================

# smallest positive double, a subnormal
_SMALLEST_P = math.ulp(0.0)


def _reported_p(p: float) -> float:
    return p if p >= _SMALLEST_P else 0.0


def make_report(stats: Iterable[EventStats], spec: Optional[ReportSpec] = None) -> List[SignalRow]:
    """
    Rows with p < alpha (all rows when alpha is 1) that pass the chapter
    filter, sorted by spec.rank_by with ties broken by code, cut to top_k.
    """
    spec = spec or ReportSpec()
    kept = [
        s for s in stats
        if (spec.alpha >= 1.0 or s.p < spec.alpha)
        and (spec.chapter_filter is None or spec.chapter_filter.accepts(s.code))
    ]
    if spec.rank_by is RankBy.PVALUE_ASC:
        kept.sort(key=lambda s: (_reported_p(s.p), s.code))
    else:
        kept.sort(key=lambda s: (-s.r1, s.code))
    if spec.top_k is not None:
        kept = kept[: spec.top_k]

    rows = [
        SignalRow(
            rank=rank,
            code=s.code,
            term=s.term,
            p_value=_reported_p(s.p),
            n_before=s.n_before,
            n_after=s.n_after,
            r1=s.r1,
            r2=s.r2,
        )
        for rank, s in enumerate(kept, start=1)
    ]
    logger.debug(f"Report: {len(rows)} rows ranked by {spec.rank_by.value}")
    return rows


# =============================================================================
# RENDERING
# =============================================================================

def render_csv(rows: Iterable[SignalRow], out: TextIO) -> None:
    """CSV with R1/R2 at 2 decimals and p in 6-significant-digit scientific notation"""
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(REPORT_HEADER)
    for row in rows:
        writer.writerow((
            row.rank,
            row.code,
            row.term,
            f"{row.p_value:.5e}",
            row.n_before,
            row.n_after,
            f"{row.r1:.2f}",
            f"{row.r2_percent:.2f}",
        ))


def render_json(rows: Iterable[SignalRow], out: TextIO) -> None:
    """Same fields as the CSV, full-precision numbers"""
    payload = [
        {
            "rank": row.rank,
            "readcode": row.code,
            "term": row.term,
            "p_value": row.p_value,
            "NB": row.n_before,
            "NA": row.n_after,
            "R1": row.r1,
            "R2_percent": row.r2_percent,
        }
        for row in rows
    ]
    json.dump(payload, out, indent=2, ensure_ascii=False)
    out.write("\n")


def render(rows: Iterable[SignalRow], out: TextIO,
           fmt: Union[ReportFormat, str] = ReportFormat.CSV) -> None:
    if ReportFormat(fmt) is ReportFormat.JSON:
        render_json(rows, out)
    else:
        render_csv(rows, out)


def read_report_csv(stream: TextIO) -> List[SignalRow]:
    """Parse a rendered CSV report back into rows (values at printed precision)"""
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or tuple(header) != REPORT_HEADER:
        raise ValueError(f"not a signal report: header {header!r}")
    return [
        SignalRow(
            rank=int(rank),
            code=code,
            term=term,
            p_value=float(p_value),
            n_before=int(nb),
            n_after=int(na),
            r1=float(r1),
            r2=float(r2_percent) / 100.0,
        )
        for rank, code, term, p_value, nb, na, r1, r2_percent in reader
    ]
