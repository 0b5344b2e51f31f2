#!/usr/bin/env python3
"""
Cohort ingestion: prescription and event files -> per-patient timelines

Patients enter the cohort through their first prescription of the target
drug (the index date). Every coded event of a cohort patient is kept, in
flat arrays shared by all timelines, so window filtering can run on the
whole cohort at once.
"""

import csv
import re
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, NamedTuple, Optional, TextIO, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

import readcode
from errors import EmptyCohort, InputFileError, MalformedCode, MalformedRow, UndecodableInput
from readcode import ReadCode

PRESCRIPTION_COLUMNS = ("patient_id", "drug_code", "date")
EVENT_COLUMNS = ("patient_id", "readcode", "date")
DEFAULT_WINDOW_DAYS = 60
CHUNK_ROWS = 500_000

Source = Union[str, Path, TextIO]

_ISO_DATE = re.compile(r"\d{4}-\d{2}-\d{2}")
# catches a fourth field; five or more make pandas raise ParserError
_OVERFLOW = "__overflow__"


# =============================================================================
# DATA MODEL
# =============================================================================

@dataclass(frozen=True)
class PrescriptionRecord:
    patient_id: str
    drug_code: str
    date: date


@dataclass(frozen=True)
class EventRecord:
    patient_id: str
    code: ReadCode
    date: date


@dataclass(frozen=True, eq=False)
class PatientTimeline:
    """
    One patient's index date and dated events.

    code_ids index into vocabulary; code_ids and days are sorted by
    (day, code text) and are usually views into the cohort's event table.
    """
    patient_id: str
    index_date: date
    code_ids: np.ndarray = field(repr=False)
    days: np.ndarray = field(repr=False)
    vocabulary: Tuple[ReadCode, ...] = field(repr=False)

    @classmethod
    def from_events(cls, patient_id: str, index_date: date,
                    events: Iterable[Tuple[Union[ReadCode, str], date]]) -> "PatientTimeline":
        parsed = [((c if isinstance(c, ReadCode) else readcode.parse(c)), d) for c, d in events]
        parsed.sort(key=lambda e: (e[1], e[0].text))
        vocabulary = tuple(sorted({c for c, _ in parsed}))
        position = {c: i for i, c in enumerate(vocabulary)}
        return cls(
            patient_id=patient_id,
            index_date=index_date,
            code_ids=np.array([position[c] for c, _ in parsed], dtype=np.int64),
            days=np.array([d.toordinal() for _, d in parsed], dtype=np.int64),
            vocabulary=vocabulary,
        )

    @property
    def index_day(self) -> int:
        return self.index_date.toordinal()

    @property
    def events(self) -> List[Tuple[ReadCode, date]]:
        return [
            (self.vocabulary[c], date.fromordinal(int(d)))
            for c, d in zip(self.code_ids, self.days)
        ]

    def __len__(self) -> int:
        return len(self.days)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PatientTimeline):
            return NotImplemented
        return (
            self.patient_id == other.patient_id
            and self.index_date == other.index_date
            and self.events == other.events
        )


class EventTable(NamedTuple):
    """Flat, patient-major view of every event in a cohort"""
    patient: np.ndarray
    code: np.ndarray
    day: np.ndarray
    index_day: np.ndarray
    vocabulary: Tuple[ReadCode, ...]


@dataclass(frozen=True, eq=False)
class Cohort:
    drug_code: str
    window_days: int
    patients: Tuple[PatientTimeline, ...]
    _table: Optional[EventTable] = field(default=None, repr=False)

    def __post_init__(self):
        if self.window_days < 1:
            raise ValueError(f"window_days must be >= 1, got {self.window_days}")

    @property
    def N(self) -> int:
        return len(self.patients)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Cohort):
            return NotImplemented
        return (
            self.drug_code == other.drug_code
            and self.window_days == other.window_days
            and list(self.patients) == list(other.patients)
        )

    def index_prescriptions(self) -> Iterator[PrescriptionRecord]:
        for p in self.patients:
            yield PrescriptionRecord(p.patient_id, self.drug_code, p.index_date)

    def event_records(self) -> Iterator[EventRecord]:
        for p in self.patients:
            for code, day in p.events:
                yield EventRecord(p.patient_id, code, day)

    def event_table(self) -> EventTable:
        if self._table is None:
            object.__setattr__(self, "_table", _table_from_timelines(self.patients))
        return self._table


def _table_from_timelines(patients: Tuple[PatientTimeline, ...]) -> EventTable:
    """Re-encode independently built timelines onto one shared vocabulary"""
    vocabulary = tuple(sorted({c for p in patients for c in p.vocabulary}))
    position = {c: i for i, c in enumerate(vocabulary)}
    codes, days, owners = [], [], []
    for ordinal, p in enumerate(patients):
        remap = np.array([position[c] for c in p.vocabulary], dtype=np.int64)
        codes.append(remap[p.code_ids] if len(p.code_ids) else np.empty(0, np.int64))
        days.append(np.asarray(p.days, dtype=np.int64))
        owners.append(np.full(len(p.days), ordinal, dtype=np.int64))
    empty = np.empty(0, dtype=np.int64)
    return EventTable(
        patient=np.concatenate(owners) if owners else empty,
        code=np.concatenate(codes) if codes else empty,
        day=np.concatenate(days) if days else empty,
        index_day=np.array([p.index_day for p in patients], dtype=np.int64),
        vocabulary=vocabulary,
    )


# =============================================================================
# WINDOWS
# =============================================================================

def window_masks(delta: np.ndarray, window_days: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Masks over event offsets (event day - index day).

    before: -W <= delta <= -1, after: 1 <= delta <= W. The index day
    itself belongs to neither window.
    """
    before = (delta >= -window_days) & (delta <= -1)
    after = (delta >= 1) & (delta <= window_days)
    return before, after


def window_events(patient: PatientTimeline,
                  window_days: int = DEFAULT_WINDOW_DAYS) -> Tuple[frozenset, frozenset]:
    """Distinct codes seen in the W days before and the W days after the index date"""
    if window_days < 1:
        raise ValueError(f"window_days must be >= 1, got {window_days}")
    delta = np.asarray(patient.days, dtype=np.int64) - patient.index_day
    before, after = window_masks(delta, window_days)
    ids = np.asarray(patient.code_ids)
    return (
        frozenset(patient.vocabulary[i] for i in np.unique(ids[before])),
        frozenset(patient.vocabulary[i] for i in np.unique(ids[after])),
    )


# =============================================================================
# CSV READING
# =============================================================================

class _OpenSource:
    """Context manager yielding (handle, source name) for a path or a stream"""

    def __init__(self, source: Source):
        self.source = source
        self._handle = None
        self._path: Optional[Path] = None

    def __enter__(self) -> Tuple[TextIO, str]:
        if isinstance(self.source, (str, Path)):
            path = Path(self.source)
            if not path.is_file():
                raise InputFileError(path)
            self._path = path
            self._handle = open(path, "r", encoding="utf-8", newline="")
            return self._handle, str(path)
        return self.source, getattr(self.source, "name", "<stream>")

    def __exit__(self, exc_type, exc, tb):
        if self._handle is not None:
            self._handle.close()
        if isinstance(exc, UnicodeDecodeError) and self._path is not None:
            raise UndecodableInput.locate(self._path) from exc
        return False


def _check_header(handle: TextIO, columns: Tuple[str, ...], name: str) -> None:
    first = handle.readline().rstrip("\r\n")
    header = next(csv.reader([first]), [])
    if tuple(h.strip() for h in header) != columns:
        raise MalformedRow(f"expected header {','.join(columns)!r}, got {first!r}", name, 1)


def _iter_chunks(handle: TextIO, columns: Tuple[str, ...], name: str,
                 chunk_rows: int) -> Iterator[Tuple[pd.DataFrame, int]]:
    """Yield (chunk, file line of the chunk's first row) after a validated header"""
    _check_header(handle, columns, name)
    first_line = 2
    try:
        reader = pd.read_csv(
            handle,
            header=None,
            names=list(columns) + [_OVERFLOW],
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            chunksize=chunk_rows,
        )
        for chunk in reader:
            _check_complete(chunk, columns, name, first_line)
            yield chunk.drop(columns=_OVERFLOW), first_line
            first_line += len(chunk)
    except pd.errors.EmptyDataError:
        return
    except pd.errors.ParserError as e:
        found = re.search(r"line (\d+)", str(e))
        line = int(found.group(1)) + 1 if found else None
        raise MalformedRow("unexpected number of fields", name, line) from e


def _check_complete(chunk: pd.DataFrame, columns: Tuple[str, ...], name: str,
                    first_line: int) -> None:
    """Raise MalformedRow for the first row with a missing or extra field"""
    problems = [((chunk[_OVERFLOW].notna() & chunk[_OVERFLOW].ne("")).to_numpy(),
                 f"expected {len(columns)} fields, got more")]
    for column in columns:
        values = chunk[column]
        problems.append(((values.isna() | values.eq("")).to_numpy(), f"missing {column}"))
    first_bad = [(int(np.flatnonzero(mask)[0]), reason) for mask, reason in problems if mask.any()]
    if first_bad:
        row, reason = min(first_bad, key=lambda item: item[0])
        raise MalformedRow(reason, name, first_line + row)


def _parse_day(text: str) -> Optional[int]:
    text = text.strip()
    if not _ISO_DATE.fullmatch(text):
        return None
    try:
        return date.fromisoformat(text).toordinal()
    except ValueError:
        return None


def _parse_days(values: pd.Series, name: str, first_line: int) -> np.ndarray:
    """Day ordinals for a column of YYYY-MM-DD strings (parsed once per distinct value)"""
    positions, uniques = pd.factorize(values)
    lookup = np.empty(len(uniques), dtype=np.int64)
    for j, text in enumerate(uniques):
        day = _parse_day(text)
        if day is None:
            row = int(np.flatnonzero(positions == j)[0])
            raise MalformedRow(f"invalid date {text!r} (expected YYYY-MM-DD)", name, first_line + row)
        lookup[j] = day
    return lookup[positions]


# =============================================================================
# INGESTION
# =============================================================================

def ingest(prescriptions: Source, events: Source, drug_code: str,
           window_days: int = DEFAULT_WINDOW_DAYS, chunk_rows: int = CHUNK_ROWS) -> Cohort:
    """
    Build the cohort of every patient with at least one prescription of drug_code.

    Patients are ordered by their first matching prescription row; each
    index date is the patient's earliest matching prescription date.
    """
    index_days = _read_index_days(prescriptions, drug_code, chunk_rows)
    if not index_days:
        raise EmptyCohort(drug_code)

    table = _read_events(events, index_days, chunk_rows)
    patient_ids = list(index_days)
    offsets = np.searchsorted(table.patient, np.arange(len(patient_ids) + 1))

    patients = tuple(
        PatientTimeline(
            patient_id=pid,
            index_date=date.fromordinal(int(table.index_day[i])),
            code_ids=table.code[offsets[i]:offsets[i + 1]],
            days=table.day[offsets[i]:offsets[i + 1]],
            vocabulary=table.vocabulary,
        )
        for i, pid in enumerate(patient_ids)
    )
    cohort = Cohort(drug_code=drug_code, window_days=window_days, patients=patients, _table=table)
    logger.info(
        f"Ingested cohort for {drug_code}: N={cohort.N}, events={len(table.day)}, "
        f"distinct codes={len(table.vocabulary)}"
    )
    return cohort


def _read_index_days(prescriptions: Source, drug_code: str, chunk_rows: int) -> Dict[str, int]:
    index_days: Dict[str, int] = {}
    first_seen: Dict[str, int] = {}
    rows = 0
    with _OpenSource(prescriptions) as (handle, name):
        for chunk, first_line in _iter_chunks(handle, PRESCRIPTION_COLUMNS, name, chunk_rows):
            days = _parse_days(chunk["date"], name, first_line)
            for pid in chunk["patient_id"].unique():
                first_seen.setdefault(pid, len(first_seen))
            match = (chunk["drug_code"] == drug_code).to_numpy()
            for pid, day in zip(chunk["patient_id"].to_numpy()[match], days[match]):
                known = index_days.get(pid)
                if known is None or day < known:
                    index_days[pid] = int(day)
            rows += len(chunk)
    # cohort order is each patient's first row in the file, whatever its drug
    index_days = dict(sorted(index_days.items(), key=lambda item: first_seen[item[0]]))
    logger.debug(f"Read {rows} prescription rows, {len(index_days)} patients on {drug_code}")
    return index_days


def _read_events(events: Source, index_days: Dict[str, int], chunk_rows: int) -> EventTable:
    ordinal_of = {pid: i for i, pid in enumerate(index_days)}
    code_id: Dict[str, int] = {}
    patients, codes, days = [], [], []
    rows = 0

    with _OpenSource(events) as (handle, name):
        for chunk, first_line in _iter_chunks(handle, EVENT_COLUMNS, name, chunk_rows):
            chunk_days = _parse_days(chunk["date"], name, first_line)
            positions, uniques = pd.factorize(chunk["readcode"])
            local = np.empty(len(uniques), dtype=np.int64)
            for j, raw in enumerate(uniques):
                try:
                    text = readcode.parse(raw).text
                except MalformedCode as e:
                    row = int(np.flatnonzero(positions == j)[0])
                    raise MalformedRow(e.reason + f" in code {raw!r}", name, first_line + row) from e
                local[j] = code_id.setdefault(text, len(code_id))

            owner = chunk["patient_id"].map(ordinal_of).to_numpy(dtype=float, na_value=np.nan)
            keep = ~np.isnan(owner)
            patients.append(owner[keep].astype(np.int64))
            codes.append(local[positions][keep])
            days.append(chunk_days[keep])
            rows += len(chunk)

    # renumber codes so id order is code-text order
    vocabulary_text = sorted(code_id)
    remap = np.empty(len(code_id), dtype=np.int64)
    for rank, text in enumerate(vocabulary_text):
        remap[code_id[text]] = rank

    empty = np.empty(0, dtype=np.int64)
    patient = np.concatenate(patients) if patients else empty
    code = remap[np.concatenate(codes)] if codes else empty
    day = np.concatenate(days) if days else empty
    order = np.lexsort((code, day, patient))

    logger.debug(f"Read {rows} event rows, kept {len(order)} for cohort patients")
    return EventTable(
        patient=patient[order],
        code=code[order],
        day=day[order],
        index_day=np.fromiter(index_days.values(), dtype=np.int64, count=len(index_days)),
        vocabulary=tuple(readcode.parse(t) for t in vocabulary_text),
    )


# =============================================================================
# WRITING
# =============================================================================

def write_cohort(cohort: Cohort, prescriptions_sink: TextIO, events_sink: TextIO) -> None:
    """Serialize a cohort back into the two input file formats"""
    p_writer = csv.writer(prescriptions_sink, lineterminator="\n")
    p_writer.writerow(PRESCRIPTION_COLUMNS)
    e_writer = csv.writer(events_sink, lineterminator="\n")
    e_writer.writerow(EVENT_COLUMNS)
    p_writer.writerows(
        (r.patient_id, r.drug_code, r.date.isoformat()) for r in cohort.index_prescriptions()
    )
    e_writer.writerows(
        (r.patient_id, r.code.text, r.date.isoformat()) for r in cohort.event_records()
    )


def rollup_events(source: Source, sink: TextIO) -> int:
    """Copy an events file replacing every code by its level-3 rollup; returns rows written"""
    writer = csv.writer(sink, lineterminator="\n")
    written = 0
    with _OpenSource(source) as (handle, name):
        _check_header(handle, EVENT_COLUMNS, name)
        writer.writerow(EVENT_COLUMNS)
        reader = csv.reader(handle)
        for row in reader:
            line = reader.line_num + 1
            if len(row) != len(EVENT_COLUMNS):
                raise MalformedRow(f"expected {len(EVENT_COLUMNS)} fields, got {len(row)}", name, line)
            patient_id, raw_code, day = row
            try:
                code = readcode.parse(raw_code)
            except MalformedCode as e:
                raise MalformedRow(e.reason + f" in code {raw_code!r}", name, line) from e
            writer.writerow((patient_id, code.rollup3().text, day))
            written += 1
    logger.info(f"Rolled up {written} event rows from {name}")
    return written
