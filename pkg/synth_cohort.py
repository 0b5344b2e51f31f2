#!/usr/bin/env python3
"""
Synthetic cohort generator with planted adverse-reaction effects

Produces the prescription, event and dictionary files the detection
pipeline reads, plus a truth file listing the planted effects. All
randomness comes from numpy SeedSequence substreams keyed by the spec seed,
so the files are byte-identical for a given spec whatever the worker count.
"""

import csv
import json
from datetime import date
from pathlib import Path
from typing import Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, ValidationError, field_validator, model_validator

import readcode
from cohort_ingest import EVENT_COLUMNS, PRESCRIPTION_COLUMNS
from errors import InputFileError, SpecInvalid

TRUTH_HEADER = ("readcode", "risk_ratio")
FAMILY_DIGITS = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz"
FAMILY_SHAPE = ("..00", "1.00", "1.11", "1100", "2.00")
BLOCK_PATIENTS = 1024

# substream keys under the spec seed
_RATE_STREAM = 0
_PATIENT_STREAM = 1


# =============================================================================
# SPEC
# =============================================================================

class PlantedEffect(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    code: str
    risk_ratio: float = Field(ge=1.0)
    baseline_rate: Optional[float] = Field(default=None, gt=0.0, lt=1.0)

    @field_validator("code")
    @classmethod
    def _valid_code(cls, v: str) -> str:
        return readcode.parse(v).text


class CohortSpec(BaseModel):
    """Parameters of a synthetic cohort; JSON field names match the attributes"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_patients: PositiveInt
    n_codes: PositiveInt
    code_chapters: List[str] = Field(default_factory=lambda: list("ABCFIKMN"), min_length=1)
    baseline_rate: Tuple[float, float] = (0.001, 0.05)
    planted: List[PlantedEffect] = Field(default_factory=list)
    window_days: PositiveInt = 60
    seed: int = Field(default=0, ge=0, le=2**64 - 1)
    drug_code: str = Field(default="SIMV001", min_length=1)
    start_date: date = date(2008, 1, 1)
    span_days: PositiveInt = 1095

    @field_validator("code_chapters")
    @classmethod
    def _single_characters(cls, v: List[str]) -> List[str]:
        for ch in v:
            if len(ch) != 1 or ch not in FAMILY_DIGITS:
                raise ValueError(f"chapter {ch!r} must be one letter or digit")
        if len(set(v)) != len(v):
            raise ValueError("chapters must be distinct")
        return v

    @field_validator("baseline_rate")
    @classmethod
    def _rate_range(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        low, high = v
        if not 0.0 < low <= high < 1.0:
            raise ValueError(f"baseline_rate range must satisfy 0 < low <= high < 1, got {list(v)}")
        return v

    @model_validator(mode="after")
    def _planted_in_universe(self) -> "CohortSpec":
        capacity = len(self.code_chapters) * len(FAMILY_DIGITS) ** 2 * len(FAMILY_SHAPE)
        if self.n_codes > capacity:
            raise ValueError(f"n_codes {self.n_codes} exceeds the {capacity} codes available")
        universe = set(code_universe(self.n_codes, self.code_chapters))
        seen = set()
        for effect in self.planted:
            if effect.code not in universe:
                raise ValueError(f"planted code {effect.code} is not in the generated code universe")
            if effect.code in seen:
                raise ValueError(f"planted code {effect.code} listed twice")
            seen.add(effect.code)
        return self


def load_spec(path: Union[str, Path], seed: Optional[int] = None) -> CohortSpec:
    """Read a JSON spec; seed, when given, replaces the spec's seed"""
    path = Path(path)
    if not path.is_file():
        raise InputFileError(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SpecInvalid(f"{path}: not valid JSON ({e})") from e
    if not isinstance(raw, dict):
        raise SpecInvalid(f"{path}: spec must be a JSON object")
    if seed is not None:
        raw["seed"] = seed
    return validate_spec(raw, str(path))


def validate_spec(raw: Dict, source: str = "<spec>") -> CohortSpec:
    try:
        return CohortSpec.model_validate(raw)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(part) for part in err['loc']) or 'spec'}: {err['msg']}"
            for err in e.errors()
        )
        raise SpecInvalid(f"{source}: {problems}") from e


# =============================================================================
# CODE UNIVERSE
# =============================================================================

def _family_prefix(family: int, chapters: Sequence[str]) -> str:
    chapter = chapters[family % len(chapters)]
    k = family // len(chapters)
    base = len(FAMILY_DIGITS)
    return chapter + FAMILY_DIGITS[k // base] + FAMILY_DIGITS[k % base]


def code_universe(n_codes: int, chapters: Sequence[str]) -> List[str]:
    """
    First n_codes synthetic codes.

    Codes come in families of five sharing a 3-character prefix P:
    P..00 (level 3), P1.00 and its term variant P1.11 (level 4),
    P1100 (level 5) and P2.00 (level 4).
    """
    codes: List[str] = []
    family = 0
    while len(codes) < n_codes:
        prefix = _family_prefix(family, chapters)
        codes.extend(prefix + tail for tail in FAMILY_SHAPE)
        family += 1
    return codes[:n_codes]


def synthetic_terms(codes: Sequence[str]) -> Dict[str, str]:
    terms = {}
    for code in codes:
        parsed = readcode.parse(code)
        if parsed.level == 3:
            terms[code] = f"Synthetic disorder group {code[:3]}"
        elif parsed.suffix != "00":
            terms[code] = f"Synthetic finding {parsed.hierarchy.rstrip('.')}, alternative term"
        else:
            terms[code] = f"Synthetic finding {parsed.hierarchy.rstrip('.')}"
    return terms


# =============================================================================
# GENERATION
# =============================================================================

class PatientDraw(NamedTuple):
    index_day: int
    code_ids: np.ndarray
    days: np.ndarray


class GeneratedFiles(NamedTuple):
    prescriptions: Path
    events: Path
    dictionary: Path
    truth: Path


class SyntheticCohortGenerator:
    """Draws patients of a CohortSpec one substream at a time"""

    def __init__(self, spec: CohortSpec):
        self.spec = spec
        self.codes = code_universe(spec.n_codes, spec.code_chapters)
        self.terms = synthetic_terms(self.codes)
        self.text_rank = np.argsort(np.argsort(np.array(self.codes, dtype=object), kind="stable"))
        self.before_rates, self.after_rates = self._rates()

    def _stream(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.spec.seed, spawn_key=key))

    def _rates(self) -> Tuple[np.ndarray, np.ndarray]:
        low, high = self.spec.baseline_rate
        before = self._stream(_RATE_STREAM).uniform(low, high, size=len(self.codes))
        risk = np.ones(len(self.codes))
        position = {c: i for i, c in enumerate(self.codes)}
        for effect in self.spec.planted:
            i = position[effect.code]
            risk[i] = effect.risk_ratio
            if effect.baseline_rate is not None:
                before[i] = effect.baseline_rate
        return before, np.minimum(1.0, before * risk)

    def draw_patient(self, ordinal: int) -> PatientDraw:
        """Index date and window events of one patient, from its own substream"""
        spec = self.spec
        rng = self._stream(_PATIENT_STREAM, ordinal)
        index_day = spec.start_date.toordinal() + int(rng.integers(0, spec.span_days))
        before_ids = np.flatnonzero(rng.random(len(self.codes)) < self.before_rates)
        after_ids = np.flatnonzero(rng.random(len(self.codes)) < self.after_rates)
        before_days = index_day - rng.integers(1, spec.window_days + 1, size=len(before_ids))
        after_days = index_day + rng.integers(1, spec.window_days + 1, size=len(after_ids))

        code_ids = np.concatenate([before_ids, after_ids])
        days = np.concatenate([before_days, after_days])
        order = np.lexsort((self.text_rank[code_ids], days))
        return PatientDraw(index_day, code_ids[order], days[order])

    def iter_patients(self, workers: int = 1) -> Iterator[Tuple[int, PatientDraw]]:
        """Patients in ordinal order, drawn in blocks across worker threads"""
        n = self.spec.n_patients
        with Parallel(n_jobs=max(1, workers), prefer="threads") as parallel:
            for start in range(0, n, BLOCK_PATIENTS):
                block = range(start, min(n, start + BLOCK_PATIENTS))
                yield from zip(block, parallel(delayed(self.draw_patient)(i) for i in block))

    def write(self, out_dir: Union[str, Path], workers: int = 1) -> GeneratedFiles:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        files = GeneratedFiles(
            prescriptions=out_dir / "prescriptions.csv",
            events=out_dir / "events.csv",
            dictionary=out_dir / "dictionary.csv",
            truth=out_dir / "truth.csv",
        )
        spec = self.spec
        first_day = spec.start_date.toordinal() - spec.window_days
        last_day = spec.start_date.toordinal() + spec.span_days + spec.window_days
        iso = [date.fromordinal(d).isoformat() for d in range(first_day, last_day + 1)]

        n_events = 0
        with open(files.prescriptions, "w", encoding="utf-8", newline="") as pf, \
                open(files.events, "w", encoding="utf-8", newline="") as ef:
            p_writer = csv.writer(pf, lineterminator="\n")
            e_writer = csv.writer(ef, lineterminator="\n")
            p_writer.writerow(PRESCRIPTION_COLUMNS)
            e_writer.writerow(EVENT_COLUMNS)
            for ordinal, draw in self.iter_patients(workers):
                patient_id = f"P{ordinal + 1:07d}"
                p_writer.writerow((patient_id, spec.drug_code, iso[draw.index_day - first_day]))
                e_writer.writerows(
                    (patient_id, self.codes[c], iso[d - first_day])
                    for c, d in zip(draw.code_ids.tolist(), draw.days.tolist())
                )
                n_events += len(draw.days)

        with open(files.dictionary, "w", encoding="utf-8", newline="") as df:
            readcode.write_dictionary(self.terms, df)
        with open(files.truth, "w", encoding="utf-8", newline="") as tf:
            writer = csv.writer(tf, lineterminator="\n")
            writer.writerow(TRUTH_HEADER)
            for effect in spec.planted:
                writer.writerow((effect.code, repr(float(effect.risk_ratio))))

        logger.info(
            f"Generated synthetic cohort in {out_dir}: {spec.n_patients} patients, "
            f"{len(self.codes)} codes, {n_events} events, {len(spec.planted)} planted effects"
        )
        return files


def generate(spec: CohortSpec, out_dir: Union[str, Path], workers: int = 1) -> GeneratedFiles:
    """Write prescriptions.csv, events.csv, dictionary.csv and truth.csv into out_dir"""
    return SyntheticCohortGenerator(spec).write(out_dir, workers)


def read_truth(path: Union[str, Path]) -> Dict[str, float]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != TRUTH_HEADER:
            raise ValueError(f"{path}: not a truth file")
        return {code: float(rr) for code, rr in reader}
