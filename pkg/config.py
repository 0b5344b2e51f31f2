#!/usr/bin/env python3
"""
Run configuration for the adrsignal command line

RunConfig carries every knob of a detect, synth or rollup run. Values come
from three places, highest precedence first: explicit flags, a dotenv-style
defaults file named with --config, and the built-in protocol defaults
(60-day windows, groups of 100, pooled t-test at 0.05, top 30 by p-value).
"""

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Tuple, Union

from dotenv import dotenv_values
from loguru import logger

import readcode
from cohort_ingest import DEFAULT_WINDOW_DAYS
from errors import InputFileError, MalformedCode, UsageError
from feature_matrix import DEFAULT_GROUP_SIZE, RemainderPolicy
from signal_report import DEFAULT_TOP_K, NEOPLASM_FILTER, ChapterFilter, RankBy, ReportFormat
from stats import DEFAULT_ALPHA, TestKind

SUBCOMMANDS = ("detect", "synth", "rollup")
STDOUT = "-"
NAMED_FILTERS = {"neoplasm": NEOPLASM_FILTER}

_TRUE = {"true", "1", "yes"}
_FALSE = {"false", "0", "no"}


@dataclass(frozen=True)
class RunConfig:
    subcommand: str = "detect"
    # inputs
    prescriptions: Optional[Path] = None
    events: Optional[Path] = None
    dictionary: Optional[Path] = None
    spec: Optional[Path] = None
    drug_code: Optional[str] = None
    # detection protocol
    window_days: int = DEFAULT_WINDOW_DAYS
    group_size: int = DEFAULT_GROUP_SIZE
    remainder_policy: RemainderPolicy = RemainderPolicy.MERGE
    level3: bool = False
    test_kind: TestKind = TestKind.STUDENT_POOLED
    alpha: float = DEFAULT_ALPHA
    # report
    rank_by: RankBy = RankBy.PVALUE_ASC
    top_k: Optional[int] = DEFAULT_TOP_K
    chapter_filter: Optional[str] = None
    extra_codes: Tuple[str, ...] = ()
    out: str = STDOUT
    format: ReportFormat = ReportFormat.CSV
    # artifacts
    dump_matrix: Optional[Path] = None
    run_report: Optional[Path] = None
    # synth
    seed: Optional[int] = None
    workers: int = 1
    verbose: int = 0
    config_file: Optional[Path] = field(default=None, compare=False)

    def validate(self) -> "RunConfig":
        """Normalize enum fields and check ranges; raises UsageError"""
        if self.subcommand not in SUBCOMMANDS:
            raise UsageError(f"unknown subcommand {self.subcommand!r}")
        try:
            normalized = replace(
                self,
                remainder_policy=RemainderPolicy(self.remainder_policy),
                test_kind=TestKind(self.test_kind),
                rank_by=RankBy(self.rank_by),
                format=ReportFormat(self.format),
            )
        except ValueError as e:
            raise UsageError(str(e)) from e

        if normalized.window_days < 1:
            raise UsageError(f"--window-days must be >= 1, got {normalized.window_days}")
        if normalized.group_size < 1:
            raise UsageError(f"--group-size must be >= 1, got {normalized.group_size}")
        if not 0.0 < normalized.alpha < 1.0:
            raise UsageError(f"--alpha must lie strictly between 0 and 1, got {normalized.alpha}")
        if normalized.top_k is not None and normalized.top_k < 1:
            raise UsageError(f"--top-k must be >= 1 or 'all', got {normalized.top_k}")
        if normalized.workers < 1:
            raise UsageError(f"--workers must be >= 1, got {normalized.workers}")
        if normalized.seed is not None and normalized.seed < 0:
            raise UsageError(f"--seed must be >= 0, got {normalized.seed}")
        normalized.report_filter()

        required = {
            "detect": ("prescriptions", "events", "drug_code"),
            "synth": ("spec",),
            "rollup": ("events",),
        }[normalized.subcommand]
        missing = [name for name in required if getattr(normalized, name) in (None, "")]
        if missing:
            flags = ", ".join("--" + _flag_name(name) for name in missing)
            raise UsageError(f"{normalized.subcommand} requires {flags}")
        return normalized

    def report_filter(self) -> Optional[ChapterFilter]:
        """ChapterFilter built from --chapter-filter and --extra-codes, or None"""
        if not self.chapter_filter and not self.extra_codes:
            return None
        chapters = frozenset()
        extra = set()
        if self.chapter_filter:
            named = NAMED_FILTERS.get(self.chapter_filter.lower())
            if named is not None:
                chapters = named.chapters
                extra |= named.extra_codes
            else:
                chapters = frozenset(_split(self.chapter_filter))
                bad = [c for c in chapters if len(c) != 1]
                if bad:
                    raise UsageError(
                        f"--chapter-filter takes single chapter characters or "
                        f"{'/'.join(NAMED_FILTERS)}, got {', '.join(sorted(bad))}"
                    )
        for raw in self.extra_codes:
            try:
                extra.add(readcode.parse(raw).text)
            except MalformedCode as e:
                raise UsageError(f"--extra-codes: {e}") from e
        return ChapterFilter(chapters=chapters, extra_codes=frozenset(extra))


# =============================================================================
# DEFAULTS FILE
# =============================================================================

def _split(text: str) -> Tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


def parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def parse_top_k(text: Union[str, int]) -> Optional[int]:
    if isinstance(text, int):
        return text
    if text.strip().lower() == "all":
        return None
    return int(text)


# defaults-file key -> (RunConfig field, converter)
_FILE_KEYS: Dict[str, Tuple[str, Callable[[str], Any]]] = {
    "DRUG": ("drug_code", str.strip),
    "WINDOW_DAYS": ("window_days", int),
    "GROUP_SIZE": ("group_size", int),
    "REMAINDER_POLICY": ("remainder_policy", str.strip),
    "LEVEL3": ("level3", parse_bool),
    "TEST": ("test_kind", str.strip),
    "ALPHA": ("alpha", float),
    "RANK_BY": ("rank_by", str.strip),
    "TOP_K": ("top_k", parse_top_k),
    "CHAPTER_FILTER": ("chapter_filter", str.strip),
    "EXTRA_CODES": ("extra_codes", _split),
    "FORMAT": ("format", str.strip),
    "SEED": ("seed", int),
    "WORKERS": ("workers", int),
}


def load_defaults_file(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Read KEY=value lines into RunConfig field values.

    The process environment is neither read nor modified.
    """
    path = Path(path)
    if not path.is_file():
        raise InputFileError(path)
    values: Dict[str, Any] = {}
    for key, raw in dotenv_values(path, interpolate=False).items():
        name = key.upper()
        if name not in _FILE_KEYS:
            raise UsageError(f"{path}: unknown setting {key!r} (known: {', '.join(sorted(_FILE_KEYS))})")
        if raw is None:
            raise UsageError(f"{path}: setting {key!r} has no value")
        target, convert = _FILE_KEYS[name]
        try:
            values[target] = convert(raw)
        except ValueError as e:
            raise UsageError(f"{path}: bad value for {key}: {e}") from e
    logger.debug(f"Loaded {len(values)} defaults from {path}")
    return values


def build_config(flags: Mapping[str, Any], config_file: Optional[Union[str, Path]] = None) -> RunConfig:
    """
    Merge flag values over defaults-file values over built-in defaults.

    flags holds only the options given on the command line.
    """
    known = {f.name for f in fields(RunConfig)}
    merged: Dict[str, Any] = {}
    if config_file is not None:
        merged.update(load_defaults_file(config_file))
        merged["config_file"] = Path(config_file)
    merged.update({k: v for k, v in flags.items() if k in known})
    for name in ("prescriptions", "events", "dictionary", "spec", "dump_matrix", "run_report"):
        if merged.get(name) is not None:
            merged[name] = Path(merged[name])
    return RunConfig(**merged).validate()


def _flag_name(field_name: str) -> str:
    return {"drug_code": "drug", "test_kind": "test"}.get(field_name, field_name).replace("_", "-")
