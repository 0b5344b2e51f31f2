#!/usr/bin/env python3
"""
adrsignal command line

    adrsignal detect --prescriptions P --events E --drug D [options]
    adrsignal synth  --spec SPEC.json --out DIR [--seed N] [--workers K]
    adrsignal rollup --events E [--out FILE]

Exit codes: 0 success, 1 usage error, 2 data error.
"""

import argparse
import json
import sys
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, TextIO

from loguru import logger

import cohort_ingest
import feature_matrix
import readcode
import signal_report
import stats
import synth_cohort
from config import STDOUT, RunConfig, build_config, parse_top_k
from errors import AdrSignalError, UsageError
from feature_matrix import RemainderPolicy
from signal_report import RankBy, ReportFormat, ReportSpec
from stats import TestConfig, TestKind

LOG_LEVELS = ("WARNING", "INFO", "DEBUG")
LOG_FORMAT = "<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | {message}"


class _ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors raised as UsageError instead of exiting with 2"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# =============================================================================
# ARGUMENTS
# =============================================================================

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", dest="config_file", metavar="FILE",
                        help="KEY=value defaults file; explicit flags win")
    parser.add_argument("-v", "--verbose", action="count",
                        help="-v for progress, -vv for debug detail")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="adrsignal",
        description="Detect adverse drug reaction signals by comparing event windows "
                    "before and after the first prescription of a drug.",
    )
    subparsers = parser.add_subparsers(dest="subcommand", metavar="{detect,synth,rollup}",
                                       parser_class=_ArgumentParser)
    subparsers.required = True

    detect = subparsers.add_parser("detect", help="run the detection pipeline",
                                   argument_default=argparse.SUPPRESS)
    detect.add_argument("--prescriptions", metavar="PATH", help="patient_id,drug_code,date CSV")
    detect.add_argument("--events", metavar="PATH", help="patient_id,readcode,date CSV")
    detect.add_argument("--drug", dest="drug_code", metavar="CODE", help="target drug code")
    detect.add_argument("--dictionary", metavar="PATH", help="readcode,term CSV for report terms")
    detect.add_argument("--window-days", type=int, metavar="W", help="window length in days (60)")
    detect.add_argument("--group-size", type=int, metavar="S", help="patients per group (100)")
    detect.add_argument("--remainder-policy", choices=[p.value for p in RemainderPolicy],
                        help="what happens to leftover patients (merge)")
    detect.add_argument("--level3", action="store_true", help="roll codes up to level 3")
    detect.add_argument("--test", dest="test_kind", choices=[k.value for k in TestKind],
                        help="t-test variant (student_pooled)")
    detect.add_argument("--alpha", type=float, help="significance threshold (0.05)")
    detect.add_argument("--rank-by", choices=[r.value for r in RankBy], help="report order (pvalue_asc)")
    detect.add_argument("--top-k", type=parse_top_k, metavar="K", help="rows to keep, or 'all' (30)")
    detect.add_argument("--chapter-filter", metavar="CHAPTERS",
                        help="comma-separated chapter characters, or 'neoplasm'")
    detect.add_argument("--extra-codes", type=lambda s: tuple(c.strip() for c in s.split(",") if c.strip()),
                        metavar="CODES", help="comma-separated codes kept by the chapter filter")
    detect.add_argument("--out", metavar="PATH", help="report destination, '-' for stdout")
    detect.add_argument("--format", choices=[f.value for f in ReportFormat], help="report format (csv)")
    detect.add_argument("--dump-matrix", metavar="PATH", help="write grouped matrices for debugging")
    detect.add_argument("--run-report", metavar="PATH", help="write run parameters and timings as JSON")
    _add_common(detect)

    synth = subparsers.add_parser("synth", help="generate a synthetic cohort",
                                  argument_default=argparse.SUPPRESS)
    synth.add_argument("--spec", metavar="PATH", help="CohortSpec JSON")
    synth.add_argument("--out", metavar="DIR", help="output directory")
    synth.add_argument("--seed", type=int, help="override the spec seed")
    synth.add_argument("--workers", type=int, help="generator threads (1)")
    _add_common(synth)

    rollup = subparsers.add_parser("rollup", help="rewrite an events file at level 3",
                                   argument_default=argparse.SUPPRESS)
    rollup.add_argument("--events", metavar="PATH", help="patient_id,readcode,date CSV")
    rollup.add_argument("--out", metavar="PATH", help="destination, '-' for stdout")
    _add_common(rollup)
    return parser


def configure_logging(verbose: int) -> None:
    logger.remove()
    level = LOG_LEVELS[min(max(verbose, 0), len(LOG_LEVELS) - 1)]
    logger.add(sys.stderr, level=level, format=LOG_FORMAT, colorize=False)


@contextmanager
def _open_output(target: str) -> Iterator[TextIO]:
    if target == STDOUT:
        yield sys.stdout
        sys.stdout.flush()
        return
    path = Path(target)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            yield f
    except BaseException:
        # a failed run leaves no half-written output behind
        path.unlink(missing_ok=True)
        raise


# =============================================================================
# SUBCOMMANDS
# =============================================================================

def run_detect(config: RunConfig) -> int:
    """Ingest, build and group matrices, test every event, write the ranked report"""
    timings: Dict[str, float] = {}
    clock = time.perf_counter()

    def lap(stage: str) -> None:
        nonlocal clock
        now = time.perf_counter()
        timings[stage] = round(now - clock, 6)
        clock = now

    terms = (readcode.load_dictionary(config.dictionary) if config.dictionary is not None
             else readcode.TermDictionary())
    cohort = cohort_ingest.ingest(config.prescriptions, config.events, config.drug_code,
                                  window_days=config.window_days)
    lap("ingest")

    index = feature_matrix.build_event_index(cohort, level3=config.level3)
    A, B = feature_matrix.build_patient_matrices(cohort, index, level3=config.level3)
    X = feature_matrix.group(A, config.group_size, config.remainder_policy, index=index)
    Y = feature_matrix.group(B, config.group_size, config.remainder_policy, index=index)
    lap("matrices")
    if config.dump_matrix is not None:
        feature_matrix.dump_matrix(X, Y, config.dump_matrix)

    results = stats.test_all_events(X, Y, cohort.N, TestConfig(config.test_kind, config.alpha), terms)
    lap("tests")

    spec = ReportSpec(
        rank_by=config.rank_by,
        alpha=config.alpha,
        top_k=config.top_k,
        chapter_filter=config.report_filter(),
        level3=config.level3,
    )
    rows = signal_report.make_report(results, spec)
    with _open_output(config.out) as out:
        signal_report.render(rows, out, config.format)
    lap("report")

    bonferroni = stats.bonferroni_alpha(config.alpha, len(index))
    print(
        f"N={cohort.N} G={X.n_groups} E={len(index)} signals={len(rows)} "
        f"bonferroni_alpha={bonferroni:.6g}",
        file=sys.stderr,
    )
    if config.run_report is not None:
        _write_run_report(config, cohort.N, X.n_groups, len(index), len(rows), bonferroni, timings)
    return 0


def _write_run_report(config: RunConfig, n: int, g: int, e: int, signals: int,
                      bonferroni: float, timings: Dict[str, float]) -> None:
    payload = {
        "parameters": {
            "prescriptions": str(config.prescriptions),
            "events": str(config.events),
            "drug": config.drug_code,
            "window_days": config.window_days,
            "group_size": config.group_size,
            "remainder_policy": config.remainder_policy.value,
            "level3": config.level3,
            "test": config.test_kind.value,
            "alpha": config.alpha,
            "rank_by": config.rank_by.value,
            "top_k": config.top_k if config.top_k is not None else "all",
            "chapter_filter": config.chapter_filter,
            "extra_codes": list(config.extra_codes),
            "format": config.format.value,
        },
        "N": n,
        "G": g,
        "E": e,
        "signals": signals,
        "bonferroni_alpha": bonferroni,
        "timings_seconds": timings,
    }
    with _open_output(str(config.run_report)) as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
    logger.info(f"Run report written to {config.run_report}")


def run_synth(config: RunConfig) -> int:
    """Generate the four synthetic cohort files into --out"""
    if config.out == STDOUT:
        raise UsageError("synth requires --out DIR")
    spec = synth_cohort.load_spec(config.spec, seed=config.seed)
    files = synth_cohort.generate(spec, config.out, workers=config.workers)
    print(f"wrote {', '.join(str(p) for p in files)}", file=sys.stderr)
    return 0


def run_rollup(config: RunConfig) -> int:
    """Copy --events to --out with every code replaced by its level-3 parent"""
    with _open_output(config.out) as out:
        written = cohort_ingest.rollup_events(config.events, out)
    print(f"rolled up {written} rows", file=sys.stderr)
    return 0


COMMANDS = {"detect": run_detect, "synth": run_synth, "rollup": run_rollup}


# =============================================================================
# ENTRY POINT
# =============================================================================

def main(argv: Optional[Sequence[str]] = None) -> int:
    args: List[str] = list(sys.argv[1:] if argv is None else argv)
    configure_logging(0)
    try:
        namespace = vars(build_parser().parse_args(args))
        configure_logging(namespace.pop("verbose", 0) or 0)
        config_file = namespace.pop("config_file", None)
        config = build_config(namespace, config_file)
        logger.debug(f"Running {config.subcommand} with {config}")
        return COMMANDS[config.subcommand](config)
    except AdrSignalError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
