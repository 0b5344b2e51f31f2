"""Shared fixtures: tiny hand-written cohort files and a synthetic cohort"""

from pathlib import Path
from typing import Callable, Iterable, Sequence

import pytest

import synth_cohort

DRUG = "SIMV001"


def write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> Path:
    lines = [",".join(header)] + [",".join(row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def csv_writer(tmp_path) -> Callable[..., Path]:
    """write(name, header, rows) -> path inside tmp_path"""
    def write(name: str, header: Sequence[str], rows: Iterable[Sequence[str]]) -> Path:
        return write_rows(tmp_path / name, header, rows)
    return write


@pytest.fixture
def tiny_files(csv_writer):
    """
    Three patients on the drug plus one on another drug.

    p1: index 2010-01-10 (second prescription on 2010-03-01 ignored)
    p2: index 2010-02-01
    p3: index 2010-02-15
    """
    prescriptions = csv_writer("prescriptions.csv", ("patient_id", "drug_code", "date"), [
        ("p1", DRUG, "2010-03-01"),
        ("p2", DRUG, "2010-02-01"),
        ("p9", "ATOR001", "2010-01-01"),
        ("p1", DRUG, "2010-01-10"),
        ("p3", DRUG, "2010-02-15"),
    ])
    events = csv_writer("events.csv", ("patient_id", "readcode", "date"), [
        ("p1", "N245.16", "2009-12-01"),   # 40 days before
        ("p1", "N245111", "2009-12-20"),   # before
        ("p1", "F46..00", "2010-01-10"),   # index day
        ("p1", "I2I2.00", "2010-02-01"),   # after
        ("p2", "I2I2.00", "2010-02-20"),   # after
        ("p2", "C34..00", "2009-06-01"),   # outside both windows
        ("p3", "N245.16", "2010-03-01"),   # after
        ("p9", "B33..00", "2010-01-05"),   # not in cohort
    ])
    dictionary = csv_writer("dictionary.csv", ("readcode", "term"), [
        ("N245.16", "Leg pain"),
        ("N24..00", "Other soft tissue disorders"),
        ("I2I2.00", "\"Chronic kidney disease, stage 3\""),
    ])
    return prescriptions, events, dictionary


@pytest.fixture(scope="session")
def small_spec() -> synth_cohort.CohortSpec:
    return synth_cohort.CohortSpec(
        n_patients=600,
        n_codes=120,
        baseline_rate=(0.01, 0.05),
        planted=[
            {"code": "A00..00", "risk_ratio": 8.0, "baseline_rate": 0.04},
            {"code": "B001.00", "risk_ratio": 6.0, "baseline_rate": 0.05},
        ],
        seed=7,
    )


@pytest.fixture(scope="session")
def small_cohort_dir(tmp_path_factory, small_spec) -> Path:
    out = tmp_path_factory.mktemp("small_cohort")
    synth_cohort.generate(small_spec, out)
    return out
