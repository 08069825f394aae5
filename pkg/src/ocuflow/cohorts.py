"""Validation-cohort ingestion and synthetic population expansion.

Cohort files are UTF-8 CSVs with a required header and optional leading
``#`` comment lines.  Columns: id, description, tags (semicolon-joined
diagnosis tags), poag_fraction, mean_of_ul_min_mmhg, age_mean_years,
age_sd_years, iop_mean_mmhg, iop_sd_mmhg, n, and (for labeled files) a
trailing label column.  Empty cells mean "not reported".  A curated
27-cohort table ships with the package for validating the labeling
rules end to end.
"""

from __future__ import annotations

import csv
import dataclasses
import importlib.resources
import io
import math
import pathlib
import typing

import numpy as np

from .core import PatientInput, from_clinical
from .risk import CohortDescriptor, RiskLabel
from .sampling import SamplingExhaustedError

__all__ = [
    "COHORT_COLUMNS",
    "SummaryStats",
    "default_cohort_path",
    "load_cohorts",
    "load_labeled_cohorts",
    "save_cohorts",
    "summary_stats",
    "synth_population",
]

COHORT_COLUMNS = ["id", "description", "tags", "poag_fraction",
                  "mean_of_ul_min_mmhg", "age_mean_years", "age_sd_years",
                  "iop_mean_mmhg", "iop_sd_mmhg", "n"]
LABEL_COLUMN = "label"

MIN_AGE_YEARS = 20.0
_BATCH = 4096


@dataclasses.dataclass(frozen=True)
class SummaryStats:
    """Reported summary statistics of one cohort (clinical units)."""

    age_mean: float
    age_sd: float
    iop_mean: float
    iop_sd: float
    n: int = 1
    of_mean: typing.Optional[float] = None
    of_sd: typing.Optional[float] = None

    def __post_init__(self):
        for name in ("age_mean", "iop_mean"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ValueError(f"{name} must be finite and > 0")
        for name in ("age_sd", "iop_sd"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise ValueError(f"{name} must be finite and >= 0")
        for name in ("of_mean", "of_sd"):
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value >= 0.0):
                raise ValueError(f"{name} must be finite and >= 0 when given")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a count >= 1")
        object.__setattr__(self, "n", int(self.n))


def default_cohort_path() -> pathlib.Path:
    """Path of the curated validation-cohort table shipped in the package."""
    return pathlib.Path(
        importlib.resources.files("ocuflow") / "data" / "validation_cohorts.csv")


def _parse_cell(path, row_num: int, column: str, text: str, kind: str):
    text = text.strip()
    if text == "":
        return None
    try:
        if kind == "int":
            return int(text)
        return float(text)
    except ValueError:
        raise ValueError(
            f"{path}: row {row_num}, column {column!r}: "
            f"expected {'an integer' if kind == 'int' else 'a number'}, got {text!r}"
        ) from None


def _read_rows(path) -> tuple:
    path = pathlib.Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError(f"{path}: missing header row") from None
    missing = [c for c in COHORT_COLUMNS if c not in header]
    if missing:
        raise ValueError(f"{path}: missing required columns {missing}")
    rows = []
    for row_num, row in enumerate(reader, start=1):
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(
                f"{path}: row {row_num}: expected {len(header)} cells, got {len(row)}")
        rows.append((row_num, dict(zip(header, row))))
    return path, header, rows


def _descriptor(path, row_num: int, cells: dict) -> CohortDescriptor:
    cohort_id = cells["id"].strip()
    if not cohort_id:
        raise ValueError(f"{path}: row {row_num}, column 'id': must be nonempty")
    tags = [t.strip() for t in cells["tags"].split(";") if t.strip()]
    if not tags:
        raise ValueError(f"{path}: row {row_num}, column 'tags': need at least one tag")
    numbers = {}
    for column, kind in (("poag_fraction", "float"),
                         ("mean_of_ul_min_mmhg", "float"),
                         ("age_mean_years", "float"), ("age_sd_years", "float"),
                         ("iop_mean_mmhg", "float"), ("iop_sd_mmhg", "float"),
                         ("n", "int")):
        numbers[column] = _parse_cell(path, row_num, column, cells[column], kind)
    if numbers["n"] is None:
        raise ValueError(f"{path}: row {row_num}, column 'n': must be present")
    try:
        return CohortDescriptor(
            id=cohort_id,
            description=cells["description"].strip(),
            diagnosis_tags=frozenset(tags),
            poag_fraction=numbers["poag_fraction"],
            mean_of=numbers["mean_of_ul_min_mmhg"],
            age_mean=numbers["age_mean_years"],
            age_sd=numbers["age_sd_years"],
            iop_mean=numbers["iop_mean_mmhg"],
            iop_sd=numbers["iop_sd_mmhg"],
            n=numbers["n"],
        )
    except ValueError as exc:
        raise ValueError(f"{path}: row {row_num}: {exc}") from None


def load_cohorts(path) -> list:
    """Read cohort descriptors; malformed cells raise row/column errors."""
    path, _, rows = _read_rows(path)
    return [_descriptor(path, row_num, cells) for row_num, cells in rows]


def load_labeled_cohorts(path) -> tuple:
    """Read (descriptors, ground-truth labels) from a labeled cohort file."""
    path, header, rows = _read_rows(path)
    if LABEL_COLUMN not in header:
        raise ValueError(f"{path}: missing required columns ['{LABEL_COLUMN}']")
    descriptors, labels = [], []
    for row_num, cells in rows:
        descriptors.append(_descriptor(path, row_num, cells))
        try:
            labels.append(RiskLabel.from_label(cells[LABEL_COLUMN].strip()))
        except ValueError as exc:
            raise ValueError(
                f"{path}: row {row_num}, column {LABEL_COLUMN!r}: {exc}") from None
    return descriptors, labels


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        # repr round-trips exactly and stays readable for curated tables
        return repr(value)
    return str(value)


def save_cohorts(cohorts, path, labels=None, comment: str = "") -> None:
    """Write descriptors (optionally labeled) in the documented CSV schema.

    Loading a saved file reproduces the descriptors and labels exactly.
    """
    if labels is not None and len(labels) != len(cohorts):
        raise ValueError("labels must match cohorts one to one")
    header = COHORT_COLUMNS + ([LABEL_COLUMN] if labels is not None else [])
    buf = io.StringIO()
    for line in comment.splitlines():
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for i, c in enumerate(cohorts):
        row = [c.id, c.description, ";".join(sorted(c.diagnosis_tags)),
               _cell(c.poag_fraction), _cell(c.mean_of),
               _cell(c.age_mean), _cell(c.age_sd),
               _cell(c.iop_mean), _cell(c.iop_sd), str(c.n)]
        if labels is not None:
            row.append(labels[i].value)
        writer.writerow(row)
    pathlib.Path(path).write_text(buf.getvalue(), encoding="utf-8")


def summary_stats(cohort: CohortDescriptor) -> SummaryStats:
    """Extract the population-expansion statistics from a descriptor."""
    missing = [name for name in ("age_mean", "age_sd", "iop_mean", "iop_sd")
               if getattr(cohort, name) is None]
    if missing:
        raise ValueError(f"cohort {cohort.id!r}: missing summary fields {missing}")
    return SummaryStats(age_mean=cohort.age_mean, age_sd=cohort.age_sd,
                        iop_mean=cohort.iop_mean, iop_sd=cohort.iop_sd,
                        n=cohort.n, of_mean=cohort.mean_of)


def _rejection_sample(n: int, mean: float, sd: float, accept,
                      rng: np.random.Generator, what: str) -> np.ndarray:
    out = np.empty(n, dtype=float)
    filled = 0
    attempts = 0
    budget = max(1_000_000, 1000 * n)
    while filled < n:
        if attempts >= budget:
            raise SamplingExhaustedError(
                f"{what}: {filled}/{n} accepted after {attempts} attempts")
        m = min(_BATCH, budget - attempts)
        draw = rng.normal(mean, sd, size=m)
        attempts += m
        kept = draw[accept(draw)]
        take = min(kept.size, n - filled)
        if take:
            out[filled:filled + take] = kept[:take]
            filled += take
    return out


def synth_population(s: SummaryStats, n: int = 500,
                     rng: np.random.Generator = None) -> list:
    """Expand summary statistics into n synthetic patients.

    Ages and IOPs are drawn from Normal(mean, sd) with rejection at the
    physical bounds (age >= 20 years, IOP > 0); IOP statistics are in
    mmHg and converted to Pa for the returned patients.
    """
    if rng is None:
        raise ValueError("an explicit rng is required for reproducibility")
    if n < 1:
        raise ValueError("n must be >= 1")
    ages = _rejection_sample(
        n, s.age_mean, s.age_sd,
        lambda a: np.isfinite(a) & (a >= MIN_AGE_YEARS), rng,
        f"age sampling (mean {s.age_mean}, sd {s.age_sd})")
    iops = _rejection_sample(
        n, s.iop_mean, s.iop_sd,
        lambda p: np.isfinite(p) & (p > 0.0), rng,
        f"IOP sampling (mean {s.iop_mean}, sd {s.iop_sd})")
    return [PatientInput(age_years=float(a),
                         iop=from_clinical(float(p), "pressure"))
            for a, p in zip(ages, iops)]
