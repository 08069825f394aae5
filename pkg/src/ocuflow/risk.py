"""Permeability-based risk stratification.

Thresholds are derived from two reference populations: the Normal
band's floor is the 25th percentile of the Normal population's
permeability and the Compromised band's ceiling is the 75th percentile
of the Compromised population's.  Values between the two are
Borderline.  Ground-truth labels for validation cohorts come from a
pre-specified rule engine driven by each cohort's diagnosis tags.
"""

from __future__ import annotations

import dataclasses
import enum
import math
import typing
import warnings

import numpy as np

from .stats import cohens_kappa
from .validation import as_float_array, check_positive

__all__ = [
    "RiskLabel",
    "RiskThresholds",
    "CohortDescriptor",
    "ClassificationScore",
    "DIAGNOSIS_TAGS",
    "LOW_FACILITY_CUTOFF",
    "MIXED_POAG_CUTOFF",
    "derive_thresholds",
    "assign_ground_truth",
    "classify",
    "score_classification",
]

# Rule constants: outflow facility at or below the cutoff escalates an
# OHT cohort to Compromised; a mixed cohort is Compromised once its
# diagnosed-glaucoma share reaches the cutoff.
LOW_FACILITY_CUTOFF = 0.10   # uL/min/mmHg
MIXED_POAG_CUTOFF = 0.25

# Tags the labeling rules understand; descriptors may carry others
# (the rule engine errors if none of its rules applies).
DIAGNOSIS_TAGS = frozenset(
    {"Healthy", "OHT", "POAG", "OAG", "Glaucoma", "Mixed", "Ambiguous"})


class RiskLabel(enum.Enum):
    NORMAL = "Normal"
    BORDERLINE = "Borderline"
    COMPROMISED = "Compromised"

    @classmethod
    def from_label(cls, label: str) -> "RiskLabel":
        for member in cls:
            if member.value == label:
                return member
        raise ValueError(f"unknown risk label {label!r}")

    def __str__(self) -> str:
        return self.value


LABEL_ORDER = (RiskLabel.NORMAL, RiskLabel.BORDERLINE, RiskLabel.COMPROMISED)


@dataclasses.dataclass(frozen=True)
class RiskThresholds:
    """Permeability cut points (m^2) bounding the Borderline band."""

    normal_floor: float
    compromised_ceiling: float

    def __post_init__(self):
        check_positive("normal_floor", self.normal_floor)
        check_positive("compromised_ceiling", self.compromised_ceiling)

    def to_dict(self) -> dict:
        return {"normal_floor": self.normal_floor,
                "compromised_ceiling": self.compromised_ceiling}

    @classmethod
    def from_dict(cls, d: dict) -> "RiskThresholds":
        return cls(normal_floor=d["normal_floor"],
                   compromised_ceiling=d["compromised_ceiling"])


@dataclasses.dataclass(frozen=True)
class CohortDescriptor:
    """Summary of one published study group used for validation.

    ``diagnosis_tags`` is the curated diagnostic composition; the
    optional ``poag_fraction`` and ``mean_of`` (outflow facility,
    uL/min/mmHg) feed the labeling rules.  The remaining summary
    statistics parameterize synthetic population expansion.
    """

    id: str
    description: str
    diagnosis_tags: frozenset
    poag_fraction: typing.Optional[float] = None
    mean_of: typing.Optional[float] = None
    age_mean: typing.Optional[float] = None
    age_sd: typing.Optional[float] = None
    iop_mean: typing.Optional[float] = None
    iop_sd: typing.Optional[float] = None
    n: int = 1

    def __post_init__(self):
        if not str(self.id):
            raise ValueError("cohort id must be nonempty")
        tags = frozenset(str(t) for t in self.diagnosis_tags)
        if not tags or any(not t for t in tags):
            raise ValueError(f"cohort {self.id!r}: need nonempty diagnosis tags")
        object.__setattr__(self, "diagnosis_tags", tags)
        if self.poag_fraction is not None and not (0.0 <= self.poag_fraction <= 1.0):
            raise ValueError(f"cohort {self.id!r}: poag_fraction must be in [0, 1]")
        for name in ("mean_of", "age_mean", "iop_mean"):
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value > 0.0):
                raise ValueError(f"cohort {self.id!r}: {name} must be finite and > 0")
        for name in ("age_sd", "iop_sd"):
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value >= 0.0):
                raise ValueError(f"cohort {self.id!r}: {name} must be finite and >= 0")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"cohort {self.id!r}: n must be a count >= 1")
        object.__setattr__(self, "n", int(self.n))


def derive_thresholds(normal_ktm, compromised_ktm) -> RiskThresholds:
    """Quantile thresholds from Normal and Compromised reference samples.

    Uses the linear-interpolation quantile estimator.  If the resulting
    band is empty or inverted (populations not separated), a warning is
    issued and the degenerate thresholds are returned as computed.
    """
    normal = as_float_array(normal_ktm, "normal_ktm", min_len=1)
    compromised = as_float_array(compromised_ktm, "compromised_ktm", min_len=1)
    if np.any(normal <= 0.0) or np.any(compromised <= 0.0):
        raise ValueError("permeability samples must be positive")
    thresholds = RiskThresholds(
        normal_floor=float(np.quantile(normal, 0.25)),
        compromised_ceiling=float(np.quantile(compromised, 0.75)),
    )
    if thresholds.compromised_ceiling >= thresholds.normal_floor:
        warnings.warn(
            "degenerate risk band: compromised ceiling "
            f"{thresholds.compromised_ceiling:.3e} >= normal floor "
            f"{thresholds.normal_floor:.3e}; populations are not separated",
            stacklevel=2)
    return thresholds


def assign_ground_truth(cohort: CohortDescriptor) -> RiskLabel:
    """Label a cohort with the pre-specified diagnostic rules.

    Rule 1: described as Healthy -> Normal.  Rule 2: a definitive
    POAG/OAG/glaucoma diagnosis -> Compromised.  Rule 3: OHT only ->
    Borderline, escalated to Compromised when the reported mean outflow
    facility is <= 0.10 uL/min/mmHg.  Rule 4: mixed OHT/glaucoma ->
    Compromised when the diagnosed share is >= 25%, otherwise
    Borderline; cohorts tagged only Ambiguous get the conservative
    Borderline.  Mixed cohorts are resolved before the pure-diagnosis
    rule so a minority glaucoma share does not trigger Rule 2.
    """
    tags = cohort.diagnosis_tags
    if "Healthy" in tags:
        return RiskLabel.NORMAL
    if "Mixed" in tags:
        if cohort.poag_fraction is not None and cohort.poag_fraction >= MIXED_POAG_CUTOFF:
            return RiskLabel.COMPROMISED
        return RiskLabel.BORDERLINE
    if tags & {"POAG", "OAG", "Glaucoma"}:
        return RiskLabel.COMPROMISED
    if "OHT" in tags:
        if cohort.mean_of is not None and cohort.mean_of <= LOW_FACILITY_CUTOFF:
            return RiskLabel.COMPROMISED
        return RiskLabel.BORDERLINE
    if "Ambiguous" in tags:
        return RiskLabel.BORDERLINE
    raise ValueError(
        f"cohort {cohort.id!r}: no labeling rule applies to tags {sorted(tags)}")


def classify(k_tm: float, thresholds: RiskThresholds) -> RiskLabel:
    """Band membership of one permeability value; boundaries are inclusive
    toward the non-Borderline class."""
    check_positive("k_tm", k_tm)
    if k_tm >= thresholds.normal_floor:
        return RiskLabel.NORMAL
    if k_tm <= thresholds.compromised_ceiling:
        return RiskLabel.COMPROMISED
    return RiskLabel.BORDERLINE


class ClassificationScore(typing.NamedTuple):
    accuracy: float
    kappa: float
    confusion: np.ndarray


def _as_labels(values) -> list:
    return [v if isinstance(v, RiskLabel) else RiskLabel.from_label(str(v))
            for v in values]


def score_classification(true_labels, pred_labels) -> ClassificationScore:
    """Accuracy, Cohen's kappa, and the 3x3 confusion matrix (rows = truth,
    label order Normal, Borderline, Compromised)."""
    truth = _as_labels(true_labels)
    pred = _as_labels(pred_labels)
    if len(truth) != len(pred):
        raise ValueError("label sequences must have equal length")
    if not truth:
        raise ValueError("need at least one label pair")
    index = {label: i for i, label in enumerate(LABEL_ORDER)}
    confusion = np.zeros((3, 3), dtype=int)
    for t, p in zip(truth, pred):
        confusion[index[t], index[p]] += 1
    accuracy = float(np.trace(confusion) / confusion.sum())
    kappa = cohens_kappa([t.value for t in truth], [p.value for p in pred])
    return ClassificationScore(accuracy=accuracy, kappa=kappa, confusion=confusion)
