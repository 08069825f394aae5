"""Canonical domain types and the unit system shared by every other module.

All internal computation is SI: pressures in pascals (Pa), flow rates in
m^3/s, outflow facility in m^3/(s*Pa), permeability in m^2, and the
geometry factor (outflow area over path length) in meters.  Clinical
units (mmHg, uL/min, uL/min/mmHg) appear only at I/O boundaries through
:func:`to_clinical` / :func:`from_clinical`.
"""

from __future__ import annotations

import dataclasses
import enum
import math

import numpy as np

__all__ = [
    "PA_PER_MMHG",
    "M3S_PER_UL_MIN",
    "SI_PER_CLINICAL_FACILITY",
    "AgeGroup",
    "HydrodynamicState",
    "PatientInput",
    "to_clinical",
    "from_clinical",
    "age_group_of",
    "age_group_indices",
    "group_table",
    "substream",
]

PA_PER_MMHG = 133.322
M3S_PER_UL_MIN = 1e-9 / 60.0
# Derived, not stated independently, so that facility algebra expressed in
# clinical units is exactly consistent with the pressure and flow units.
SI_PER_CLINICAL_FACILITY = M3S_PER_UL_MIN / PA_PER_MMHG

_CLINICAL_SCALE = {
    "pressure": PA_PER_MMHG,
    "flow": M3S_PER_UL_MIN,
    "facility": SI_PER_CLINICAL_FACILITY,
}


class AgeGroup(enum.IntEnum):
    """Age strata; ordering Young < Middle < Old is part of the contract."""

    YOUNG = 0
    MIDDLE = 1
    OLD = 2

    @property
    def label(self) -> str:
        return _GROUP_LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "AgeGroup":
        try:
            return _GROUP_BY_LABEL[label.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown age group label: {label!r}") from None


_GROUP_LABELS = {AgeGroup.YOUNG: "Young", AgeGroup.MIDDLE: "Middle", AgeGroup.OLD: "Old"}
_GROUP_BY_LABEL = {v.lower(): k for k, v in _GROUP_LABELS.items()}


def to_clinical(value, kind: str):
    """Convert an SI quantity to its clinical display unit.

    ``kind`` is one of ``"pressure"`` (Pa -> mmHg), ``"flow"``
    (m^3/s -> uL/min) or ``"facility"`` (m^3/(s*Pa) -> uL/min/mmHg).
    Accepts scalars or arrays; rejects non-finite input.
    """
    return _convert(value, kind, invert=False)


def from_clinical(value, kind: str):
    """Inverse of :func:`to_clinical`; clinical display unit to SI."""
    return _convert(value, kind, invert=True)


def _convert(value, kind: str, invert: bool):
    if kind not in _CLINICAL_SCALE:
        raise ValueError(f"unknown quantity kind: {kind!r}")
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite {kind} value")
    scale = _CLINICAL_SCALE[kind]
    out = arr * scale if invert else arr / scale
    return float(out) if np.ndim(value) == 0 else out


def group_table(mapping) -> dict:
    """Normalize a per-age-group mapping to AgeGroup keys.

    Accepts keys as AgeGroup members or labels; requires all groups.
    """
    out = {}
    for key, value in mapping.items():
        group = key if isinstance(key, AgeGroup) else AgeGroup.from_label(str(key))
        out[group] = value
    missing = [g.label for g in AgeGroup if g not in out]
    if missing:
        raise ValueError(f"missing age groups: {missing}")
    return out


def age_group_indices(ages_years) -> np.ndarray:
    """Vectorized :func:`age_group_of`: integer group index per age."""
    ages = np.asarray(ages_years, dtype=float)
    if not np.all(np.isfinite(ages)):
        raise ValueError("ages must be finite")
    if np.any(ages < 20.0):
        raise ValueError("ages below 20 are out of domain")
    return np.where(ages < 34.0, int(AgeGroup.YOUNG),
                    np.where(ages <= 55.0, int(AgeGroup.MIDDLE), int(AgeGroup.OLD)))


def age_group_of(age_years: float) -> AgeGroup:
    """Stratify a continuous age: Young [20, 34), Middle [34, 55], Old > 55.

    Ages below 20 are out of domain (no geometry or priors exist there).
    """
    if not math.isfinite(age_years):
        raise ValueError("age must be finite")
    if age_years < 20.0:
        raise ValueError(f"age {age_years} is out of domain (must be >= 20)")
    if age_years < 34.0:
        return AgeGroup.YOUNG
    if age_years <= 55.0:
        return AgeGroup.MIDDLE
    return AgeGroup.OLD


@dataclasses.dataclass(frozen=True)
class HydrodynamicState:
    """One physiological state in SI units.

    Physically valid forward states satisfy q_ah > f_u and iop > evp;
    the physics operations enforce those preconditions where they matter.
    """

    iop: float
    q_ah: float
    f_u: float
    evp: float
    age_years: float

    def __post_init__(self):
        for name in ("iop", "q_ah", "f_u", "evp", "age_years"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclasses.dataclass(frozen=True)
class PatientInput:
    """A profiling request: age in years and measured IOP in Pa."""

    age_years: float
    iop: float

    def __post_init__(self):
        if not math.isfinite(self.age_years) or self.age_years < 20.0:
            raise ValueError("age_years must be finite and >= 20")
        if not math.isfinite(self.iop) or self.iop <= 0.0:
            raise ValueError("iop must be finite and > 0")


def substream(seed: int, *key) -> np.random.Generator:
    """Deterministic child RNG for a named pipeline step.

    Children are derived with ``SeedSequence(seed, spawn_key=...)`` so any
    stage (or chunk of a stage) can be generated independently, in
    parallel, or in isolation and still produce the identical stream.
    String key parts are folded to stable 32-bit words.
    """
    import hashlib

    words = []
    for part in key:
        if isinstance(part, str):
            digest = hashlib.sha256(part.encode("utf-8")).digest()
            words.append(int.from_bytes(digest[:4], "big"))
            words.append(int.from_bytes(digest[4:8], "big"))
        else:
            words.append(int(part) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(words)))
