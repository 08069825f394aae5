"""Pipeline configuration: one JSON-serializable document drives every stage.

The configuration collects the physical constants, priors, noise budgets,
dataset sizes, model hyperparameters, and the Monte-Carlo draw count.
Its canonical hash (paths excluded) is embedded in every artifact, so an
artifact can always be traced to the exact settings that produced it.
"""

from __future__ import annotations

import dataclasses
import json
import math
import pathlib

from .artifacts import config_digest
from .core import AgeGroup, group_table
from .gbt import GbtHyperparams
from .physics import (
    DEFAULT_BIAS_LINE,
    DEFAULT_GEOMETRY_M,
    DEFAULT_POROSITY,
    DEFAULT_VISCOSITY_PA_S,
    BiasLine,
    PorosityTable,
)
from .sampling import PriorSet, default_priors

__all__ = ["ArchetypeSpec", "PipelineConfig", "DEFAULT_STAGE1_HP", "DEFAULT_STAGE2_HP"]

DEFAULT_STAGE1_HP = GbtHyperparams(
    n_estimators=425, learning_rate=0.0851, max_depth=12,
    subsample=0.7307, colsample_bytree=0.9356, gamma=0.4302,
    reg_alpha=0.3033, reg_lambda=0.5371,
)
DEFAULT_STAGE2_HP = GbtHyperparams(
    n_estimators=491, learning_rate=0.1731, max_depth=3,
    subsample=0.8645, colsample_bytree=0.5994, gamma=0.0028,
    reg_alpha=0.0, reg_lambda=1.0,
)


@dataclasses.dataclass(frozen=True)
class ArchetypeSpec:
    """A clinical outflow-facility archetype: Normal(mean, sd), weighted."""

    name: str
    mean_facility: float  # clinical units, uL/min/mmHg
    sd_facility: float
    weight: float

    def __post_init__(self):
        if not self.name:
            raise ValueError("archetype name must be nonempty")
        if not (math.isfinite(self.mean_facility) and self.mean_facility > 0.0):
            raise ValueError("mean_facility must be finite and > 0")
        if not (math.isfinite(self.sd_facility) and self.sd_facility >= 0.0):
            raise ValueError("sd_facility must be finite and >= 0")
        if not (math.isfinite(self.weight) and self.weight > 0.0):
            raise ValueError("weight must be finite and > 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchetypeSpec":
        return cls(**d)


DEFAULT_ARCHETYPES = (
    ArchetypeSpec(name="normal", mean_facility=0.28, sd_facility=0.07, weight=0.5),
    ArchetypeSpec(name="compromised", mean_facility=0.12, sd_facility=0.05, weight=0.5),
)


def _noise_spec(value):
    """A noise setting: fixed sd (float) or per-row sd budget (lo, hi)."""
    if isinstance(value, (tuple, list)):
        lo, hi = float(value[0]), float(value[1])
        if not (0.0 <= lo <= hi and math.isfinite(hi)):
            raise ValueError(f"noise budget must satisfy 0 <= lo <= hi, got {value!r}")
        return (lo, hi)
    v = float(value)
    if not (math.isfinite(v) and v >= 0.0):
        raise ValueError("noise sd must be finite and >= 0")
    return v


@dataclasses.dataclass(frozen=True)
class PipelineConfig:
    seed: int = 123
    mu_pa_s: float = DEFAULT_VISCOSITY_PA_S
    geometry_m: dict = dataclasses.field(
        default_factory=lambda: {g.label: DEFAULT_GEOMETRY_M[g] for g in AgeGroup})
    porosity: PorosityTable = DEFAULT_POROSITY
    priors: PriorSet = dataclasses.field(default_factory=default_priors)
    bias_line: BiasLine = DEFAULT_BIAS_LINE
    ktm_range: tuple = (1e-17, 1e-13)
    n_stage1: int = 9000
    n_calibration: int = 500
    n_stage2: int = 120000
    stage1_noise_mmhg: object = (0.0, 3.5)
    stage2_noise_mmhg: object = (0.0, 3.5)
    calibration_noise_mmhg: float = 3.5
    calibration_iop_bands_mmhg: tuple = ((10.0, 12.0), (38.0, 40.0))
    archetypes: tuple = DEFAULT_ARCHETYPES
    stage1_hp: GbtHyperparams = DEFAULT_STAGE1_HP
    stage2_hp: GbtHyperparams = DEFAULT_STAGE2_HP
    n_draws: int = 1000
    age_range: tuple = (20.0, 80.0)
    paths: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        object.__setattr__(self, "seed", int(self.seed))
        if not (math.isfinite(self.mu_pa_s) and self.mu_pa_s > 0.0):
            raise ValueError("mu_pa_s must be finite and > 0")
        geometry = group_table(self.geometry_m)
        for group, g in geometry.items():
            if not (math.isfinite(g) and g > 0.0):
                raise ValueError(f"geometry_m[{group.label!r}] must be finite and > 0")
        object.__setattr__(
            self, "geometry_m", {g.label: float(geometry[g]) for g in AgeGroup})
        lo, hi = self.ktm_range
        if not (0.0 < lo < hi and math.isfinite(hi)):
            raise ValueError("ktm_range must satisfy 0 < lo < hi")
        object.__setattr__(self, "ktm_range", (float(lo), float(hi)))
        for name in ("n_stage1", "n_calibration", "n_stage2", "n_draws"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a count >= 1")
            object.__setattr__(self, name, int(v))
        object.__setattr__(self, "stage1_noise_mmhg", _noise_spec(self.stage1_noise_mmhg))
        object.__setattr__(self, "stage2_noise_mmhg", _noise_spec(self.stage2_noise_mmhg))
        object.__setattr__(self, "calibration_noise_mmhg",
                           float(_noise_spec(float(self.calibration_noise_mmhg))))
        bands = tuple((float(a), float(b)) for a, b in self.calibration_iop_bands_mmhg)
        if not bands or any(not (0.0 < a < b and math.isfinite(b)) for a, b in bands):
            raise ValueError("each calibration band must satisfy 0 < lo < hi")
        object.__setattr__(self, "calibration_iop_bands_mmhg", bands)
        archetypes = tuple(self.archetypes)
        if len(archetypes) < 1:
            raise ValueError("need at least one archetype")
        object.__setattr__(self, "archetypes", archetypes)
        a_lo, a_hi = self.age_range
        if not (20.0 <= a_lo < a_hi and math.isfinite(a_hi)):
            raise ValueError("age_range must satisfy 20 <= lo < hi")
        object.__setattr__(self, "age_range", (float(a_lo), float(a_hi)))

    def to_dict(self) -> dict:
        def noise(v):
            return list(v) if isinstance(v, tuple) else v

        return {
            "seed": self.seed,
            "mu_pa_s": self.mu_pa_s,
            "geometry_m": dict(self.geometry_m),
            "porosity": {"eps": {g.label: self.porosity.eps[g] for g in AgeGroup},
                         "kozeny_k": self.porosity.kozeny_k},
            "priors": self.priors.to_dict(),
            "bias_line": {"intercept_mmhg": self.bias_line.intercept_mmhg,
                          "slope": self.bias_line.slope},
            "ktm_range": list(self.ktm_range),
            "n_stage1": self.n_stage1,
            "n_calibration": self.n_calibration,
            "n_stage2": self.n_stage2,
            "stage1_noise_mmhg": noise(self.stage1_noise_mmhg),
            "stage2_noise_mmhg": noise(self.stage2_noise_mmhg),
            "calibration_noise_mmhg": self.calibration_noise_mmhg,
            "calibration_iop_bands_mmhg": [list(b) for b in self.calibration_iop_bands_mmhg],
            "archetypes": [a.to_dict() for a in self.archetypes],
            "stage1_hp": self.stage1_hp.to_dict(),
            "stage2_hp": self.stage2_hp.to_dict(),
            "n_draws": self.n_draws,
            "age_range": list(self.age_range),
            "paths": dict(self.paths),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        if "porosity" in d:
            p = d.pop("porosity")
            kwargs["porosity"] = PorosityTable(
                eps=group_table(p["eps"]), kozeny_k=p.get("kozeny_k", 150.0))
        if "priors" in d:
            kwargs["priors"] = PriorSet.from_dict(d.pop("priors"))
        if "bias_line" in d:
            b = d.pop("bias_line")
            kwargs["bias_line"] = BiasLine(intercept_mmhg=b["intercept_mmhg"],
                                           slope=b["slope"])
        if "archetypes" in d:
            kwargs["archetypes"] = tuple(
                ArchetypeSpec.from_dict(a) for a in d.pop("archetypes"))
        for key in ("stage1_hp", "stage2_hp"):
            if key in d:
                kwargs[key] = GbtHyperparams.from_dict(d.pop(key))
        for key in ("ktm_range", "age_range"):
            if key in d:
                kwargs[key] = tuple(d.pop(key))
        if "calibration_iop_bands_mmhg" in d:
            kwargs["calibration_iop_bands_mmhg"] = tuple(
                tuple(b) for b in d.pop("calibration_iop_bands_mmhg"))
        for key, value in d.items():
            kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def from_json_file(cls, path) -> "PipelineConfig":
        text = pathlib.Path(path).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def config_hash(self) -> str:
        payload = self.to_dict()
        payload.pop("paths")  # storage locations do not affect results
        return config_digest(payload)

    def geometry_for(self, group: AgeGroup) -> float:
        return float(self.geometry_m[group.label])
