"""Monte-Carlo hydrodynamic profiling from a single (age, IOP) measurement.

One profiling run draws N physiologically constrained state vectors from
the age-stratified priors, pushes each through the trained Stage-1
(permeability) and Stage-2 (geometry) models, and closes the loop with
the porous-media relations: C_trab from Darcy's law and the effective
pore diameter from the Kozeny-Carman model.  The result is a posterior
profile: per-parameter draws plus quantile summaries.

The measured IOP is used as-is in both stages.  Stage 1 is trained on
high-fidelity-scale pressures and a tonometry reading is on that scale
by definition, so no bias transform is applied at inference time.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .artifacts import make_provenance
from .core import PatientInput, age_group_of
from .datasets import stage1_features, stage2_features
from .physics import pore_diameter
from .sampling import PriorSet, sample_constrained
from .validation import check_positive

__all__ = [
    "PARAMETERS",
    "SCENARIOS",
    "SUMMARY_QUANTILES",
    "PosteriorProfile",
    "ReferencePopulation",
    "NormalizedProfile",
    "SensitivityScan",
    "profile_patient",
    "normalize_profile",
    "sensitivity_scan",
]

# Inferred parameters, in reporting order.  The first four are model
# outputs and derived quantities; the last three are the constrained
# prior draws that produced them.
PARAMETERS = ("k_tm", "g", "c_trab", "d_p", "q_ah", "f_u", "evp")

SUMMARY_QUANTILES = {"q05": 0.05, "q25": 0.25, "median": 0.50,
                     "q75": 0.75, "q95": 0.95}

# Sensitivity scenarios: (prior-sd factor, inflow-mean factor).
SCENARIOS = {
    "baseline": (1.0, 1.0),
    "wide": (1.5, 1.0),
    "narrow": (0.5, 1.0),
    "high_inflow": (1.0, 1.3),
    "low_inflow": (1.0, 0.7),
}


def _ensemble(model):
    """Accept either a raw TreeEnsemble or a fitted estimator wrapper."""
    return getattr(model, "ensemble_", model)


def _check_schema(stage1_model, stage2_model) -> tuple:
    m1, m2 = _ensemble(stage1_model), _ensemble(stage2_model)
    if m1.n_features != 7:
        raise ValueError(
            f"stage-1 model expects {m1.n_features} features, need 7 "
            "(iop, q_ah, f_u, evp, age one-hot x3)")
    if m2.n_features != 6:
        raise ValueError(
            f"stage-2 model expects {m2.n_features} features, need 6 "
            "(log10 k_tm, iop, q_ah, f_u, evp, age)")
    return m1, m2


def _summaries(draws: dict) -> dict:
    qs = list(SUMMARY_QUANTILES.values())
    out = {}
    for name in PARAMETERS:
        values = np.quantile(draws[name], qs)
        out[name] = {k: float(v) for k, v in zip(SUMMARY_QUANTILES, values)}
    return out


@dataclasses.dataclass(frozen=True)
class PosteriorProfile:
    """Draws and summaries for one patient's inferred hydrodynamics.

    ``draws`` maps each parameter in :data:`PARAMETERS` to a length-N
    array; ``summary`` maps each to its 5/25/50/75/95 percent quantiles
    (linear-interpolation estimator).  ``provenance`` records the seed,
    config hash, viscosity, porosity, and N that produced the profile.
    """

    draws: dict
    summary: dict
    provenance: dict

    def __post_init__(self):
        lengths = {name: len(self.draws.get(name, ())) for name in PARAMETERS}
        n = lengths[PARAMETERS[0]]
        if n < 1 or any(m != n for m in lengths.values()):
            raise ValueError(f"draw arrays must share one length >= 1: {lengths}")
        mu = float(self.provenance["mu_pa_s"])
        k, g, c = (np.asarray(self.draws[p]) for p in ("k_tm", "g", "c_trab"))
        if not np.array_equal(c, k * g / mu):
            raise ValueError("c_trab draws must equal k_tm * g / mu exactly")
        eps = float(self.provenance["eps"])
        kz = float(self.provenance["kozeny_k"])
        if not np.array_equal(np.asarray(self.draws["d_p"]),
                              pore_diameter(k, eps, kz)):
            raise ValueError("d_p draws must follow the pore-diameter relation")

    @property
    def n_draws(self) -> int:
        return len(self.draws[PARAMETERS[0]])

    def median(self, parameter: str) -> float:
        return self.summary[parameter]["median"]

    def cv(self, parameter: str) -> float:
        """Coefficient of variation (sample sd / mean) of linear-scale draws."""
        values = np.asarray(self.draws[parameter], dtype=float)
        return float(np.std(values, ddof=1) / np.mean(values))

    def to_dict(self) -> dict:
        return {
            "draws": {p: [float(v) for v in self.draws[p]] for p in PARAMETERS},
            "summary": {p: dict(self.summary[p]) for p in PARAMETERS},
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PosteriorProfile":
        return cls(
            draws={p: np.asarray(d["draws"][p], dtype=float) for p in PARAMETERS},
            summary=d["summary"],
            provenance=d["provenance"],
        )


@dataclasses.dataclass(frozen=True)
class ReferencePopulation:
    """Per-parameter medians of a reference population, for normalization."""

    name: str
    medians: dict

    def __post_init__(self):
        for parameter in PARAMETERS:
            value = self.medians.get(parameter)
            if value is None:
                raise ValueError(f"reference median missing for {parameter!r}")
            check_positive(f"reference median {parameter}", float(value))

    def to_dict(self) -> dict:
        return {"name": self.name,
                "medians": {p: float(self.medians[p]) for p in PARAMETERS}}

    @classmethod
    def from_dict(cls, d: dict) -> "ReferencePopulation":
        return cls(name=d["name"], medians=d["medians"])


@dataclasses.dataclass(frozen=True)
class NormalizedProfile:
    """Patient medians as ratios to a reference population's medians."""

    ratios: dict
    reference: str

    def to_dict(self) -> dict:
        return {"ratios": {p: float(self.ratios[p]) for p in PARAMETERS},
                "reference": self.reference}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizedProfile":
        return cls(ratios=d["ratios"], reference=d["reference"])


def profile_patient(patient: PatientInput, stage1_model, stage2_model,
                    priors: PriorSet, config, rng: np.random.Generator,
                    ) -> PosteriorProfile:
    """Infer a full hydrodynamic posterior profile for one patient.

    Draws exactly ``config.n_draws`` accepted (q_ah, f_u, evp) triples
    for the patient's age group, predicts log10 K_TM per draw (Stage 1),
    feeds the frozen prediction forward to log10 G (Stage 2), and closes
    C_trab = K_TM * G / mu and D_p via the age-group porosity.
    """
    m1, m2 = _check_schema(stage1_model, stage2_model)
    group = age_group_of(patient.age_years)
    n = config.n_draws
    triples = sample_constrained(priors, group, n, rng)
    q, f, evp = triples[:, 0], triples[:, 1], triples[:, 2]

    iop = np.full(n, float(patient.iop))
    log10_ktm = m1.predict(stage1_features(iop, q, f, evp, np.full(n, int(group))))
    log10_g = m2.predict(stage2_features(
        log10_ktm, iop, q, f, evp, np.full(n, float(patient.age_years))))

    k_tm = 10.0 ** log10_ktm
    g = 10.0 ** log10_g
    eps = config.porosity.eps[group]
    kz = config.porosity.kozeny_k
    draws = {
        "k_tm": k_tm,
        "g": g,
        "c_trab": k_tm * g / config.mu_pa_s,
        "d_p": pore_diameter(k_tm, eps, kz),
        "q_ah": q,
        "f_u": f,
        "evp": evp,
    }
    provenance = make_provenance(
        config.config_hash(), config.seed,
        mu_pa_s=config.mu_pa_s, eps=eps, kozeny_k=kz, n_draws=n,
        age_years=float(patient.age_years), iop_pa=float(patient.iop),
        age_group=group.label,
    )
    return PosteriorProfile(draws=draws, summary=_summaries(draws),
                            provenance=provenance)


def normalize_profile(profile: PosteriorProfile,
                      reference: ReferencePopulation) -> NormalizedProfile:
    """Express the profile's medians relative to a reference population."""
    ratios = {}
    for parameter in PARAMETERS:
        denominator = float(reference.medians[parameter])
        check_positive(f"reference median {parameter}", denominator)
        ratios[parameter] = profile.median(parameter) / denominator
    return NormalizedProfile(ratios=ratios, reference=reference.name)


@dataclasses.dataclass(frozen=True)
class SensitivityScan:
    """Per-scenario posterior medians/CVs and percent changes vs baseline.

    ``table`` maps scenario name to {parameter: {median, cv,
    d_median_pct, d_cv_pct}}; deltas are percentages relative to the
    baseline scenario, which therefore reports zeros.
    """

    table: dict
    provenance: dict

    def to_dict(self) -> dict:
        return {"table": {s: {p: dict(v) for p, v in row.items()}
                          for s, row in self.table.items()},
                "provenance": dict(self.provenance)}

    @classmethod
    def from_dict(cls, d: dict) -> "SensitivityScan":
        return cls(table=d["table"], provenance=d["provenance"])


def sensitivity_scan(patient: PatientInput, stage1_model, stage2_model,
                     priors: PriorSet, config, rng: np.random.Generator,
                     ) -> SensitivityScan:
    """Profile the patient under perturbed priors and report the shifts.

    Four perturbations are compared against the baseline: all prior sds
    scaled by +/-50% (wide/narrow) and the inflow prior mean shifted by
    +/-30% (high_inflow/low_inflow).  Every scenario re-runs the full
    profiling with an identically seeded stream, so differences are due
    to the prior change alone (paired design).
    """
    root = int(rng.integers(2 ** 63))
    profiles = {}
    for name, (sd_factor, q_factor) in SCENARIOS.items():
        scenario_priors = priors
        if sd_factor != 1.0:
            scenario_priors = scenario_priors.scaled_sd(sd_factor)
        if q_factor != 1.0:
            scenario_priors = scenario_priors.shifted_q_ah_mean(q_factor)
        profiles[name] = profile_patient(
            patient, stage1_model, stage2_model, scenario_priors, config,
            np.random.default_rng(root))

    base = profiles["baseline"]
    table = {}
    for name, profile in profiles.items():
        row = {}
        for parameter in PARAMETERS:
            median = profile.median(parameter)
            cv = profile.cv(parameter)
            base_median = base.median(parameter)
            base_cv = base.cv(parameter)
            row[parameter] = {
                "median": median,
                "cv": cv,
                "d_median_pct": 100.0 * (median - base_median) / base_median,
                "d_cv_pct": 100.0 * (cv - base_cv) / base_cv,
            }
        table[name] = row
    provenance = dict(base.provenance)
    provenance["scenarios"] = {name: {"sd_factor": s, "q_ah_mean_factor": q}
                               for name, (s, q) in SCENARIOS.items()}
    return SensitivityScan(table=table, provenance=provenance)
