"""Age-stratified physiological priors, constrained rejection sampling,
and Latin Hypercube designs, all deterministically seeded.

The priors are Normal distributions for aqueous inflow (q_ah),
uveoscleral outflow (f_u) and episcleral venous pressure (evp), with
plausibility constraints enforced by rejection rather than clamping so
the accepted distribution keeps its shape:

    q_ah > f_u > 0,    evp > 0,    f_u <= cap(group) * q_ah
"""

from __future__ import annotations

import dataclasses
from collections.abc import Sequence

import numpy as np

from .core import AgeGroup
from .validation import check_finite, check_fraction, check_positive

__all__ = [
    "Normal",
    "PriorSet",
    "default_priors",
    "SamplingExhaustedError",
    "sample_constrained",
    "LhsDim",
    "LhsDesign",
    "lhs_sample",
]

_BATCH = 8192


class SamplingExhaustedError(RuntimeError):
    """Raised when the rejection sampler's attempt budget runs out."""


@dataclasses.dataclass(frozen=True)
class Normal:
    mean: float
    sd: float

    def __post_init__(self):
        check_finite("mean", self.mean)
        check_finite("sd", self.sd)
        if self.sd < 0.0:
            raise ValueError(f"sd must be >= 0, got {self.sd!r}")

    def scaled_sd(self, factor: float) -> "Normal":
        return Normal(self.mean, self.sd * factor)

    def shifted_mean(self, factor: float) -> "Normal":
        return Normal(self.mean * factor, self.sd)


@dataclasses.dataclass(frozen=True)
class PriorSet:
    """Per-group Normals for q_ah and f_u, one global Normal for evp (SI),
    and the per-group cap on the uveoscleral fraction f_u / q_ah."""

    q_ah: dict[AgeGroup, Normal]
    f_u: dict[AgeGroup, Normal]
    evp: Normal
    f_u_cap: dict[AgeGroup, float]

    def __post_init__(self):
        for table, name in ((self.q_ah, "q_ah"), (self.f_u, "f_u")):
            for group in AgeGroup:
                if group not in table:
                    raise ValueError(f"{name} prior missing for {group.label}")
                check_positive(f"{name}[{group.label}].mean", table[group].mean)
        for group in AgeGroup:
            check_fraction(f"f_u_cap[{group.label}]", self.f_u_cap.get(group, -1.0))

    def scaled_sd(self, factor: float) -> "PriorSet":
        """All prior SDs multiplied by ``factor`` (sensitivity scenarios)."""
        return PriorSet(
            q_ah={g: p.scaled_sd(factor) for g, p in self.q_ah.items()},
            f_u={g: p.scaled_sd(factor) for g, p in self.f_u.items()},
            evp=self.evp.scaled_sd(factor),
            f_u_cap=dict(self.f_u_cap),
        )

    def shifted_q_ah_mean(self, factor: float) -> "PriorSet":
        """Only the inflow prior means multiplied by ``factor``."""
        return PriorSet(
            q_ah={g: p.shifted_mean(factor) for g, p in self.q_ah.items()},
            f_u=dict(self.f_u),
            evp=self.evp,
            f_u_cap=dict(self.f_u_cap),
        )

    def to_dict(self) -> dict:
        return {
            "q_ah": {g.label: [self.q_ah[g].mean, self.q_ah[g].sd] for g in AgeGroup},
            "f_u": {g.label: [self.f_u[g].mean, self.f_u[g].sd] for g in AgeGroup},
            "evp": [self.evp.mean, self.evp.sd],
            "f_u_cap": {g.label: self.f_u_cap[g] for g in AgeGroup},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSet":
        return cls(
            q_ah={AgeGroup.from_label(k): Normal(*v) for k, v in d["q_ah"].items()},
            f_u={AgeGroup.from_label(k): Normal(*v) for k, v in d["f_u"].items()},
            evp=Normal(*d["evp"]),
            f_u_cap={AgeGroup.from_label(k): v for k, v in d["f_u_cap"].items()},
        )


def default_priors() -> PriorSet:
    """Default age-stratified priors (SI units: m^3/s and Pa)."""
    return PriorSet(
        q_ah={
            AgeGroup.YOUNG: Normal(4.83e-11, 1.50e-11),
            AgeGroup.MIDDLE: Normal(4.33e-11, 1.33e-11),
            AgeGroup.OLD: Normal(4.00e-11, 1.17e-11),
        },
        f_u={
            AgeGroup.YOUNG: Normal(2.53e-11, 1.35e-11),
            AgeGroup.MIDDLE: Normal(2.17e-11, 1.33e-11),
            AgeGroup.OLD: Normal(1.83e-11, 1.35e-11),
        },
        evp=Normal(1200.0, 200.0),
        f_u_cap={AgeGroup.YOUNG: 0.60, AgeGroup.MIDDLE: 0.55, AgeGroup.OLD: 0.50},
    )


def constraint_mask(q: np.ndarray, f: np.ndarray, evp: np.ndarray, cap: float) -> np.ndarray:
    """Boolean plausibility mask; shared by the sampler and its re-checks."""
    return (q > 0.0) & (f > 0.0) & (q > f) & (evp > 0.0) & (f <= cap * q)


def sample_constrained(priors: PriorSet, group: AgeGroup, n: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Exactly ``n`` accepted (q_ah, f_u, evp) triples as an (n, 3) array.

    Draws i.i.d. Normal candidates in fixed-size batches and keeps those
    passing every constraint, so the accepted stream is a deterministic
    function of the generator state.  Raises
    :class:`SamplingExhaustedError` once the attempt budget
    ``max(1e6, 1000*n)`` is spent (acceptance rate below ~1e-3).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    pq, pf, pe = priors.q_ah[group], priors.f_u[group], priors.evp
    cap = priors.f_u_cap[group]
    out = np.empty((n, 3), dtype=float)
    filled = 0
    attempts = 0
    budget = max(1_000_000, 1000 * n)
    while filled < n:
        if attempts >= budget:
            raise SamplingExhaustedError(
                f"acceptance too low for {group.label}: {filled}/{n} accepted "
                f"after {attempts} attempts"
            )
        m = min(_BATCH, budget - attempts)
        q = rng.normal(pq.mean, pq.sd, size=m)
        f = rng.normal(pf.mean, pf.sd, size=m)
        e = rng.normal(pe.mean, pe.sd, size=m)
        attempts += m
        keep = constraint_mask(q, f, e, cap)
        k = int(keep.sum())
        take = min(k, n - filled)
        if take:
            out[filled:filled + take, 0] = q[keep][:take]
            out[filled:filled + take, 1] = f[keep][:take]
            out[filled:filled + take, 2] = e[keep][:take]
            filled += take
    return out


@dataclasses.dataclass(frozen=True)
class LhsDim:
    name: str
    lower: float
    upper: float
    scale: str = "linear"  # "linear" | "log10"

    def __post_init__(self):
        check_finite(f"{self.name}.lower", self.lower)
        check_finite(f"{self.name}.upper", self.upper)
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower must be < upper")
        if self.scale not in ("linear", "log10"):
            raise ValueError(f"{self.name}: scale must be 'linear' or 'log10'")
        if self.scale == "log10" and self.lower <= 0.0:
            raise ValueError(f"{self.name}: log10 scale needs positive bounds")


@dataclasses.dataclass(frozen=True)
class LhsDesign:
    n: int
    dims: Sequence[LhsDim]

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not self.dims:
            raise ValueError("design needs at least one dimension")


def lhs_sample(design: LhsDesign, rng: np.random.Generator) -> np.ndarray:
    """Latin Hypercube draw: an (n, len(dims)) matrix with exactly one
    sample in each of the n equal-probability strata per dimension.
    Dimensions with ``scale="log10"`` stratify in log space.
    """
    n = design.n
    cols = []
    for dim in design.dims:
        u = (np.arange(n) + rng.uniform(size=n)) / n
        u = u[rng.permutation(n)]
        if dim.scale == "log10":
            lo, hi = np.log10(dim.lower), np.log10(dim.upper)
            cols.append(10.0 ** (lo + u * (hi - lo)))
        else:
            cols.append(dim.lower + u * (dim.upper - dim.lower))
    return np.column_stack(cols)
