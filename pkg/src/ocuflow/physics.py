"""Closed-form forward models.

Four pieces, all pure functions over SI quantities (scalars or numpy
arrays):

* the Goldmann steady-state balance ``IOP = (Q_AH - F_u)/C_trab + EVP``;
* the Darcy facility decomposition ``C_trab = K_TM * G / mu`` and its
  inverse;
* a high-fidelity emulator: the Goldmann pressure plus a linear,
  pressure-dependent bias line (and optional Gaussian measurement
  noise), standing in for a full multiphysics simulation;
* the Kozeny-Carman microstructure map between permeability and an
  effective pore diameter.

Every inversion guards the singular limit with a minimum pressure drop
of ``MIN_PRESSURE_DROP_PA``.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .core import PA_PER_MMHG, AgeGroup, HydrodynamicState, to_clinical
from .validation import check_finite, check_positive

__all__ = [
    "MIN_PRESSURE_DROP_PA",
    "BiasLine",
    "DEFAULT_BIAS_LINE",
    "PorosityTable",
    "DEFAULT_POROSITY",
    "DEFAULT_GEOMETRY_M",
    "DEFAULT_VISCOSITY_PA_S",
    "goldmann_iop",
    "facility_from_permeability",
    "permeability_from_facility",
    "bias",
    "apply_bias",
    "invert_bias",
    "fem_emulator_iop",
    "pore_diameter",
    "permeability_from_pore_diameter",
    "stage1_analytic_oracle",
]

MIN_PRESSURE_DROP_PA = 10.0

DEFAULT_VISCOSITY_PA_S = 7.0e-4

# Single anchored area-over-length value for every age group; the split
# across groups is configurable but no published per-group value exists.
DEFAULT_GEOMETRY_M = {
    AgeGroup.YOUNG: 0.148,
    AgeGroup.MIDDLE: 0.148,
    AgeGroup.OLD: 0.148,
}


@dataclasses.dataclass(frozen=True)
class BiasLine:
    """Linear pressure-dependent bias, in mmHg: bias(x) = intercept + slope*x.

    |slope| < 1 keeps the emulator map x -> x + bias(x) strictly increasing.
    """

    intercept_mmhg: float
    slope: float

    def __post_init__(self):
        check_finite("intercept_mmhg", self.intercept_mmhg)
        check_finite("slope", self.slope)
        if abs(self.slope) >= 1.0:
            raise ValueError(f"|slope| must be < 1, got {self.slope!r}")

    @property
    def fixed_point_mmhg(self) -> float:
        """Pressure at which the bias vanishes (the emulator's fixed point)."""
        if self.slope == 0.0:
            raise ValueError("a flat bias line has no fixed point unless zero")
        return -self.intercept_mmhg / self.slope


DEFAULT_BIAS_LINE = BiasLine(intercept_mmhg=2.654, slope=-0.233)


@dataclasses.dataclass(frozen=True)
class PorosityTable:
    """Per-age-group porosity and the Kozeny constant of the pore model."""

    eps: dict[AgeGroup, float]
    kozeny_k: float = 150.0

    def __post_init__(self):
        for group in AgeGroup:
            if group not in self.eps:
                raise ValueError(f"porosity missing for {group.label}")
            e = self.eps[group]
            if not (0.0 < e < 1.0):
                raise ValueError(f"porosity for {group.label} must be in (0,1), got {e!r}")
        check_positive("kozeny_k", self.kozeny_k)


DEFAULT_POROSITY = PorosityTable(
    eps={AgeGroup.YOUNG: 0.25, AgeGroup.MIDDLE: 0.22, AgeGroup.OLD: 0.18},
    kozeny_k=150.0,
)


def _pos(name, x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if np.any(arr <= 0.0):
        raise ValueError(f"{name} must be > 0")
    return arr


def goldmann_iop(q_ah, f_u, c_trab, evp):
    """Steady-state IOP in Pa: (q_ah - f_u)/c_trab + evp.

    Requires c_trab > 0 and q_ah > f_u (net trabecular flow must be
    positive for a physically valid state).
    """
    q = np.asarray(q_ah, dtype=float)
    f = np.asarray(f_u, dtype=float)
    c = _pos("c_trab", c_trab)
    e = np.asarray(evp, dtype=float)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(f)) and np.all(np.isfinite(e))):
        raise ValueError("goldmann inputs must be finite")
    if np.any(q <= f):
        raise ValueError("q_ah must exceed f_u")
    out = (q - f) / c + e
    return float(out) if out.ndim == 0 else out


def facility_from_permeability(k_tm, g, mu):
    """Darcy composition: C_trab = K_TM * G / mu (all SI, all positive)."""
    k = _pos("k_tm", k_tm)
    g_ = _pos("g", g)
    m = _pos("mu", mu)
    out = k * g_ / m
    return float(out) if out.ndim == 0 else out


def permeability_from_facility(c_trab, g, mu):
    """Darcy inversion: K_TM = C_trab * mu / G (all SI, all positive)."""
    c = _pos("c_trab", c_trab)
    g_ = _pos("g", g)
    m = _pos("mu", mu)
    out = c * m / g_
    return float(out) if out.ndim == 0 else out


def bias(iop_goldmann_mmhg, line: BiasLine = DEFAULT_BIAS_LINE):
    """Bias in mmHg at a Goldmann pressure given in mmHg."""
    x = np.asarray(iop_goldmann_mmhg, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("iop_goldmann_mmhg must be finite")
    out = line.intercept_mmhg + line.slope * x
    return float(out) if out.ndim == 0 else out


def apply_bias(iop_goldmann_mmhg, line: BiasLine = DEFAULT_BIAS_LINE):
    """Lift a Goldmann pressure onto the high-fidelity scale (mmHg in/out)."""
    x = np.asarray(iop_goldmann_mmhg, dtype=float)
    out = x + bias(x, line)
    return float(out) if out.ndim == 0 else out


def invert_bias(iop_emulated_mmhg, line: BiasLine = DEFAULT_BIAS_LINE):
    """Inverse of :func:`apply_bias`: recover the Goldmann pressure (mmHg)."""
    y = np.asarray(iop_emulated_mmhg, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("iop_emulated_mmhg must be finite")
    out = (y - line.intercept_mmhg) / (1.0 + line.slope)
    return float(out) if out.ndim == 0 else out


def fem_emulator_iop(q_ah, f_u, c_trab, evp, line: BiasLine = DEFAULT_BIAS_LINE,
                     noise_sd_mmhg=0.0, rng: np.random.Generator | None = None):
    """High-fidelity emulated IOP in Pa.

    Computes the Goldmann pressure, applies the bias line, and adds
    Gaussian noise with the given SD in mmHg (scalar or per-element
    array; 0 disables noise and makes the map deterministic and strictly
    increasing in the Goldmann pressure).
    """
    iop_g = goldmann_iop(q_ah, f_u, c_trab, evp)
    iop_mmhg = apply_bias(to_clinical(iop_g, "pressure"), line)
    sd = np.asarray(noise_sd_mmhg, dtype=float)
    if np.any(sd < 0.0) or not np.all(np.isfinite(sd)):
        raise ValueError("noise_sd_mmhg must be finite and >= 0")
    if np.any(sd > 0.0):
        if rng is None:
            raise ValueError("rng is required when noise_sd_mmhg > 0")
        iop_mmhg = iop_mmhg + rng.standard_normal(np.shape(iop_mmhg)) * sd
    out = np.asarray(iop_mmhg, dtype=float) * PA_PER_MMHG
    return float(out) if out.ndim == 0 else out


def pore_diameter(k_tm, eps, kozeny_k):
    """Effective pore diameter in meters from the Kozeny-Carman relation.

    D_p = sqrt(k_tm * kozeny_k * (1 - eps)^2 / eps^3), with eps in (0,1).
    """
    k = _pos("k_tm", k_tm)
    kz = _pos("kozeny_k", kozeny_k)
    e = np.asarray(eps, dtype=float)
    if np.any(e <= 0.0) or np.any(e >= 1.0):
        raise ValueError("eps must be in (0, 1)")
    out = np.sqrt(k * kz * (1.0 - e) ** 2 / e**3)
    return float(out) if out.ndim == 0 else out


def permeability_from_pore_diameter(d_p, eps, kozeny_k):
    """Kozeny-Carman forward map: K_TM = D_p^2 * eps^3 / (k * (1 - eps)^2)."""
    d = _pos("d_p", d_p)
    kz = _pos("kozeny_k", kozeny_k)
    e = np.asarray(eps, dtype=float)
    if np.any(e <= 0.0) or np.any(e >= 1.0):
        raise ValueError("eps must be in (0, 1)")
    out = d**2 * e**3 / (kz * (1.0 - e) ** 2)
    return float(out) if out.ndim == 0 else out


def stage1_analytic_oracle(state: HydrodynamicState, g: float, mu: float) -> float:
    """Exact algebraic inverse for permeability at a noise-free state.

    K_TM = [(q_ah - f_u)/(iop - evp)] * mu / g.  This is the map the
    Stage 1 learner approximates; pressure drops below
    ``MIN_PRESSURE_DROP_PA`` are rejected as the singular limit.
    """
    check_positive("g", g)
    check_positive("mu", mu)
    if state.q_ah <= state.f_u:
        raise ValueError("q_ah must exceed f_u")
    dp = state.iop - state.evp
    if dp < MIN_PRESSURE_DROP_PA:
        raise ValueError(
            f"pressure drop {dp!r} Pa is below the {MIN_PRESSURE_DROP_PA} Pa guard"
        )
    c_trab = (state.q_ah - state.f_u) / dp
    return permeability_from_facility(c_trab, g, mu)
