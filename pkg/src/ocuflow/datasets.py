"""Physics-calibrated synthetic dataset generation.

Three producers feed the two-stage learner:

* :func:`generate_stage1` — emulator-labeled rows mapping hydrodynamic
  states to the permeability that produced them, with permeability drawn
  log-uniform by Latin Hypercube design, decoupled from age.
* :func:`fit_bias` — a small matched-pair calibration campaign that
  regresses (emulator - Goldmann) pressure differences on the Goldmann
  pressure by OLS and by Deming regression.
* :func:`generate_stage2` — a large clinically anchored population whose
  target is the effective geometry factor consistent, through the Darcy
  identity C = K*G/mu, with the frozen Stage-1 prediction attached to
  the same row.

Generation is chunked with per-chunk derived seeds: chunk c of a run is
an independent substream, so output is reproducible row for row and
chunks could be produced in parallel without changing the file.
Candidate rows failing a plausibility guard (any pressure drop within
``MIN_PRESSURE_DROP_PA`` of singular) are discarded and resampled.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import pandas as pd

from .core import (
    PA_PER_MMHG,
    AgeGroup,
    age_group_indices,
    from_clinical,
    group_table,
    to_clinical,
)
from .physics import (
    DEFAULT_BIAS_LINE,
    MIN_PRESSURE_DROP_PA,
    BiasLine,
    apply_bias,
    facility_from_permeability,
    fem_emulator_iop,
    goldmann_iop,
)
from .sampling import (
    LhsDesign,
    LhsDim,
    PriorSet,
    SamplingExhaustedError,
    lhs_sample,
    sample_constrained,
)
from .stats import deming_fit, ols_fit

__all__ = [
    "CalibrationFit",
    "STAGE1_COLUMNS",
    "STAGE2_COLUMNS",
    "STAGE1_FEATURES",
    "STAGE2_FEATURES",
    "generate_stage1",
    "fit_bias",
    "generate_stage2",
    "stage1_features",
    "stage2_features",
    "stage1_matrix",
    "stage2_matrix",
]

CHUNK_ROWS = 4096

STAGE1_COLUMNS = ["iop_pa", "q_ah_m3s", "f_u_m3s", "evp_pa", "age_group",
                  "target_log10_ktm"]
STAGE2_COLUMNS = ["predicted_log10_ktm", "iop_calibrated_pa", "q_ah_m3s",
                  "f_u_m3s", "evp_pa", "age_years", "target_log10_g"]

STAGE1_FEATURES = ["iop_pa", "q_ah_m3s", "f_u_m3s", "evp_pa",
                   "age_young", "age_middle", "age_old"]
STAGE2_FEATURES = ["predicted_log10_ktm", "iop_calibrated_pa", "q_ah_m3s",
                   "f_u_m3s", "evp_pa", "age_years"]


@dataclasses.dataclass(frozen=True)
class CalibrationFit:
    """Fitted emulator-vs-Goldmann bias lines and their fit diagnostics."""

    ols: BiasLine
    deming: BiasLine
    n: int
    p_value_slope: float
    r2_adj: float
    se_slope: float
    se_intercept: float

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("calibration needs n >= 3")

    def to_dict(self) -> dict:
        return {
            "ols": {"intercept_mmhg": self.ols.intercept_mmhg, "slope": self.ols.slope},
            "deming": {"intercept_mmhg": self.deming.intercept_mmhg,
                       "slope": self.deming.slope},
            "n": self.n,
            "p_value_slope": self.p_value_slope,
            "r2_adj": self.r2_adj,
            "se_slope": self.se_slope,
            "se_intercept": self.se_intercept,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationFit":
        return cls(
            ols=BiasLine(intercept_mmhg=d["ols"]["intercept_mmhg"],
                         slope=d["ols"]["slope"]),
            deming=BiasLine(intercept_mmhg=d["deming"]["intercept_mmhg"],
                            slope=d["deming"]["slope"]),
            n=int(d["n"]),
            p_value_slope=float(d["p_value_slope"]),
            r2_adj=float(d["r2_adj"]),
            se_slope=float(d["se_slope"]),
            se_intercept=float(d["se_intercept"]),
        )


def _chunk_rngs(rng: np.random.Generator, n_chunks: int) -> list[np.random.Generator]:
    """Derive one independent generator per chunk from a single draw."""
    root = [int(v) for v in rng.integers(0, 2**32, size=4)]
    return [
        np.random.default_rng(np.random.SeedSequence(entropy=root, spawn_key=(c,)))
        for c in range(n_chunks)
    ]


def _noise_sds(noise_mmhg, n: int, rng: np.random.Generator) -> np.ndarray:
    """Per-row noise SDs (mmHg): fixed scalar or uniform budget (lo, hi)."""
    if isinstance(noise_mmhg, (tuple, list)):
        lo, hi = float(noise_mmhg[0]), float(noise_mmhg[1])
        if not (0.0 <= lo <= hi and math.isfinite(hi)):
            raise ValueError("noise budget must satisfy 0 <= lo <= hi")
        if lo == hi:
            return np.full(n, lo)
        return rng.uniform(lo, hi, size=n)
    sd = float(noise_mmhg)
    if not (math.isfinite(sd) and sd >= 0.0):
        raise ValueError("noise sd must be finite and >= 0")
    return np.full(n, sd)


def _triples_by_group(priors: PriorSet, group_idx: np.ndarray,
                      rng: np.random.Generator) -> np.ndarray:
    """Constrained (q, f, evp) per row; groups drawn in fixed enum order."""
    out = np.empty((group_idx.size, 3), dtype=float)
    for group in AgeGroup:
        where = np.nonzero(group_idx == int(group))[0]
        if where.size:
            out[where] = sample_constrained(priors, group, where.size, rng)
    return out


def _accept_loop(n: int, rng: np.random.Generator, make_batch) -> list[np.ndarray]:
    """Accumulate exactly ``n`` accepted rows from batched candidates.

    ``make_batch(batch_n, rng)`` returns a list of equal-length column
    arrays already filtered to accepted candidates.
    """
    budget = max(1_000_000, 1000 * n)
    attempts = 0
    parts: list[list[np.ndarray]] = []
    filled = 0
    while filled < n:
        if attempts >= budget:
            raise SamplingExhaustedError(
                f"acceptance too low: {filled}/{n} accepted after {attempts} attempts")
        batch_n = min(CHUNK_ROWS, budget - attempts)
        attempts += batch_n
        cols = make_batch(batch_n, rng)
        take = min(cols[0].shape[0], n - filled)
        if take:
            parts.append([c[:take] for c in cols])
            filled += take
    return [np.concatenate([p[i] for p in parts]) for i in range(len(parts[0]))]


def generate_stage1(n: int, priors: PriorSet, ktm_range: tuple,
                    g_per_group: dict, mu: float, noise_mmhg,
                    rng: np.random.Generator,
                    bias_line: BiasLine = DEFAULT_BIAS_LINE) -> pd.DataFrame:
    """Emulator-labeled permeability inversion dataset (one row per run).

    Permeability is drawn log-uniform on ``ktm_range`` by Latin Hypercube
    within each candidate batch, independently of the age group; the
    hydrodynamic state comes from the constrained priors; the recorded
    IOP is the (optionally noisy) emulator output.  Rows whose Goldmann
    or emulated pressure sits within ``MIN_PRESSURE_DROP_PA`` of the
    venous pressure are discarded and resampled, which thins the
    high-permeability extreme of the design range (facility so large
    that the pressure drop is sub-guard cannot be observed).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    lo, hi = float(ktm_range[0]), float(ktm_range[1])
    design_dim = LhsDim("ktm", lo, hi, scale="log10")
    g_table = group_table(g_per_group)
    g_values = np.array([float(g_table[group]) for group in AgeGroup])

    def make_batch(batch_n: int, chunk_rng: np.random.Generator) -> list[np.ndarray]:
        ktm = lhs_sample(LhsDesign(n=batch_n, dims=(design_dim,)), chunk_rng)[:, 0]
        group_idx = chunk_rng.integers(0, len(AgeGroup), size=batch_n)
        triples = _triples_by_group(priors, group_idx, chunk_rng)
        q, f, evp = triples[:, 0], triples[:, 1], triples[:, 2]
        c_trab = facility_from_permeability(ktm, g_values[group_idx], mu)
        iop_goldmann = goldmann_iop(q, f, c_trab, evp)
        sds = _noise_sds(noise_mmhg, batch_n, chunk_rng)
        iop_emu = fem_emulator_iop(q, f, c_trab, evp, bias_line, sds, chunk_rng)
        keep = ((iop_goldmann >= evp + MIN_PRESSURE_DROP_PA)
                & (iop_emu >= evp + MIN_PRESSURE_DROP_PA))
        return [iop_emu[keep], q[keep], f[keep], evp[keep],
                group_idx[keep].astype(float), np.log10(ktm[keep])]

    cols = _generate_chunked(n, rng, make_batch)
    frame = pd.DataFrame({
        "iop_pa": cols[0],
        "q_ah_m3s": cols[1],
        "f_u_m3s": cols[2],
        "evp_pa": cols[3],
        "age_group": [AgeGroup(int(i)).label for i in cols[4]],
        "target_log10_ktm": cols[5],
    })
    return frame[STAGE1_COLUMNS]


def _generate_chunked(n: int, rng: np.random.Generator, make_batch) -> list[np.ndarray]:
    n_chunks = (n + CHUNK_ROWS - 1) // CHUNK_ROWS
    chunk_rngs = _chunk_rngs(rng, n_chunks)
    all_cols: list[list[np.ndarray]] = []
    for c in range(n_chunks):
        chunk_n = min(CHUNK_ROWS, n - c * CHUNK_ROWS)
        all_cols.append(_accept_loop(chunk_n, chunk_rngs[c], make_batch))
    return [np.concatenate([cols[i] for cols in all_cols])
            for i in range(len(all_cols[0]))]


def fit_bias(n_cal: int, priors: PriorSet, noise_sd_mmhg: float,
             iop_bands_mmhg: tuple, rng: np.random.Generator,
             bias_line: BiasLine = DEFAULT_BIAS_LINE) -> CalibrationFit:
    """Fit the emulator-vs-Goldmann bias line from matched paired runs.

    Target Goldmann pressures are stratified evenly over the configured
    bands (bracketing the operating range pins down both intercept and
    slope); physiology comes from the constrained priors with the
    facility back-solved to hit the target pressure.  The difference
    (emulator - Goldmann), in mmHg, is regressed on the Goldmann
    pressure by OLS and by Deming regression with error-variance ratio 1.
    """
    if n_cal < 3:
        raise ValueError("n_cal must be >= 3")
    bands = [(float(a), float(b)) for a, b in iop_bands_mmhg]
    if not bands:
        raise ValueError("need at least one calibration band")
    counts = [n_cal // len(bands) + (1 if i < n_cal % len(bands) else 0)
              for i in range(len(bands))]
    x_parts, y_parts = [], []
    for (lo, hi), count in zip(bands, counts):
        if count == 0:
            continue

        def make_batch(batch_n: int, band_rng: np.random.Generator) -> list[np.ndarray]:
            target_pa = band_rng.uniform(lo, hi, size=batch_n) * PA_PER_MMHG
            group_idx = band_rng.integers(0, len(AgeGroup), size=batch_n)
            triples = _triples_by_group(priors, group_idx, band_rng)
            q, f, evp = triples[:, 0], triples[:, 1], triples[:, 2]
            keep = target_pa - evp >= MIN_PRESSURE_DROP_PA
            sds = np.full(batch_n, float(noise_sd_mmhg))[keep]
            target_pa, q, f, evp = target_pa[keep], q[keep], f[keep], evp[keep]
            c_trab = (q - f) / (target_pa - evp)
            x_mmhg = to_clinical(goldmann_iop(q, f, c_trab, evp), "pressure")
            y_mmhg = (apply_bias(x_mmhg, bias_line)
                      + band_rng.standard_normal(x_mmhg.shape[0]) * sds)
            return [x_mmhg, y_mmhg]

        cols = _accept_loop(count, rng, make_batch)
        x_parts.append(cols[0])
        y_parts.append(cols[1])
    x = np.concatenate(x_parts)
    y = np.concatenate(y_parts)
    diff = y - x
    fit = ols_fit(x, diff)
    dem_intercept, dem_slope = deming_fit(x, diff, variance_ratio=1.0)
    return CalibrationFit(
        ols=BiasLine(intercept_mmhg=fit.intercept, slope=fit.slope),
        deming=BiasLine(intercept_mmhg=dem_intercept, slope=dem_slope),
        n=int(x.size),
        p_value_slope=fit.p_slope,
        r2_adj=fit.r2_adj,
        se_slope=fit.se_slope,
        se_intercept=fit.se_intercept,
    )


def generate_stage2(n: int, stage1_model, fit: CalibrationFit,
                    archetypes: tuple, priors: PriorSet, mu: float,
                    noise_mmhg, age_range: tuple,
                    rng: np.random.Generator) -> pd.DataFrame:
    """Clinically anchored geometry-factor dataset.

    Each row samples a continuous age, an outflow facility from the
    weighted archetype mixture (truncated positive), and a constrained
    hydrodynamic state; the measured pressure is the Goldmann value plus
    per-row Gaussian noise, and the calibrated pressure adds the fitted
    OLS bias line.  The frozen Stage-1 model predicts log10 K_TM from
    the calibrated state, and the target is the log10 geometry factor
    that makes the Darcy identity exact for that prediction:
    target_log10_g = log10(C_trab * mu) - predicted_log10_ktm.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    weights = np.array([a.weight for a in archetypes], dtype=float)
    weights = weights / weights.sum()
    means = np.array([a.mean_facility for a in archetypes], dtype=float)
    sds = np.array([a.sd_facility for a in archetypes], dtype=float)
    age_lo, age_hi = float(age_range[0]), float(age_range[1])

    def make_batch(batch_n: int, chunk_rng: np.random.Generator) -> list[np.ndarray]:
        age = chunk_rng.uniform(age_lo, age_hi, size=batch_n)
        group_idx = age_group_indices(age)
        arch = chunk_rng.choice(len(archetypes), size=batch_n, p=weights)
        c_clin = chunk_rng.normal(means[arch], sds[arch])
        triples = _triples_by_group(priors, group_idx, chunk_rng)
        q, f, evp = triples[:, 0], triples[:, 1], triples[:, 2]
        sds_row = _noise_sds(noise_mmhg, batch_n, chunk_rng)
        noise = chunk_rng.standard_normal(batch_n) * sds_row * PA_PER_MMHG
        keep = c_clin > 0.0
        c_si = from_clinical(np.where(keep, c_clin, 1.0), "facility")
        iop_goldmann = goldmann_iop(q, f, c_si, evp)
        iop_meas = iop_goldmann + noise
        iop_cal = apply_bias(to_clinical(iop_meas, "pressure"), fit.ols) * PA_PER_MMHG
        keep &= ((iop_goldmann >= evp + MIN_PRESSURE_DROP_PA)
                 & (iop_meas >= evp + MIN_PRESSURE_DROP_PA)
                 & (iop_cal >= evp + MIN_PRESSURE_DROP_PA))
        return [iop_cal[keep], q[keep], f[keep], evp[keep], age[keep],
                c_si[keep], group_idx[keep].astype(float)]

    cols = _generate_chunked(n, rng, make_batch)
    iop_cal, q, f, evp, age, c_si, group_idx = cols
    X1 = stage1_features(iop_cal, q, f, evp, group_idx.astype(int))
    predicted = stage1_model.predict(X1)
    target = np.log10(c_si * mu) - predicted
    frame = pd.DataFrame({
        "predicted_log10_ktm": predicted,
        "iop_calibrated_pa": iop_cal,
        "q_ah_m3s": q,
        "f_u_m3s": f,
        "evp_pa": evp,
        "age_years": age,
        "target_log10_g": target,
    })
    return frame[STAGE2_COLUMNS]


def stage1_features(iop_pa, q_ah, f_u, evp, group_idx) -> np.ndarray:
    """Stage-1 feature block: state columns plus one-hot age group."""
    iop_pa = np.atleast_1d(np.asarray(iop_pa, dtype=float))
    group_idx = np.atleast_1d(np.asarray(group_idx, dtype=int))
    onehot = np.zeros((iop_pa.shape[0], len(AgeGroup)))
    onehot[np.arange(iop_pa.shape[0]), group_idx] = 1.0
    return np.column_stack([
        iop_pa,
        np.atleast_1d(np.asarray(q_ah, dtype=float)),
        np.atleast_1d(np.asarray(f_u, dtype=float)),
        np.atleast_1d(np.asarray(evp, dtype=float)),
        onehot,
    ])


def stage2_features(predicted_log10_ktm, iop_calibrated_pa, q_ah, f_u, evp,
                    age_years) -> np.ndarray:
    return np.column_stack([
        np.atleast_1d(np.asarray(predicted_log10_ktm, dtype=float)),
        np.atleast_1d(np.asarray(iop_calibrated_pa, dtype=float)),
        np.atleast_1d(np.asarray(q_ah, dtype=float)),
        np.atleast_1d(np.asarray(f_u, dtype=float)),
        np.atleast_1d(np.asarray(evp, dtype=float)),
        np.atleast_1d(np.asarray(age_years, dtype=float)),
    ])


def stage1_matrix(frame: pd.DataFrame) -> tuple[np.ndarray, np.ndarray]:
    """(X, y) for Stage-1 training from a stage-1 dataset frame."""
    missing = [c for c in STAGE1_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"stage-1 frame is missing columns: {missing}")
    group_idx = np.array([int(AgeGroup.from_label(v)) for v in frame["age_group"]])
    X = stage1_features(frame["iop_pa"].to_numpy(), frame["q_ah_m3s"].to_numpy(),
                        frame["f_u_m3s"].to_numpy(), frame["evp_pa"].to_numpy(),
                        group_idx)
    return X, frame["target_log10_ktm"].to_numpy(dtype=float)


def stage2_matrix(frame: pd.DataFrame) -> tuple[np.ndarray, np.ndarray]:
    """(X, y) for Stage-2 training from a stage-2 dataset frame."""
    missing = [c for c in STAGE2_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"stage-2 frame is missing columns: {missing}")
    X = stage2_features(
        frame["predicted_log10_ktm"].to_numpy(),
        frame["iop_calibrated_pa"].to_numpy(),
        frame["q_ah_m3s"].to_numpy(),
        frame["f_u_m3s"].to_numpy(),
        frame["evp_pa"].to_numpy(),
        frame["age_years"].to_numpy(),
    )
    return X, frame["target_log10_g"].to_numpy(dtype=float)
