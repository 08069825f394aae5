"""End-to-end orchestration of the two-stage inverse framework.

``run_pipeline`` executes the full chain from one configuration:
generate the Stage-1 permeability dataset, fit the emulator bias line,
train Stage 1, generate the clinically anchored Stage-2 dataset with
the frozen Stage-1 model, train Stage 2, and summarize the synthetic
population as the normalization reference.  Every stage draws from its
own named substream of the root seed, so stages are independently
reproducible.

The module also provides the validation constructions used by the test
harness and CLI studies: physiology-controlled synthetic patients with
known facility, and the archetype threshold study that derives and
exercises the risk bands end to end.
"""

from __future__ import annotations

import dataclasses
import pathlib
import time

import numpy as np

from .artifacts import make_provenance, read_json, write_json
from .config import PipelineConfig
from .core import (AgeGroup, PatientInput, age_group_of, from_clinical,
                   substream, to_clinical)
from .datasets import (STAGE1_FEATURES, STAGE2_FEATURES, CalibrationFit,
                       fit_bias, generate_stage1, generate_stage2,
                       stage1_matrix, stage2_matrix)
from .gbt import FitReport, TreeEnsemble, r2_score, rmse, split_80_20, train
from .inference import (PARAMETERS, PosteriorProfile, ReferencePopulation,
                        profile_patient, sensitivity_scan)
from .physics import (MIN_PRESSURE_DROP_PA, fem_emulator_iop, goldmann_iop,
                      pore_diameter)
from .risk import RiskThresholds, classify, derive_thresholds, score_classification
from .sampling import PriorSet, sample_constrained
from .stats import TestResult, kruskal_wallis

__all__ = [
    "TrainedPipeline",
    "ThresholdStudy",
    "run_pipeline",
    "median_physiology",
    "synthetic_cohort",
    "archetype_threshold_study",
    "reference_from_stage2",
]

_PIPELINE_FILES = ("config.json", "calibration.json", "stage1_model.json",
                   "stage2_model.json", "reference.json")


@dataclasses.dataclass(frozen=True)
class TrainedPipeline:
    """Everything needed to profile patients: config, fits, and models."""

    config: PipelineConfig
    stage1: TreeEnsemble
    stage2: TreeEnsemble
    calibration: CalibrationFit
    stage1_report: FitReport
    stage2_report: FitReport
    reference: ReferencePopulation

    def profile(self, patient: PatientInput,
                rng: np.random.Generator) -> PosteriorProfile:
        return profile_patient(patient, self.stage1, self.stage2,
                               self.config.priors, self.config, rng)

    def sensitivity(self, patient: PatientInput,
                    rng: np.random.Generator):
        return sensitivity_scan(patient, self.stage1, self.stage2,
                                self.config.priors, self.config, rng)

    def save(self, directory) -> None:
        directory = pathlib.Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        cfg = self.config

        def prov(**extra):
            return make_provenance(cfg.config_hash(), cfg.seed, **extra)

        (directory / "config.json").write_text(cfg.to_json() + "\n",
                                               encoding="utf-8")
        write_json(directory / "calibration.json", "calibration",
                   {"fit": self.calibration.to_dict()}, prov(stage="calibration"))
        write_json(directory / "stage1_model.json", "model",
                   {"stage": 1, "ensemble": self.stage1.to_dict(),
                    "fit_report": self.stage1_report.to_dict()},
                   prov(stage="stage1-train"))
        write_json(directory / "stage2_model.json", "model",
                   {"stage": 2, "ensemble": self.stage2.to_dict(),
                    "fit_report": self.stage2_report.to_dict()},
                   prov(stage="stage2-train"))
        write_json(directory / "reference.json", "reference",
                   {"reference": self.reference.to_dict()},
                   prov(stage="reference"))

    @classmethod
    def load(cls, directory) -> "TrainedPipeline":
        directory = pathlib.Path(directory)
        missing = [f for f in _PIPELINE_FILES if not (directory / f).exists()]
        if missing:
            raise FileNotFoundError(
                f"{directory}: missing pipeline artifacts {missing}; "
                "run the train command (or TrainedPipeline.save) first")
        config = PipelineConfig.from_json_file(directory / "config.json")
        calibration = CalibrationFit.from_dict(
            read_json(directory / "calibration.json", "calibration")["fit"])
        stage1_doc = read_json(directory / "stage1_model.json", "model")
        stage2_doc = read_json(directory / "stage2_model.json", "model")
        reference = ReferencePopulation.from_dict(
            read_json(directory / "reference.json", "reference")["reference"])
        return cls(
            config=config,
            stage1=TreeEnsemble.from_dict(stage1_doc["ensemble"]),
            stage2=TreeEnsemble.from_dict(stage2_doc["ensemble"]),
            calibration=calibration,
            stage1_report=FitReport.from_dict(stage1_doc["fit_report"]),
            stage2_report=FitReport.from_dict(stage2_doc["fit_report"]),
            reference=reference,
        )


def _fit_stage(X: np.ndarray, y: np.ndarray, hp, seed: int, stage: str,
               feature_names) -> tuple:
    split_rng = substream(seed, f"{stage}-split")
    train_idx, test_idx = split_80_20(np.arange(X.shape[0]), split_rng)
    model = train(X[train_idx], y[train_idx], hp,
                  substream(seed, f"{stage}-train"), feature_names=feature_names)
    pred = model.predict(X[test_idx])
    report = FitReport(r2=r2_score(y[test_idx], pred),
                       rmse=rmse(y[test_idx], pred), split_seed=seed,
                       n_train=train_idx.size, n_test=test_idx.size)
    return model, report


def run_pipeline(config: PipelineConfig, log=None) -> TrainedPipeline:
    """Generate, calibrate, train both stages, and build the reference."""
    say = log if log is not None else (lambda message: None)
    seed = config.seed
    t0 = time.perf_counter()

    say(f"stage 1: generating {config.n_stage1} rows")
    frame1 = generate_stage1(
        config.n_stage1, config.priors, config.ktm_range, config.geometry_m,
        config.mu_pa_s, config.stage1_noise_mmhg,
        substream(seed, "stage1-data"), bias_line=config.bias_line)
    X1, y1 = stage1_matrix(frame1)
    say(f"stage 1: training on {X1.shape[0]} rows")
    stage1_model, report1 = _fit_stage(X1, y1, config.stage1_hp, seed,
                                       "stage1", STAGE1_FEATURES)
    say(f"stage 1: held-out R2 {report1.r2:.4f}, RMSE {report1.rmse:.4f}")

    say(f"calibration: fitting bias line from {config.n_calibration} pairs")
    calibration = fit_bias(
        config.n_calibration, config.priors, config.calibration_noise_mmhg,
        config.calibration_iop_bands_mmhg, substream(seed, "calibration"),
        bias_line=config.bias_line)
    say(f"calibration: intercept {calibration.ols.intercept_mmhg:.3f} mmHg, "
        f"slope {calibration.ols.slope:.4f}")

    say(f"stage 2: generating {config.n_stage2} rows")
    frame2 = generate_stage2(
        config.n_stage2, stage1_model, calibration, config.archetypes,
        config.priors, config.mu_pa_s, config.stage2_noise_mmhg,
        config.age_range, substream(seed, "stage2-data"))
    X2, y2 = stage2_matrix(frame2)
    say(f"stage 2: training on {X2.shape[0]} rows")
    stage2_model, report2 = _fit_stage(X2, y2, config.stage2_hp, seed,
                                       "stage2", STAGE2_FEATURES)
    say(f"stage 2: held-out R2 {report2.r2:.4f}, RMSE {report2.rmse:.4f}")

    reference = reference_from_stage2(frame2, config)
    say(f"pipeline complete in {time.perf_counter() - t0:.1f} s")
    return TrainedPipeline(config=config, stage1=stage1_model,
                           stage2=stage2_model, calibration=calibration,
                           stage1_report=report1, stage2_report=report2,
                           reference=reference)


def reference_from_stage2(frame2, config: PipelineConfig) -> ReferencePopulation:
    """Reference medians from the synthetic Stage-2 population."""
    k_tm = 10.0 ** frame2["predicted_log10_ktm"].to_numpy(dtype=float)
    g = 10.0 ** frame2["target_log10_g"].to_numpy(dtype=float)
    ages = frame2["age_years"].to_numpy(dtype=float)
    eps = np.array([config.porosity.eps[age_group_of(a)] for a in ages])
    draws = {
        "k_tm": k_tm,
        "g": g,
        "c_trab": k_tm * g / config.mu_pa_s,
        "d_p": pore_diameter(k_tm, eps, config.porosity.kozeny_k),
        "q_ah": frame2["q_ah_m3s"].to_numpy(dtype=float),
        "f_u": frame2["f_u_m3s"].to_numpy(dtype=float),
        "evp": frame2["evp_pa"].to_numpy(dtype=float),
    }
    medians = {p: float(np.median(draws[p])) for p in PARAMETERS}
    return ReferencePopulation(name="stage2-synthetic", medians=medians)


def median_physiology(priors: PriorSet, group: AgeGroup,
                      rng: np.random.Generator, n: int = 20000) -> tuple:
    """Central accepted physiology (q*, f*, evp*) for one age group.

    q* and evp* are medians of the constrained sample; f* is chosen so
    the net inflow q* - f* matches the median accepted net inflow,
    which is the quantity the pressure drop actually depends on.
    """
    triples = sample_constrained(priors, group, n, rng)
    q_star = float(np.median(triples[:, 0]))
    net_star = float(np.median(triples[:, 0] - triples[:, 1]))
    evp_star = float(np.median(triples[:, 2]))
    f_star = q_star - net_star
    if not 0.0 < f_star < q_star:
        raise ValueError("median physiology is not physically consistent")
    return q_star, f_star, evp_star


def _sample_mixture_facility(archetypes, n: int,
                             rng: np.random.Generator) -> np.ndarray:
    """n positive facility draws (clinical units) from the archetype mix."""
    weights = np.array([a.weight for a in archetypes], dtype=float)
    weights = weights / weights.sum()
    means = np.array([a.mean_facility for a in archetypes], dtype=float)
    sds = np.array([a.sd_facility for a in archetypes], dtype=float)
    out = np.empty(n, dtype=float)
    filled = 0
    while filled < n:
        m = max(n - filled, 64)
        arch = rng.choice(len(archetypes), size=m, p=weights)
        c = rng.normal(means[arch], sds[arch])
        c = c[c > 0.0]
        take = min(c.size, n - filled)
        out[filled:filled + take] = c[:take]
        filled += take
    return out


def synthetic_cohort(config: PipelineConfig, n: int,
                     rng: np.random.Generator,
                     facility_clinical=None) -> tuple:
    """n synthetic patients with known outflow facility.

    Each patient gets an age uniform on the configured range, the
    central accepted physiology of their age group, and a facility from
    the archetype mixture (or the supplied per-patient values).  The
    measured IOP is the noise-free emulator output for that state;
    states whose pressures sit within the minimum pressure drop of the
    venous pressure are resampled.  Returns (patients, facility) with
    facility in clinical units (uL/min/mmHg).
    """
    centers = {g: median_physiology(config.priors, g, rng) for g in AgeGroup}
    if facility_clinical is not None:
        facility_clinical = np.asarray(facility_clinical, dtype=float)
        if facility_clinical.shape != (n,):
            raise ValueError("facility_clinical must have shape (n,)")
        if np.any(facility_clinical <= 0.0):
            raise ValueError("facility_clinical must be positive")
    age_lo, age_hi = config.age_range
    patients, truth = [], []
    guard_budget = 1000 * n
    attempts = 0
    while len(patients) < n:
        if attempts >= guard_budget:
            raise RuntimeError("synthetic cohort construction exhausted "
                               f"({len(patients)}/{n} accepted)")
        attempts += 1
        age = float(rng.uniform(age_lo, age_hi))
        group = age_group_of(age)
        q, f, evp = centers[group]
        if facility_clinical is None:
            c_clin = float(_sample_mixture_facility(config.archetypes, 1, rng)[0])
        else:
            c_clin = float(facility_clinical[len(patients)])
        c_si = from_clinical(c_clin, "facility")
        iop_goldmann = goldmann_iop(q, f, c_si, evp)
        iop = fem_emulator_iop(q, f, c_si, evp, line=config.bias_line)
        if (iop_goldmann < evp + MIN_PRESSURE_DROP_PA
                or iop < evp + MIN_PRESSURE_DROP_PA):
            if facility_clinical is not None:
                raise ValueError(
                    f"facility {c_clin} gives a pressure inside the guard band")
            continue
        patients.append(PatientInput(age_years=age, iop=float(iop)))
        truth.append(c_clin)
    return patients, np.array(truth)


@dataclasses.dataclass(frozen=True)
class ThresholdStudy:
    """Derived risk bands plus the member populations that exercise them."""

    thresholds: RiskThresholds
    member_ktm: dict
    member_labels: dict
    kappa: float
    accuracy: float
    kruskal: TestResult

    def to_dict(self) -> dict:
        return {
            "thresholds": self.thresholds.to_dict(),
            "member_ktm": {k: [float(x) for x in v]
                           for k, v in self.member_ktm.items()},
            "member_labels": {k: [str(l) for l in v]
                              for k, v in self.member_labels.items()},
            "kappa": self.kappa,
            "accuracy": self.accuracy,
            "kruskal": {"statistic": self.kruskal.statistic,
                        "p_value": self.kruskal.p_value,
                        "method": self.kruskal.method},
        }


def _profiled_median_ktm(pipeline: TrainedPipeline, patients,
                         rng: np.random.Generator) -> np.ndarray:
    return np.array([pipeline.profile(p, rng).median("k_tm") for p in patients])


def archetype_threshold_study(pipeline: TrainedPipeline,
                              rng: np.random.Generator,
                              n_per_archetype: int = 40,
                              n_members: int = 20) -> ThresholdStudy:
    """Derive risk thresholds from archetype populations and verify them.

    The Normal-band floor comes from patients whose facility follows
    the highest-facility archetype, the Compromised ceiling from the
    lowest-facility archetype; each patient is profiled end to end and
    contributes their posterior-median permeability.  Fresh member
    patients are then constructed at the archetype centers (Borderline
    at the geometric midpoint of the two centers), profiled, and
    classified; with separated archetypes every member lands in its own
    band.
    """
    archetypes = sorted(pipeline.config.archetypes,
                        key=lambda a: a.mean_facility)
    low, high = archetypes[0], archetypes[-1]
    if low.mean_facility == high.mean_facility:
        raise ValueError("archetypes must have distinct mean facilities")
    config = pipeline.config

    def population_ktm(archetype) -> np.ndarray:
        facility = _sample_mixture_facility((archetype,), n_per_archetype, rng)
        patients, _ = synthetic_cohort(config, n_per_archetype, rng,
                                       facility_clinical=facility)
        return _profiled_median_ktm(pipeline, patients, rng)

    thresholds = derive_thresholds(population_ktm(high), population_ktm(low))

    centers = {
        "Normal": high.mean_facility,
        "Borderline": float(np.sqrt(high.mean_facility * low.mean_facility)),
        "Compromised": low.mean_facility,
    }
    member_ktm, member_labels = {}, {}
    for label, center in centers.items():
        patients, _ = synthetic_cohort(
            config, n_members, rng,
            facility_clinical=np.full(n_members, center))
        member_ktm[label] = _profiled_median_ktm(pipeline, patients, rng)
        member_labels[label] = [classify(k, thresholds)
                                for k in member_ktm[label]]

    truth = [label for label in centers for _ in range(n_members)]
    predicted = [l for label in centers for l in member_labels[label]]
    score = score_classification(truth, predicted)
    kw = kruskal_wallis([member_ktm[label] for label in centers])
    return ThresholdStudy(thresholds=thresholds, member_ktm=member_ktm,
                          member_labels=member_labels, kappa=score.kappa,
                          accuracy=score.accuracy, kruskal=kw)


def validate_against_measured(profiles: dict, measured: dict,
                              rng: np.random.Generator,
                              n_resamples: int = 1000) -> dict:
    """Agreement statistics between profiled and measured facility.

    ``profiles`` maps patient id to PosteriorProfile, ``measured`` maps
    id to measured facility in clinical units.  Estimates are posterior
    median C_trab converted to clinical units.  Returns Bland-Altman
    bias and limits, Spearman rho, ICC(2,1), and a Wilcoxon signed-rank
    test, each with a percentile bootstrap 95% CI where applicable.
    """
    from .stats import (bland_altman, bootstrap_ci, icc_2_1, spearman_rho,
                        wilcoxon_signed_rank)

    ids = sorted(set(profiles) & set(measured))
    if len(ids) < 3:
        raise ValueError("need at least 3 matched (profile, measured) pairs")
    est = np.array([to_clinical(profiles[i].median("c_trab"), "facility")
                    for i in ids])
    meas = np.array([float(measured[i]) for i in ids])

    ba = bland_altman(est, meas)
    rho = spearman_rho(est, meas)
    icc = icc_2_1(np.column_stack([est, meas]))
    wil = wilcoxon_signed_rank(est - meas)
    pairs = np.arange(len(ids))

    def _ci(stat_fn, fallback: float):
        # degenerate resamples (constant or too few distinct pairs) take
        # the full-sample value instead of aborting the whole bootstrap
        def safe(idx):
            try:
                return stat_fn(idx)
            except ValueError:
                return fallback

        return bootstrap_ci(pairs, safe, n_resamples=n_resamples, rng=rng)

    bias_ci = _ci(lambda idx: float(np.mean(est[idx] - meas[idx])), ba.bias)
    rho_ci = _ci(lambda idx: spearman_rho(est[idx], meas[idx]).statistic,
                 rho.statistic)
    icc_ci = _ci(lambda idx: icc_2_1(np.column_stack([est[idx], meas[idx]])),
                 icc)
    return {
        "n": len(ids),
        "ids": ids,
        "bias": ba.bias, "bias_ci": list(bias_ci),
        "loa_lower": ba.loa_lower, "loa_upper": ba.loa_upper,
        "sd_diff": ba.sd_diff,
        "spearman_rho": rho.statistic, "spearman_p": rho.p_value,
        "spearman_ci": list(rho_ci),
        "icc_2_1": icc, "icc_ci": list(icc_ci),
        "wilcoxon_statistic": wil.statistic, "wilcoxon_p": wil.p_value,
        "wilcoxon_method": wil.method,
    }
