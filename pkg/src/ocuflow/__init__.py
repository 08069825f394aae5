"""Probabilistic inverse modeling of aqueous-humor outflow.

The package turns two routine clinical measurements, age and intraocular
pressure, into a posterior distribution over the eye's hydrodynamic
state: trabecular permeability, effective geometry factor, outflow
facility, pore diameter, aqueous inflow, unconventional outflow, and
venous pressure.  A physics emulator labels synthetic training data, two
gradient-boosted-tree stages invert it, and Monte Carlo propagation of
physiological priors supplies the uncertainty.
"""

__version__ = "0.1.0"

from .config import ArchetypeSpec, PipelineConfig
from .core import (AgeGroup, HydrodynamicState, PatientInput, age_group_of,
                   from_clinical, substream, to_clinical)
from .datasets import (CalibrationFit, fit_bias, generate_stage1,
                       generate_stage2)
from .gbt import FitReport, GbtHyperparams, GbtRegressor, TreeEnsemble, train
from .inference import (NormalizedProfile, PosteriorProfile,
                        ReferencePopulation, SensitivityScan,
                        normalize_profile, profile_patient, sensitivity_scan)
from .physics import BiasLine, PorosityTable, fem_emulator_iop, goldmann_iop, pore_diameter
from .pipeline import TrainedPipeline, run_pipeline
from .radar import render_radar_svg
from .risk import (CohortDescriptor, RiskLabel, RiskThresholds,
                   assign_ground_truth, classify, derive_thresholds,
                   score_classification)
from .sampling import PriorSet, default_priors, sample_constrained
from .cohorts import load_cohorts, save_cohorts, summary_stats, synth_population

__all__ = [
    "__version__",
    "AgeGroup", "ArchetypeSpec", "BiasLine", "CalibrationFit",
    "CohortDescriptor", "FitReport", "GbtHyperparams", "GbtRegressor",
    "HydrodynamicState", "NormalizedProfile", "PatientInput",
    "PipelineConfig", "PorosityTable", "PosteriorProfile", "PriorSet",
    "ReferencePopulation", "RiskLabel", "RiskThresholds", "SensitivityScan",
    "TrainedPipeline", "TreeEnsemble",
    "age_group_of", "assign_ground_truth", "classify", "default_priors",
    "derive_thresholds", "fem_emulator_iop", "fit_bias", "from_clinical",
    "generate_stage1", "generate_stage2", "goldmann_iop", "load_cohorts",
    "normalize_profile", "pore_diameter", "profile_patient", "render_radar_svg",
    "run_pipeline", "sample_constrained", "save_cohorts",
    "score_classification", "sensitivity_scan", "substream", "summary_stats",
    "synth_population", "to_clinical", "train",
]
