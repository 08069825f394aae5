"""Shared fixtures.

The trained pipelines are expensive (the default configuration takes a
few minutes), so session-scoped fixtures build each one once and cache
the artifacts on disk keyed by configuration hash.  Every artifact is
byte-deterministic, so a cache hit is exactly equivalent to a fresh
run; delete the cache directory to force one.
"""

from __future__ import annotations

import pathlib
import shutil
import sys
import tempfile

import pytest

from ocuflow.config import PipelineConfig
from ocuflow.pipeline import TrainedPipeline, run_pipeline


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Replay the acceptance-gate PASS/FAIL lines after the test report."""
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None) if module else None
    if results:
        terminalreporter.ensure_newline()
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(results):
            terminalreporter.write_line(line)

CACHE_ROOT = pathlib.Path(tempfile.gettempdir()) / "ocuflow_test_cache"


def small_config_dict() -> dict:
    """Scaled-down configuration for fast CLI and determinism tests."""
    d = PipelineConfig().to_dict()
    d["n_stage1"] = 600
    d["n_calibration"] = 150
    d["n_stage2"] = 2500
    d["n_draws"] = 200
    d["stage1_hp"] = {**d["stage1_hp"], "n_estimators": 60, "max_depth": 6}
    d["stage2_hp"] = {**d["stage2_hp"], "n_estimators": 80}
    return d


def _cached_pipeline(config: PipelineConfig) -> TrainedPipeline:
    cache = CACHE_ROOT / config.config_hash()
    if cache.is_dir():
        try:
            pipeline = TrainedPipeline.load(cache)
            if pipeline.config.config_hash() == config.config_hash():
                return pipeline
        except (ValueError, KeyError, FileNotFoundError):
            pass
        shutil.rmtree(cache)
    pipeline = run_pipeline(config)
    pipeline.save(cache)
    return pipeline


@pytest.fixture(scope="session")
def default_pipeline() -> TrainedPipeline:
    """Pipeline trained at the shipped defaults (seed 123)."""
    return _cached_pipeline(PipelineConfig())


@pytest.fixture(scope="session")
def small_pipeline() -> TrainedPipeline:
    """Pipeline trained at the scaled-down configuration."""
    return _cached_pipeline(PipelineConfig.from_dict(small_config_dict()))


@pytest.fixture(scope="session")
def small_config() -> PipelineConfig:
    return PipelineConfig.from_dict(small_config_dict())
