"""Constrained physiological priors and Latin Hypercube designs."""

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocuflow.core import AgeGroup, substream
from ocuflow.sampling import (LhsDesign, LhsDim, PriorSet,
                              SamplingExhaustedError, constraint_mask,
                              default_priors, lhs_sample, sample_constrained)


def _degenerate(priors: PriorSet) -> PriorSet:
    return priors.scaled_sd(0.0)


class TestPriorTables:
    def test_inflow_mean_young(self):
        p = default_priors()
        assert p.q_ah[AgeGroup.YOUNG].mean == pytest.approx(4.83e-11)

    def test_evp_prior(self):
        p = default_priors()
        assert p.evp.mean == pytest.approx(1200.0)
        assert p.evp.sd == pytest.approx(200.0)

    def test_unconventional_mean_old(self):
        p = default_priors()
        assert p.f_u[AgeGroup.OLD].mean == pytest.approx(1.83e-11)

    def test_round_trip_dict(self):
        p = default_priors()
        assert PriorSet.from_dict(p.to_dict()) == p

    def test_scaled_sd(self):
        p = default_priors().scaled_sd(1.5)
        assert p.q_ah[AgeGroup.YOUNG].sd == pytest.approx(1.5 * 1.50e-11)
        assert p.q_ah[AgeGroup.YOUNG].mean == pytest.approx(4.83e-11)

    def test_shifted_inflow_mean(self):
        p = default_priors().shifted_q_ah_mean(1.3)
        assert p.q_ah[AgeGroup.OLD].mean == pytest.approx(1.3 * 4.00e-11)
        assert p.f_u[AgeGroup.OLD].mean == pytest.approx(1.83e-11)


class TestSampleConstrained:
    def test_shape_and_determinism(self):
        p = default_priors()
        a = sample_constrained(p, AgeGroup.MIDDLE, 256, substream(1, "s"))
        b = sample_constrained(p, AgeGroup.MIDDLE, 256, substream(1, "s"))
        assert a.shape == (256, 3)
        assert np.array_equal(a, b)

    def test_degenerate_priors_collapse_to_means(self):
        p = _degenerate(default_priors())
        draws = sample_constrained(p, AgeGroup.YOUNG, 16, substream(2, "d"))
        expected = np.array([4.83e-11, 2.53e-11, 1200.0])
        assert np.allclose(draws, expected[None, :], rtol=1e-12)

    @pytest.mark.parametrize("group", list(AgeGroup))
    def test_constraints_hold(self, group):
        p = default_priors()
        draws = sample_constrained(p, group, 4000, substream(3, group.label))
        q, f, evp = draws[:, 0], draws[:, 1], draws[:, 2]
        # independent re-check of every published constraint
        assert np.all(q > f)
        assert np.all(f > 0.0)
        assert np.all(evp > 0.0)
        cap = p.f_u_cap[group]
        assert np.all(f <= cap * q + 1e-25)
        assert np.all(constraint_mask(q, f, evp, cap))

    def test_constraint_mask_rejects_crossed_flows(self):
        mask = constraint_mask(np.array([2e-11]), np.array([3e-11]),
                               np.array([1200.0]), cap=0.6)
        assert not mask[0]

    def test_moments_near_priors(self):
        # truncation shifts means a little; they stay within a few percent
        p = default_priors()
        draws = sample_constrained(p, AgeGroup.OLD, 20_000, substream(4, "m"))
        assert np.mean(draws[:, 0]) == pytest.approx(4.00e-11, rel=0.10)
        assert np.mean(draws[:, 2]) == pytest.approx(1200.0, rel=0.02)

    def test_exhaustion_raises(self):
        p = default_priors()
        bad = dataclasses.replace(
            _degenerate(p),
            f_u={g: dataclasses.replace(p.f_u[g], mean=9e-11, sd=0.0)
                 for g in AgeGroup})
        with pytest.raises(SamplingExhaustedError):
            sample_constrained(bad, AgeGroup.YOUNG, 10, substream(5, "x"))

    def test_rejects_bad_n(self):
        with pytest.raises(ValueError):
            sample_constrained(default_priors(), AgeGroup.YOUNG, 0,
                               substream(6, "n"))


class TestLatinHypercube:
    def test_one_sample_per_quartile(self):
        design = LhsDesign(n=4, dims=[LhsDim("u", 0.0, 1.0)])
        x = np.sort(lhs_sample(design, substream(7, "lhs"))[:, 0])
        edges = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
        counts, _ = np.histogram(x, bins=edges)
        assert counts.tolist() == [1, 1, 1, 1]

    def test_single_sample_in_range(self):
        design = LhsDesign(n=1, dims=[LhsDim("u", 2.0, 3.0)])
        x = lhs_sample(design, substream(8, "lhs1"))[0, 0]
        assert 2.0 <= x < 3.0

    def test_log_stratification_one_per_decade(self):
        design = LhsDesign(n=4, dims=[LhsDim("k", 1e-17, 1e-13, scale="log10")])
        x = lhs_sample(design, substream(9, "lhs-log"))[:, 0]
        decades = np.sort(np.floor(np.log10(x)))
        assert decades.tolist() == [-17.0, -16.0, -15.0, -14.0]

    def test_invalid_dims_rejected(self):
        with pytest.raises(ValueError):
            LhsDim("u", 1.0, 1.0)
        with pytest.raises(ValueError):
            LhsDim("k", 0.0, 1.0, scale="log10")
        with pytest.raises(ValueError):
            LhsDesign(n=0, dims=[LhsDim("u", 0.0, 1.0)])

    @given(st.integers(min_value=2, max_value=40), st.integers(0, 2**31 - 1))
    @settings(max_examples=60)
    def test_stratification_property(self, n, seed):
        design = LhsDesign(n=n, dims=[LhsDim("u", -3.0, 5.0)])
        x = lhs_sample(design, np.random.default_rng(seed))[:, 0]
        strata = np.floor((x - (-3.0)) / 8.0 * n).astype(int)
        assert sorted(strata.tolist()) == list(range(n))
