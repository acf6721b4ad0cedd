import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csc_ipca.inference import (NullSpec, confidence_interval, conformal_pvalue,
                                permutation_pvalue, test_statistic)
from csc_ipca.ipca import FitConfig
from csc_ipca.simulation import DgpConfig, simulate_panel

CFG = FitConfig(k=3)


def constant_effect_panel(effect=3.0, seed=0):
    """Zero-noise panel whose treated post-period outcomes carry a constant effect."""
    sim = simulate_panel(DgpConfig(noise_sd=0.0, effect_noise_sd=0.0, effect_scale=0.0,
                                   beta_range=(0, 0), fe_range=(0, 0), seed=seed))
    p = sim.panel
    Y = np.array(p.Y)
    Y[p.D == 1] += effect
    return p.replace(Y=Y)


class TestStatistic:
    def test_zero(self):
        assert test_statistic(np.zeros(5)) == 0.0

    def test_arithmetic(self):
        assert test_statistic([1.0, -1.0, 2.0, -2.0]) == pytest.approx(3.0)

    def test_q2_direct_formula(self):
        u = np.random.default_rng(41).standard_normal(7)
        assert test_statistic(u, q=2) == pytest.approx(1.8278683196246726, rel=1e-12)

    def test_units_averaged_first(self):
        u = np.array([[1.0, 3.0], [-1.0, 1.0]])
        assert test_statistic(u) == pytest.approx(2 / math.sqrt(2))

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            test_statistic([])

    def test_q_below_one(self):
        with pytest.raises(ValueError):
            test_statistic([1.0], q=0.5)


def test_hand_enumerated_shifts():
    p, s, perm = permutation_pvalue([0.0, 0.0, 0.0, 10.0], 1)
    assert perm.size == 4
    assert s == perm.max() == 10.0
    assert p == 0.25


def test_post_window_must_leave_pre_periods():
    with pytest.raises(ValueError):
        permutation_pvalue(np.ones(4), 4)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), T=st.integers(3, 30), frac=st.floats(0.1, 0.9),
       c=st.floats(1.0, 10.0))
def test_pvalue_bounds_and_monotone_scaling(seed, T, frac, c):
    u = np.random.default_rng(seed).standard_normal(T)
    t_post = min(T - 1, max(1, int(frac * T)))
    p, _, perm = permutation_pvalue(u, t_post)
    assert perm.size == T
    assert 1 / T <= p <= 1
    v = u.copy()
    v[T - t_post:] *= c
    assert permutation_pvalue(v, t_post)[0] <= p + 1e-12


class TestConformal:
    def test_true_null_not_rejected_noiseless(self):
        p = constant_effect_panel()
        res = conformal_pvalue(p, NullSpec.constant(3.0, 10), CFG)
        assert res.n_permutations == 30
        assert res.p_value == 1.0          # all residuals vanish
        np.testing.assert_allclose(res.residuals, 0, atol=1e-6)

    def test_false_null_rejected(self):
        p = constant_effect_panel()
        res = conformal_pvalue(p, NullSpec.constant(0.0, 10), CFG)
        assert res.p_value == pytest.approx(1 / 30)

    def test_wrong_length(self):
        with pytest.raises(ValueError, match="T_post"):
            conformal_pvalue(constant_effect_panel(), NullSpec.constant(0.0, 3), CFG)

    def test_staggered_rejected(self):
        p = simulate_panel(DgpConfig(seed=0)).panel
        D = np.array(p.D)
        D[0, 20:22] = 0
        with pytest.raises(ValueError, match="block"):
            conformal_pvalue(p.replace(D=D), NullSpec.constant(0.0, 10), CFG)

    def test_nullspec_validation(self):
        with pytest.raises(ValueError):
            NullSpec([np.nan])


class TestInterval:
    def test_noiseless_collapses_to_truth(self):
        p = constant_effect_panel()
        grid = np.linspace(0.0, 6.0, 61)
        res = confidence_interval(p, CFG, grid=grid, level=0.95)
        step = grid[1] - grid[0]
        assert np.all(res.ci_lower >= 3.0 - step - 1e-9)
        assert np.all(res.ci_upper <= 3.0 + step + 1e-9)
        assert not res.degenerate.any()
        assert np.all(res.ci_lower <= res.ci_upper)

    def test_grid_missing_truth_is_degenerate(self):
        p = constant_effect_panel()
        res = confidence_interval(p, CFG, grid=np.linspace(50.0, 60.0, 5), level=0.95)
        assert res.degenerate.all()
        assert np.all(res.ci_lower == res.ci_upper)

    def test_unordered_grid(self):
        with pytest.raises(ValueError, match="ordered"):
            confidence_interval(constant_effect_panel(), CFG, grid=[2.0, 1.0, 3.0])

    def test_default_grid_covers_estimate(self):
        sim = simulate_panel(DgpConfig(seed=12))
        res = confidence_interval(sim.panel, CFG, n_grid=11)
        assert res.grid.shape == (10, 11)
        assert np.all(res.ci_lower <= res.att) and np.all(res.att <= res.ci_upper)

    def test_level_bounds(self):
        with pytest.raises(ValueError):
            confidence_interval(constant_effect_panel(), CFG, level=1.0)
