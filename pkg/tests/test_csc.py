import warnings

import numpy as np
import pytest

from csc_ipca.csc import PoorPreFitWarning, att_series, estimate, impute, to_event_time
from csc_ipca.ipca import FitConfig, IpcaParams, objective
from csc_ipca.panel import PanelData
from csc_ipca.simulation import DgpConfig, simulate_panel

NOISELESS = DgpConfig(noise_sd=0.0, effect_noise_sd=0.0, beta_range=(0, 0), fe_range=(0, 0),
                      effect_scale=0.0, seed=3)


class TestAttSeries:
    def test_equal_inputs(self):
        y = np.arange(6.0).reshape(2, 3)
        att, eff = att_series(y, y)
        assert np.all(att == 0) and np.all(eff == 0)

    def test_two_units(self):
        y0 = np.zeros((2, 2))
        att, _ = att_series(np.array([[1.0, 3.0], [3.0, 5.0]]), y0)
        np.testing.assert_array_equal(att, [2.0, 4.0])

    def test_staggered_alignment(self):
        # unit a treated at t=5 (index 4), unit b at t=7 (index 6), T=10
        T = 10
        y1 = np.zeros((2, T))
        y1[0, 4:] = np.arange(1, 7)        # horizons 0..5 -> 1..6
        y1[1, 6:] = np.arange(3, 7)        # horizons 0..3 -> 3..6
        att, eff = att_series(y1, np.zeros((2, T)), first_treated=[4, 6])
        assert np.sum(np.isfinite(eff[0])) == 6 and np.sum(np.isfinite(eff[1])) == 4
        np.testing.assert_array_equal(att, [2, 3, 4, 5, 5, 6])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            att_series(np.zeros((2, 3)), np.zeros((2, 4)))

    def test_att_is_mean_of_effects(self):
        rng = np.random.default_rng(0)
        att, eff = att_series(rng.standard_normal((5, 4)), rng.standard_normal((5, 4)))
        np.testing.assert_array_equal(att, eff.sum(axis=0) / 5)


def test_to_event_time_pads():
    out = to_event_time(np.arange(8.0).reshape(2, 4), [1, 3])
    np.testing.assert_array_equal(out[0], [1, 2, 3])
    assert out[1, 0] == 7 and np.all(np.isnan(out[1, 1:]))


class TestImpute:
    def test_zero_gamma(self):
        X = np.ones((2, 3, 4))
        assert np.all(impute(np.zeros((4, 2)), np.ones((2, 3)), X) == 0)

    def test_scalar_hand_computation(self):
        X = np.array([[[1.0, 2.0], [0.5, -1.0]]])
        g = np.array([[2.0], [1.0]])
        f = np.array([[3.0, -2.0]])
        # (1*2 + 2*1)*3 = 12 ; (0.5*2 - 1)*(-2) = 0
        np.testing.assert_allclose(impute(g, f, X), [[12.0, 0.0]])

    def test_matches_objective_structural_part(self):
        rng = np.random.default_rng(21)
        X = rng.standard_normal((3, 5, 4))
        g = rng.standard_normal((4, 2))
        f = rng.standard_normal((2, 5))
        Y = rng.standard_normal((3, 5))
        r = Y - impute(g, f, X)
        assert objective(IpcaParams(g, f), Y, X) == pytest.approx(np.sum(r ** 2), rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            impute(np.zeros((3, 1)), np.zeros((1, 4)), np.zeros((2, 4, 2)))


class TestEstimate:
    def test_noiseless_zero_effect(self):
        fit = estimate(simulate_panel(NOISELESS).panel, FitConfig(k=3))
        np.testing.assert_allclose(fit.att, 0.0, atol=1e-6)

    def test_tracks_true_path(self):
        errs, corr = [], []
        for s in range(5):
            sim = simulate_panel(DgpConfig(seed=s))
            fit = estimate(sim.panel, FitConfig(k=3), warn=False)
            errs.append(np.mean(np.abs(fit.att - sim.true_att)))
            corr.append(np.corrcoef(fit.att, sim.true_att)[0, 1])
            assert fit.att.shape == (10,) and fit.y0_hat.shape == (5, 10)
        assert np.mean(corr) > 0.85
        assert np.mean(errs) < 1.5

    def test_placebo_centered(self):
        from csc_ipca.simulation import rep_rng
        cfg = DgpConfig(effect_scale=0.0, effect_noise_sd=0.0)
        vals = np.array([np.mean(estimate(simulate_panel(cfg, rep_rng(33, s)).panel,
                                          FitConfig(k=3), warn=False).att) for s in range(30)])
        assert abs(vals.mean()) < 2 * vals.std(ddof=1) / np.sqrt(vals.size)

    def test_att_is_effect_mean(self):
        fit = estimate(simulate_panel(DgpConfig(seed=1)).panel, FitConfig(k=3), warn=False)
        np.testing.assert_array_equal(fit.att, fit.effects.sum(axis=0) / fit.effects.shape[0])

    def test_step2_optimality(self):
        sim = simulate_panel(DgpConfig(seed=2))
        fit = estimate(sim.panel, FitConfig(k=3), warn=False)
        Yt, Xt = sim.panel.Y[:5, :20], sim.panel.X[:5, :20]
        F = fit.params_ctrl.factors[:, :20]
        base = np.sum((Yt - impute(fit.gamma_treat, F, Xt)) ** 2)
        rng = np.random.default_rng(0)
        for _ in range(1000):
            d = rng.standard_normal(fit.gamma_treat.shape)
            d *= 0.01 / np.linalg.norm(d)
            assert np.sum((Yt - impute(fit.gamma_treat + d, F, Xt)) ** 2) >= base

    def test_rotation_invariance(self):
        sim = simulate_panel(DgpConfig(seed=4))
        fit = estimate(sim.panel, FitConfig(k=3), warn=False)
        raw = impute(fit.gamma_treat, fit.params_ctrl.factors, sim.panel.X[:5])[:, 20:]
        np.testing.assert_allclose(fit.y0_hat, raw, atol=1e-9)

    def test_normalized_pair_constraints(self):
        fit = estimate(simulate_panel(DgpConfig(seed=5)).panel, FitConfig(k=3), warn=False)
        G, F = fit.gamma_treat_norm, fit.factors_norm
        np.testing.assert_allclose(G.T @ G, np.eye(3), atol=1e-8)
        S = F @ F.T / F.shape[1]
        assert np.max(np.abs(S - np.diag(np.diag(S)))) <= 1e-8 * S.max()

    def test_deterministic(self):
        p = simulate_panel(DgpConfig(seed=6)).panel
        a = estimate(p, FitConfig(k=3), warn=False)
        b = estimate(p, FitConfig(k=3), warn=False)
        assert a.att.tobytes() == b.att.tobytes()

    def test_poor_fit_warning(self):
        sim = simulate_panel(DgpConfig(seed=7, n_treat=2, t_pre=12))
        with pytest.warns(PoorPreFitWarning):
            fit = estimate(sim.panel, FitConfig(k=1), warn_rmse_sd=1e-3)
        assert fit.poor_pre_fit

    def test_treated_post_outcomes_unused(self):
        p = simulate_panel(DgpConfig(seed=8)).panel
        Y = np.array(p.Y)
        Y[:5, 20:] += 100.0
        a = estimate(p, FitConfig(k=3), warn=False)
        b = estimate(p.replace(Y=Y), FitConfig(k=3), warn=False)
        np.testing.assert_allclose(b.y0_hat, a.y0_hat, atol=1e-12)
        np.testing.assert_allclose(b.att - a.att, 100.0, atol=1e-9)

    def test_staggered(self):
        sim = simulate_panel(DgpConfig(seed=9, noise_sd=0.0, effect_noise_sd=0.0,
                                       beta_range=(0, 0), fe_range=(0, 0)))
        p = sim.panel
        D = np.array(p.D)
        D[:2, 20:23] = 0                         # two units start three periods later
        Y = np.array(p.Y)
        Y[:2, 20:] = sim.latent["structural"][:2, 20:]
        Y[:2, 23:] += np.arange(1, 8)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = estimate(p.replace(D=D, Y=Y), FitConfig(k=3))
        assert fit.att.shape == (10,)
        np.testing.assert_allclose(fit.att, np.arange(1, 11), atol=1e-5)
        assert np.isnan(fit.effects[0, 7:]).all() and np.isfinite(fit.effects[2]).all()

    def test_serializable(self):
        import json
        fit = estimate(simulate_panel(DgpConfig(seed=10)).panel, FitConfig(k=3), warn=False)
        d = json.loads(json.dumps(fit.to_dict()))
        assert len(d["att"]) == 10 and d["method"] == "ipca"
