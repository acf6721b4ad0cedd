import numpy as np
import pytest

from csc_ipca.ipca import FitConfig
from csc_ipca.simulation import DgpConfig, simulate_panel
from csc_ipca.tuning import TuneMethod, select_k, tune_bootstrap, tune_loo

# true K = 2, outcome is exactly X Gamma F
NOISELESS = DgpConfig(n_treat=5, n_ctrl=30, t_pre=10, t_post=5, l=6, k=2, noise_sd=0.0,
                      beta_range=(0, 0), fe_range=(0, 0), effect_scale=0.0,
                      effect_noise_sd=0.0, seed=7)


def test_select_k_ties_go_small():
    assert select_k([3.0, 1e-20, 0.0, 0.0]) == 2
    assert select_k([1.0, 0.5, 0.5]) == 2
    assert select_k([0.2, 0.3]) == 1


@pytest.mark.parametrize("method", ["bootstrap", "loo"])
def test_noiseless_recovers_true_k(method):
    panel = simulate_panel(NOISELESS).panel
    if method == "bootstrap":
        res = tune_bootstrap(panel, 4, n_reps=20, seed=1)
    else:
        res = tune_loo(panel, 4)
    assert res.k_best == 2
    assert res.mse_by_k[0] > 1e3 * max(res.mse_by_k[1], 1e-12)


def test_bootstrap_reproducible():
    panel = simulate_panel(DgpConfig(seed=2, t_pre=10)).panel
    a = tune_bootstrap(panel, 3, n_reps=1, seed=5)
    b = tune_bootstrap(panel, 3, n_reps=1, seed=5)
    assert a.k_best == b.k_best and a.mse_by_k == b.mse_by_k
    assert a.method is TuneMethod.BOOTSTRAP and a.n_reps == 1 and a.seed == 5


def test_bootstrap_threads_do_not_matter():
    panel = simulate_panel(DgpConfig(seed=3, t_pre=10, n_ctrl=20)).panel
    a = tune_bootstrap(panel, 2, n_reps=4, seed=0, threads=1)
    b = tune_bootstrap(panel, 2, n_reps=4, seed=0, threads=2)
    assert a.mse_by_k == b.mse_by_k


def test_k_max_above_n_ctrl():
    panel = simulate_panel(DgpConfig(n_ctrl=3, seed=0)).panel
    with pytest.raises(ValueError, match="k_max"):
        tune_bootstrap(panel, 4, n_reps=1)


def test_loo_needs_two_pre_periods():
    panel = simulate_panel(DgpConfig(t_pre=1, seed=0)).panel
    with pytest.raises(ValueError, match="pre-treatment"):
        tune_loo(panel, 1)


def test_mse_vector_length_and_sign():
    panel = simulate_panel(DgpConfig(seed=4, t_pre=8)).panel
    res = tune_loo(panel, 3, config=FitConfig(k=1, tol=1e-5))
    assert len(res.mse_by_k) == 3 and res.k_values == [1, 2, 3]
    assert all(np.isfinite(m) and m >= 0 for m in res.mse_by_k)


@pytest.mark.parametrize("method", ["bootstrap", "loo"])
def test_no_leakage_of_treated_post_cells(method):
    # treated post-period outcomes replaced by NaN: any access would poison the SSE
    panel = simulate_panel(DgpConfig(seed=6, t_pre=8, n_ctrl=20)).panel
    Y = np.array(panel.Y)
    Y[panel.D == 1] = np.nan
    hidden = panel.replace(Y=Y)
    if method == "bootstrap":
        a, b = (tune_bootstrap(p, 3, n_reps=3, seed=2) for p in (panel, hidden))
        assert b.n_redraws == a.n_redraws
    else:
        a, b = (tune_loo(p, 3) for p in (panel, hidden))
    assert a.mse_by_k == b.mse_by_k


def test_to_dict():
    panel = simulate_panel(NOISELESS).panel
    d = tune_loo(panel, 2).to_dict()
    assert d["method"] == "loo" and d["k_best"] == 2 and len(d["mse_by_k"]) == 2


def test_underdetermined_k_max_rejected_up_front():
    panel = simulate_panel(DgpConfig(seed=4, t_pre=8)).panel   # 35 held-in cells, L=10
    with pytest.raises(ValueError, match="cannot identify 40"):
        tune_loo(panel, 4)


def test_largest_k_is_accepted():
    from csc_ipca.tuning import largest_k
    panel = simulate_panel(DgpConfig(seed=4, t_pre=8)).panel
    assert largest_k(panel, "loo") == 3 and largest_k(panel, "bootstrap") == 4
    assert largest_k(panel, "bootstrap", cap=2) == 2
    tune_loo(panel, largest_k(panel, "loo"))
