"""
Choosing the number of factors
==============================

Two out-of-sample criteria score candidate ``k`` on treated pre-treatment
cells only: a unit bootstrap and a leave-one-period-out scheme.
"""

# %%
# A panel with exactly two factors and no noise: every ``k >= 2`` fits the
# held-out cells perfectly, and ties go to the smaller ``k``.
import warnings

from csc_ipca import DgpConfig, simulate_panel, tune_bootstrap, tune_loo

exact = DgpConfig(n_treat=5, n_ctrl=30, t_pre=10, t_post=5, l=6, k=2, noise_sd=0.0,
                  beta_range=(0, 0), fe_range=(0, 0), effect_scale=0.0,
                  effect_noise_sd=0.0, seed=7)
panel = simulate_panel(exact).panel
# at k > 2 the exact fit leaves the extra directions unidentified
warnings.simplefilter("ignore")

boot = tune_bootstrap(panel, k_max=4, n_reps=20, seed=1)
loo = tune_loo(panel, k_max=4)
print("bootstrap:", boot.k_best, [f"{m:.2e}" for m in boot.mse_by_k])
print("loo      :", loo.k_best, [f"{m:.2e}" for m in loo.mse_by_k])

# %%
# With noise the curve flattens. Starting from one or two factors and
# growing only when the validation error clearly drops is a sensible habit.
noisy = simulate_panel(DgpConfig(seed=2)).panel
res = tune_loo(noisy, k_max=4)
print("noisy panel:", res.k_best, [round(m, 1) for m in res.mse_by_k])
