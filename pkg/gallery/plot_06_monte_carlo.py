"""
A small Monte Carlo table
=========================

Bias, RMSE and across-replication spread of the estimated ATT for each share
of observed covariates. Replication ``r`` always draws from the stream
derived from ``(seed, r)``, so the table does not depend on the number of
worker processes.
"""

# %%
from csc_ipca import DgpConfig, monte_carlo_grid, render_table

base = DgpConfig(n_treat=5, t_post=5, l=9)
reports = monte_carlo_grid(base, t_pre=(10,), n_ctrl=(20,), alpha=(1 / 3, 2 / 3, 1.0),
                           estimators=("ipca", "scm"), n_reps=20, seed=0)
print(render_table(reports, "ipca"))
print()
print(render_table(reports, "scm"))
