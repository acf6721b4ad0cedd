"""
Bringing your own panel
=======================

Panels are read from long-format CSV: one row per unit and period with an
outcome, a 0/1 treatment indicator and covariate columns. Column names are
mapped through a schema, as for a country-year panel with FDI as outcome.
Treatment may start at different times for different units.
"""

# %%
import csv
import tempfile
from pathlib import Path

import numpy as np

from csc_ipca import DgpConfig, FitConfig, classify_treatment, estimate, load_csv, simulate_panel

# Write a staggered panel to disk with custom column names.
sim = simulate_panel(DgpConfig(seed=6, n_treat=4, t_pre=16, t_post=8, noise_sd=0.3))
p = sim.panel
D = np.array(p.D)
D[:2, 16:19] = 0                      # two units adopt three periods later
path = Path(tempfile.mkdtemp()) / "countries.csv"
with open(path, "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow(["country", "year", "fdi_gdp", "treated"] + [f"z{j}" for j in range(10)])
    for i, u in enumerate(p.unit_ids):
        for t in range(p.n_periods):
            w.writerow([u, 2000 + t, p.Y[i, t], D[i, t]] + list(p.X[i, t]))

# %%
panel = load_csv(path, schema={"unit": "country", "time": "year", "y": "fdi_gdp",
                               "d": "treated"})
pattern = classify_treatment(panel)
print(pattern.kind.value, "first treated periods:", pattern.t_pre.tolist())

# %%
# Effects are aligned in event time: column h averages the units observed
# h periods after their own adoption.
fit = estimate(panel, FitConfig(k=3), standardize=True, warn=False)
print("horizons:", fit.att.size)
print(np.round(fit.att, 2))
