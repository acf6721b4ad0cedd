"""
Counterfactual estimation with instrumented factor loadings.

The outcome of unit ``i`` at period ``t`` is modeled as
``X[i, t] @ Gamma @ F[:, t]``: covariates map through ``Gamma`` to
time-varying factor loadings on latent factors ``F``. The factors are
learned from control units, the mapping matrix of the treated group from
its untreated periods, and the fitted model imputes the treated units'
untreated outcomes after treatment.
"""

from .baselines import IfeFit, ScmFit, fit_ife, fit_scm
from .csc import CscFit, PoorPreFitWarning, att_series, estimate, impute
from .inference import (ConformalResult, NullSpec, confidence_interval, conformal_pvalue,
                        permutation_pvalue, test_statistic)
from .ipca import (DegeneratePeriodError, FitConfig, FitDiagnostics, IpcaParams,
                   RankDeficiencyError, RankDeficiencyWarning, UnderdeterminedError, fit_als,
                   fit_gamma_given_factors, init_factors_pca, objective, update_factors,
                   update_gamma)
from .normalization import normalize, rotation_matrix
from .panel import (PanelData, PanelError, PatternKind, TreatmentPattern, classify_treatment,
                    load_csv, split, write_csv)
from .simulation import (DgpConfig, McReport, SimulatedPanel, draw_var1, monte_carlo,
                         monte_carlo_grid, render_table, simulate_panel)
from .tuning import TuneMethod, TuneResult, largest_k, select_k, tune_bootstrap, tune_loo

__version__ = "0.1.0"

__all__ = [
    "IfeFit", "ScmFit", "fit_ife", "fit_scm",
    "CscFit", "PoorPreFitWarning", "att_series", "estimate", "impute",
    "ConformalResult", "NullSpec", "confidence_interval", "conformal_pvalue",
    "permutation_pvalue", "test_statistic",
    "DegeneratePeriodError", "FitConfig", "FitDiagnostics", "IpcaParams",
    "RankDeficiencyError", "RankDeficiencyWarning", "UnderdeterminedError", "fit_als",
    "fit_gamma_given_factors", "init_factors_pca", "objective", "update_factors",
    "update_gamma", "normalize", "rotation_matrix",
    "PanelData", "PanelError", "PatternKind", "TreatmentPattern", "classify_treatment",
    "load_csv", "split", "write_csv",
    "DgpConfig", "McReport", "SimulatedPanel", "draw_var1", "monte_carlo", "monte_carlo_grid",
    "render_table", "simulate_panel",
    "TuneMethod", "TuneResult", "largest_k", "select_k", "tune_bootstrap", "tune_loo",
]
