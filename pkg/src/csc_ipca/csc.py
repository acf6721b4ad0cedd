"""
Counterfactual imputation and ATT for treated units.

Pipeline:

1. fit ``(Gamma_ctrl, F)`` by ALS on the control units over all periods;
2. refit the mapping matrix on the treated units' untreated cells holding
   ``F`` fixed;
3. rotate the treated mapping matrix and ``F`` to the identified
   representative;
4. impute ``Y0[i, t] = X[i, t] Gamma_norm F_norm[:, t]`` on treated cells and
   average ``Y - Y0`` over treated units.

Under staggered adoption the effects are aligned in event time (periods
since a unit's first treated period) before averaging.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .ipca import FitConfig, FitDiagnostics, IpcaParams, fit_als, fit_gamma_given_factors
from .normalization import normalize, rotation_matrix
from .panel import (PanelData, PatternKind, TreatmentPattern, add_intercept,
                    classify_treatment, split, standardize_covariates)


class PoorPreFitWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CscFit:
    """
    Result of :func:`estimate`.

    Event-time arrays have one column per period since first treatment; under
    block assignment these are exactly the post-treatment periods.

    Attributes
    ----------
    params_ctrl : IpcaParams
        Control-group mapping matrix and factors over all periods.
    gamma_treat : ndarray (L, K)
        Treated mapping matrix before normalization.
    gamma_treat_norm : ndarray (L, K)
    factors_norm : ndarray (K, T)
    rotation : ndarray (K, K)
    y0_hat : ndarray (N_treat, H)
        Imputed untreated outcomes in event time; NaN where a unit is not
        observed at that horizon.
    effects : ndarray (N_treat, H)
        ``Y - y0_hat`` per treated unit.
    att : ndarray (H,)
    fitted : ndarray (N_treat, T)
        Model outcome ``X Gamma_norm F_norm`` for every period of each
        treated unit (pre-period fit and post-period counterfactual).
    pre_fit_rmse : float
        Root mean squared residual on treated untreated cells.
    """

    params_ctrl: IpcaParams
    gamma_treat: np.ndarray
    gamma_treat_norm: np.ndarray
    factors_norm: np.ndarray
    rotation: np.ndarray
    y0_hat: np.ndarray
    effects: np.ndarray
    att: np.ndarray
    fitted: np.ndarray
    pre_fit_rmse: float
    diagnostics: FitDiagnostics
    pattern: TreatmentPattern = field(repr=False)
    unit_ids: list = field(default_factory=list)
    time_ids: list = field(default_factory=list)
    actual: np.ndarray = field(default=None, repr=False)
    poor_pre_fit: bool = False

    @property
    def event_times(self) -> np.ndarray:
        return np.arange(self.att.shape[0])

    def to_dict(self) -> dict:
        p = self.pattern
        return {
            "method": "ipca",
            "pattern": {"kind": p.kind.value,
                        "treated_units": [self.unit_ids[i] for i in p.treated_units],
                        "control_units": [self.unit_ids[i] for i in p.control_units],
                        "t_pre": p.t_pre.tolist()},
            "time_ids": list(self.time_ids),
            "params_ctrl": self.params_ctrl.to_dict(),
            "gamma_treat": self.gamma_treat.tolist(),
            "gamma_treat_norm": self.gamma_treat_norm.tolist(),
            "factors_norm": self.factors_norm.tolist(),
            "rotation": self.rotation.tolist(),
            "att": self.att.tolist(),
            "effects": _nan_to_none(self.effects),
            "y0_hat": _nan_to_none(self.y0_hat),
            "fitted": self.fitted.tolist(),
            "actual": _nan_to_none(self.actual),
            "pre_fit_rmse": self.pre_fit_rmse,
            "poor_pre_fit": self.poor_pre_fit,
            "diagnostics": self.diagnostics.to_dict(),
        }


def _nan_to_none(a):
    if a is None:
        return None
    return [[None if not math.isfinite(v) else float(v) for v in row] for row in np.asarray(a)]


def impute(gamma_norm, factors_norm, X_treat) -> np.ndarray:
    """Cell-wise ``X[i, t] @ gamma @ F[:, t]`` for treated covariates (N, T, L)."""
    gamma_norm = np.atleast_2d(np.asarray(gamma_norm, dtype=float))
    F = np.atleast_2d(np.asarray(factors_norm, dtype=float))
    X = np.asarray(X_treat, dtype=float)
    if X.ndim != 3 or X.shape[2] != gamma_norm.shape[0] or X.shape[1] != F.shape[1] \
            or gamma_norm.shape[1] != F.shape[0]:
        raise ValueError(f"dimension mismatch: X {X.shape}, gamma {gamma_norm.shape}, "
                         f"factors {F.shape}")
    return np.einsum("ntk,kt->nt", X @ gamma_norm, F)


def to_event_time(values: np.ndarray, first_treated) -> np.ndarray:
    """Shift each row so column h is period ``first_treated[i] + h``; pad with NaN."""
    values = np.asarray(values, dtype=float)
    first = np.asarray(first_treated, dtype=int)
    T = values.shape[1]
    H = int(T - first.min())
    out = np.full((values.shape[0], H), np.nan)
    for i, f in enumerate(first):
        out[i, : T - f] = values[i, f:]
    return out


def att_series(Y_treat_post, y0_hat, first_treated=None):
    """
    Per-period ATT and unit-level effects.

    With ``first_treated`` given, inputs are full (N_treat, T) calendar-time
    matrices and effects are aligned in event time; each horizon averages the
    units observed at that horizon.

    Returns
    -------
    att : ndarray (H,)
    effects : ndarray (N_treat, H)
    """
    y1 = np.asarray(Y_treat_post, dtype=float)
    y0 = np.asarray(y0_hat, dtype=float)
    if y1.shape != y0.shape:
        raise ValueError(f"dimension mismatch: {y1.shape} vs {y0.shape}")
    effects = y1 - y0
    if first_treated is not None:
        effects = to_event_time(effects, first_treated)
    counts = np.sum(np.isfinite(effects), axis=0)
    att = np.nansum(effects, axis=0) / np.maximum(counts, 1)
    att[counts == 0] = np.nan
    return att, effects


def _prepare(panel: PanelData, standardize: bool, intercept: bool, pattern=None):
    pattern = pattern or classify_treatment(panel)
    if standardize:
        panel = standardize_covariates(panel, pattern)
    if intercept:
        panel = add_intercept(panel)
    return panel, pattern


def estimate(panel: PanelData, config: FitConfig, *, standardize: bool = False,
             intercept: bool = False, warn_rmse_sd: float = 1.0, warn: bool = True,
             ctrl_fit=None) -> CscFit:
    """
    Run the four-step imputation estimator.

    Parameters
    ----------
    panel : PanelData
    config : FitConfig
    standardize : bool
        Z-score covariates with control-sample moments first.
    intercept : bool
        Append a constant covariate.
    warn_rmse_sd : float
        Flag the fit (and warn) when the treated pre-period RMSE exceeds this
        many standard deviations of the control outcomes.
    ctrl_fit : tuple (IpcaParams, FitDiagnostics), optional
        Reuse a previous control-group fit on the same panel.
    """
    panel, pattern = _prepare(panel, standardize, intercept)
    split(panel, pattern)  # validates non-empty groups and t_pre > 0
    ctrl = pattern.control_units
    treat = pattern.treated_units
    Yc, Xc = panel.Y[ctrl], panel.X[ctrl]
    if ctrl_fit is None:
        params_ctrl, diag = fit_als(Yc, Xc, config)
    else:
        params_ctrl, diag = ctrl_fit

    Yt, Xt = panel.Y[treat], panel.X[treat]
    pre = pattern.pre_mask()
    gamma_treat = fit_gamma_given_factors(Yt, Xt, params_ctrl.factors, mask=pre,
                                          rank_tol=config.rank_tol)
    R = rotation_matrix(gamma_treat, params_ctrl.factors)
    normed = normalize(IpcaParams(gamma_treat, params_ctrl.factors))

    fitted = impute(normed.gamma, normed.factors, Xt)
    resid = (Yt - fitted)[pre]
    pre_rmse = float(np.sqrt(np.mean(resid ** 2)))
    poor = bool(pre_rmse > warn_rmse_sd * np.std(Yc))
    if poor and warn:
        warnings.warn(f"poor pre-treatment fit: RMSE {pre_rmse:.3g} exceeds "
                      f"{warn_rmse_sd} control-outcome SD", PoorPreFitWarning, stacklevel=2)

    if pattern.kind is PatternKind.BLOCK:
        t0 = pattern.block_t_pre
        y0 = fitted[:, t0:]
        att, effects = att_series(Yt[:, t0:], y0)
    else:
        y0 = to_event_time(fitted, pattern.t_pre)
        att, effects = att_series(Yt, fitted, first_treated=pattern.t_pre)

    return CscFit(params_ctrl=params_ctrl, gamma_treat=gamma_treat,
                  gamma_treat_norm=normed.gamma, factors_norm=normed.factors, rotation=R,
                  y0_hat=y0, effects=effects, att=att, fitted=fitted,
                  pre_fit_rmse=pre_rmse, diagnostics=diag, pattern=pattern,
                  unit_ids=list(panel.unit_ids), time_ids=list(panel.time_ids),
                  actual=np.array(Yt), poor_pre_fit=poor)
