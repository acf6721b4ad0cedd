"""
Conformal permutation inference for the ATT under block assignment.

Under a sharp null ``theta0`` (one effect per post-treatment period, common
to all treated units) the treated post-period outcomes are adjusted to
``Y - theta0``, the mapping matrix is refit on every treated period of the
adjusted data, and the residual path ``u_t`` (averaged over treated units)
is compared against its cyclic shifts. Under the null the residuals are
exchangeable across time, so the p-value is the share of shifts whose
statistic is at least the observed one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .csc import estimate, impute
from .ipca import FitConfig, fit_als, fit_gamma_given_factors
from .panel import PanelData, PatternKind, classify_treatment

logger = logging.getLogger(__name__)

# relative slack when comparing permuted and observed statistics, so that
# shifts equal to the observed value up to rounding count as "at least"
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class NullSpec:
    """Sharp null: hypothesized ATT for each post-treatment period."""

    theta0: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.theta0, dtype=float))
        if t.ndim != 1 or not np.all(np.isfinite(t)):
            raise ValueError("theta0 must be a finite 1-D vector")
        t.setflags(write=False)
        object.__setattr__(self, "theta0", t)

    @classmethod
    def constant(cls, value: float, t_post: int) -> "NullSpec":
        return cls(np.full(t_post, float(value)))


@dataclass(frozen=True)
class ConformalResult:
    """
    Output of :func:`conformal_pvalue` or :func:`confidence_interval`.

    Attributes
    ----------
    p_value : float
        Joint p-value of the tested null (NaN for interval-only results).
    statistic : float
        Observed statistic.
    permutation_statistics : ndarray
        Statistic under each cyclic shift; entry 0 is the identity.
    level : float or None
    ci_lower, ci_upper : ndarray or None
        Per-period interval bounds.
    degenerate : ndarray of bool or None
        Periods where every grid value was rejected; the bound then is the
        grid value with the largest p-value.
    """

    p_value: float
    statistic: float
    permutation_statistics: np.ndarray
    theta0: np.ndarray | None = None
    residuals: np.ndarray | None = field(default=None, repr=False)
    level: float | None = None
    att: np.ndarray | None = None
    ci_lower: np.ndarray | None = None
    ci_upper: np.ndarray | None = None
    degenerate: np.ndarray | None = None
    grid: np.ndarray | None = field(default=None, repr=False)
    grid_pvalues: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_permutations(self) -> int:
        return int(np.size(self.permutation_statistics))

    def to_dict(self) -> dict:
        def lst(a):
            return None if a is None else np.asarray(a).tolist()
        return {"p_value": None if math.isnan(self.p_value) else self.p_value,
                "statistic": None if math.isnan(self.statistic) else self.statistic,
                "n_permutations": self.n_permutations,
                "permutation_statistics": lst(self.permutation_statistics),
                "theta0": lst(self.theta0), "level": self.level, "att": lst(self.att),
                "ci_lower": lst(self.ci_lower), "ci_upper": lst(self.ci_upper),
                "degenerate": lst(self.degenerate), "grid": lst(self.grid),
                "grid_pvalues": lst(self.grid_pvalues)}


def test_statistic(residuals, q: float = 1.0) -> float:
    """
    ``sum_t |u_t|**q / sqrt(T_post)``.

    A 2-D input (units x periods) is averaged over units first.
    """
    u = np.asarray(residuals, dtype=float)
    if u.ndim == 2:
        u = u.mean(axis=0)
    if u.size == 0:
        raise ValueError("empty residual vector")
    if not np.all(np.isfinite(u)):
        raise ValueError("residuals must be finite")
    if q < 1:
        raise ValueError("q must be >= 1")
    return float(np.sum(np.abs(u) ** q) / math.sqrt(u.size))


test_statistic.__test__ = False  # not a pytest test


def permutation_pvalue(u, t_post: int, q: float = 1.0):
    """
    Cyclic-shift p-value for a residual path whose last ``t_post`` entries
    are the post-treatment window.

    Returns
    -------
    p : float
        ``mean(S_pi >= S_obs)`` over all ``len(u)`` shifts, identity included,
        so ``p >= 1 / len(u)``.
    s_obs : float
    s_perm : ndarray
        Statistic of shift ``j`` (``np.roll(u, j)``), ``s_perm[0] == s_obs``.
    """
    u = np.asarray(u, dtype=float)
    T = u.size
    if not 1 <= t_post < T:
        raise ValueError(f"t_post={t_post} must leave at least one pre-period (T={T})")
    s_perm = np.array([test_statistic(np.roll(u, j)[T - t_post:], q) for j in range(T)])
    s_obs = s_perm[0]
    p = float(np.mean(s_perm >= s_obs - TIE_RTOL * max(1.0, abs(s_obs))))
    return p, s_obs, s_perm


class _NullFitter:
    """Residual paths under varying nulls, reusing the control fit."""

    def __init__(self, panel: PanelData, config: FitConfig, ctrl_fit=None):
        pattern = classify_treatment(panel)
        if pattern.kind is not PatternKind.BLOCK:
            raise ValueError("conformal inference requires block assignment")
        self.t0 = pattern.block_t_pre
        self.T = panel.n_periods
        self.t_post = self.T - self.t0
        self.config = config
        ctrl, treat = pattern.control_units, pattern.treated_units
        if ctrl_fit is None:
            params, _ = fit_als(panel.Y[ctrl], panel.X[ctrl], config)
        else:
            params = ctrl_fit[0] if isinstance(ctrl_fit, tuple) else ctrl_fit
        self.F = params.factors
        self.Yt = np.asarray(panel.Y[treat], dtype=float)
        self.Xt = np.asarray(panel.X[treat], dtype=float)
        # residuals this small are indistinguishable from ALS convergence error;
        # zeroing them lets exact fits tie instead of ranking round-off
        obs = self.Yt[np.isfinite(self.Yt)]
        self.floor = config.tol * float(np.sqrt(np.mean(obs ** 2))) if obs.size else 0.0

    def residuals(self, theta0) -> np.ndarray:
        theta0 = np.asarray(theta0, dtype=float)
        if theta0.shape != (self.t_post,):
            raise ValueError(f"theta0 has length {theta0.size}, expected T_post={self.t_post}")
        Y = self.Yt.copy()
        Y[:, self.t0:] -= theta0
        g = fit_gamma_given_factors(Y, self.Xt, self.F, rank_tol=self.config.rank_tol)
        u = (Y - impute(g, self.F, self.Xt)).mean(axis=0)
        u[np.abs(u) < self.floor] = 0.0
        return u


def conformal_pvalue(panel: PanelData, null: NullSpec, config: FitConfig,
                     q: float = 1.0, ctrl_fit=None) -> ConformalResult:
    """
    Joint p-value of a sharp null over all post-treatment periods.

    The permutation set is the ``T`` cyclic shifts of the residual path.

    Parameters
    ----------
    null : NullSpec
        Length must equal the number of post-treatment periods.
    ctrl_fit : IpcaParams or (IpcaParams, FitDiagnostics), optional
        Control-group fit to reuse.
    """
    nf = _NullFitter(panel, config, ctrl_fit)
    if nf.t_post >= nf.T:
        raise ValueError("no pre-treatment periods to permute into")
    u = nf.residuals(null.theta0)
    p, s, perm = permutation_pvalue(u, nf.t_post, q)
    return ConformalResult(p, s, perm, theta0=np.array(null.theta0), residuals=u)


def default_grid(center, sd, n: int = 41, width: float = 5.0) -> np.ndarray:
    """``n`` points per period spanning ``center +/- width * sd``."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    offsets = np.linspace(-width * sd, width * sd, n)
    return center[:, None] + offsets[None, :]


def confidence_interval(panel: PanelData, config: FitConfig, grid=None,
                        level: float = 0.95, q: float = 1.0, n_grid: int = 41,
                        width_sd: float = 5.0) -> ConformalResult:
    """
    Per-period conformal intervals by test inversion over a grid.

    For post-period ``s`` and candidate ``theta``, the null sets period ``s``
    to ``theta`` and every other post-period to its point estimate. The
    residual path restricted to the pre-periods plus period ``s`` is
    permuted cyclically (``T_pre + 1`` shifts, the last slot is the test
    window); ``theta`` is rejected when ``p <= 1 - level``. The interval is
    the range of non-rejected grid values.

    Parameters
    ----------
    grid : array_like, optional
        Either one increasing vector shared by all periods or a
        (T_post, n) array. By default ``n_grid`` points spanning
        ``width_sd`` standard deviations of the pre-period residual path
        around each period's point estimate.

    Notes
    -----
    With ``T_pre + 1`` shifts the smallest attainable p-value is
    ``1 / (T_pre + 1)``; when it exceeds ``1 - level`` nothing can be
    rejected and the interval is the whole grid.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    fit = estimate(panel, config, warn=False)
    nf = _NullFitter(panel, config, ctrl_fit=fit.params_ctrl)
    att = np.asarray(fit.att, dtype=float)
    t0, H = nf.t0, nf.t_post

    if grid is None:
        pre_resid = (fit.actual - fit.fitted)[:, :t0].mean(axis=0)
        sd = float(np.std(pre_resid, ddof=1)) if t0 > 1 else 0.0
        sd = max(sd, 1e-8 * max(1.0, float(np.max(np.abs(att)))))
        grid = default_grid(att, sd, n_grid, width_sd)
    else:
        grid = np.asarray(grid, dtype=float)
        if grid.ndim == 1:
            grid = np.broadcast_to(grid, (H, grid.size))
        if grid.shape[0] != H:
            raise ValueError(f"grid has {grid.shape[0]} rows, expected T_post={H}")
        if np.any(np.diff(grid, axis=1) < 0):
            raise ValueError("grid must be ordered")

    alpha = 1.0 - level
    pvals = np.empty(grid.shape)
    lo, hi = np.empty(H), np.empty(H)
    degenerate = np.zeros(H, dtype=bool)
    for s in range(H):
        for j, theta in enumerate(grid[s]):
            th = att.copy()
            th[s] = theta
            u = nf.residuals(th)
            window = np.append(u[:t0], u[t0 + s])
            pvals[s, j] = permutation_pvalue(window, 1, q)[0]
        keep = pvals[s] > alpha
        if keep.any():
            lo[s], hi[s] = grid[s][keep].min(), grid[s][keep].max()
        else:
            degenerate[s] = True
            lo[s] = hi[s] = grid[s][int(np.argmax(pvals[s]))]
            logger.warning("period %d: every grid value rejected; interval degenerate", s)

    u = nf.residuals(att)
    p, stat, perm = permutation_pvalue(u, H, q)
    return ConformalResult(p, stat, perm, theta0=att, residuals=u, level=level, att=att,
                           ci_lower=lo, ci_upper=hi, degenerate=degenerate,
                           grid=np.array(grid), grid_pvalues=pvals)
