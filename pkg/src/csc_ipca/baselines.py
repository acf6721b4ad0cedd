"""
Comparator estimators: interactive fixed effects and synthetic control.

``fit_ife`` models ``Y = X beta + Lambda F' + e`` with static loadings and a
linear covariate term, fitting the control block by alternating pooled OLS
and truncated SVD. ``fit_scm`` matches each treated unit's pre-period
outcomes with a convex combination of control outcomes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .csc import att_series, to_event_time
from .ipca import RankDeficiencyError
from .panel import PanelData, PatternKind, classify_treatment

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IfeFit:
    """
    Interactive fixed effects fit.

    Attributes
    ----------
    beta : ndarray (L,)
    loadings : ndarray (N, K)
        Rows follow the panel's unit order; treated rows come from the
        pre-period regression on the control factors.
    factors : ndarray (K, T)
    att, effects, y0_hat : ndarray
        As in :class:`csc_ipca.csc.CscFit`.
    """

    beta: np.ndarray
    loadings: np.ndarray
    factors: np.ndarray
    att: np.ndarray
    effects: np.ndarray
    y0_hat: np.ndarray
    fitted: np.ndarray
    converged: bool
    iterations: int
    objective_path: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"method": "ife", "beta": self.beta.tolist(),
                "loadings": self.loadings.tolist(), "factors": self.factors.tolist(),
                "att": self.att.tolist(), "effects": _listify(self.effects),
                "y0_hat": _listify(self.y0_hat), "converged": self.converged,
                "iterations": self.iterations}


@dataclass(frozen=True)
class ScmFit:
    """
    Synthetic control fit.

    ``weights[j]`` is the simplex weight vector over control units for the
    j-th treated unit.
    """

    weights: np.ndarray
    att: np.ndarray
    effects: np.ndarray
    y0_hat: np.ndarray
    fitted: np.ndarray
    gaps: np.ndarray
    iterations: np.ndarray

    def to_dict(self) -> dict:
        return {"method": "scm", "weights": self.weights.tolist(), "att": self.att.tolist(),
                "effects": _listify(self.effects), "y0_hat": _listify(self.y0_hat),
                "duality_gap": self.gaps.tolist(), "iterations": self.iterations.tolist()}


def _listify(a):
    return [[None if not math.isfinite(v) else float(v) for v in row] for row in np.asarray(a)]


def _pooled_ols(X, y):
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        logger.warning("pooled OLS design is rank deficient (rank %d < %d)", rank, X.shape[1])
    return coef


def _low_rank(W, k):
    U, s, Vt = np.linalg.svd(W, full_matrices=False)
    return U[:, :k] * s[:k], Vt[:k]


def fit_ife(panel: PanelData, k: int, tol: float = 1e-6, max_iter: int = 1000) -> IfeFit:
    """
    Interactive fixed effects counterfactual estimator.

    On the control block, alternate (a) ``beta`` by pooled OLS of
    ``Y - Lambda F'`` on ``X`` and (b) ``(Lambda, F)`` by the rank-``k`` SVD of
    ``Y - X beta`` until the relative change of ``beta`` and of ``Lambda F'``
    falls below ``tol``. Treated loadings solve the OLS of pre-period
    ``Y - X beta`` on ``F``.
    """
    pattern = classify_treatment(panel)
    ctrl, treat = pattern.control_units, pattern.treated_units
    Yc, Xc = panel.Y[ctrl], panel.X[ctrl]
    Nc, T, L = Xc.shape
    if k < 1 or k > min(Nc, T):
        raise ValueError(f"k={k} must lie in [1, min(N_ctrl, T)={min(Nc, T)}]")
    Xflat = Xc.reshape(-1, L)

    beta = _pooled_ols(Xflat, Yc.ravel())
    low = np.zeros_like(Yc)
    path, converged, it = [], False, 0
    for it in range(1, max_iter + 1):
        lam, F = _low_rank(Yc - Xc @ beta, k)
        low_new = lam @ F
        beta_new = _pooled_ols(Xflat, (Yc - low_new).ravel())
        r = Yc - Xc @ beta_new - low_new
        path.append(math.fsum((r * r).ravel()))
        change = max(np.linalg.norm(beta_new - beta) / (np.linalg.norm(beta) + 1e-12),
                     np.linalg.norm(low_new - low) / (np.linalg.norm(low) + 1e-12))
        beta, low = beta_new, low_new
        if change < tol:
            converged = True
            break
    if not converged:
        logger.warning("IFE alternation did not converge in %d iterations", max_iter)
    lam_c, F = _low_rank(Yc - Xc @ beta, k)

    Yt, Xt = panel.Y[treat], panel.X[treat]
    pre = pattern.pre_mask()
    resid = Yt - Xt @ beta
    lam_t = np.empty((len(treat), k))
    for j in range(len(treat)):
        Fp = F[:, pre[j]].T
        if np.linalg.matrix_rank(Fp) < k:
            raise RankDeficiencyError(
                f"treated unit {panel.unit_ids[treat[j]]}: {pre[j].sum()} pre-periods "
                f"cannot identify {k} loadings")
        lam_t[j] = np.linalg.lstsq(Fp, resid[j, pre[j]], rcond=None)[0]
    fitted = Xt @ beta + lam_t @ F

    if pattern.kind is PatternKind.BLOCK:
        t0 = pattern.block_t_pre
        y0 = fitted[:, t0:]
        att, effects = att_series(Yt[:, t0:], y0)
    else:
        y0 = to_event_time(fitted, pattern.t_pre)
        att, effects = att_series(Yt, fitted, first_treated=pattern.t_pre)

    loadings = np.empty((panel.n_units, k))
    loadings[ctrl] = lam_c
    loadings[treat] = lam_t
    return IfeFit(beta, loadings, F, att, effects, y0, fitted, converged, it, path)


def simplex_least_squares(A: np.ndarray, b: np.ndarray, tol: float = 1e-8,
                          max_iter: int = 10_000, return_path: bool = False):
    """
    Minimize ``mean((A w - b)**2)`` over the probability simplex.

    Away-step Frank-Wolfe with exact line search, started from the best
    single vertex. Stops when the Frank-Wolfe duality gap drops to ``tol``.

    Returns
    -------
    w : ndarray
    gap : float
    iterations : int
    path : list of float
        Objective after each iteration, only with ``return_path``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    scale = 1.0 / m
    colerr = np.sum((A - b[:, None]) ** 2, axis=0)
    w = np.zeros(n)
    w[int(np.argmin(colerr))] = 1.0
    r = A @ w - b
    path = [scale * float(r @ r)]
    gap, it = math.inf, 0
    for it in range(1, max_iter + 1):
        g = 2 * scale * (A.T @ r)
        gw = float(g @ w)
        s = int(np.argmin(g))
        gap = gw - g[s]
        if gap <= tol:
            it -= 1
            break
        support = np.flatnonzero(w > 0)
        v = support[int(np.argmax(g[support]))]
        away = gap < g[v] - gw and w[v] < 1.0
        if not away:
            d = -w.copy()
            d[s] += 1.0
            step_max = 1.0
        else:
            d = w.copy()
            d[v] -= 1.0
            step_max = w[v] / (1.0 - w[v])
        Ad = A @ d
        curv = 2 * scale * float(Ad @ Ad)
        slope = float(g @ d)
        step = step_max if curv <= 0 else min(step_max, -slope / curv)
        if step <= 0:
            break
        w = w + step * d
        if away and step == step_max:
            w[v] = 0.0                              # drop step: v leaves the support
        w[w < 1e-16] = 0.0
        w /= w.sum()
        r = A @ w - b
        path.append(scale * float(r @ r))
    if return_path:
        return w, gap, it, path
    return w, gap, it


def fit_scm(panel: PanelData, tol: float = 1e-8, max_iter: int = 10_000) -> ScmFit:
    """
    Synthetic control on pre-period outcomes, one weight vector per treated unit.

    Raises
    ------
    ValueError
        Unless treatment follows block assignment.
    """
    pattern = classify_treatment(panel)
    if pattern.kind is not PatternKind.BLOCK:
        raise ValueError("synthetic control requires block assignment")
    t0 = pattern.block_t_pre
    Yc = panel.Y[pattern.control_units]
    Yt = panel.Y[pattern.treated_units]
    W, gaps, iters = [], [], []
    for y in Yt:
        w, gap, it = simplex_least_squares(Yc[:, :t0].T, y[:t0], tol=tol, max_iter=max_iter)
        W.append(w)
        gaps.append(gap)
        iters.append(it)
    W = np.array(W)
    fitted = W @ Yc
    y0 = fitted[:, t0:]
    att, effects = att_series(Yt[:, t0:], y0)
    return ScmFit(W, att, effects, y0, fitted, np.array(gaps), np.array(iters))
