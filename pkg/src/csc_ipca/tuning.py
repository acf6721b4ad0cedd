"""
Choosing the number of latent factors.

Two out-of-sample criteria, both scored only on treated pre-treatment cells:

* bootstrap: resample control and treated units with replacement, fit on
  the resampled controls, refit the mapping matrix on the resampled treated
  units' pre-period and record the pre-period SSE;
* leave-one-out: hold out one pre-treatment period at a time, fit on the
  remaining periods and predict the treated outcomes at the held-out period.

``k_best`` is the smallest ``k`` whose mean SSE is within a relative
``1e-8`` of the minimum, so exact ties go to fewer factors.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .ipca import FitConfig, fit_als, fit_gamma_given_factors, update_factors
from .panel import PanelData, classify_treatment
from .simulation import _pool_map, rep_rng

logger = logging.getLogger(__name__)

MAX_REDRAWS = 10
TIE_RTOL = 1e-8


class TuneMethod(str, enum.Enum):
    BOOTSTRAP = "bootstrap"
    LOO = "loo"


@dataclass(frozen=True)
class TuneResult:
    """
    Attributes
    ----------
    k_best : int
    mse_by_k : list of float
        Entry ``j`` is the mean validation SSE for ``k = j + 1``.
    method : TuneMethod
    n_reps : int or None
        Bootstrap replications; None for leave-one-out.
    seed : int or None
    n_redraws : int
        Bootstrap samples that were discarded as degenerate and redrawn.
    """

    k_best: int
    mse_by_k: list
    method: TuneMethod
    n_reps: int | None = None
    seed: int | None = None
    n_redraws: int = 0
    k_values: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"method": self.method.value, "k_best": self.k_best,
                "k_values": list(self.k_values), "mse_by_k": list(self.mse_by_k),
                "n_reps": self.n_reps, "seed": self.seed, "n_redraws": self.n_redraws}


def select_k(mse_by_k) -> int:
    """Smallest k (1-based) whose MSE is within ``TIE_RTOL * max`` of the minimum."""
    mse = np.asarray(mse_by_k, dtype=float)
    thresh = mse.min() + TIE_RTOL * mse.max()
    return int(np.flatnonzero(mse <= thresh)[0]) + 1


def _check(panel: PanelData, k_max: int, min_pre: int):
    pattern = classify_treatment(panel)
    t_pre = int(pattern.t_pre.min())
    if t_pre < min_pre:
        raise ValueError(f"need at least {min_pre} pre-treatment periods, got {t_pre}")
    bound = min(panel.n_covariates, t_pre, pattern.n_ctrl)
    if not 1 <= k_max <= bound:
        raise ValueError(f"k_max={k_max} must lie in [1, min(L, T_pre, N_ctrl)={bound}]")
    # leave-one-out refits on one pre-period fewer
    cells = int(pattern.pre_mask().sum()) - (pattern.n_treat if min_pre > 1 else 0)
    if cells < panel.n_covariates * k_max:
        raise ValueError(f"k_max={k_max}: {cells} treated pre-treatment cells cannot identify "
                         f"{panel.n_covariates * k_max} mapping parameters")
    return pattern


def largest_k(panel: PanelData, method="bootstrap", cap: int = 8) -> int:
    """Largest ``k_max`` the tuner accepts for this panel, at most ``cap``."""
    pattern = classify_treatment(panel)
    cells = int(pattern.pre_mask().sum())
    if TuneMethod(method) is TuneMethod.LOO:
        cells -= pattern.n_treat
    return max(1, min(cap, panel.n_covariates, int(pattern.t_pre.min()), pattern.n_ctrl,
                      cells // panel.n_covariates))


def _configs(config: FitConfig | None, k_max: int):
    base = config or FitConfig(k=1)
    return [replace(base, k=k) for k in range(1, k_max + 1)]


def _validation_sse(Yc, Xc, Yt, Xt, pre, cfg: FitConfig) -> float:
    params, _ = fit_als(Yc, Xc, cfg)
    g = fit_gamma_given_factors(Yt, Xt, params.factors, mask=pre, rank_tol=cfg.rank_tol)
    fit = np.einsum("ntk,kt->nt", Xt @ g, params.factors)
    r = (Yt - fit)[pre]
    return float(r @ r)


def _bootstrap_rep(args):
    Y, X, ctrl, treat, pre, configs, seed, rep = args
    rng = rep_rng(seed, rep)
    redraws = 0
    while True:
        ci = rng.choice(ctrl, size=ctrl.size, replace=True)
        ti = rng.choice(treat.size, size=treat.size, replace=True)
        try:
            sse = [_validation_sse(Y[ci], X[ci], Y[treat[ti]], X[treat[ti]], pre[ti], c)
                   for c in configs]
            if np.all(np.isfinite(sse)):
                return sse, redraws
        except (ValueError, np.linalg.LinAlgError) as exc:
            logger.debug("bootstrap rep %d draw %d degenerate: %s", rep, redraws, exc)
        redraws += 1
        if redraws > MAX_REDRAWS:
            raise ValueError(
                f"bootstrap rep {rep}: {MAX_REDRAWS} redraws all degenerate")


def tune_bootstrap(panel: PanelData, k_max: int, n_reps: int = 100,
                   config: FitConfig | None = None, seed: int = 0,
                   threads: int | None = 1) -> TuneResult:
    """
    Bootstrap selection of K.

    Each replication draws ``N_ctrl`` control units and ``N_treat`` treated
    units with replacement (whole time series). The same draw is scored for
    every ``k``. Replication ``r`` uses the stream ``rep_rng(seed, r)``, so the
    result is independent of ``threads``.

    Parameters
    ----------
    k_max : int
        Largest K tried; at most ``min(L, T_pre, N_ctrl)``.
    config : FitConfig, optional
        ALS settings; its ``k`` is ignored.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    pattern = _check(panel, k_max, 1)
    configs = _configs(config, k_max)
    Y = np.asarray(panel.Y)
    X = np.asarray(panel.X)
    jobs = [(Y, X, pattern.control_units, pattern.treated_units, pattern.pre_mask(),
             configs, seed, r) for r in range(n_reps)]
    out = _pool_map(_bootstrap_rep, jobs, threads)
    sse = np.array([o[0] for o in out])
    mse = sse.mean(axis=0).tolist()
    return TuneResult(select_k(mse), mse, TuneMethod.BOOTSTRAP, n_reps, seed,
                      int(sum(o[1] for o in out)), list(range(1, k_max + 1)))


def _loo_fold(args):
    Yc, Xc, Yt, Xt, pre, configs, t = args
    keep = np.arange(Yc.shape[1]) != t
    row = []
    for cfg in configs:
        params, _ = fit_als(Yc[:, keep], Xc[:, keep], cfg)
        g = fit_gamma_given_factors(Yt[:, keep], Xt[:, keep], params.factors,
                                    mask=pre[:, keep], rank_tol=cfg.rank_tol)
        # factor of the held-out period from the control cross-section
        f_t = update_factors(params.gamma, Xc[:, t], Yc[:, t], cfg.rank_tol)
        r = Yt[:, t] - Xt[:, t] @ g @ f_t
        row.append(float(r @ r))
    return row


def tune_loo(panel: PanelData, k_max: int, config: FitConfig | None = None,
             threads: int | None = 1) -> TuneResult:
    """
    Leave-one-period-out selection of K.

    For each pre-treatment period ``t`` (periods before the earliest
    treatment under staggered adoption): fit on controls without ``t``,
    refit the treated mapping matrix on the other pre-periods, estimate the
    period-``t`` factor by cross-sectional OLS on the controls at ``t`` and
    score the squared prediction error of the treated outcomes at ``t``.
    """
    pattern = _check(panel, k_max, 2)
    configs = _configs(config, k_max)
    ctrl, treat = pattern.control_units, pattern.treated_units
    Yc, Xc = np.asarray(panel.Y[ctrl]), np.asarray(panel.X[ctrl])
    Yt, Xt = np.asarray(panel.Y[treat]), np.asarray(panel.X[treat])
    pre = pattern.pre_mask()
    jobs = [(Yc, Xc, Yt, Xt, pre, configs, t) for t in range(int(pattern.t_pre.min()))]
    sse = np.array(_pool_map(_loo_fold, jobs, threads))
    mse = sse.mean(axis=0).tolist()
    return TuneResult(select_k(mse), mse, TuneMethod.LOO, None, None, 0,
                      list(range(1, k_max + 1)))
