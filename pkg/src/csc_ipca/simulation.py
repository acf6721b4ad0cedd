"""
Simulated panels with instrumented factor structure and Monte Carlo studies.

Outcome model::

    Y[i,t] = D[i,t] delta[i,t] + X[i,t] beta + X[i,t] Gamma F[:,t]
             + alpha[i] + xi[t] + eps[i,t]

Covariates of each unit follow a stationary VAR(1) with a unit-specific
transition matrix and a drift of ``drift_treated`` for treated units and
``drift_ctrl`` for controls, so treatment assignment depends on the
covariates. Factors follow a VAR(1) without drift. The treatment effect is
``delta[i,t] = s + e[i,t]`` at the s-th post-treatment period, ``e`` standard
normal. Only the first ``ceil(alpha_observed * l)`` covariates are exposed.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .panel import PanelData

logger = logging.getLogger(__name__)

BURN_IN = 50


@dataclass(frozen=True)
class DgpConfig:
    n_treat: int = 5
    n_ctrl: int = 45
    t_pre: int = 20
    t_post: int = 10
    l: int = 10
    k: int = 3
    alpha_observed: float = 1.0
    drift_treated: float = 2.0
    drift_ctrl: float = 0.0
    gamma_range: tuple = (-0.1, 0.1)
    beta_range: tuple = (0.0, 1.0)
    fe_range: tuple = (0.0, 1.0)
    var_spectral_radius: float = 0.6
    noise_sd: float = 1.0
    effect_scale: float = 1.0
    effect_noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("gamma_range", "beta_range", "fe_range"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 2 or v[0] > v[1]:
                raise ValueError(f"{name} must be an ordered pair (lo, hi)")
            object.__setattr__(self, name, v)
        if not 0 < self.alpha_observed <= 1:
            raise ValueError("alpha_observed must lie in (0, 1]")
        if not 0 <= self.var_spectral_radius < 1:
            raise ValueError("var_spectral_radius must lie in [0, 1)")
        if not 1 <= self.k <= self.l:
            raise ValueError("k must satisfy 1 <= k <= l")
        for name in ("n_treat", "n_ctrl", "t_pre", "t_post"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.noise_sd < 0 or self.effect_noise_sd < 0:
            raise ValueError("noise scales must be nonnegative")

    @property
    def n_observed(self) -> int:
        return max(1, math.ceil(self.alpha_observed * self.l - 1e-9))

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("gamma_range", "beta_range", "fe_range"):
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DgpConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown DgpConfig field(s): {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "DgpConfig":
        d = asdict(self)
        d.update(changes)
        return DgpConfig(**d)


@dataclass(frozen=True)
class SimulatedPanel:
    panel: PanelData
    true_att: np.ndarray
    latent: dict = field(repr=False)


def random_transition(dim: int, radius: float, rng) -> np.ndarray:
    """Standard-normal matrix rescaled to spectral radius ``radius``."""
    if radius == 0:
        return np.zeros((dim, dim))
    A = rng.standard_normal((dim, dim))
    rho = np.max(np.abs(np.linalg.eigvals(A)))
    return A * (radius / rho)


def draw_var1(n_series: int, dim: int, drift, radius: float, n_periods: int, rng,
              return_transitions: bool = False):
    """
    Simulate ``n_series`` independent stationary VAR(1) paths.

    ``x_t = drift + A_i x_{t-1} + nu_t`` with standard-normal innovations, one
    transition matrix ``A_i`` per series, started at zero and run for
    ``BURN_IN`` discarded periods.

    Returns
    -------
    ndarray, shape (n_series, n_periods, dim)
        Optionally with the (n_series, dim, dim) transition matrices.
    """
    if not 0 <= radius < 1:
        raise ValueError("radius must lie in [0, 1)")
    drift = np.broadcast_to(np.asarray(drift, dtype=float), (n_series, dim))
    A = np.stack([random_transition(dim, radius, rng) for _ in range(n_series)])
    total = BURN_IN + n_periods
    nu = rng.standard_normal((total, n_series, dim))
    x = np.zeros((n_series, dim))
    out = np.empty((n_series, n_periods, dim))
    for s in range(total):
        x = drift + np.einsum("nij,nj->ni", A, x) + nu[s]
        if s >= BURN_IN:
            out[:, s - BURN_IN] = x
    if return_transitions:
        return out, A
    return out


def effect_path(t_pre: int, t_post: int, scale: float = 1.0) -> np.ndarray:
    """Mean effect by period: zeros before treatment, then 1, 2, ..., t_post."""
    return scale * np.concatenate([np.zeros(t_pre), np.arange(1, t_post + 1)])


def simulate_panel(config: DgpConfig, rng=None) -> SimulatedPanel:
    """Draw one panel; treated units come first."""
    c = config
    if rng is None:
        rng = np.random.default_rng(c.seed)
    N = c.n_treat + c.n_ctrl
    T = c.t_pre + c.t_post
    treated = np.arange(N) < c.n_treat

    drift = np.where(treated, c.drift_treated, c.drift_ctrl)[:, None] * np.ones(c.l)
    X, A_x = draw_var1(N, c.l, drift, c.var_spectral_radius, T, rng,
                       return_transitions=True)
    F, A_f = draw_var1(1, c.k, 0.0, c.var_spectral_radius, T, rng,
                       return_transitions=True)
    F = F[0].T                                          # (K, T)
    gamma = rng.uniform(*c.gamma_range, size=(c.l, c.k))
    beta = rng.uniform(*c.beta_range, size=c.l)
    alpha = rng.uniform(*c.fe_range, size=N)
    xi = rng.uniform(*c.fe_range, size=T)
    eps = c.noise_sd * rng.standard_normal((N, T))
    e = c.effect_noise_sd * rng.standard_normal((N, T))

    D = np.zeros((N, T), dtype=np.int8)
    D[treated, c.t_pre:] = 1
    delta = (effect_path(c.t_pre, c.t_post, c.effect_scale)[None, :] + e) * D

    structural = np.einsum("ntk,kt->nt", X @ gamma, F)
    Y = delta + X @ beta + structural + alpha[:, None] + xi[None, :] + eps

    n_obs = c.n_observed
    unit_ids = [f"t{i + 1}" if treated[i] else f"c{i + 1 - c.n_treat}" for i in range(N)]
    panel = PanelData(unit_ids, [str(t + 1) for t in range(T)], Y, X[:, :, :n_obs], D,
                      covariate_names=[f"x{j + 1}" for j in range(n_obs)])
    true_att = delta[treated][:, c.t_pre:].mean(axis=0)
    latent = dict(X=X, F=F, gamma=gamma, beta=beta, alpha=alpha, xi=xi, eps=eps,
                  delta=delta, A_x=A_x, A_f=A_f[0], structural=structural)
    return SimulatedPanel(panel, true_att, latent)


# --------------------------------------------------------------------------
# Monte Carlo
# --------------------------------------------------------------------------

ESTIMATORS = ("ipca", "ife", "scm")


def rep_rng(seed: int, rep: int) -> np.random.Generator:
    """Independent stream for replication ``rep``; independent of scheduling."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(rep)]))


@dataclass
class McReport:
    """
    Finite-sample metrics per estimator over post-treatment periods.

    For estimator ``m`` with errors ``err[r, t] = att_hat[r, t] - att[r, t]``:

    * ``bias[m]`` -- mean error;
    * ``rmse[m]`` -- ``sqrt(mean(err**2))`` over all cells;
    * ``rmse_rep[m]`` -- per-replication RMSE over post-treatment periods,
      ``sqrt(mean_t err[r, t]**2)``, averaged over replications;
    * ``std[m]`` -- standard deviation of the error, so that
      ``rmse**2 == bias**2 + std**2``;
    * ``att_std[m]`` -- across-replication standard deviation of the
      estimated ATT, averaged (in quadrature) over periods.
    """

    config: dict
    n_reps: int
    k: int
    estimators: list
    bias: dict
    rmse: dict
    std: dict
    att_std: dict
    rmse_rep: dict
    bias_by_period: dict
    rmse_by_period: dict
    n_failed: dict
    errors: dict = field(default=None, repr=False)

    def to_dict(self, include_errors: bool = False) -> dict:
        d = {"config": self.config, "n_reps": self.n_reps, "k": self.k,
             "estimators": list(self.estimators), "bias": self.bias, "rmse": self.rmse,
             "std": self.std, "att_std": self.att_std, "rmse_rep": self.rmse_rep,
             "bias_by_period": self.bias_by_period, "rmse_by_period": self.rmse_by_period,
             "n_failed": self.n_failed}
        if include_errors and self.errors is not None:
            d["errors"] = {m: np.asarray(v).tolist() for m, v in self.errors.items()}
        return d


def _run_estimator(name: str, panel: PanelData, k: int):
    from .baselines import fit_ife, fit_scm
    from .csc import estimate
    from .ipca import FitConfig

    if name == "ipca":
        return estimate(panel, FitConfig(k=min(k, panel.n_covariates)), warn=False).att
    if name == "ife":
        return fit_ife(panel, k).att
    if name == "scm":
        return fit_scm(panel).att
    raise ValueError(f"unknown estimator {name!r}")


def _one_rep(args):
    config, estimators, k, seed, rep = args
    sim = simulate_panel(config, rep_rng(seed, rep))
    out = {}
    for m in estimators:
        try:
            out[m] = np.asarray(_run_estimator(m, sim.panel, k)) - sim.true_att
        except (ValueError, np.linalg.LinAlgError) as exc:
            logger.warning("rep %d: %s failed: %s", rep, m, exc)
            out[m] = None
    return out, sim.true_att


def _pool_map(fn, jobs, threads):
    threads = threads or os.cpu_count() or 1
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * threads))))


def monte_carlo(config: DgpConfig, estimators=("ipca",), n_reps: int = 200,
                seed: int = 0, k: int | None = None, threads: int | None = 1) -> McReport:
    """
    Repeat simulate-and-estimate ``n_reps`` times and summarize ATT errors.

    Replication ``r`` draws its panel from ``rep_rng(seed, r)`` so results do
    not depend on ``threads``. Estimator failures are logged, counted in
    ``n_failed`` and excluded.
    """
    estimators = [e.lower() for e in estimators]
    for e in estimators:
        if e not in ESTIMATORS:
            raise ValueError(f"unknown estimator {e!r}; choose from {ESTIMATORS}")
    k = config.k if k is None else k
    jobs = [(config, estimators, k, seed, r) for r in range(n_reps)]
    results = _pool_map(_one_rep, jobs, threads)

    bias, rmse, std, att_std, per_rep = {}, {}, {}, {}, {}
    bbp, rbp, failed, errs = {}, {}, {}, {}
    for m in estimators:
        rows = [(res[m], att) for res, att in results if res[m] is not None]
        failed[m] = n_reps - len(rows)
        if not rows:
            nan = float("nan")
            bias[m] = rmse[m] = std[m] = att_std[m] = per_rep[m] = nan
            bbp[m] = rbp[m] = []
            errs[m] = np.empty((0, config.t_post))
            continue
        E = np.array([r[0] for r in rows])
        est = E + np.array([r[1] for r in rows])
        errs[m] = E
        bias[m] = float(E.mean())
        rmse[m] = float(np.sqrt(np.mean(E ** 2)))
        per_rep[m] = float(np.mean(np.sqrt(np.mean(E ** 2, axis=1))))
        std[m] = float(E.std())
        att_std[m] = float(np.sqrt(np.mean(est.var(axis=0))))
        bbp[m] = E.mean(axis=0).tolist()
        rbp[m] = np.sqrt(np.mean(E ** 2, axis=0)).tolist()
    return McReport(config.to_dict(), n_reps, k, estimators, bias, rmse, std, att_std,
                    per_rep, bbp, rbp, failed, errs)


def monte_carlo_grid(base: DgpConfig, t_pre=(10, 20, 40), n_ctrl=(10, 20, 40),
                     alpha=(1 / 3, 2 / 3, 1.0), **kwargs) -> list:
    """Run :func:`monte_carlo` over every (t_pre, n_ctrl, alpha) cell."""
    reports = []
    for tp in t_pre:
        for nc in n_ctrl:
            for a in alpha:
                cfg = base.replace(t_pre=tp, n_ctrl=nc, alpha_observed=a)
                reports.append(monte_carlo(cfg, **kwargs))
    return reports


def _alpha_label(a: float) -> str:
    for num, den in ((1, 3), (2, 3), (1, 1), (1, 2)):
        if abs(a - num / den) < 1e-9:
            return "1" if den == 1 else f"{num}/{den}"
    return f"{a:g}"


def render_table(reports: list, estimator: str = "ipca") -> str:
    """Text table with rows (T_pre, N_ctrl) and columns alpha x {Bias, RMSE, STD}."""
    cells = {}
    alphas, rows = [], []
    for r in reports:
        c = r.config
        key = (c["t_pre"], c["n_ctrl"])
        a = c["alpha_observed"]
        if a not in alphas:
            alphas.append(a)
        if key not in rows:
            rows.append(key)
        cells[key, a] = r
    alphas.sort()
    labels = [_alpha_label(a) for a in alphas]
    w = 8
    head1 = f"{'alpha':>13} |" + "|".join(
        "".join(f"{lab:>{w}}" for lab in labels) for _ in range(3))
    head2 = f"{'T0':>5}{'N_ctrl':>8} |" + "|".join(
        f"{name:^{w * len(alphas)}}" for name in ("Bias", "RMSE", "STD"))
    lines = [f"[{estimator.upper()}]", head1, head2, "-" * len(head1)]
    for key in rows:
        parts = []
        for metric in ("bias", "rmse", "att_std"):
            vals = []
            for a in alphas:
                r = cells.get((key, a))
                v = getattr(r, metric).get(estimator) if r and estimator in r.estimators else None
                vals.append(f"{v:>{w}.3f}" if v is not None else f"{'-':>{w}}")
            parts.append("".join(vals))
        lines.append(f"{key[0]:>5}{key[1]:>8} |" + "|".join(parts))
    return "\n".join(lines)
