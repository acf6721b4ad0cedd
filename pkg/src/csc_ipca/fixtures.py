"""
Golden fixtures backed by independent oracles.

Each fixture pairs a library computation with an oracle that does not call
the code under test (explicit loops, dense inverses, full SVDs, direct
formula evaluation, or a simulation with a known truth). The JSON files in
``fixtures/`` store the inputs, the oracle's answer and a tolerance;
:func:`verify_fixtures` re-runs both sides.

Comparison modes:

``close``
    ``max|actual - expected| <= tol * max(1, max|expected|)``; the oracle is
    re-run and must reproduce ``expected`` (otherwise the fixture is stale).
``le`` / ``ge`` / ``between``
    ``actual`` must satisfy the stored bound(s).

Regenerate with ``python3 -m csc_ipca.fixtures --regenerate``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

FIXTURE_DIR = Path(__file__).with_name("fixtures")
MANIFEST = "manifest.json"


@dataclass
class Case:
    name: str
    module: str
    oracle_doc: str
    inputs: dict
    actual: Callable
    mode: str = "close"
    tol: float = 1e-10
    oracle: Callable | None = None
    bound: object = None
    slow: bool = False


CASES: dict = {}


def case(**kw):
    def deco(fn):
        c = Case(name=fn.__name__, actual=fn, **kw)
        CASES[c.name] = c
        return fn
    return deco


def _rng(seed):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------- ipca_core

def _obj_inputs(inp):
    r = _rng(inp["seed"])
    N, T, L, K = inp["n"], inp["t"], inp["l"], inp["k"]
    return r.standard_normal((N, T)), r.standard_normal((N, T, L)), \
        r.standard_normal((L, K)), r.standard_normal((K, T))


def _objective_loop(inp):
    Y, X, G, F = _obj_inputs(inp)
    total = 0.0
    for i in range(Y.shape[0]):
        for t in range(Y.shape[1]):
            pred = 0.0
            for l in range(X.shape[2]):
                for k in range(G.shape[1]):
                    pred += X[i, t, l] * G[l, k] * F[k, t]
            total += (Y[i, t] - pred) ** 2
    return total


@case(module="ipca_core", oracle_doc="cell-by-cell double loop", tol=1e-12,
      inputs=dict(seed=11, n=3, t=4, l=2, k=1), oracle=_objective_loop)
def objective_double_loop(inp):
    from .ipca import IpcaParams, objective
    Y, X, G, F = _obj_inputs(inp)
    return objective(IpcaParams(G, F), Y, X)


def _pca_oracle(inp):
    Y = _rng(inp["seed"]).standard_normal((5, 8))
    s = np.linalg.svd(Y, compute_uv=False)
    return float(np.sum(s[inp["k"]:] ** 2))


@case(module="ipca_core", oracle_doc="sum of squared discarded singular values (full SVD)",
      tol=1e-10, inputs=dict(seed=12, k=2), oracle=_pca_oracle)
def pca_reconstruction(inp):
    from .ipca import init_factors_pca
    Y = _rng(inp["seed"]).standard_normal((5, 8))
    F = init_factors_pca(Y, inp["k"])
    P = F.T @ np.linalg.solve(F @ F.T, F)       # projector onto the factor rows
    R = Y - Y @ P
    return float(np.sum(R * R))


def _uf_inputs(inp):
    r = _rng(inp["seed"])
    return r.standard_normal((3, 2)), r.standard_normal((6, 3)), r.standard_normal(6)


def _uf_oracle(inp):
    G, Xt, Yt = _uf_inputs(inp)
    Z = Xt @ G
    return (np.linalg.inv(Z.T @ Z) @ (Z.T @ Yt)).tolist()


@case(module="ipca_core", oracle_doc="dense normal equations with explicit inverse",
      tol=1e-10, inputs=dict(seed=13), oracle=_uf_oracle)
def update_factors_lstsq(inp):
    from .ipca import update_factors
    G, Xt, Yt = _uf_inputs(inp)
    return update_factors(G, Xt, Yt).tolist()


def _ug_inputs(inp):
    r = _rng(inp["seed"])
    return r.standard_normal((4, 5)), r.standard_normal((4, 5, 2)), r.standard_normal((2, 5))


def _ug_oracle(inp):
    from .ipca import IpcaParams, objective, update_gamma
    Y, X, F = _ug_inputs(inp)
    g = update_gamma(F, X, Y)
    r = _rng(inp["seed"] + 1)
    best = math.inf
    for _ in range(inp["trials"]):
        d = r.standard_normal(g.shape)
        d *= inp["radius"] / np.linalg.norm(d)
        best = min(best, objective(IpcaParams(g + d, F), Y, X))
    return best


@case(module="ipca_core", mode="le",
      oracle_doc="objective at update_gamma <= min over 1000 random 0.1-norm perturbations",
      inputs=dict(seed=14, trials=1000, radius=0.1))
def update_gamma_local_opt(inp):
    from .ipca import IpcaParams, objective, update_gamma
    Y, X, F = _ug_inputs(inp)
    return objective(IpcaParams(update_gamma(F, X, Y), F), Y, X) - _ug_oracle(inp)


@case(module="ipca_core", mode="le", bound=1e-12,
      oracle_doc="monotonicity audit of the ALS objective path on a simulated draw",
      inputs=dict(seed=15, n_ctrl=45, t=30, l=10, k=3))
def als_monotone(inp):
    from .ipca import FitConfig, fit_als
    from .simulation import DgpConfig, simulate_panel
    cfg = DgpConfig(n_treat=1, n_ctrl=inp["n_ctrl"], t_pre=inp["t"] - 1, t_post=1,
                    l=inp["l"], k=inp["k"], seed=inp["seed"])
    p = simulate_panel(cfg).panel
    _, d = fit_als(p.Y[1:], p.X[1:], FitConfig(k=inp["k"]))
    return float(np.max(np.diff(d.objective_path), initial=-math.inf))


# ------------------------------------------------------------ normalization

def _constraint_errors(gamma, F):
    from .ipca import IpcaParams
    from .normalization import normalize
    n = normalize(IpcaParams(gamma, F))
    e1 = np.max(np.abs(n.gamma.T @ n.gamma - np.eye(gamma.shape[1])))
    S = n.factors @ n.factors.T / F.shape[1]
    off = S - np.diag(np.diag(S))
    e2 = np.max(np.abs(off)) / np.max(np.diag(S))
    return max(float(e1), float(e2))


@case(module="normalization", mode="le", bound=1e-8,
      oracle_doc="direct multiplication of the rotated pair (Gamma'Gamma and FF'/T)",
      inputs=dict(seed=21, l=10, k=3, t=30))
def rotation_constraints(inp):
    r = _rng(inp["seed"])
    return _constraint_errors(r.standard_normal((inp["l"], inp["k"])),
                              r.standard_normal((inp["k"], inp["t"])))


@case(module="normalization", mode="le", bound=1e-8,
      oracle_doc="constructed equal-eigenvalue K=2 pair; constraints checked directly",
      inputs=dict(seed=22, l=5, t=8))
def normalize_equal_eigenvalues(inp):
    r = _rng(inp["seed"])
    q, _ = np.linalg.qr(r.standard_normal((inp["l"], 2)))
    # orthonormal rows scaled equally: FF'/T = c * I
    v, _ = np.linalg.qr(r.standard_normal((inp["t"], 2)))
    F = 3.0 * v.T * math.sqrt(inp["t"])
    return _constraint_errors(q, F)


# ---------------------------------------------------------------------- csc

def _imp_inputs(inp):
    r = _rng(inp["seed"])
    return r.standard_normal((4, 3)), r.standard_normal((3, 6)), r.standard_normal((5, 6, 4))


def _imp_oracle(inp):
    from .ipca import IpcaParams, fitted_values
    G, F, X = _imp_inputs(inp)
    return fitted_values(IpcaParams(G, F), X).tolist()


@case(module="csc", oracle_doc="structural component from the objective module", tol=1e-12,
      inputs=dict(seed=31), oracle=_imp_oracle)
def impute_consistency(inp):
    from .csc import impute
    G, F, X = _imp_inputs(inp)
    return impute(G, F, X).tolist()


def _stag_oracle(inp):
    # unit a treated at t=5 (0-based 4), unit b at t=7 (0-based 6), T=10;
    # effects equal to (unit value) + event time
    T = 10
    first = {"a": 4, "b": 6}
    base = {"a": 1.0, "b": 3.0}
    by_h = {}
    for u in ("a", "b"):
        for t in range(first[u], T):
            by_h.setdefault(t - first[u], []).append(base[u] + (t - first[u]))
    return [sum(v) / len(v) for _, v in sorted(by_h.items())]


@case(module="csc", oracle_doc="hand-enumerated event-time alignment", tol=1e-12,
      inputs=dict(), oracle=_stag_oracle)
def staggered_alignment(inp):
    from .csc import att_series
    T = 10
    first = np.array([4, 6])
    base = np.array([1.0, 3.0])
    h = np.arange(T)[None, :] - first[:, None]
    y1 = np.where(h >= 0, base[:, None] + h, 0.0)
    att, _ = att_series(y1, np.zeros((2, T)), first_treated=first)
    return att.tolist()


@case(module="csc", mode="le", bound=1.0, slow=True,
      oracle_doc="placebo simulation: |mean ATT| / (2 Monte Carlo SE) over 100 seeds",
      inputs=dict(seed=33, n_seeds=100))
def placebo_centered(inp):
    return _placebo(inp)


def _placebo(inp):
    from .csc import estimate
    from .ipca import FitConfig
    from .simulation import DgpConfig, rep_rng, simulate_panel
    cfg = DgpConfig(effect_scale=0.0, effect_noise_sd=0.0)
    vals = []
    for s in range(inp["n_seeds"]):
        sim = simulate_panel(cfg, rep_rng(inp["seed"], s))
        vals.append(float(np.mean(estimate(sim.panel, FitConfig(k=3), warn=False).att)))
    vals = np.array(vals)
    return float(abs(vals.mean()) / (2 * vals.std(ddof=1) / math.sqrt(vals.size)))


# ---------------------------------------------------------------- inference

def _stat_oracle(inp):
    u = _rng(inp["seed"]).standard_normal(inp["n"])
    return sum(abs(x) ** 2 for x in u) / math.sqrt(len(u))


@case(module="inference", oracle_doc="direct formula, q=2", tol=1e-12,
      inputs=dict(seed=41, n=7), oracle=_stat_oracle)
def test_statistic_q2(inp):
    from .inference import test_statistic
    return test_statistic(_rng(inp["seed"]).standard_normal(inp["n"]), q=2)


@case(module="inference", oracle_doc="hand enumeration of the 4 cyclic shifts", tol=0.0,
      inputs=dict(u=[0, 0, 0, 10], t_post=1), oracle=lambda inp: 0.25)
def permutation_hand_t4(inp):
    from .inference import permutation_pvalue
    return permutation_pvalue(inp["u"], inp["t_post"])[0]


def _rejection_rate(inp, true_null: bool):
    from .inference import NullSpec, conformal_pvalue
    from .ipca import FitConfig
    from .simulation import DgpConfig, rep_rng, simulate_panel
    cfg = DgpConfig(**inp.get("dgp", {}))
    hits = 0
    for s in range(inp["n_seeds"]):
        sim = simulate_panel(cfg, rep_rng(inp["seed"], s))
        theta = sim.true_att if true_null else np.zeros(cfg.t_post)
        hits += conformal_pvalue(sim.panel, NullSpec(theta), FitConfig(k=cfg.k)).p_value <= 0.1
    return hits / inp["n_seeds"]


@case(module="inference", mode="between", bound=[0.04, 0.20], slow=True,
      oracle_doc="size simulation: null equal to the realized effect path",
      inputs=dict(seed=42, n_seeds=200))
def conformal_size(inp):
    return _rejection_rate(inp, True)


POWER_DGP = dict(noise_sd=0.1, effect_noise_sd=0.1, beta_range=[0.0, 0.0], fe_range=[0.0, 0.0])


@case(module="inference", mode="ge", bound=0.8, slow=True,
      oracle_doc="power simulation: zero null against the ramp effect, low noise",
      inputs=dict(seed=43, n_seeds=200, dgp=POWER_DGP))
def conformal_power(inp):
    return _rejection_rate(inp, False)


# ----------------------------------------------------------------- tuning

NOISELESS_K2 = dict(n_treat=5, n_ctrl=30, t_pre=10, t_post=5, l=6, k=2, noise_sd=0.0,
                    beta_range=[0.0, 0.0], fe_range=[0.0, 0.0], effect_scale=0.0,
                    effect_noise_sd=0.0)


def _tuning_hits(inp, method):
    from .simulation import DgpConfig, rep_rng, simulate_panel
    from .tuning import tune_bootstrap, tune_loo
    cfg = DgpConfig(**inp["dgp"])
    hits = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for s in range(inp["n_seeds"]):
            p = simulate_panel(cfg, rep_rng(inp["seed"], s)).panel
            if method == "bootstrap":
                r = tune_bootstrap(p, inp["k_max"], inp["n_reps"], seed=s)
            else:
                r = tune_loo(p, inp["k_max"])
            hits += r.k_best == cfg.k
    return hits / inp["n_seeds"]


@case(module="tuning", mode="ge", bound=0.95, slow=True,
      oracle_doc="noiseless simulation with known K=2",
      inputs=dict(seed=51, n_seeds=10, k_max=4, n_reps=20, dgp=NOISELESS_K2))
def tune_bootstrap_noiseless(inp):
    return _tuning_hits(inp, "bootstrap")


@case(module="tuning", mode="ge", bound=0.95, slow=True,
      oracle_doc="noiseless simulation with known K=2",
      inputs=dict(seed=52, n_seeds=10, k_max=4, dgp=NOISELESS_K2))
def tune_loo_noiseless(inp):
    return _tuning_hits(inp, "loo")


# -------------------------------------------------------------- simulation

@case(module="simulation", mode="le", bound=0.1,
      oracle_doc="analytic stationary mean (I - A)^-1 mu, 20000 periods",
      inputs=dict(seed=61, dim=3, drift=2.0, radius=0.6, t=20000))
def var1_stationary_mean(inp):
    from .simulation import draw_var1
    x, A = draw_var1(1, inp["dim"], inp["drift"], inp["radius"], inp["t"], _rng(inp["seed"]),
                     return_transitions=True)
    mean = np.linalg.solve(np.eye(inp["dim"]) - A[0], np.full(inp["dim"], inp["drift"]))
    return float(np.max(np.abs(x[0].mean(axis=0) - mean)))


def _desk_scale_run(inp):
    from .simulation import DgpConfig, monte_carlo
    cfg = DgpConfig(**inp["dgp"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        r = monte_carlo(cfg, ("ipca",), n_reps=inp["n_reps"], seed=inp["seed"], threads=1)
    return [r.bias["ipca"], r.rmse["ipca"], r.att_std["ipca"]]


DESK_SCALE_DGP = dict(n_treat=5, n_ctrl=40, t_pre=10, t_post=5, l=9, k=3, alpha_observed=1.0)


@case(module="simulation", tol=1e-9, slow=True, oracle=_desk_scale_run,
      oracle_doc="recorded 200-rep Monte Carlo (bias, rmse, att_std), seed 0",
      inputs=dict(seed=0, n_reps=200, dgp=DESK_SCALE_DGP))
def mc_desk_scale(inp):
    return _desk_scale_run(inp)


# -------------------------------------------------------------- machinery

def _flat(v):
    return np.atleast_1d(np.asarray(v, dtype=float)).ravel()


def _close(a, b, tol):
    a, b = _flat(a), _flat(b)
    if a.shape != b.shape:
        return False
    return bool(np.max(np.abs(a - b), initial=0.0) <= tol * max(1.0, np.max(np.abs(b), initial=0.0)))


def _record(c: Case) -> dict:
    rec = {"name": c.name, "module": c.module, "tag": "DERIVED", "oracle": c.oracle_doc,
           "mode": c.mode, "inputs": c.inputs, "slow": c.slow}
    if c.mode == "close":
        rec["expected"] = c.oracle(c.inputs)
        rec["tolerance"] = c.tol
    elif c.mode == "le" and c.bound is None:
        rec["bound"] = 0.0
    else:
        rec["bound"] = c.bound
    return rec


def regenerate(directory: Path = FIXTURE_DIR) -> list:
    """Re-run every oracle and rewrite the fixture files and manifest."""
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for c in CASES.values():
        (directory / f"{c.name}.json").write_text(
            json.dumps(_record(c), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        names.append(c.name)
    manifest = {"fixtures": [{"name": n, "module": CASES[n].module, "file": f"{n}.json",
                              "slow": CASES[n].slow} for n in names],
                "regenerate": "python3 -m csc_ipca.fixtures --regenerate"}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return names


@dataclass
class FixtureOutcome:
    name: str
    passed: bool
    stale: bool
    actual: object
    detail: str


def verify_fixture(rec: dict) -> FixtureOutcome:
    c = CASES.get(rec["name"])
    if c is None:
        return FixtureOutcome(rec["name"], False, True, None, "no registered case")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        actual = c.actual(rec["inputs"])
    mode = rec["mode"]
    stale = False
    if mode == "close":
        exp, tol = rec["expected"], rec["tolerance"]
        stale = not _close(c.oracle(rec["inputs"]), exp, tol)
        ok = _close(actual, exp, tol)
        detail = f"tol {tol:g}"
    elif mode == "le":
        ok = float(actual) <= rec["bound"]
        detail = f"<= {rec['bound']:g}"
    elif mode == "ge":
        ok = float(actual) >= rec["bound"]
        detail = f">= {rec['bound']:g}"
    else:
        lo, hi = rec["bound"]
        ok = lo <= float(actual) <= hi
        detail = f"in [{lo:g}, {hi:g}]"
    return FixtureOutcome(rec["name"], ok and not stale, stale, actual, detail)


def verify_fixtures(directory: Path = FIXTURE_DIR, include_slow: bool = True) -> list:
    """
    Check every fixture listed in the manifest.

    Returns
    -------
    list of FixtureOutcome
        A fixture fails when the library disagrees with the stored answer or
        when the oracle no longer reproduces it (stale).
    """
    with open(directory / MANIFEST, encoding="utf-8") as fh:
        manifest = json.load(fh)
    out = []
    for entry in manifest["fixtures"]:
        if entry.get("slow") and not include_slow:
            continue
        with open(directory / entry["file"], encoding="utf-8") as fh:
            out.append(verify_fixture(json.load(fh)))
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python3 -m csc_ipca.fixtures")
    ap.add_argument("--regenerate", action="store_true")
    ap.add_argument("--quick", action="store_true", help="skip slow simulation fixtures")
    args = ap.parse_args(argv)
    if args.regenerate:
        for n in regenerate():
            print(f"wrote {n}")
    results = verify_fixtures(include_slow=not args.quick)
    for r in results:
        flag = "PASS" if r.passed else ("STALE" if r.stale else "FAIL")
        print(f"{flag:5} {r.name:28} {r.detail}")
    return 0 if all(r.passed for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
