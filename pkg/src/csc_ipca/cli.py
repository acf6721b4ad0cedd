"""
Command-line interface.

Subcommands: ``simulate``, ``estimate``, ``tune``, ``infer``, ``mc`` and
``report``. Every JSON output carries a ``config`` block with the fully
resolved options (minus ``--threads`` and output paths, which never affect
results). Errors are printed to stderr as one JSON object and the process
exits with status 1.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from .baselines import fit_ife, fit_scm
from .csc import estimate
from .inference import NullSpec, confidence_interval, conformal_pvalue
from .ipca import FitConfig
from .panel import classify_treatment, load_csv, write_csv
from .simulation import DgpConfig, monte_carlo, render_table, simulate_panel
from .tuning import largest_k, tune_bootstrap, tune_loo

logger = logging.getLogger("csc_ipca")

_ECHO_SKIP = {"threads", "out", "func", "dump_params", "verbose"}


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


# --------------------------------------------------------------------------
# serialization helpers
# --------------------------------------------------------------------------

def _clean(obj):
    """Recursively convert numpy types and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating))
                                          else v) for v in r])
    return buf.getvalue()


def _echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _ECHO_SKIP}


def _sibling(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


class _Writer:
    """Writes the main output to ``--out`` (or stdout) and sidecars next to it."""

    def __init__(self, out):
        self.out = Path(out) if out else None
        self.written = []

    def main(self, text: str):
        if self.out is None:
            sys.stdout.write(text)
        else:
            self._write(self.out, text)

    def side(self, suffix: str, text: str):
        if self.out is not None:
            self._write(_sibling(self.out, suffix), text)

    def _write(self, path: Path, text: str):
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        self.written.append(str(path))


def _load_json_or_value(spec: str):
    p = Path(spec)
    if p.exists():
        with open(p, encoding="utf-8") as fh:
            return json.load(fh)
    return json.loads(spec)


def _dgp_config(args) -> DgpConfig:
    d = {}
    if args.config:
        d.update(_load_json_or_value(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        try:
            d[key.strip()] = json.loads(val)
        except json.JSONDecodeError:
            d[key.strip()] = val
    if args.seed is not None:
        d["seed"] = args.seed
    try:
        return DgpConfig.from_dict(d)
    except TypeError as exc:
        raise CliError(f"bad config: {exc}") from None


def _load_panel(args):
    schema = {"unit": args.unit_col, "time": args.time_col, "y": args.y_col, "d": args.d_col}
    covs = [c.strip() for c in args.x_cols.split(",")] if args.x_cols else None
    return load_csv(args.data, schema=schema, covariates=covs)


def _fit_config(args) -> FitConfig:
    return FitConfig(k=args.k, tol=args.tol, max_iter=args.max_iter,
                     seed=0 if args.seed is None else args.seed, n_restarts=args.restarts)


def _parse_grid(spec):
    if spec is None:
        return None
    try:
        lo, hi, n = spec.split(":")
        return np.linspace(float(lo), float(hi), int(n))
    except ValueError:
        raise CliError(f"--grid expects lo:hi:n, got {spec!r}") from None


def _parse_null(spec, t_post):
    try:
        return NullSpec.constant(float(spec), t_post)
    except ValueError:
        pass
    val = _load_json_or_value(spec)
    if isinstance(val, dict):
        val = val.get("theta0", val.get("true_att"))
    return NullSpec(np.asarray(val, dtype=float))


def _run_tuner(panel, args, cfg):
    k_max = args.kmax or largest_k(panel, args.tune)
    if args.tune == "bootstrap":
        return tune_bootstrap(panel, k_max, n_reps=args.reps, config=cfg,
                              seed=0 if args.seed is None else args.seed,
                              threads=args.threads)
    return tune_loo(panel, k_max, config=cfg, threads=args.threads)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_simulate(args):
    if not args.out:
        raise CliError("simulate requires --out PATH for the panel CSV")
    cfg = _dgp_config(args)
    sim = simulate_panel(cfg)
    w = _Writer(args.out)
    w.out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(sim.panel, w.out)
    w.written.append(str(w.out))
    truth = {"config": _echo(args), "dgp": cfg.to_dict(), "true_att": sim.true_att,
             "treated_units": [u for u, d in zip(sim.panel.unit_ids, sim.panel.D[:, -1]) if d],
             "latent_dims": {"n_units": sim.panel.n_units, "n_periods": sim.panel.n_periods,
                             "l_total": cfg.l, "l_observed": cfg.n_observed, "k": cfg.k}}
    w.side(".truth.json", dumps(truth))
    return w


def _gap_rows(fitted, actual, t0_mask_post, band=None):
    """Rows of period, actual_mean, counterfactual_mean, att, ci_lo, ci_hi."""
    a = np.nanmean(actual, axis=0)
    c = fitted.mean(axis=0)
    rows = []
    post_idx = np.flatnonzero(t0_mask_post)
    for t in range(actual.shape[1]):
        lo = hi = None
        if band is not None and t0_mask_post[t]:
            j = int(np.searchsorted(post_idx, t))
            lo, hi = band[0][j], band[1][j]
        rows.append([t, a[t], c[t], a[t] - c[t], lo, hi])
    return rows


def cmd_estimate(args):
    panel = _load_panel(args)
    cfg = _fit_config(args)
    out = {"config": _echo(args), "time_ids": panel.time_ids}
    if args.tune:
        if args.method != "ipca":
            raise CliError("--tune applies to --method ipca only")
        tr = _run_tuner(panel, args, cfg)
        out["tuning"] = tr.to_dict()
        cfg = FitConfig(k=tr.k_best, tol=cfg.tol, max_iter=cfg.max_iter, seed=cfg.seed,
                        n_restarts=cfg.n_restarts)
    band = None
    if args.method == "ipca":
        fit = estimate(panel, cfg, standardize=args.standardize, intercept=args.intercept)
        out["fit"] = fit.to_dict()
        if args.infer:
            if args.standardize or args.intercept:
                raise CliError("--infer is not available with --standardize/--intercept")
            ci = confidence_interval(panel, cfg, grid=_parse_grid(args.grid), level=args.level)
            out["inference"] = ci.to_dict()
            band = (ci.ci_lower, ci.ci_upper)
        fitted, actual = fit.fitted, fit.actual
        pattern = fit.pattern
    else:
        if args.infer:
            raise CliError("--infer is available for --method ipca only")
        fit = fit_ife(panel, args.k) if args.method == "ife" else fit_scm(panel)
        out["fit"] = fit.to_dict()
        pattern = classify_treatment(panel)
        fitted, actual = fit.fitted, np.asarray(panel.Y[pattern.treated_units])
    post = ~np.all(pattern.pre_mask(), axis=0)
    gap = _csv_text(["period", "actual_mean", "counterfactual_mean", "att", "ci_lo", "ci_hi"],
                    [[panel.time_ids[r[0]]] + r[1:] for r in _gap_rows(fitted, actual, post, band)])
    w = _Writer(args.out)
    if args.format == "csv":
        w.main(gap)
        w.side(".config.json", dumps({"config": out["config"]}))
    else:
        w.main(dumps(out))
        w.side(".gap.csv", gap)
    if args.dump_params:
        if args.method != "ipca":
            raise CliError("--dump-params applies to --method ipca only")
        params = {"params_ctrl": fit.params_ctrl.to_dict(),
                  "gamma_treat_norm": {"dims": ["covariate", "factor"],
                                       "data": fit.gamma_treat_norm},
                  "factors_norm": {"dims": ["factor", "period"], "data": fit.factors_norm}}
        Path(args.dump_params).write_text(dumps(params), encoding="utf-8")
        w.written.append(args.dump_params)
    return w


def cmd_tune(args):
    panel = _load_panel(args)
    args.tune = args.method
    res = _run_tuner(panel, args, _fit_config(args))
    table = _csv_text(["k", "mse"], list(zip(res.k_values, res.mse_by_k)))
    w = _Writer(args.out)
    if args.format == "csv":
        w.main(table)
        w.side(".config.json", dumps({"config": _echo(args)}))
    else:
        w.main(dumps({"config": _echo(args), "tuning": res.to_dict()}))
        w.side(".mse.csv", table)
    return w


def cmd_infer(args):
    panel = _load_panel(args)
    cfg = _fit_config(args)
    res = confidence_interval(panel, cfg, grid=_parse_grid(args.grid), level=args.level)
    out = {"config": _echo(args), "interval": res.to_dict()}
    if args.null is not None:
        nul = _parse_null(args.null, res.att.size)
        out["test"] = conformal_pvalue(panel, nul, cfg).to_dict()
    t0 = panel.n_periods - res.att.size
    bands = _csv_text(["period", "att", "ci_lo", "ci_hi", "degenerate"],
                      [[panel.time_ids[t0 + s], res.att[s], res.ci_lower[s], res.ci_upper[s],
                        int(res.degenerate[s])] for s in range(res.att.size)])
    w = _Writer(args.out)
    if args.format == "csv":
        w.main(bands)
        w.side(".config.json", dumps(out))
    else:
        w.main(dumps(out))
        w.side(".bands.csv", bands)
    return w


def _int_list(s):
    return [int(v) for v in s.split(",")] if s else None


def _alpha_list(s):
    if not s:
        return None
    out = []
    for v in s.split(","):
        if "/" in v:
            a, b = v.split("/")
            out.append(float(a) / float(b))
        else:
            out.append(float(v))
    return out


def cmd_mc(args):
    base = _dgp_config(args)
    ests = [e.strip().lower() for e in args.estimators.split(",") if e.strip()]
    seed = base.seed
    cells = [(tp, nc, a)
             for tp in (_int_list(args.t_pre) or [base.t_pre])
             for nc in (_int_list(args.n_ctrl) or [base.n_ctrl])
             for a in (_alpha_list(args.alpha) or [base.alpha_observed])]
    reports = [monte_carlo(base.replace(t_pre=tp, n_ctrl=nc, alpha_observed=a), ests,
                           n_reps=args.reps, seed=seed, k=args.k, threads=args.threads)
               for tp, nc, a in cells]
    tables = "\n\n".join(render_table(reports, e) for e in ests) + "\n"
    out = {"config": _echo(args), "reports": [r.to_dict() for r in reports],
           "tables": {e: render_table(reports, e) for e in ests}}
    rows = []
    for r in reports:
        c = r.config
        for e in ests:
            rows.append([c["t_pre"], c["n_ctrl"], c["alpha_observed"], e, r.bias[e], r.rmse[e],
                         r.rmse_rep[e], r.std[e], r.att_std[e], r.n_failed[e]])
    table_csv = _csv_text(["t_pre", "n_ctrl", "alpha", "estimator", "bias", "rmse",
                           "rmse_rep", "std", "att_std", "n_failed"], rows)
    w = _Writer(args.out)
    if args.format == "csv":
        w.main(table_csv)
        w.side(".config.json", dumps({"config": out["config"]}))
    else:
        w.main(dumps(out))
        w.side(".table.txt", tables)
    if w.out is None:
        sys.stderr.write(tables)
    return w


def cmd_report(args):
    with open(args.input, encoding="utf-8") as fh:
        doc = json.load(fh)
    w = _Writer(args.out)
    if "reports" in doc:
        ests = doc["reports"][0]["estimators"] if doc["reports"] else []
        w.main("\n\n".join(doc.get("tables", {}).get(e, "") for e in ests) + "\n")
        return w
    fit = doc.get("fit", doc)
    if fit.get("method") != "ipca":
        raise CliError("report expects the JSON written by `estimate --method ipca` or `mc`")
    time_ids = doc.get("time_ids") or fit.get("time_ids")
    t_pre = fit["pattern"]["t_pre"]
    treated = fit["pattern"]["treated_units"]
    att = fit["att"]
    effects = fit["effects"]
    actual = np.array([[np.nan if v is None else v for v in row] for row in fit["actual"]])
    fitted = np.asarray(fit["fitted"], dtype=float)
    header = (["period", "event_time", "att"] + [f"effect_{u}" for u in treated]
              + ["actual_mean", "fitted_mean"])
    rows = []
    T = len(time_ids)
    first = min(t_pre)
    for t in range(T):
        h = t - first
        pre = h < 0
        row = [time_ids[t], h]
        if pre:
            row += [None] + [None] * len(treated)
        else:
            row += [att[h] if h < len(att) else None]
            row += [effects[j][h] if h < len(effects[j]) else None for j in range(len(treated))]
        row += [float(np.nanmean(actual[:, t])), float(fitted[:, t].mean())]
        rows.append(row)
    w.main(_csv_text(header, rows))
    return w


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _add_data_args(p):
    p.add_argument("--data", required=True, help="long-format panel CSV")
    p.add_argument("--unit-col", default="unit")
    p.add_argument("--time-col", default="time")
    p.add_argument("--y-col", default="y")
    p.add_argument("--d-col", default="d")
    p.add_argument("--x-cols", default=None, help="comma-separated covariate columns")


def _add_fit_args(p):
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--restarts", type=int, default=0)


def _add_dgp_args(p):
    p.add_argument("--config", default=None, help="DGP config as JSON file or inline JSON")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one DGP field (value parsed as JSON)")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("--out", default=None, help="main output path (default stdout)")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="csc-ipca", description="Instrumented-factor counterfactual estimation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="draw a simulated panel")
    _add_dgp_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", parents=[common], help="estimate the ATT")
    _add_data_args(p)
    _add_fit_args(p)
    p.add_argument("--method", choices=("ipca", "ife", "scm"), default="ipca")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--intercept", action="store_true")
    p.add_argument("--tune", choices=("bootstrap", "loo"), default=None)
    p.add_argument("--kmax", type=int, default=None)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--infer", action="store_true")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--grid", default=None, help="lo:hi:n constant-effect grid")
    p.add_argument("--dump-params", default=None, metavar="PATH")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("tune", parents=[common], help="select the number of factors")
    _add_data_args(p)
    _add_fit_args(p)
    p.add_argument("--method", choices=("bootstrap", "loo"), default="bootstrap")
    p.add_argument("--kmax", type=int, default=None)
    p.add_argument("--reps", type=int, default=100)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("infer", parents=[common], help="conformal p-values and bands")
    _add_data_args(p)
    _add_fit_args(p)
    p.add_argument("--null", default=None,
                   help="constant effect, inline JSON list, or JSON file with theta0/true_att")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--grid", default=None, help="lo:hi:n constant-effect grid")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("mc", parents=[common], help="Monte Carlo study")
    _add_dgp_args(p)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--estimators", default="ipca")
    p.add_argument("--k", type=int, default=None, help="factors used by the estimators")
    p.add_argument("--t-pre", default=None, help="comma list of T_pre values")
    p.add_argument("--n-ctrl", default=None, help="comma list of N_ctrl values")
    p.add_argument("--alpha", default=None, help="comma list, e.g. 1/3,2/3,1")
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("report", parents=[common], help="gap CSV or summary tables from JSON")
    p.add_argument("input", help="JSON written by estimate or mc")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if not args.verbose:
            warnings.simplefilter("ignore")
        if args.threads is not None and args.threads < 1:
            raise CliError("--threads must be >= 1")
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
