"""
Balanced panel data model, treatment-pattern validation and CSV ingestion.

A panel holds ``N`` units observed over ``T`` ordered periods with an
outcome matrix ``Y`` (N x T), a covariate tensor ``X`` (N x T x L) and a
binary, absorbing treatment indicator ``D`` (N x T).
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class PanelError(ValueError):
    """Raised when panel data violates a structural requirement."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PanelData:
    """
    Balanced N x T panel.

    Attributes
    ----------
    unit_ids : list of str
        Unit identifiers, length N.
    time_ids : list of str
        Ordered period labels, length T. Labels are ordinal only.
    Y : ndarray, shape (N, T)
        Outcome.
    X : ndarray, shape (N, T, L)
        Covariates.
    D : ndarray of int8, shape (N, T)
        Treatment indicator, absorbing per unit.
    covariate_names : list of str
        Names of the L covariate columns.
    """

    unit_ids: list
    time_ids: list
    Y: np.ndarray
    X: np.ndarray
    D: np.ndarray
    covariate_names: list = field(default_factory=list)

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        D = np.asarray(self.D)
        if Y.ndim != 2:
            raise PanelError(f"Y must be 2-D (N, T), got shape {Y.shape}")
        if X.ndim != 3:
            raise PanelError(f"X must be 3-D (N, T, L), got shape {X.shape}")
        if X.shape[:2] != Y.shape or D.shape != Y.shape:
            raise PanelError(
                f"dimension mismatch: Y {Y.shape}, X {X.shape}, D {D.shape}")
        if len(self.unit_ids) != Y.shape[0] or len(self.time_ids) != Y.shape[1]:
            raise PanelError("unit_ids/time_ids lengths do not match Y")
        if not np.all(np.isin(D, (0, 1))):
            raise PanelError("D must be binary (0/1)")
        # NaN is tolerated in treated post-period outcomes only (never read by
        # the estimators); covariates must be complete.
        if not np.all(np.isfinite(X)):
            raise PanelError("X contains missing or non-finite values")
        if not np.all(np.isfinite(Y) | (D == 1)):
            raise PanelError("Y contains missing or non-finite untreated values")
        names = list(self.covariate_names) or [f"x{j + 1}" for j in range(X.shape[2])]
        if len(names) != X.shape[2]:
            raise PanelError("covariate_names length does not match L")
        object.__setattr__(self, "unit_ids", [str(u) for u in self.unit_ids])
        object.__setattr__(self, "time_ids", [str(t) for t in self.time_ids])
        object.__setattr__(self, "covariate_names", names)
        object.__setattr__(self, "Y", _frozen(Y))
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "D", _frozen(D.astype(np.int8)))

    @property
    def n_units(self) -> int:
        return self.Y.shape[0]

    @property
    def n_periods(self) -> int:
        return self.Y.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.X.shape[2]

    def replace(self, **changes) -> "PanelData":
        kw = dict(unit_ids=self.unit_ids, time_ids=self.time_ids, Y=self.Y,
                  X=self.X, D=self.D, covariate_names=self.covariate_names)
        kw.update(changes)
        return PanelData(**kw)


class PatternKind(str, enum.Enum):
    BLOCK = "block"
    STAGGERED = "staggered"


@dataclass(frozen=True)
class TreatmentPattern:
    """
    Treated/control partition and per-unit pre-treatment lengths.

    ``t_pre[j]`` is the number of untreated periods of ``treated_units[j]``,
    i.e. its first treated period in 0-based indexing.
    """

    kind: PatternKind
    treated_units: np.ndarray
    control_units: np.ndarray
    t_pre: np.ndarray
    n_periods: int

    @property
    def n_treat(self) -> int:
        return len(self.treated_units)

    @property
    def n_ctrl(self) -> int:
        return len(self.control_units)

    @property
    def block_t_pre(self) -> int:
        """Common pre-treatment length; only defined under block assignment."""
        if self.kind is not PatternKind.BLOCK:
            raise PanelError("treatment timing is staggered; no common T_pre")
        return int(self.t_pre[0])

    def pre_mask(self) -> np.ndarray:
        """Boolean (N_treat, T) mask of the treated units' untreated cells."""
        return np.arange(self.n_periods)[None, :] < self.t_pre[:, None]


def classify_treatment(panel: PanelData) -> TreatmentPattern:
    """
    Derive the treatment pattern from ``panel.D``.

    Raises
    ------
    PanelError
        If no unit is ever treated, no unit is never treated, or treatment
        switches off after switching on.
    """
    D = panel.D.astype(bool)
    reversal = D[:, :-1] & ~D[:, 1:]
    bad = np.flatnonzero(reversal.any(axis=1))
    if bad.size:
        i = int(bad[0])
        t = int(np.flatnonzero(reversal[i])[0]) + 1
        raise PanelError(
            f"non-absorbing treatment: unit {panel.unit_ids[i]!r} is untreated "
            f"at {panel.time_ids[t]!r} after having been treated")
    ever = D.any(axis=1)
    treated = np.flatnonzero(ever)
    control = np.flatnonzero(~ever)
    if treated.size == 0:
        raise PanelError("no treated unit: nothing to estimate")
    if control.size == 0:
        raise PanelError("control group is empty")
    t_pre = D[treated].argmax(axis=1)
    kind = PatternKind.BLOCK if np.all(t_pre == t_pre[0]) else PatternKind.STAGGERED
    return TreatmentPattern(kind, treated, control, t_pre, panel.n_periods)


@dataclass(frozen=True)
class PanelView:
    """
    Read-only sub-panel addressed by unit and period index sets.

    ``mask`` selects the cells that belong to the view; it is all-True except
    for ragged (staggered) pre- and post-treatment views.
    """

    panel: PanelData
    units: np.ndarray
    periods: np.ndarray
    mask: np.ndarray

    @property
    def Y(self) -> np.ndarray:
        return self.panel.Y[np.ix_(self.units, self.periods)]

    @property
    def X(self) -> np.ndarray:
        return self.panel.X[np.ix_(self.units, self.periods)]

    @property
    def shape(self) -> tuple:
        return (len(self.units), len(self.periods))

    @property
    def n_cells(self) -> int:
        return int(self.mask.sum())

    def cells(self):
        """Set of (unit, period) panel coordinates covered by the view."""
        ii, tt = np.nonzero(self.mask)
        return {(int(self.units[i]), int(self.periods[t])) for i, t in zip(ii, tt)}


@dataclass(frozen=True)
class PanelSplit:
    ctrl_all: PanelView
    treat_pre: PanelView
    treat_post: PanelView


def split(panel: PanelData, pattern: TreatmentPattern | None = None) -> PanelSplit:
    """Partition a panel into control, treated-pre and treated-post views."""
    if pattern is None:
        pattern = classify_treatment(panel)
    if pattern.n_ctrl == 0:
        raise PanelError("control group is empty")
    if pattern.n_treat == 0:
        raise PanelError("no treated unit: nothing to estimate")
    if np.any(pattern.t_pre == 0):
        j = int(np.flatnonzero(pattern.t_pre == 0)[0])
        raise PanelError(
            f"treated unit {panel.unit_ids[pattern.treated_units[j]]!r} has no "
            "pre-treatment period (t_pre = 0)")
    T = panel.n_periods
    all_t = np.arange(T)
    ctrl = PanelView(panel, pattern.control_units, all_t,
                     _frozen(np.ones((pattern.n_ctrl, T), dtype=bool)))
    lo, hi = int(pattern.t_pre.min()), int(pattern.t_pre.max())
    pre_periods = np.arange(hi)
    post_periods = np.arange(lo, T)
    pre_mask = pre_periods[None, :] < pattern.t_pre[:, None]
    post_mask = post_periods[None, :] >= pattern.t_pre[:, None]
    return PanelSplit(
        ctrl_all=ctrl,
        treat_pre=PanelView(panel, pattern.treated_units, pre_periods, _frozen(pre_mask)),
        treat_post=PanelView(panel, pattern.treated_units, post_periods, _frozen(post_mask)),
    )


def standardize_covariates(panel: PanelData,
                           pattern: TreatmentPattern | None = None) -> PanelData:
    """Z-score each covariate using control-sample moments, applied to all units."""
    if pattern is None:
        pattern = classify_treatment(panel)
    Xc = panel.X[pattern.control_units].reshape(-1, panel.n_covariates)
    mu = Xc.mean(axis=0)
    sd = Xc.std(axis=0)
    sd[sd == 0] = 1.0
    return panel.replace(X=(panel.X - mu) / sd)


def add_intercept(panel: PanelData) -> PanelData:
    """Append a constant covariate column named ``const``."""
    ones = np.ones(panel.X.shape[:2] + (1,))
    return panel.replace(X=np.concatenate([panel.X, ones], axis=2),
                         covariate_names=panel.covariate_names + ["const"])


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

DEFAULT_SCHEMA = {"unit": "unit", "time": "time", "y": "y", "d": "d"}


def _ordinal_key(labels: Sequence[str]):
    try:
        vals = [float(s) for s in labels]
    except ValueError:
        return lambda s: s
    if all(math.isfinite(v) for v in vals):
        return float
    return lambda s: s


def load_csv(path, schema: dict | None = None,
             covariates: Sequence[str] | None = None) -> PanelData:
    """
    Read a long-format CSV (``unit,time,y,d,x1..xL``) into a balanced panel.

    Parameters
    ----------
    path : str or Path
        UTF-8 CSV with a header row.
    schema : dict, optional
        Overrides for the ``unit``, ``time``, ``y`` and ``d`` column names.
    covariates : sequence of str, optional
        Covariate columns. By default every remaining column is a covariate,
        in header order.

    Raises
    ------
    PanelError
        On a missing (unit, time) cell, a duplicated cell, a non-binary
        treatment value or a non-numeric field. Row numbers are 1-based
        counting the header as row 1.
    """
    cols = dict(DEFAULT_SCHEMA)
    if schema:
        cols.update({k: v for k, v in schema.items() if v})
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for role in ("unit", "time", "y", "d"):
            if cols[role] not in header:
                raise PanelError(f"{path}: missing column {cols[role]!r}")
        if covariates is None:
            reserved = {cols[r] for r in ("unit", "time", "y", "d")}
            covariates = [h for h in header if h not in reserved]
        else:
            covariates = list(covariates)
            for c in covariates:
                if c not in header:
                    raise PanelError(f"{path}: missing covariate column {c!r}")
        if not covariates:
            raise PanelError(f"{path}: no covariate columns")
        iu, it = header.index(cols["unit"]), header.index(cols["time"])
        iy, idd = header.index(cols["y"]), header.index(cols["d"])
        ix = [header.index(c) for c in covariates]

        records = {}
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(header):
                raise PanelError(f"{path}: row {rowno}: expected {len(header)} "
                                 f"fields, got {len(row)}")
            u, t = row[iu].strip(), row[it].strip()

            def num(j, name):
                try:
                    v = float(row[j])
                except ValueError:
                    raise PanelError(f"{path}: row {rowno}: non-numeric value "
                                     f"{row[j]!r} in column {name!r}") from None
                return v

            y = num(iy, cols["y"])
            d = num(idd, cols["d"])
            if d not in (0.0, 1.0):
                raise PanelError(f"{path}: row {rowno}: non-binary treatment "
                                 f"value {row[idd]!r}")
            x = [num(j, c) for j, c in zip(ix, covariates)]
            if (u, t) in records:
                raise PanelError(f"{path}: row {rowno}: duplicate cell ({u}, {t})")
            records[(u, t)] = (y, int(d), x)

    if not records:
        raise PanelError(f"{path}: no data rows")
    units = sorted({k[0] for k in records}, key=_ordinal_key([k[0] for k in records]))
    times = sorted({k[1] for k in records}, key=_ordinal_key([k[1] for k in records]))
    N, T, L = len(units), len(times), len(covariates)
    Y = np.empty((N, T))
    D = np.empty((N, T), dtype=np.int8)
    X = np.empty((N, T, L))
    for i, u in enumerate(units):
        for t, s in enumerate(times):
            try:
                y, d, x = records[(u, s)]
            except KeyError:
                raise PanelError(f"{path}: unbalanced panel, missing cell "
                                 f"({u}, {s})") from None
            Y[i, t], D[i, t], X[i, t] = y, d, x
    return PanelData(units, times, Y, X, D, covariate_names=covariates)


def write_csv(panel: PanelData, path, schema: dict | None = None) -> None:
    """Write ``panel`` in long format, rows sorted by (unit, time)."""
    cols = dict(DEFAULT_SCHEMA)
    if schema:
        cols.update({k: v for k, v in schema.items() if v})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([cols["unit"], cols["time"], cols["y"], cols["d"]]
                   + panel.covariate_names)
        for i, u in enumerate(panel.unit_ids):
            for t, s in enumerate(panel.time_ids):
                w.writerow([u, s, repr(float(panel.Y[i, t])), int(panel.D[i, t])]
                           + [repr(float(v)) for v in panel.X[i, t]])
