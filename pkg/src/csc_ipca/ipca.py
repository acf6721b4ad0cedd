"""
Alternating least squares for the instrumented factor model.

The model for a (sub-)panel is ``Y[i, t] = X[i, t] @ Gamma @ F[:, t] + e``
with ``Gamma`` of shape (L, K) and factors ``F`` of shape (K, T). Holding
one block fixed the sum of squared residuals is quadratic in the other,
so each update is a closed-form least-squares solve:

* factors: a cross-sectional regression per period of ``Y[:, t]`` on
  ``X[:, t] @ Gamma``;
* mapping matrix: a pooled regression of ``Y[i, t]`` on the L*K products
  ``F[k, t] * X[i, t, l]``.

Vectorization convention: ``gamma_vec = vec(Gamma)`` stacks the columns of
``Gamma`` (Fortran order), so the regressor of cell (i, t) is
``kron(F[:, t], X[i, t])``.

All functions accept an optional boolean ``mask`` of shape (N, T) selecting
the cells that enter the loss; unmasked cells are never read.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class DegeneratePeriodError(ValueError):
    """The instrumented loadings ``X_t Gamma`` vanish for a whole period."""


class UnderdeterminedError(ValueError):
    """Fewer usable cells than free parameters in a least-squares step."""


class RankDeficiencyError(ValueError):
    """A matrix required to have full rank does not."""


class RankDeficiencyWarning(UserWarning):
    pass


@dataclass(frozen=True)
class IpcaParams:
    """
    Mapping matrix and factor path.

    Attributes
    ----------
    gamma : ndarray, shape (L, K)
    factors : ndarray, shape (K, T)
    """

    gamma: np.ndarray
    factors: np.ndarray

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float, ndmin=2)
        f = np.array(self.factors, dtype=float, ndmin=2)
        if g.shape[1] != f.shape[0]:
            raise ValueError(f"gamma {g.shape} and factors {f.shape} disagree on K")
        g.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "factors", f)

    @property
    def k(self) -> int:
        return self.gamma.shape[1]

    def check_rank(self, rank_tol: float = 1e-10) -> None:
        s = np.linalg.svd(self.gamma, compute_uv=False)
        if s.size == 0 or s[-1] <= rank_tol * max(s[0], np.finfo(float).tiny):
            raise RankDeficiencyError("gamma does not have full column rank")

    def to_dict(self) -> dict:
        return {
            "gamma": {"dims": ["covariate", "factor"], "shape": list(self.gamma.shape),
                      "data": self.gamma.tolist()},
            "factors": {"dims": ["factor", "period"], "shape": list(self.factors.shape),
                        "data": self.factors.tolist()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IpcaParams":
        g = np.asarray(d["gamma"]["data"], dtype=float).reshape(d["gamma"]["shape"])
        f = np.asarray(d["factors"]["data"], dtype=float).reshape(d["factors"]["shape"])
        return cls(g, f)


@dataclass(frozen=True)
class FitConfig:
    """
    Settings for the ALS fit.

    ``rank_tol`` is relative: singular values below ``rank_tol`` times the
    largest one are discarded by the pseudo-inverse.
    """

    k: int
    tol: float = 1e-6
    max_iter: int = 1000
    seed: int = 0
    rank_tol: float = 1e-10
    n_restarts: int = 0

    def __post_init__(self):
        if not isinstance(self.k, (int, np.integer)) or self.k < 1:
            raise ValueError(f"k must be an integer >= 1, got {self.k!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.n_restarts < 0:
            raise ValueError("n_restarts must be >= 0")

    def check_dims(self, n: int, t: int, l: int) -> None:
        if self.k > min(n, t, l):
            raise ValueError(f"k={self.k} exceeds min(N, T, L) = {min(n, t, l)}")


@dataclass
class FitDiagnostics:
    iterations: int = 0
    objective_path: list = field(default_factory=list)
    converged: bool = False
    final_rel_change: float = math.inf
    n_pinv: int = 0

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "objective_path": list(self.objective_path),
                "converged": self.converged, "final_rel_change": self.final_rel_change,
                "n_pinv": self.n_pinv}


def _full_mask(Y, mask):
    if mask is None:
        return np.ones(Y.shape, dtype=bool)
    return np.broadcast_to(np.asarray(mask, dtype=bool), Y.shape)


def fitted_values(params: IpcaParams, X: np.ndarray) -> np.ndarray:
    """Structural component ``X[i, t] @ Gamma @ F[:, t]`` for every cell."""
    loadings = X @ params.gamma                     # (N, T, K)
    return np.einsum("ntk,kt->nt", loadings, params.factors)


def objective(params: IpcaParams, Y: np.ndarray, X: np.ndarray, mask=None) -> float:
    """Sum of squared residuals over the masked cells."""
    Y = np.asarray(Y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim != 3 or X.shape[:2] != Y.shape:
        raise ValueError(f"dimension mismatch: Y {Y.shape}, X {X.shape}")
    if X.shape[2] != params.gamma.shape[0] or params.factors.shape[1] != Y.shape[1]:
        raise ValueError(
            f"dimension mismatch: X {X.shape}, gamma {params.gamma.shape}, "
            f"factors {params.factors.shape}")
    m = _full_mask(Y, mask)
    r = (Y - fitted_values(params, X))[m]
    return math.fsum(r * r)


def _sign_fix_rows(a: np.ndarray) -> np.ndarray:
    """Flip rows so each row's largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(a), axis=1)
    s = np.sign(a[np.arange(a.shape[0]), idx])
    s[s == 0] = 1.0
    return a * s[:, None]


def init_factors_pca(Y_ctrl: np.ndarray, k: int, rank_tol: float = 1e-10) -> np.ndarray:
    """
    Leading ``k`` principal components of ``Y_ctrl`` as a (k, T) factor path.

    Row j is ``s_j * v_j`` (singular value times right singular vector),
    sign-fixed so its largest-magnitude entry is positive.
    """
    Y = np.asarray(Y_ctrl, dtype=float)
    if k > min(Y.shape):
        raise RankDeficiencyError(f"k={k} exceeds min(N, T)={min(Y.shape)}")
    _, s, vt = np.linalg.svd(Y, full_matrices=False)
    rank = int(np.sum(s > rank_tol * max(s[0], np.finfo(float).tiny)))
    if k > rank:
        raise RankDeficiencyError(
            f"k={k} exceeds the numerical rank {rank} of the outcome matrix")
    return _sign_fix_rows(s[:k, None] * vt[:k])


def _solve_psd(A: np.ndarray, b: np.ndarray, rank_tol: float):
    """Least-squares solve of A x = b for symmetric PSD A; returns (x, used_pinv)."""
    w = np.linalg.eigvalsh(A)
    if w[-1] > 0 and w[0] > rank_tol * w[-1]:
        return np.linalg.solve(A, b), False
    x = np.linalg.lstsq(A, b, rcond=rank_tol)[0]
    return x, True


def update_factors(gamma, X_t, Y_t, rank_tol: float = 1e-10, mask_t=None):
    """
    Cross-sectional OLS factor for one period.

    ``F_t = (Gamma' X_t' X_t Gamma)^+ Gamma' X_t' Y_t`` over the units selected
    by ``mask_t``.
    """
    gamma = np.asarray(gamma, dtype=float)
    X_t = np.asarray(X_t, dtype=float)
    Y_t = np.asarray(Y_t, dtype=float)
    if mask_t is not None:
        X_t, Y_t = X_t[mask_t], Y_t[mask_t]
    Z = X_t @ gamma
    if not np.any(Z):
        raise DegeneratePeriodError("X_t @ gamma is zero for every unit")
    f, _ = _solve_psd(Z.T @ Z, Z.T @ Y_t, rank_tol)
    return f


def _moments(Y, X, mask):
    """Per-period X'X (T, L, L) and X'Y (T, L) over masked cells, plus cell counts."""
    m = mask.astype(float)
    Xm = X * m[:, :, None]
    XX = np.einsum("ntl,ntj->tlj", Xm, X)
    XY = np.einsum("ntl,nt->tl", Xm, np.where(mask, Y, 0.0))
    return XX, XY, mask.sum(axis=0)


def _factors_from_moments(gamma, XX, XY, counts, rank_tol):
    T = XX.shape[0]
    K = gamma.shape[1]
    A = np.einsum("lk,tlj,jm->tkm", gamma, XX, gamma)
    b = XY @ gamma
    F = np.zeros((K, T))
    n_pinv = 0
    for t in range(T):
        if counts[t] == 0:
            continue
        if not np.any(A[t]):
            raise DegeneratePeriodError(f"X_t @ gamma is zero for every unit at period {t}")
        F[:, t], used = _solve_psd(A[t], b[t], rank_tol)
        n_pinv += used
    return F, n_pinv


def _gamma_from_moments(F, XX, XY, rank_tol):
    """Solve the pooled LK x LK normal equations; column-stacked vec(Gamma)."""
    K = F.shape[0]
    L = XX.shape[1]
    # denom[(k, a), (j, b)] = sum_t F[k,t] F[j,t] XX[t, a, b]
    denom = np.einsum("kt,jt,tab->kajb", F, F, XX).reshape(K * L, K * L)
    numer = np.einsum("kt,ta->ka", F, XY).reshape(K * L)
    g, used = _solve_psd(denom, numer, rank_tol)
    return g.reshape(K, L).T, used


def update_gamma(factors, X, Y, mask=None, rank_tol: float = 1e-10) -> np.ndarray:
    """
    Pooled OLS of ``Y[i, t]`` on ``kron(F[:, t], X[i, t])`` over masked cells.

    Returns Gamma with shape (L, K). A rank-deficient system is solved by
    pseudo-inverse and reported with a :class:`RankDeficiencyWarning`.
    """
    F = np.atleast_2d(np.asarray(factors, dtype=float))
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape[:2] != Y.shape or F.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: Y {Y.shape}, X {X.shape}, F {F.shape}")
    m = _full_mask(Y, mask)
    XX, XY, _ = _moments(Y, X, m)
    gamma, used = _gamma_from_moments(F, XX, XY, rank_tol)
    if used:
        warnings.warn("rank-deficient normal equations for gamma; pseudo-inverse used",
                      RankDeficiencyWarning, stacklevel=2)
    return gamma


def _rel_change(new, old):
    return np.linalg.norm(new - old) / (np.linalg.norm(old) + 1e-12)


def _als_from(F0, gamma0, XX, XY, counts, Y, X, mask, config: FitConfig):
    diag = FitDiagnostics()
    F, gamma = F0, gamma0
    if gamma is None:
        gamma, used = _gamma_from_moments(F, XX, XY, config.rank_tol)
        diag.n_pinv += used
    for it in range(1, config.max_iter + 1):
        F_new, n1 = _factors_from_moments(gamma, XX, XY, counts, config.rank_tol)
        gamma_new, n2 = _gamma_from_moments(F_new, XX, XY, config.rank_tol)
        diag.n_pinv += n1 + n2
        change = max(_rel_change(gamma_new, gamma), _rel_change(F_new, F))
        gamma, F = gamma_new, F_new
        diag.objective_path.append(objective(IpcaParams(gamma, F), Y, X, mask))
        diag.iterations = it
        diag.final_rel_change = float(change)
        if change < config.tol:
            diag.converged = True
            break
    # Factors are refreshed last so both blocks are mutually optimal.
    return IpcaParams(gamma, F), diag


def fit_als(Y, X, config: FitConfig, mask=None):
    """
    Fit ``(Gamma, F)`` by alternating least squares.

    Starts from the PCA factors of ``Y``; then alternates the mapping-matrix
    and factor updates until the larger of the two relative Frobenius
    parameter changes drops below ``config.tol``. With ``n_restarts > 0``
    additional runs start from random orthonormal mapping matrices and the
    lowest-objective fit is kept.

    Returns
    -------
    params : IpcaParams
    diagnostics : FitDiagnostics
        ``converged`` is False when ``max_iter`` was reached.
    """
    Y = np.asarray(Y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim != 3 or X.shape[:2] != Y.shape:
        raise ValueError(f"dimension mismatch: Y {Y.shape}, X {X.shape}")
    m = _full_mask(Y, mask)
    N, T, L = X.shape
    config.check_dims(N, T, L)
    XX, XY, counts = _moments(Y, X, m)
    Yinit = np.where(m, Y, 0.0)
    F0 = init_factors_pca(Yinit, config.k, config.rank_tol)
    # gamma-first: the PCA start supplies F, the loop then refines both.
    gamma0, used = _gamma_from_moments(F0, XX, XY, config.rank_tol)
    best, best_diag = _als_from(F0, gamma0, XX, XY, counts, Y, X, m, config)
    best_diag.n_pinv += used
    if config.n_restarts:
        rng = np.random.default_rng(config.seed)
        for _ in range(config.n_restarts):
            q, _ = np.linalg.qr(rng.standard_normal((L, config.k)))
            F_start, _ = _factors_from_moments(q, XX, XY, counts, config.rank_tol)
            p, d = _als_from(F_start, q, XX, XY, counts, Y, X, m, config)
            if d.objective_path[-1] < best_diag.objective_path[-1]:
                best, best_diag = p, d
    if not best_diag.converged:
        logger.info("ALS stopped at max_iter=%d (rel change %.3g)",
                    config.max_iter, best_diag.final_rel_change)
    return best, best_diag


def fit_gamma_given_factors(Y, X, factors, mask=None, rank_tol: float = 1e-10):
    """
    Mapping matrix for a group given fixed factors (one pooled OLS pass).

    Raises
    ------
    UnderdeterminedError
        If fewer cells than the L*K parameters are available.
    """
    Y = np.asarray(Y, dtype=float)
    X = np.asarray(X, dtype=float)
    F = np.atleast_2d(np.asarray(factors, dtype=float))
    m = _full_mask(Y, mask)
    L, K = X.shape[2], F.shape[0]
    n_cells = int(m.sum())
    if n_cells < L * K:
        raise UnderdeterminedError(
            f"{n_cells} pre-treatment cells cannot identify {L * K} mapping "
            f"parameters (L={L}, K={K}); use a smaller K")
    return update_gamma(F, X, Y, mask=m, rank_tol=rank_tol)
