"""
Rotation to the identified representative of an estimated ``(Gamma, F)`` pair.

Any invertible ``R`` leaves ``X Gamma F`` unchanged under
``Gamma -> Gamma R``, ``F -> R^{-1} F``. The representative returned here has
``Gamma' Gamma = I`` and ``F F' / T`` diagonal with entries in descending
order; each factor row is sign-fixed so its largest-magnitude entry is
positive.
"""

import numpy as np

from .ipca import IpcaParams, RankDeficiencyError


def _rotation_parts(gamma, factors):
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    F = np.atleast_2d(np.asarray(factors, dtype=float))
    try:
        R1 = np.linalg.cholesky(gamma.T @ gamma).T
    except np.linalg.LinAlgError:
        raise RankDeficiencyError(
            "gamma'gamma is not positive definite: the mapping matrix must stay "
            "away from rank deficiency") from None
    if not np.any(F):
        raise RankDeficiencyError("factor path is identically zero")
    M = R1 @ (F @ F.T) @ R1.T
    U, _, _ = np.linalg.svd((M + M.T) / 2)
    # sign convention: the largest-magnitude entry of each normalized factor
    # row is positive
    Fn = U.T @ (R1 @ F)
    idx = np.argmax(np.abs(Fn), axis=1)
    s = np.sign(Fn[np.arange(Fn.shape[0]), idx])
    s[s == 0] = 1.0
    return R1, U * s[None, :]


def rotation_matrix(gamma, factors) -> np.ndarray:
    """
    Rotation ``R = R1^{-1} R2`` normalizing ``(gamma, factors)``.

    ``R1`` is the upper Cholesky factor of ``gamma' gamma`` and ``R2`` the left
    singular vectors of ``R1 F F' R1'``.

    Raises
    ------
    RankDeficiencyError
        If ``gamma' gamma`` is not positive definite.
    """
    R1, R2 = _rotation_parts(gamma, factors)
    return np.linalg.solve(R1, R2)


def normalize(params: IpcaParams) -> IpcaParams:
    """Return ``(Gamma R, R^{-1} F)`` satisfying the identification constraints."""
    R1, R2 = _rotation_parts(params.gamma, params.factors)
    # R^{-1} = R2' R1 since R2 is orthogonal
    gamma = np.linalg.solve(R1.T, params.gamma.T).T @ R2
    return IpcaParams(gamma, R2.T @ (R1 @ params.factors))
