"""
Rotational indeterminacy and the normalized representative
==========================================================

``X Gamma F`` is unchanged when ``Gamma`` is multiplied by any invertible
``R`` and ``F`` by its inverse. The normalized pair has orthonormal
``Gamma``, diagonal ``F F' / T`` with descending entries and a sign fixed
per factor.
"""

# %%
import numpy as np

from csc_ipca import IpcaParams, normalize, rotation_matrix

rng = np.random.default_rng(3)
params = IpcaParams(rng.standard_normal((6, 2)), rng.standard_normal((2, 40)))

# %%
# Any rotation of the pair fits the data equally well.
A = np.array([[2.0, 1.0], [0.5, -1.0]])
rotated = IpcaParams(params.gamma @ A, np.linalg.solve(A, params.factors))
print(np.allclose(params.gamma @ params.factors, rotated.gamma @ rotated.factors))

# %%
# Both land on the same representative.
a, b = normalize(params), normalize(rotated)
print("same gamma  :", np.allclose(a.gamma, b.gamma))
print("gamma'gamma :\n", (a.gamma.T @ a.gamma).round(12))
print("F F' / T    :\n", (a.factors @ a.factors.T / 40).round(6))
print("R =\n", rotation_matrix(params.gamma, params.factors).round(4))
