"""Pure-numpy implementations of the hot kernels.

Used when the compiled extension (tfamix._speedups) is unavailable, and as the
reference the extension is tested against. Both backends expose the same two
functions with identical semantics.
"""

import numpy as np


def mahalanobis_many(resid, loadings, error_diag):
    """Squared Mahalanobis distances r^T (BB^T + Psi)^-1 r for each row r.

    resid: (n, p) residual rows; loadings: (p, q); error_diag: (p,) positive.
    Only a q x q system is ever solved.
    """
    q = loadings.shape[1]
    z = resid / error_diag
    t = z @ loadings
    inner = np.eye(q) + (loadings / error_diag[:, None]).T @ loadings
    sol = np.linalg.solve(inner, t.T)
    return np.einsum("ij,ij->i", z, resid) - np.einsum("ij,ji->i", t, sol)


def weighted_scatter(resid, weights):
    """Sum_j w_j r_j r_j^T as a symmetric (p, p) matrix (unnormalized)."""
    s = (resid * weights[:, None]).T @ resid
    return (s + s.T) / 2.0
