"""Special functions and low-rank linear algebra for factor-form covariances.

A component scale matrix always has the form B B^T + Psi with B a p x q
loading matrix and Psi a positive diagonal. Everything here exploits that
form: inverses and determinants cost one dense q x q solve plus diagonal
work, never a p x p factorization.

The two batch kernels (Mahalanobis distances, weighted scatter) dispatch to a
compiled extension when it was built, with a numpy fallback otherwise; see
``active_backend`` / ``set_backend``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import _speedups_py

try:
    from . import _speedups as _speedups_c
except ImportError:
    _speedups_c = None

# Floor applied to every error-variance entry produced anywhere in the
# package; keeps degenerate clusters from yielding singular covariances.
PSI_FLOOR = 1e-8

if os.environ.get("TFAMIX_PURE_KERNELS") == "1" or _speedups_c is None:
    _impl = _speedups_py
else:
    _impl = _speedups_c


def active_backend() -> str:
    """Name of the kernel backend in use: 'compiled' or 'pure'."""
    return "compiled" if _impl is _speedups_c and _speedups_c is not None else "pure"


def set_backend(name: str) -> None:
    """Select the kernel backend ('compiled' or 'pure') at runtime."""
    global _impl
    if name == "pure":
        _impl = _speedups_py
    elif name == "compiled":
        if _speedups_c is None:
            raise ValueError("compiled kernel extension is not available")
        _impl = _speedups_c
    else:
        raise ValueError(f"unknown backend {name!r}")


@dataclass
class FactorCovariance:
    """Low-rank-plus-diagonal scale matrix B B^T + Psi.

    loadings: (p, q) matrix. error_diag: (p,) diagonal of Psi; entries are
    clamped up to PSI_FLOOR on construction.
    """

    loadings: np.ndarray
    error_diag: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.loadings, dtype=np.float64)
        psi = np.asarray(self.error_diag, dtype=np.float64)
        if b.ndim != 2:
            raise ValueError("loadings must be a p x q matrix")
        p, q = b.shape
        if q > p:
            raise ValueError(f"factor dimension q={q} exceeds p={p}")
        if psi.shape != (p,):
            raise ValueError("error_diag must be a length-p vector")
        if not np.all(np.isfinite(b)):
            raise ValueError("loadings contain non-finite entries")
        if not np.all(np.isfinite(psi)):
            raise ValueError("error_diag contains non-finite entries")
        self.loadings = b
        self.error_diag = np.maximum(psi, PSI_FLOOR)

    @property
    def p(self) -> int:
        return self.loadings.shape[0]

    @property
    def q(self) -> int:
        return self.loadings.shape[1]

    def dense(self) -> np.ndarray:
        """Materialize B B^T + Psi (test/inspection helper; O(p^2))."""
        return self.loadings @ self.loadings.T + np.diag(self.error_diag)


def log_gamma(x: float) -> float:
    """ln Gamma(x) for x > 0."""
    if not math.isfinite(x) or x <= 0.0:
        raise ValueError(f"log_gamma requires finite x > 0, got {x!r}")
    return math.lgamma(x)


# Asymptotic tail of psi(x): ln x - 1/(2x) - sum B_2n / (2n x^2n).
_DIGAMMA_SHIFT = 6.0


def digamma(x: float) -> float:
    """psi(x) = d/dx ln Gamma(x) for x > 0.

    Recurrence psi(x) = psi(x+1) - 1/x shifts the argument above 6, where the
    asymptotic expansion is accurate to well below 1e-12.
    """
    if not math.isfinite(x) or x <= 0.0:
        raise ValueError(f"digamma requires finite x > 0, got {x!r}")
    result = 0.0
    while x < _DIGAMMA_SHIFT:
        result -= 1.0 / x
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    tail = inv2 * (
        1.0 / 12.0
        - inv2 * (1.0 / 120.0
                  - inv2 * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0
                                      - inv2 * (1.0 / 132.0
                                                - inv2 * (691.0 / 32760.0)))))
    )
    return result + math.log(x) - 0.5 * inv - tail


def _inner_matrix(cov: FactorCovariance) -> np.ndarray:
    b = cov.loadings
    return np.eye(cov.q) + (b / cov.error_diag[:, None]).T @ b


def woodbury_inverse(cov: FactorCovariance) -> np.ndarray:
    """(B B^T + Psi)^-1 via the low-rank inversion identity.

    Only the q x q inner matrix I + B^T Psi^-1 B is inverted densely; the
    returned p x p matrix is exactly symmetric.
    """
    w = cov.loadings / cov.error_diag[:, None]  # Psi^-1 B
    inner = np.eye(cov.q) + cov.loadings.T @ w
    try:
        inner_inv = np.linalg.inv(inner)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "inner q x q matrix I + B^T Psi^-1 B is singular") from exc
    out = -w @ inner_inv @ w.T
    out[np.diag_indices(cov.p)] += 1.0 / cov.error_diag
    return (out + out.T) / 2.0


def lowrank_logdet(cov: FactorCovariance) -> float:
    """ln |B B^T + Psi| = ln |I + B^T Psi^-1 B| + sum ln psi_i."""
    inner = _inner_matrix(cov)
    try:
        chol = np.linalg.cholesky(inner)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "inner q x q matrix I + B^T Psi^-1 B is singular") from exc
    return 2.0 * float(np.sum(np.log(np.diag(chol)))) + float(
        np.sum(np.log(cov.error_diag)))


def mahalanobis_sq(y: np.ndarray, mu: np.ndarray, cov: FactorCovariance) -> float:
    """(y - mu)^T (B B^T + Psi)^-1 (y - mu), never forming the p x p inverse."""
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if y.shape != (cov.p,) or mu.shape != (cov.p,):
        raise ValueError(
            f"y and mu must be length-{cov.p} vectors, got {y.shape} and {mu.shape}")
    delta = mahalanobis_many((y - mu)[None, :], cov)
    return float(delta[0])


def mahalanobis_many(resid: np.ndarray, cov: FactorCovariance) -> np.ndarray:
    """Batch Mahalanobis-squared distances for residual rows (n, p)."""
    resid = np.ascontiguousarray(resid, dtype=np.float64)
    if resid.ndim != 2 or resid.shape[1] != cov.p:
        raise ValueError(f"residuals must be (n, {cov.p}), got {resid.shape}")
    delta = _impl.mahalanobis_many(resid, cov.loadings, cov.error_diag)
    # Exact distances are >= 0; rounding may dip a hair below for y ~= mu.
    return np.maximum(np.asarray(delta), 0.0)


def weighted_scatter(resid: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Sum_j w_j r_j r_j^T for residual rows (n, p), symmetric output."""
    resid = np.ascontiguousarray(resid, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if resid.ndim != 2 or weights.shape != (resid.shape[0],):
        raise ValueError("resid must be (n, p) and weights length n")
    return np.asarray(_impl.weighted_scatter(resid, weights))


def posterior_projection(cov: FactorCovariance) -> tuple[np.ndarray, np.ndarray]:
    """Gamma = (BB^T+Psi)^-1 B and Omega = I - Gamma^T B = (I + B^T Psi^-1 B)^-1.

    Both follow from one q x q inverse via the push-through identity
    (BB^T+Psi)^-1 B = Psi^-1 B (I + B^T Psi^-1 B)^-1.
    """
    inner = _inner_matrix(cov)
    try:
        omega = np.linalg.inv(inner)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "inner q x q matrix I + B^T Psi^-1 B is singular") from exc
    omega = (omega + omega.T) / 2.0
    gamma = (cov.loadings / cov.error_diag[:, None]) @ omega
    return gamma, omega
