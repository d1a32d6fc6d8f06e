"""E-step quantities: log-densities, responsibilities, precision weights,
factor scores, and per-component sufficient statistics.

Latent factors and scale variables are never materialized; only their
posterior summaries are. Sufficient statistics for the covariance updates are
kept in projected form (S Gamma, Gamma^T S Gamma, diag S, tr S), so the full
p x p scatter is optional and the E-step stays O(n p q) for large p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateComponentError
from .kernels import (FactorCovariance, digamma, log_gamma, lowrank_logdet,
                      mahalanobis_many, posterior_projection, weighted_scatter)
from .model import MixtureModel

_LOG_2PI = math.log(2.0 * math.pi)

# Full p x p scatter matrices are materialized only below this dimension;
# everything the M-steps need is available in projected form regardless.
DENSE_SCATTER_MAX_P = 512


def min_component_mass(n: int, g: int, q: int) -> float:
    """Effective-observation floor below which a component is degenerate.

    q + 1 observations keep the factor updates well conditioned; with fewer
    than 2 g (q + 1) data points (the paper-style small-n imaging regime) the
    floor relaxes toward simply requiring non-empty components.
    """
    return max(1.0, min(q + 1.0, n / (2.0 * g)))


@dataclass
class EStepState:
    """Posterior summaries for one E-step at fixed parameters.

    Filled in stages: responsibilities() sets log_density, resp, delta and
    loglik; precision_weights() adds tau and kappa; scatter_matrices() adds
    n_hat, the projected scatter statistics and (for small p) dense scat.
    """

    log_density: np.ndarray  # (n, g) component log-densities, no weights
    resp: np.ndarray         # (n, g)
    delta: np.ndarray        # (n, g) Mahalanobis-squared distances
    loglik: float
    tau: Optional[np.ndarray] = None    # (n, g)
    kappa: Optional[np.ndarray] = None  # (n, g)
    n_hat: Optional[np.ndarray] = None  # (g,)
    gamma: Optional[np.ndarray] = None  # (g, p, q)
    omega: Optional[np.ndarray] = None  # (g, q, q)
    scatter_gamma: Optional[np.ndarray] = None        # (g, p, q): S_i Gamma_i
    gamma_scatter_gamma: Optional[np.ndarray] = None  # (g, q, q)
    scatter_diag: Optional[np.ndarray] = None         # (g, p)
    scatter_trace: Optional[np.ndarray] = None        # (g,)
    error_diag_current: Optional[np.ndarray] = None   # (g, p) at E-step time
    scatter: Optional[np.ndarray] = field(default=None, repr=False)  # (g, p, p)

    @property
    def n(self) -> int:
        return self.resp.shape[0]

    @property
    def g(self) -> int:
        return self.resp.shape[1]


def mvt_logdensity(y, mu, cov: FactorCovariance, nu: Optional[float]) -> float:
    """Log-density of the p-variate t (or Gaussian when nu is None).

    The t uses the standard form with scaling matrix Sigma = B B^T + Psi:
    ln f = ln G((nu+p)/2) - ln G(nu/2) - (p/2) ln(nu pi) - (1/2) ln|Sigma|
           - ((nu+p)/2) ln(1 + delta/nu).
    """
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if y.shape != (cov.p,) or mu.shape != (cov.p,):
        raise ValueError(f"y and mu must be length-{cov.p} vectors")
    out = mvt_logdensity_many((y - mu)[None, :], cov, nu)
    return float(out[0])


def mvt_logdensity_many(resid: np.ndarray, cov: FactorCovariance,
                        nu: Optional[float]) -> np.ndarray:
    """Batch log-densities for residual rows (n, p)."""
    values, _ = _logdensity_with_delta(resid, cov, nu)
    return values


def _logdensity_with_delta(resid, cov, nu):
    delta = mahalanobis_many(resid, cov)
    logdet = lowrank_logdet(cov)
    p = cov.p
    if nu is None:
        vals = -0.5 * (p * _LOG_2PI + logdet + delta)
        return vals, delta
    if not (nu > 0.0) or not math.isfinite(nu):
        raise ValueError(f"degrees of freedom must be positive and finite, got {nu!r}")
    half = 0.5 * (nu + p)
    const = (log_gamma(half) - log_gamma(0.5 * nu)
             - 0.5 * p * math.log(nu * math.pi) - 0.5 * logdet)
    vals = const - half * np.log1p(delta / nu)
    return vals, delta


def _component_quantities(data: np.ndarray, model: MixtureModel, i: int):
    cov = model.component_cov(i)
    resid = data - model.means[i]
    return _logdensity_with_delta(resid, cov, model.df(i))


def responsibilities(data: np.ndarray, model: MixtureModel) -> EStepState:
    """Posterior component probabilities and the observed-data log-likelihood.

    Row-wise log-sum-exp with max subtraction; ties in downstream argmax
    classification break toward the lowest component index.
    """
    data = np.ascontiguousarray(data, dtype=np.float64)
    n = data.shape[0]
    g = model.spec.g
    if data.ndim != 2 or data.shape[1] != model.spec.p:
        raise ValueError(f"data must be (n, {model.spec.p}), got {data.shape}")
    log_density = np.empty((n, g))
    delta = np.empty((n, g))
    for i in range(g):
        log_density[:, i], delta[:, i] = _component_quantities(data, model, i)
    state = EStepState(log_density=log_density, resp=np.empty((n, g)),
                       delta=delta, loglik=0.0)
    _fill_resp(state, model.weights)
    return state


def _fill_resp(state: EStepState, weights: np.ndarray) -> None:
    weighted = state.log_density + np.log(weights)[None, :]
    top = np.max(weighted, axis=1)
    if not np.all(np.isfinite(top)):
        bad = int(np.flatnonzero(~np.isfinite(top))[0])
        raise DegenerateComponentError(
            f"all component densities vanished for observation {bad}")
    shifted = np.exp(weighted - top[:, None])
    norm = np.sum(shifted, axis=1)
    state.resp = shifted / norm[:, None]
    state.loglik = float(np.sum(top + np.log(norm)))


def reweight(state: EStepState, weights: np.ndarray) -> EStepState:
    """Refresh responsibilities and loglik for new mixing weights only.

    Valid because component densities (and deltas) depend only on the
    untouched component parameters; this is the cycle-two E-step after a
    weight update.
    """
    _fill_resp(state, weights)
    return state


def precision_weights(state: EStepState, model: MixtureModel) -> EStepState:
    """Posterior scale weights tau and log-scale expectations kappa.

    t family:  tau = (nu+p)/(nu+delta),  kappa = psi((nu+p)/2) - ln((nu+delta)/2).
    Gaussian family: tau = 1, kappa = 0.
    """
    n, g = state.resp.shape
    p = model.spec.p
    if model.spec.is_gaussian:
        state.tau = np.ones((n, g))
        state.kappa = np.zeros((n, g))
        return state
    tau = np.empty((n, g))
    kappa = np.empty((n, g))
    for i in range(g):
        nu = model.df(i)
        tau[:, i] = (nu + p) / (nu + state.delta[:, i])
        kappa[:, i] = digamma(0.5 * (nu + p)) - np.log(0.5 * (nu + state.delta[:, i]))
    state.tau = tau
    state.kappa = kappa
    return state


def factor_scores(y, mu, cov: FactorCovariance) -> np.ndarray:
    """Posterior mean of the latent factor: Gamma^T (y - mu)."""
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if y.shape != (cov.p,) or mu.shape != (cov.p,):
        raise ValueError(f"y and mu must be length-{cov.p} vectors")
    return factor_scores_many((y - mu)[None, :], cov)[0]


def factor_scores_many(resid: np.ndarray, cov: FactorCovariance) -> np.ndarray:
    """Batch factor scores for residual rows: rows of (resid) Gamma."""
    gamma, _ = posterior_projection(cov)
    return np.asarray(resid, dtype=np.float64) @ gamma


def scatter_matrices(data: np.ndarray, state: EStepState, model: MixtureModel,
                     dense: Optional[bool] = None) -> EStepState:
    """Per-component weighted scatter statistics and posterior projections.

    Fills n_hat, Gamma_i, Omega_i and the projected statistics S_i Gamma_i,
    Gamma_i^T S_i Gamma_i, diag S_i, tr S_i (weights z*tau, centered at the
    current means, divisor n_hat_i). Dense S_i matrices are additionally
    stored when dense is true (defaults to p <= DENSE_SCATTER_MAX_P).
    """
    if state.tau is None:
        raise ValueError("precision weights must be filled before scatter_matrices")
    data = np.ascontiguousarray(data, dtype=np.float64)
    n, p = data.shape
    g, q = state.g, model.spec.q
    if dense is None:
        dense = p <= DENSE_SCATTER_MAX_P

    n_hat = state.resp.sum(axis=0)
    floor = min_component_mass(n, g, q)
    if np.any(n_hat < floor):
        bad = int(np.argmin(n_hat))
        raise DegenerateComponentError(
            f"component {bad} mass {n_hat[bad]:.6g} below floor {floor:.6g}")

    gamma = np.empty((g, p, q))
    omega = np.empty((g, q, q))
    sg = np.empty((g, p, q))
    gsg = np.empty((g, q, q))
    sdiag = np.empty((g, p))
    strace = np.empty(g)
    err_cur = np.empty((g, p))
    sdense = np.empty((g, p, p)) if dense else None

    for i in range(g):
        cov = model.component_cov(i)
        err_cur[i] = cov.error_diag
        gamma[i], omega[i] = posterior_projection(cov)
        resid = data - model.means[i]
        w = state.resp[:, i] * state.tau[:, i]
        proj = resid @ gamma[i]                      # (n, q)
        wproj = proj * w[:, None]
        sg[i] = (resid.T @ wproj) / n_hat[i]
        m = proj.T @ wproj / n_hat[i]
        gsg[i] = (m + m.T) / 2.0
        sdiag[i] = (w[:, None] * resid ** 2).sum(axis=0) / n_hat[i]
        strace[i] = float(sdiag[i].sum())
        if dense:
            sdense[i] = weighted_scatter(resid, w) / n_hat[i]

    state.n_hat = n_hat
    state.gamma = gamma
    state.omega = omega
    state.scatter_gamma = sg
    state.gamma_scatter_gamma = gsg
    state.scatter_diag = sdiag
    state.scatter_trace = strace
    state.error_diag_current = err_cur
    state.scatter = sdense
    return state
