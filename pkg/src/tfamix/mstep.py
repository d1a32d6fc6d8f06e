"""Conditional-maximization updates: weights, means, degrees of freedom, and
the eight structure-specific loading/error-variance updates.

Within the covariance cycle the loadings are updated first and the error
diagonals second, using the just-updated loadings; the posterior projections
Gamma_i, Omega_i are the ones cached by the cycle's E-step, not recomputed
mid-update. All error variances are clamped up to the global floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateComponentError
from .estep import EStepState
from .kernels import PSI_FLOOR, digamma
from .model import DF_COMMON, NU_MAX, NU_MIN, CovStructure, MixtureModel

_DF_RESIDUAL_TOL = 1e-10
_DF_MAX_BISECTIONS = 200


@dataclass
class DfRootProblem:
    """Scalar root problem log(nu/2) - psi(nu/2) + 1 + c = 0 on a df interval."""

    c: float
    bounds: tuple = (NU_MIN, NU_MAX)

    def lhs(self, nu: float) -> float:
        half = 0.5 * nu
        return math.log(half) - digamma(half) + 1.0 + self.c


def update_weights(state: EStepState) -> np.ndarray:
    """Mixing weights n_hat_i / n; sums to one by construction."""
    col = state.resp.sum(axis=0)
    return col / state.resp.shape[0]


def update_means(data: np.ndarray, state: EStepState) -> np.ndarray:
    """Weighted means sum_j z t y_j / sum_j z t per component."""
    if state.tau is None:
        raise ValueError("precision weights must be filled before update_means")
    w = state.resp * state.tau
    denom = w.sum(axis=0)
    if np.any(denom <= 0.0) or not np.all(np.isfinite(denom)):
        bad = int(np.argmin(denom))
        raise DegenerateComponentError(
            f"component {bad} has vanishing weight mass in the mean update")
    return (w.T @ data) / denom[:, None]


def solve_df(problem: DfRootProblem) -> float:
    """Root of the df equation by bisection, clamped to the bounds.

    The left side is strictly decreasing in nu, so the signs at the two
    bounds decide between an interior root and clamping to the nearer bound.
    """
    lo, hi = problem.bounds
    if not (lo <= hi):
        raise ValueError(f"invalid df bounds ({lo}, {hi})")
    if not math.isfinite(problem.c):
        raise DegenerateComponentError("df update constant is not finite")
    f_lo = problem.lhs(lo)
    if f_lo <= 0.0:
        return lo
    f_hi = problem.lhs(hi)
    if f_hi >= 0.0:
        return hi
    mid = lo
    for _ in range(_DF_MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        f_mid = problem.lhs(mid)
        if abs(f_mid) <= _DF_RESIDUAL_TOL:
            return mid
        if f_mid > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, mid):
            break
    return 0.5 * (lo + hi)


def update_dfs(state: EStepState, model: MixtureModel,
               bounds: tuple = (NU_MIN, NU_MAX)):
    """New degrees of freedom; scalar for common mode, length-g for free mode."""
    if state.tau is None or state.kappa is None:
        raise ValueError("precision weights must be filled before update_dfs")
    if model.spec.is_gaussian:
        raise ValueError("gaussian family has no degrees of freedom to update")
    diff = state.kappa - state.tau
    if model.spec.df_mode == DF_COMMON:
        c = float(np.sum(state.resp * diff)) / state.n
        return solve_df(DfRootProblem(c, bounds))
    col = state.resp.sum(axis=0)
    out = np.empty(state.g)
    for i in range(state.g):
        c = float(np.dot(state.resp[:, i], diff[:, i])) / col[i]
        out[i] = solve_df(DfRootProblem(c, bounds))
    return out


def _solve_spd(a: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError:
        raise DegenerateComponentError(f"singular system in {what}") from None


def update_covariance(structure: CovStructure, state: EStepState):
    """Loading/error updates of the matching constraint branch.

    Consumes only the projected scatter statistics cached in the state, so it
    works unchanged when p is too large to materialize S_i. Returns
    (loadings, error_diags) in the storage shape of the structure.
    """
    for name in ("n_hat", "scatter_gamma", "gamma_scatter_gamma",
                 "scatter_diag", "scatter_trace", "omega"):
        if getattr(state, name) is None:
            raise ValueError("scatter statistics must be filled before update_covariance")
    n_hat = state.n_hat
    w = n_hat / float(n_hat.sum())
    sg = state.scatter_gamma          # (g, p, q): S_i Gamma_i
    gsg = state.gamma_scatter_gamma   # (g, q, q)
    sdiag = state.scatter_diag        # (g, p)
    strace = state.scatter_trace      # (g,)
    omega = state.omega               # (g, q, q)
    g, p, q = sg.shape

    # M_i = Omega_i + Gamma_i^T S_i Gamma_i, the q x q normal matrix of every
    # loading update.
    m = omega + gsg

    if structure.loadings_tied:
        if structure.errors_tied:
            # Tied B and Psi imply identical Gamma_i; pool with weights w_i.
            sg_pool = np.einsum("i,ipq->pq", w, sg)
            m_pool = np.einsum("i,iqr->qr", w, m)
            load = _solve_spd(m_pool.T, sg_pool.T, "tied loading update").T
            fitted = np.einsum("pq,pq->p", load, sg_pool)  # diag of B Gamma^T S~
            diag_pool = np.einsum("i,ip->p", w, sdiag)
            if structure.isotropic:  # CCC
                err = float(diag_pool.sum() - fitted.sum()) / p
                err = max(err, PSI_FLOOR)
            else:  # CCU
                err = np.maximum(diag_pool - fitted, PSI_FLOOR)
            return load, err
        # CUC / CUU: tied loadings, per-component errors (current values
        # weight the pooled solve).
        psi_cur = state.error_diag_current  # (g, p) at E-step time
        if psi_cur is None:
            raise ValueError("state lacks the current error diagonals")
        if structure.isotropic:  # CUC
            coef = n_hat / psi_cur[:, 0]
            rhs = np.einsum("i,ipq->pq", coef, sg)
            lhs = np.einsum("i,iqr->qr", coef, m)
            load = _solve_spd(lhs.T, rhs.T, "CUC loading update").T
            err = np.empty(g)
            for i in range(g):
                err[i] = max(_long_form_trace(load, sg[i], m[i], strace[i]) / p,
                             PSI_FLOOR)
            return load, err
        # CUU: row-by-row loading solve with row weights n_hat_i / psi_i(h).
        coef = n_hat[:, None] / psi_cur                       # (g, p)
        lhs_rows = np.einsum("ih,iqr->hqr", coef, m)          # (p, q, q)
        rhs_rows = np.einsum("ih,ihq->hq", coef, sg)          # (p, q)
        try:
            load = np.linalg.solve(lhs_rows, rhs_rows[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            raise DegenerateComponentError(
                "singular system in CUU row-wise loading update") from None
        err = np.empty((g, p))
        for i in range(g):
            err[i] = np.maximum(_long_form_diag(load, sg[i], m[i], sdiag[i]),
                                PSI_FLOOR)
        return load, err

    # Unconstrained loadings: B_i = S_i Gamma_i M_i^{-1} componentwise.
    load = np.empty((g, p, q))
    fitted_diag = np.empty((g, p))  # diag of B_i Gamma_i^T S_i
    for i in range(g):
        load[i] = _solve_spd(m[i].T, sg[i].T, f"loading update of component {i}").T
        fitted_diag[i] = np.einsum("pq,pq->p", load[i], sg[i])
    if structure.errors_tied:
        pooled = np.einsum("i,ip->p", w, sdiag - fitted_diag)
        if structure.isotropic:  # UCC
            err = max(float(pooled.sum()) / p, PSI_FLOOR)
        else:  # UCU
            err = np.maximum(pooled, PSI_FLOOR)
        return load, err
    if structure.isotropic:  # UUC
        err = np.maximum((strace - fitted_diag.sum(axis=1)) / p, PSI_FLOOR)
        return load, err
    # UUU
    err = np.maximum(sdiag - fitted_diag, PSI_FLOOR)
    return load, err


def _long_form_diag(load, sg_i, m_i, sdiag_i):
    # diag{S - 2 B Gamma^T S + B M B^T} for a non-stationary shared B.
    cross = np.einsum("pq,pq->p", load, sg_i)
    quad = np.einsum("pq,qr,pr->p", load, m_i, load)
    return sdiag_i - 2.0 * cross + quad


def _long_form_trace(load, sg_i, m_i, strace_i):
    cross = float(np.einsum("pq,pq->", load, sg_i))
    quad = float(np.einsum("pq,qr,pr->", load, m_i, load))
    return strace_i - 2.0 * cross + quad
