"""Fit driver: k-means/eigen initialization, the three-cycle AECM loop,
Aitken stopping, multi-start orchestration, and BIC model search.

Each AECM iteration runs three cycles, each preceded by a fresh E-step:
weights first, then means and degrees of freedom, then the structure-specific
loading/error updates. The log-likelihood is recorded once per iteration at
the end-of-iteration parameters.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DegenerateComponentError, FitFailureError, SearchFailureError
from .estep import precision_weights, responsibilities, reweight, scatter_matrices
from .kernels import PSI_FLOOR
from .model import (DF_COMMON, NU_MAX, NU_MIN, CovStructure, FitReport,
                    MixtureModel, ModelSpec, count_free_parameters)
from .mstep import update_covariance, update_dfs, update_means, update_weights

INITIAL_DF = 50.0
_INIT_RESEEDS = 10
_INNER_FIT_MAX_ITER = 200
_INNER_FIT_EPSILON = 1e-4


@dataclass(frozen=True)
class FitOptions:
    """Knobs for one fit; defaults follow the experimental setup."""

    max_iterations: int = 1000
    epsilon: float = 1e-5
    n_starts: int = 5
    seed: int = 0
    kmeans_max_iter: int = 100
    nu_bounds: tuple = (NU_MIN, NU_MAX)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")


@dataclass
class SearchGrid:
    """Cartesian grid of model cells for the BIC search."""

    g_values: list
    q_values: list
    structures: list = field(default_factory=lambda: [CovStructure.CUU])
    df_modes: list = field(default_factory=lambda: [DF_COMMON])
    families: list = field(default_factory=lambda: ["t"])

    def cells(self, p: int):
        for structure in self.structures:
            for df_mode in self.df_modes:
                for family in self.families:
                    for g in self.g_values:
                        for q in self.q_values:
                            yield ModelSpec(structure=structure, df_mode=df_mode,
                                            family=family, g=int(g), q=int(q), p=p)

    def __post_init__(self):
        if not (self.g_values and self.q_values and self.structures
                and self.df_modes and self.families):
            raise ValueError("search grid must be non-empty in every dimension")


def bic(loglik: float, m: int, n: int) -> float:
    """2 * loglik - m * ln n; larger is better."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return 2.0 * loglik - m * math.log(n)


def aitken_converged(l_prev: float, l_curr: float, l_next: float,
                     epsilon: float) -> bool:
    """Aitken-extrapolated stopping rule on three consecutive log-likelihoods.

    a = (l_next - l_curr) / (l_curr - l_prev); the extrapolated limit is
    l_inf = l_curr + (l_next - l_curr) / (1 - a), and convergence is
    |l_inf - l_curr| < epsilon. Flat or non-contracting traces fall back to
    the plain increment test.
    """
    denom = l_curr - l_prev
    if abs(denom) < 1e-14:
        return (l_next - l_curr) < epsilon
    a = (l_next - l_curr) / denom
    if a >= 1.0:
        return (l_next - l_curr) < epsilon
    l_inf = l_curr + (l_next - l_curr) / (1.0 - a)
    return abs(l_inf - l_curr) < epsilon


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

def _row_digests(data: np.ndarray, seed: int) -> np.ndarray:
    """Per-row 64-bit digests keyed by the seed; invariant to row order."""
    key = (int(seed) & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    out = np.empty(data.shape[0], dtype=np.uint64)
    for j in range(data.shape[0]):
        h = hashlib.blake2b(data[j].tobytes(), digest_size=8, key=key)
        out[j] = int.from_bytes(h.digest(), "little")
    return out


def _pairwise_sq(data: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = (data ** 2).sum(axis=1)[:, None] + (centers ** 2).sum(axis=1)[None, :]
    d2 -= 2.0 * data @ centers.T
    return np.maximum(d2, 0.0)


def kmeans(data: np.ndarray, g: int, seed: int, max_iter: int = 100):
    """Lloyd's algorithm from g distinct rows drawn by content hashing.

    Hash-keyed seeding makes the draw invariant to row order. An empty
    cluster is reseeded to the point farthest from its assigned center.
    Returns (labels, centers) with centers equal to the final cluster means.
    """
    data = np.ascontiguousarray(data, dtype=np.float64)
    n = data.shape[0]
    if g < 1 or n < g:
        raise ValueError(f"need at least g={g} observations, got {n}")
    order = np.argsort(_row_digests(data, seed), kind="stable")
    centers = []
    seen = set()
    for j in order:
        key = data[j].tobytes()
        if key not in seen:
            seen.add(key)
            centers.append(data[j])
            if len(centers) == g:
                break
    if len(centers) < g:
        raise ValueError(f"fewer than g={g} distinct rows in the data")
    centers = np.array(centers)

    labels = None
    for _ in range(max_iter):
        d2 = _pairwise_sq(data, centers)
        new_labels = np.argmin(d2, axis=1)
        own = d2[np.arange(n), new_labels]
        counts = np.bincount(new_labels, minlength=g)
        for k in np.flatnonzero(counts == 0):
            far = int(np.argmax(own))
            new_labels[far] = k
            own[far] = -1.0
            counts = np.bincount(new_labels, minlength=g)
        for k in range(g):
            centers[k] = data[new_labels == k].mean(axis=0)
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
    return labels, centers


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def _mix_seed(seed: int, attempt: int) -> int:
    return (int(seed) * 1_000_003 + attempt) & 0xFFFFFFFFFFFFFFFF


def _eigen_loading(cov_mat: np.ndarray, q: int) -> np.ndarray:
    """Columns sqrt(lambda_r) e_r for the q largest eigenpairs."""
    vals, vecs = np.linalg.eigh(cov_mat)
    vals = np.clip(vals[::-1][:q], 0.0, None)
    vecs = vecs[:, ::-1][:, :q]
    return vecs * np.sqrt(vals)[None, :]


def _single_factor_fit(centered: np.ndarray, spec: ModelSpec,
                       options: "FitOptions") -> tuple:
    """One-component unconstrained fit on pooled centered data; returns the
    fitted (loading, error_diag) used to seed tied structures."""
    n, p = centered.shape
    inner_spec = ModelSpec(structure=CovStructure.UUU, df_mode=DF_COMMON,
                           family=spec.family, g=1, q=spec.q, p=p)
    v = (centered.T @ centered) / n
    b0 = _eigen_loading(v, spec.q)
    psi0 = np.maximum(np.diag(v) - np.einsum("pq,pq->p", b0, b0), PSI_FLOOR)
    dfs = None if inner_spec.is_gaussian else _initial_df(options)
    model = MixtureModel(spec=inner_spec, weights=np.ones(1),
                         means=centered.mean(axis=0)[None, :],
                         loadings=b0[None, :, :], error_diags=psi0[None, :],
                         dfs=dfs)
    inner_options = replace(options, max_iterations=_INNER_FIT_MAX_ITER,
                            epsilon=max(options.epsilon, _INNER_FIT_EPSILON))
    model, _, _ = _aecm_loop(centered, model, inner_options)
    return model.loadings[0], model.error_diags[0]


def _initial_df(options: "FitOptions") -> float:
    lo, hi = options.nu_bounds
    return float(min(max(INITIAL_DF, lo), hi))


def initialize(data: np.ndarray, spec: ModelSpec, seed: int,
               options: Optional[FitOptions] = None) -> MixtureModel:
    """Starting values: k-means partition, eigen-decomposition loadings for
    unconstrained structures, a pooled one-component factor fit for tied
    ones, and df = 50 everywhere.

    Construction failures reseed the k-means up to 10 times before raising.
    """
    options = options or FitOptions(seed=seed)
    data = np.ascontiguousarray(data, dtype=np.float64)
    last = None
    for attempt in range(_INIT_RESEEDS):
        try:
            labels, centers = kmeans(data, spec.g, _mix_seed(seed, attempt),
                                     options.kmeans_max_iter)
            return _build_initial(data, spec, labels, centers, options)
        except (DegenerateComponentError, np.linalg.LinAlgError) as exc:
            last = exc
    raise DegenerateComponentError(
        f"initialization failed after {_INIT_RESEEDS} reseeds: {last}")


def _build_initial(data, spec, labels, centers, options) -> MixtureModel:
    n, p = data.shape
    g, q = spec.g, spec.q
    st = spec.structure
    counts = np.bincount(labels, minlength=g)
    weights = counts / n

    group_cov = np.empty((g, p, p))
    for i in range(g):
        resid = data[labels == i] - centers[i]
        group_cov[i] = (resid.T @ resid) / counts[i]

    need_pooled = (st.loadings_tied or st.errors_tied) and g > 1
    if need_pooled:
        pooled_b, pooled_psi = _single_factor_fit(data - centers[labels],
                                                  spec, options)
    else:
        pooled_b = pooled_psi = None

    if st.loadings_tied:
        if g == 1:
            loadings = _eigen_loading(group_cov[0], q)
        else:
            loadings = pooled_b
        per_comp_b = [loadings] * g
    else:
        per_comp_b = [_eigen_loading(group_cov[i], q) for i in range(g)]
        loadings = np.stack(per_comp_b)

    if st.errors_tied:
        if g == 1:
            b = per_comp_b[0]
            base = np.maximum(
                np.diag(group_cov[0]) - np.einsum("pq,pq->p", b, b), PSI_FLOOR)
        else:
            base = pooled_psi
        error = float(np.mean(base)) if st.isotropic else np.asarray(base)
    else:
        rows = []
        for i in range(g):
            b = per_comp_b[i]
            diag = np.diag(group_cov[i]) - np.einsum("pq,pq->p", b, b)
            if st.isotropic:
                rows.append(max(float(np.mean(diag)), PSI_FLOOR))
            else:
                rows.append(np.maximum(diag, PSI_FLOOR))
        error = np.asarray(rows)

    if spec.is_gaussian:
        dfs = None
    elif spec.df_mode == DF_COMMON:
        dfs = _initial_df(options)
    else:
        dfs = np.full(g, _initial_df(options))

    return MixtureModel(spec=spec, weights=weights, means=centers.copy(),
                        loadings=loadings, error_diags=error, dfs=dfs)


# ---------------------------------------------------------------------------
# The AECM loop
# ---------------------------------------------------------------------------

def _checked_loglik(value: float) -> float:
    if not math.isfinite(value):
        raise DegenerateComponentError(f"log-likelihood became {value!r}")
    return value


def _aecm_loop(data, model: MixtureModel, options: FitOptions):
    state = responsibilities(data, model)
    trace = [_checked_loglik(state.loglik)]
    converged = False
    for _ in range(options.max_iterations):
        # Cycle 1: update the mixing weights.
        model = replace(model, weights=update_weights(state))
        # Cycle 2: E-step at the new weights, then means and dfs.
        state = reweight(state, model.weights)
        state = precision_weights(state, model)
        new_means = update_means(data, state)
        if model.spec.is_gaussian:
            model = replace(model, means=new_means)
        else:
            model = replace(model, means=new_means,
                            dfs=update_dfs(state, model, options.nu_bounds))
        # Cycle 3: fresh E-step, scatter statistics, covariance update.
        state = precision_weights(responsibilities(data, model), model)
        state = scatter_matrices(data, state, model, dense=False)
        loadings, error = update_covariance(model.spec.structure, state)
        model = replace(model, loadings=loadings, error_diags=error)
        # Likelihood at the end-of-iteration parameters; reused as the next
        # iteration's first-cycle E-step.
        state = responsibilities(data, model)
        trace.append(_checked_loglik(state.loglik))
        if len(trace) >= 3 and aitken_converged(trace[-3], trace[-2], trace[-1],
                                                options.epsilon):
            converged = True
            break
    return model, trace, converged


def aecm_fit(data: np.ndarray, spec: ModelSpec,
             options: Optional[FitOptions] = None):
    """Best-of-n-starts AECM fit; returns (MixtureModel, FitReport).

    Starts are seeded seed, seed+1, ...; a start that degenerates is recorded
    and skipped. Raises FitFailureError when every start degenerates.
    """
    options = options or FitOptions()
    data = np.ascontiguousarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError("data must be a 2-D matrix")
    n, p = data.shape
    if p != spec.p:
        raise ValueError(f"spec expects p={spec.p} but data has {p} columns")
    if n < spec.g:
        raise ValueError(f"need at least g={spec.g} observations, got {n}")
    if not np.all(np.isfinite(data)):
        raise ValueError("data contains non-finite entries")

    best = None
    failures = []
    for s in range(options.n_starts):
        start_seed = options.seed + s
        try:
            model0 = initialize(data, spec, start_seed, options)
            model, trace, converged = _aecm_loop(data, model0, options)
        except DegenerateComponentError as exc:
            failures.append((start_seed, str(exc)))
            continue
        if best is None or trace[-1] > best[1][-1]:
            best = (model, trace, converged, start_seed)
    if best is None:
        raise FitFailureError(failures)

    model, trace, converged, start_seed = best
    m = count_free_parameters(spec)
    report = FitReport(loglik_trace=trace, final_loglik=trace[-1], m=m,
                       bic=bic(trace[-1], m, n), iterations=len(trace) - 1,
                       converged=converged, seed=start_seed)
    return replace(model, fit_report=report), report


# ---------------------------------------------------------------------------
# BIC model search
# ---------------------------------------------------------------------------

@dataclass
class SearchEntry:
    spec: ModelSpec
    model: MixtureModel
    report: FitReport


@dataclass
class SearchResult:
    ranking: list  # SearchEntry, best BIC first
    failures: list  # (ModelSpec, message)

    @property
    def best(self) -> SearchEntry:
        return self.ranking[0]


def model_search(data: np.ndarray, grid: SearchGrid,
                 options: Optional[FitOptions] = None) -> SearchResult:
    """Fit every grid cell and rank by BIC (larger first).

    Cell failures are recorded in the result, not fatal; only an all-cell
    failure raises.
    """
    options = options or FitOptions()
    data = np.ascontiguousarray(data, dtype=np.float64)
    entries = []
    failures = []
    for spec in grid.cells(data.shape[1]):
        try:
            model, report = aecm_fit(data, spec, options)
        except (FitFailureError, ValueError) as exc:
            failures.append((spec, str(exc)))
            continue
        entries.append(SearchEntry(spec=spec, model=model, report=report))
    if not entries:
        raise SearchFailureError(
            "every grid cell failed: "
            + "; ".join(f"{s.structure.value} g={s.g} q={s.q}: {msg}"
                        for s, msg in failures))
    entries.sort(key=lambda e: -e.report.bic)
    return SearchResult(ranking=entries, failures=failures)
