"""Model family types: covariance structures, specs, fitted models, reports.

The eight covariance structures are named by three letters: loadings tied
across components (C) or free (U); error matrices tied (C) or free (U);
error matrices isotropic (C) or general diagonal (U).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import ModelFormatError
from .kernels import PSI_FLOOR, FactorCovariance

# Degrees-of-freedom box used for estimation and validation. Below 2 the
# component variance is undefined and fits destabilize; at 200 the t is
# numerically Gaussian.
NU_MIN = 2.0
NU_MAX = 200.0

FAMILY_T = "t"
FAMILY_GAUSSIAN = "gaussian"
DF_COMMON = "common"
DF_FREE = "free"


class CovStructure(enum.Enum):
    CCC = "CCC"
    CCU = "CCU"
    CUC = "CUC"
    CUU = "CUU"
    UCC = "UCC"
    UCU = "UCU"
    UUC = "UUC"
    UUU = "UUU"

    @classmethod
    def parse(cls, text: str) -> "CovStructure":
        try:
            return cls(str(text).upper())
        except ValueError:
            raise ValueError(
                f"unknown covariance structure {text!r}; expected one of "
                f"{[s.value for s in cls]}") from None

    @property
    def loadings_tied(self) -> bool:
        return self.value[0] == "C"

    @property
    def errors_tied(self) -> bool:
        return self.value[1] == "C"

    @property
    def isotropic(self) -> bool:
        return self.value[2] == "C"

    @property
    def error_shape(self) -> str:
        """Storage shape of the error diagonals for this structure."""
        if self.errors_tied:
            return "scalar" if self.isotropic else "vector"
        return "per_component_scalar" if self.isotropic else "per_component_vector"


@dataclass(frozen=True)
class ModelSpec:
    """What to fit: structure, df mode, family, and dimensions."""

    structure: CovStructure
    df_mode: str = DF_COMMON
    family: str = FAMILY_T
    g: int = 1
    q: int = 1
    p: int = 2

    def __post_init__(self):
        if not isinstance(self.structure, CovStructure):
            object.__setattr__(self, "structure", CovStructure.parse(self.structure))
        if self.family == "student_t":
            object.__setattr__(self, "family", FAMILY_T)
        if self.family not in (FAMILY_T, FAMILY_GAUSSIAN):
            raise ValueError(f"unknown family {self.family!r}")
        if self.df_mode not in (DF_COMMON, DF_FREE):
            raise ValueError(f"unknown df mode {self.df_mode!r}")
        for name in ("g", "q", "p"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.q >= self.p:
            raise ValueError(f"factor dimension q={self.q} must be < p={self.p}")

    @property
    def is_gaussian(self) -> bool:
        return self.family == FAMILY_GAUSSIAN


def count_free_parameters(spec: ModelSpec) -> int:
    """Free-parameter count m: weights + means + covariance block + dfs.

    Loadings are counted with the rotational-identification deduction
    q(q-1)/2 per distinct loading matrix; a tied loading matrix is counted
    once. Gaussian family contributes no df parameters.
    """
    g, p, q = spec.g, spec.p, spec.q
    load = p * q - q * (q - 1) // 2
    if not spec.structure.loadings_tied:
        load *= g
    if spec.structure.errors_tied:
        err = 1 if spec.structure.isotropic else p
    else:
        err = g if spec.structure.isotropic else g * p
    if spec.is_gaussian:
        dfs = 0
    else:
        dfs = 1 if spec.df_mode == DF_COMMON else g
    return (g - 1) + g * p + load + err + dfs


@dataclass
class FitReport:
    """Outcome of one fit: likelihood trace, BIC, and bookkeeping."""

    loglik_trace: list
    final_loglik: float
    m: int
    bic: float
    iterations: int
    converged: bool
    seed: int

    def to_dict(self) -> dict:
        return {
            "loglik_trace": [float(v) for v in self.loglik_trace],
            "final_loglik": float(self.final_loglik),
            "m": int(self.m),
            "bic": float(self.bic),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitReport":
        try:
            return cls(
                loglik_trace=[float(v) for v in d["loglik_trace"]],
                final_loglik=float(d["final_loglik"]),
                m=int(d["m"]),
                bic=float(d["bic"]),
                iterations=int(d["iterations"]),
                converged=bool(d["converged"]),
                seed=int(d["seed"]),
            )
        except KeyError as exc:
            raise ModelFormatError(f"fit_report missing field {exc.args[0]!r}") from None


@dataclass
class MixtureModel:
    """Fitted mixture parameters in the storage shape of their structure.

    loadings: (p, q) when tied, else (g, p, q).
    error_diags: float | (p,) | (g,) | (g, p) per the structure letters.
    dfs: None (gaussian) | float (common) | (g,) (free).
    """

    spec: ModelSpec
    weights: np.ndarray
    means: np.ndarray
    loadings: np.ndarray
    error_diags: Union[float, np.ndarray]
    dfs: Union[None, float, np.ndarray]
    fit_report: Optional[FitReport] = field(default=None, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.loadings = np.asarray(self.loadings, dtype=np.float64)
        if isinstance(self.error_diags, np.ndarray) or not np.isscalar(self.error_diags):
            arr = np.asarray(self.error_diags, dtype=np.float64)
            self.error_diags = float(arr) if arr.ndim == 0 else arr
        else:
            self.error_diags = float(self.error_diags)
        if self.dfs is not None:
            arr = np.asarray(self.dfs, dtype=np.float64)
            self.dfs = float(arr) if arr.ndim == 0 else arr

    # -- per-component accessors (uniform view over all eight structures) --

    def loading(self, i: int) -> np.ndarray:
        if self.spec.structure.loadings_tied:
            return self.loadings
        return self.loadings[i]

    def error_diag(self, i: int) -> np.ndarray:
        """Error diagonal of component i as a length-p vector."""
        st, p = self.spec.structure, self.spec.p
        e = self.error_diags
        if st.errors_tied:
            return np.full(p, e) if st.isotropic else np.asarray(e)
        return np.full(p, e[i]) if st.isotropic else np.asarray(e[i])

    def df(self, i: int) -> Optional[float]:
        if self.dfs is None:
            return None
        if np.isscalar(self.dfs):
            return float(self.dfs)
        return float(self.dfs[i])

    def component_cov(self, i: int) -> FactorCovariance:
        return FactorCovariance(self.loading(i), self.error_diag(i))


def validate(model: MixtureModel) -> list:
    """All invariant violations as human-readable strings; empty means ok."""
    out = []
    spec = model.spec
    g, p, q = spec.g, spec.p, spec.q
    st = spec.structure

    w = model.weights
    if w.shape != (g,):
        out.append(f"weights: shape {w.shape} != ({g},)")
    else:
        if np.any(w <= 0):
            out.append("weights: entries must be strictly positive")
        total = float(np.sum(w))
        if abs(total - 1.0) > 1e-12:
            out.append(f"weights: sum {total!r} != 1")

    if model.means.shape != (g, p):
        out.append(f"means: shape {model.means.shape} != ({g}, {p})")
    elif not np.all(np.isfinite(model.means)):
        out.append("means: non-finite entries")

    want_b = (p, q) if st.loadings_tied else (g, p, q)
    if model.loadings.shape != want_b:
        out.append(f"loadings: storage shape {model.loadings.shape} != {want_b} "
                   f"for structure {st.value}")
    elif not np.all(np.isfinite(model.loadings)):
        out.append("loadings: non-finite entries")

    e = model.error_diags
    shape_name = st.error_shape
    if shape_name == "scalar":
        ok_shape = np.isscalar(e)
    elif shape_name == "vector":
        ok_shape = isinstance(e, np.ndarray) and e.shape == (p,)
    elif shape_name == "per_component_scalar":
        ok_shape = isinstance(e, np.ndarray) and e.shape == (g,)
    else:
        ok_shape = isinstance(e, np.ndarray) and e.shape == (g, p)
    if not ok_shape:
        out.append(f"error_diag: storage shape mismatch for structure {st.value} "
                   f"(need {shape_name})")
    else:
        arr = np.atleast_1d(np.asarray(e, dtype=np.float64))
        if not np.all(np.isfinite(arr)):
            out.append("error_diag: non-finite entries")
        elif np.any(arr < PSI_FLOOR):
            out.append(f"error_diag: entries below floor {PSI_FLOOR}")

    if spec.is_gaussian:
        if model.dfs is not None:
            out.append("dfs: must be absent for gaussian family")
    else:
        d = model.dfs
        if spec.df_mode == DF_COMMON:
            ok_shape = d is not None and np.isscalar(d)
        else:
            ok_shape = isinstance(d, np.ndarray) and d.shape == (g,)
        if not ok_shape:
            out.append(f"dfs: storage shape mismatch for df_mode {spec.df_mode!r}")
        else:
            arr = np.atleast_1d(np.asarray(d, dtype=np.float64))
            if np.any(arr < NU_MIN) or np.any(arr > NU_MAX):
                out.append(f"dfs: outside [{NU_MIN}, {NU_MAX}]")
    return out


# ---------------------------------------------------------------------------
# JSON serialization (format_version 1)
# ---------------------------------------------------------------------------

def _require(doc: dict, key: str, where: str = "document"):
    if key not in doc:
        raise ModelFormatError(f"{where} missing field {key!r}")
    return doc[key]


def model_to_dict(model: MixtureModel) -> dict:
    spec = model.spec
    if spec.structure.loadings_tied:
        loadings = [model.loadings.tolist()]
    else:
        loadings = [model.loadings[i].tolist() for i in range(spec.g)]
    e = model.error_diags
    error_data = float(e) if np.isscalar(e) else np.asarray(e).tolist()
    if model.dfs is None:
        dfs = None
    elif np.isscalar(model.dfs):
        dfs = float(model.dfs)
    else:
        dfs = np.asarray(model.dfs).tolist()
    doc = {
        "format_version": 1,
        "spec": {
            "structure": spec.structure.value,
            "df_mode": spec.df_mode,
            "family": spec.family,
            "g": spec.g,
            "q": spec.q,
            "p": spec.p,
        },
        "weights": model.weights.tolist(),
        "means": model.means.tolist(),
        "loadings": loadings,
        "error_diag": {"shape": spec.structure.error_shape, "data": error_data},
        "dfs": dfs,
    }
    if model.fit_report is not None:
        doc["fit_report"] = model.fit_report.to_dict()
    return doc


def serialize(model: MixtureModel) -> str:
    """Model as a self-describing JSON document (round-trips exactly)."""
    problems = validate(model)
    if problems:
        raise ModelFormatError("model does not validate: " + "; ".join(problems))
    return json.dumps(model_to_dict(model), indent=2) + "\n"


def model_from_dict(doc: dict) -> MixtureModel:
    version = _require(doc, "format_version")
    if version != 1:
        raise ModelFormatError(f"unsupported format_version {version!r}")
    spec_doc = _require(doc, "spec")
    for key in ("structure", "df_mode", "family", "g", "q", "p"):
        _require(spec_doc, key, "spec")
    try:
        spec = ModelSpec(
            structure=CovStructure.parse(spec_doc["structure"]),
            df_mode=spec_doc["df_mode"],
            family=spec_doc["family"],
            g=int(spec_doc["g"]),
            q=int(spec_doc["q"]),
            p=int(spec_doc["p"]),
        )
    except ValueError as exc:
        raise ModelFormatError(f"spec: {exc}") from None

    weights = np.asarray(_require(doc, "weights"), dtype=np.float64)
    means = np.asarray(_require(doc, "means"), dtype=np.float64)

    raw_loadings = _require(doc, "loadings")
    if not isinstance(raw_loadings, list) or not raw_loadings:
        raise ModelFormatError("loadings: expected a non-empty list of matrices")
    if spec.structure.loadings_tied:
        if len(raw_loadings) != 1:
            raise ModelFormatError(
                f"loadings: structure {spec.structure.value} stores one shared "
                f"matrix, got {len(raw_loadings)}")
        loadings = np.asarray(raw_loadings[0], dtype=np.float64)
    else:
        if len(raw_loadings) != spec.g:
            raise ModelFormatError(
                f"loadings: expected {spec.g} matrices, got {len(raw_loadings)}")
        loadings = np.asarray(raw_loadings, dtype=np.float64)

    err_doc = _require(doc, "error_diag")
    shape = _require(err_doc, "shape", "error_diag")
    data = _require(err_doc, "data", "error_diag")
    if shape != spec.structure.error_shape:
        raise ModelFormatError(
            f"error_diag: shape tag {shape!r} does not match structure "
            f"{spec.structure.value} (need {spec.structure.error_shape!r})")
    error = float(data) if shape == "scalar" else np.asarray(data, dtype=np.float64)

    raw_dfs = _require(doc, "dfs")
    if raw_dfs is None:
        dfs = None
    elif isinstance(raw_dfs, list):
        dfs = np.asarray(raw_dfs, dtype=np.float64)
    else:
        dfs = float(raw_dfs)

    report = FitReport.from_dict(doc["fit_report"]) if doc.get("fit_report") else None
    model = MixtureModel(spec=spec, weights=weights, means=means,
                         loadings=loadings, error_diags=error, dfs=dfs,
                         fit_report=report)
    problems = validate(model)
    if problems:
        raise ModelFormatError("model does not validate: " + "; ".join(problems))
    return model


def deserialize(text: str) -> MixtureModel:
    """Inverse of serialize; raises ModelFormatError with field context."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ModelFormatError("top-level JSON value must be an object")
    return model_from_dict(doc)
