"""Parsimonious mixtures of t factor analyzers.

Fits eight low-rank-plus-diagonal covariance structures, with common or
per-component degrees of freedom and a Gaussian counterpart family, via a
three-cycle alternating ECM algorithm. Includes block-image compression and
eigenface reconstruction pipelines plus a BIC model search.
"""

from .errors import (DegenerateComponentError, FitFailureError,
                     ModelFormatError, SearchFailureError)
from .estep import (EStepState, factor_scores, mvt_logdensity,
                    precision_weights, responsibilities, scatter_matrices)
from .fit import (FitOptions, SearchGrid, SearchResult, aecm_fit,
                  aitken_converged, bic, initialize, kmeans, model_search)
from .imaging import (BlockDataset, PcaBasis, QualityReport, assemble_blocks,
                      compress_image, extract_blocks, image_rmse_vector,
                      normalize_unit, pca_fit, pca_reconstruct, psnr,
                      read_image, rmse_color, write_image)
from .kernels import (PSI_FLOOR, FactorCovariance, active_backend, digamma,
                      log_gamma, lowrank_logdet, mahalanobis_sq, set_backend,
                      woodbury_inverse)
from .model import (NU_MAX, NU_MIN, CovStructure, FitReport, MixtureModel,
                    ModelSpec, count_free_parameters, deserialize, serialize,
                    validate)
from .mstep import (DfRootProblem, solve_df, update_covariance, update_dfs,
                    update_means, update_weights)

__version__ = "0.1.0"

__all__ = [
    "BlockDataset", "CovStructure", "DegenerateComponentError",
    "DfRootProblem", "EStepState", "FactorCovariance", "FitFailureError",
    "FitOptions", "FitReport", "MixtureModel", "ModelFormatError",
    "ModelSpec", "NU_MAX", "NU_MIN", "PSI_FLOOR", "PcaBasis",
    "QualityReport", "SearchFailureError", "SearchGrid", "SearchResult",
    "active_backend", "aecm_fit", "aitken_converged", "assemble_blocks",
    "bic", "compress_image", "count_free_parameters", "deserialize",
    "digamma", "extract_blocks", "factor_scores", "image_rmse_vector",
    "initialize", "kmeans", "log_gamma", "lowrank_logdet", "mahalanobis_sq",
    "model_search", "mvt_logdensity", "normalize_unit", "pca_fit",
    "pca_reconstruct", "precision_weights", "psnr", "read_image",
    "responsibilities", "rmse_color", "scatter_matrices", "serialize",
    "set_backend", "solve_df", "update_covariance", "update_dfs",
    "update_means", "update_weights", "validate", "woodbury_inverse",
    "write_image",
]
