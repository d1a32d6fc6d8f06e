"""Block codec for images, model-based compression, reconstruction metrics,
and the PCA (eigenface) baseline.

Blocks are scanned row-major and vectorized channel-interleaved per pixel
(pixel rows outer, then columns, then channels). Images whose sides are not
multiples of the block size are replicate-padded on the right/bottom and
cropped back on reassembly. Fitting operates on raw intensities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from PIL import Image

from .estep import factor_scores_many, responsibilities
from .fit import FitOptions, aecm_fit
from .model import MixtureModel, ModelSpec

# ---------------------------------------------------------------------------
# Image I/O (8-bit PNG, binary PPM/PGM)
# ---------------------------------------------------------------------------

def read_image(path) -> np.ndarray:
    """Read an image as uint8, shape (H, W) for grayscale or (H, W, 3)."""
    with Image.open(path) as img:
        if img.mode in ("1", "L", "I", "I;16"):
            img = img.convert("L")
        elif img.mode != "RGB":
            img = img.convert("RGB")
        return np.asarray(img, dtype=np.uint8)


def write_image(path, array: np.ndarray) -> None:
    """Write a uint8 array as PNG, binary PPM (color) or PGM (grayscale)."""
    arr = np.asarray(array, dtype=np.uint8)
    if arr.ndim == 2:
        img = Image.fromarray(arr, mode="L")
    elif arr.ndim == 3 and arr.shape[2] == 3:
        img = Image.fromarray(arr, mode="RGB")
    else:
        raise ValueError(f"expected (H, W) or (H, W, 3) array, got {arr.shape}")
    img.save(path)


# ---------------------------------------------------------------------------
# Block extraction / assembly
# ---------------------------------------------------------------------------

@dataclass
class BlockDataset:
    """Vectorized non-overlapping blocks plus the geometry to reassemble.

    image_width/image_height are the padded sizes (always divisible by the
    block size); orig_width/orig_height are the pre-padding sizes used to
    crop on reassembly.
    """

    vectors: np.ndarray
    image_width: int
    image_height: int
    block_w: int
    block_h: int
    channels: int
    channel_range: tuple = (0, 255)
    orig_width: int = 0
    orig_height: int = 0

    def __post_init__(self):
        if self.orig_width == 0:
            self.orig_width = self.image_width
        if self.orig_height == 0:
            self.orig_height = self.image_height

    @property
    def p(self) -> int:
        return self.block_w * self.block_h * self.channels

    @property
    def n(self) -> int:
        return self.vectors.shape[0]


def extract_blocks(image: np.ndarray, block_w: int, block_h: int) -> BlockDataset:
    """Cut an image into non-overlapping block vectors (row-major scan)."""
    if block_w < 1 or block_h < 1:
        raise ValueError("block dimensions must be positive")
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"expected a 2-D or 3-D image array, got shape {arr.shape}")
    orig_h, orig_w, channels = arr.shape
    if orig_h == 0 or orig_w == 0:
        raise ValueError("image has zero size")
    channel_range = (0, 255) if arr.dtype.kind in "ui" else (0.0, 1.0)
    arr = arr.astype(np.float64)

    pad_h = (-orig_h) % block_h
    pad_w = (-orig_w) % block_w
    if pad_h or pad_w:
        arr = np.pad(arr, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
    height, width = arr.shape[:2]

    rows, cols = height // block_h, width // block_w
    vectors = (arr.reshape(rows, block_h, cols, block_w, channels)
               .transpose(0, 2, 1, 3, 4)
               .reshape(rows * cols, block_h * block_w * channels))
    return BlockDataset(vectors=np.ascontiguousarray(vectors),
                        image_width=width, image_height=height,
                        block_w=block_w, block_h=block_h, channels=channels,
                        channel_range=channel_range,
                        orig_width=orig_w, orig_height=orig_h)


def assemble_blocks(dataset: BlockDataset) -> np.ndarray:
    """Exact inverse of extract_blocks (padding cropped, values clamped)."""
    bw, bh, ch = dataset.block_w, dataset.block_h, dataset.channels
    width, height = dataset.image_width, dataset.image_height
    rows, cols = height // bh, width // bw
    if dataset.vectors.shape != (rows * cols, bh * bw * ch):
        raise ValueError(
            f"vector block shape {dataset.vectors.shape} inconsistent with "
            f"geometry {height}x{width}x{ch} in {bh}x{bw} blocks")
    arr = (dataset.vectors.reshape(rows, cols, bh, bw, ch)
           .transpose(0, 2, 1, 3, 4)
           .reshape(height, width, ch))
    arr = arr[:dataset.orig_height, :dataset.orig_width]
    lo, hi = dataset.channel_range
    arr = np.clip(arr, lo, hi)
    if (lo, hi) == (0, 255):
        arr = np.rint(arr).astype(np.uint8)
    if ch == 1:
        arr = arr[:, :, 0]
    return arr


# ---------------------------------------------------------------------------
# Reconstruction metrics
# ---------------------------------------------------------------------------

@dataclass
class QualityReport:
    rmse: float
    psnr: float
    per_channel_mse: tuple

    def to_dict(self) -> dict:
        return {
            "rmse": float(self.rmse),
            "psnr": "inf" if math.isinf(self.psnr) else float(self.psnr),
            "per_channel_mse": [float(v) for v in self.per_channel_mse],
        }


def psnr(rmse: float) -> float:
    """Peak signal-to-noise ratio 20 log10(255 / RMSE) in decibels."""
    if rmse < 0:
        raise ValueError("rmse must be nonnegative")
    if rmse == 0:
        return math.inf
    return 20.0 * math.log10(255.0 / rmse)


def rmse_color(original: np.ndarray, reconstructed: np.ndarray) -> QualityReport:
    """RMSE over channel MSEs: sqrt(mean_c MSE_c), plus the matching PSNR."""
    a = np.asarray(original, dtype=np.float64)
    b = np.asarray(reconstructed, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    per_channel = tuple(float(np.mean((a[:, :, c] - b[:, :, c]) ** 2))
                        for c in range(a.shape[2]))
    rmse = math.sqrt(sum(per_channel) / len(per_channel))
    return QualityReport(rmse=rmse, psnr=psnr(rmse), per_channel_mse=per_channel)


# ---------------------------------------------------------------------------
# Model-based compression
# ---------------------------------------------------------------------------

def reconstruct_vectors(vectors: np.ndarray, model: MixtureModel) -> np.ndarray:
    """Classify each vector by posterior and rebuild as mu_i + B_i u_ij."""
    state = responsibilities(vectors, model)
    labels = np.argmax(state.resp, axis=1)
    out = np.empty_like(vectors, dtype=np.float64)
    for i in range(model.spec.g):
        idx = np.flatnonzero(labels == i)
        if idx.size == 0:
            continue
        cov = model.component_cov(i)
        resid = vectors[idx] - model.means[i]
        scores = factor_scores_many(resid, cov)
        out[idx] = model.means[i] + scores @ model.loading(i).T
    return out


def compress_image(image: np.ndarray, spec: ModelSpec,
                   options: Optional[FitOptions] = None,
                   block_w: int = 4, block_h: int = 4):
    """Fit a block mixture and reconstruct the image through it.

    Returns (reconstructed image, fitted model, quality report vs original).
    """
    dataset = extract_blocks(image, block_w, block_h)
    if spec.p != dataset.p:
        raise ValueError(
            f"spec.p={spec.p} but {block_w}x{block_h} blocks with "
            f"{dataset.channels} channel(s) give p={dataset.p}")
    model, _ = aecm_fit(dataset.vectors, spec, options)
    recon_vectors = reconstruct_vectors(dataset.vectors, model)
    recon_dataset = BlockDataset(
        vectors=recon_vectors, image_width=dataset.image_width,
        image_height=dataset.image_height, block_w=block_w, block_h=block_h,
        channels=dataset.channels, channel_range=dataset.channel_range,
        orig_width=dataset.orig_width, orig_height=dataset.orig_height)
    recon = assemble_blocks(recon_dataset)
    report = rmse_color(image, recon)
    return recon, model, report


# ---------------------------------------------------------------------------
# PCA / eigenfaces
# ---------------------------------------------------------------------------

@dataclass
class PcaBasis:
    """Top eigenpairs of the total scatter matrix about the sample mean."""

    mean: np.ndarray
    components: np.ndarray   # (p, K), orthonormal columns
    eigenvalues: np.ndarray  # (K,), descending


def _fix_signs(components: np.ndarray) -> np.ndarray:
    for k in range(components.shape[1]):
        col = components[:, k]
        if col[np.argmax(np.abs(col))] < 0:
            components[:, k] = -col
    return components


def _complete_orthonormal(components: np.ndarray, start: int) -> np.ndarray:
    """Fill columns from `start` on with any orthonormal completion (used when
    the scatter is rank-deficient and eigenvectors beyond the rank are free)."""
    p, k = components.shape
    basis = components[:, :start]
    col = start
    for j in range(p):
        if col >= k:
            break
        cand = np.zeros(p)
        cand[j] = 1.0
        if basis.shape[1]:
            cand -= basis @ (basis.T @ cand)
        norm = np.linalg.norm(cand)
        if norm > 1e-8:
            components[:, col] = cand / norm
            basis = components[:, :col + 1]
            col += 1
    return components


def pca_fit(data: np.ndarray, k: int) -> PcaBasis:
    """Top-k eigenpairs of the unnormalized total scatter matrix.

    Uses the n x n Gram trick when p > n, so face-sized vectors are cheap.
    """
    data = np.asarray(data, dtype=np.float64)
    n, p = data.shape
    if not 1 <= k <= min(n - 1, p):
        raise ValueError(f"K must be in [1, {min(n - 1, p)}], got {k}")
    mean = data.mean(axis=0)
    centered = data - mean
    if p <= n:
        scatter = centered.T @ centered
        vals, vecs = np.linalg.eigh(scatter)
        vals = vals[::-1][:k]
        comps = np.ascontiguousarray(vecs[:, ::-1][:, :k])
        rank = k
    else:
        gram = centered @ centered.T
        vals_all, vecs_all = np.linalg.eigh(gram)
        vals = vals_all[::-1][:k]
        comps = np.zeros((p, k))
        rank = 0
        for r in range(k):
            if vals[r] > 1e-10 * max(1.0, float(vals_all[-1])):
                comps[:, r] = centered.T @ vecs_all[:, ::-1][:, r] / math.sqrt(vals[r])
                rank += 1
            else:
                break
        comps = _complete_orthonormal(comps, rank)
    return PcaBasis(mean=mean, components=_fix_signs(comps),
                    eigenvalues=np.clip(vals, 0.0, None))


def pca_reconstruct(y: np.ndarray, basis: PcaBasis, k: int) -> np.ndarray:
    """Projection onto the best k basis vectors: mean + E_k E_k^T (y - mean)."""
    stored = basis.components.shape[1]
    if not 0 <= k <= stored:
        raise ValueError(f"K must be in [0, {stored}], got {k}")
    y = np.asarray(y, dtype=np.float64)
    if k == 0:
        return basis.mean.copy()
    e = basis.components[:, :k]
    return basis.mean + e @ (e.T @ (y - basis.mean))


def normalize_unit(v: np.ndarray) -> np.ndarray:
    """Min-max rescale to [0, 1]; a constant vector maps to all zeros."""
    v = np.asarray(v, dtype=np.float64)
    lo = float(v.min())
    hi = float(v.max())
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def image_rmse_vector(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Euclidean norm of the reconstruction error (unaveraged)."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"vector lengths differ: {y.shape} vs {y_hat.shape}")
    return float(np.linalg.norm(y - y_hat))
