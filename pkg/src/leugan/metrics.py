"""No-reference image quality metrics and Table-style reporting.

Three measures: a natural-scene-statistics score (lower = more natural),
Vollath F4 autocorrelation sharpness (higher = crisper), and a PCA-based
noise-level estimate from weak-texture patches (lower = cleaner). Sharpness
and noise are computed on 8-bit-scaled grayscale so magnitudes are comparable
across runs; the NSS score follows the standard recipe (7x7 Gaussian local
normalization, asymmetric-generalized-Gaussian moment fits over 96px patches
at two scales, Mahalanobis distance to a pristine Gaussian model).
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.stats import chi2

from .image import ImageBuffer, list_images, load_image, to_grayscale

DEFAULT_PATCH = 96
SHARPNESS_FRACTION = 0.75
_FEATURES_PER_SCALE = 18

_gamma_grid = np.arange(0.2, 10.001, 0.001)
_r_gam = (math.gamma(2.0 / g) ** 2 / (math.gamma(1.0 / g) * math.gamma(3.0 / g))
          for g in _gamma_grid)
_r_gam = np.fromiter(_r_gam, dtype=np.float64)


def _as_gray255(image) -> np.ndarray:
    if isinstance(image, ImageBuffer):
        buf = to_grayscale(image) if image.channels == 3 else image
        return buf.pixels[:, :, 0] * 255.0
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        return _as_gray255(ImageBuffer(arr))
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale or (H, W, C) image, got {arr.shape}")
    return arr * 255.0 if arr.max() <= 1.0 else arr


# -- natural-scene-statistics score -------------------------------------------


@dataclass
class NiqeModel:
    """Gaussian fit (mean, covariance) of pristine 36-D patch features."""

    mu: np.ndarray
    cov: np.ndarray
    patch_size: int = DEFAULT_PATCH

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        d = 2 * _FEATURES_PER_SCALE
        if self.mu.shape != (d,) or self.cov.shape != (d, d):
            raise ValueError("model must hold a 36-D mean and 36x36 covariance")
        if not np.allclose(self.cov, self.cov.T, atol=1e-8):
            raise ValueError("covariance must be symmetric")


def _gaussian_kernel7(sigma: float = 7.0 / 6.0) -> np.ndarray:
    ax = np.arange(-3, 4, dtype=np.float64)
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


_KERNEL7 = _gaussian_kernel7()


def compute_mscn(gray255: np.ndarray):
    """Mean-subtracted contrast-normalized coefficients and the sigma field."""
    mu = ndimage.correlate(gray255, _KERNEL7, mode="nearest")
    sigma = np.sqrt(np.abs(ndimage.correlate(gray255 * gray255, _KERNEL7, mode="nearest")
                           - mu * mu))
    return (gray255 - mu) / (sigma + 1.0), sigma


def estimate_aggd(vec: np.ndarray):
    """Moment-matching fit of an asymmetric generalized Gaussian.

    Returns (alpha, beta_left, beta_right).
    """
    vec = vec.reshape(-1)
    left = vec[vec < 0]
    right = vec[vec > 0]
    left_std = np.sqrt(np.mean(left ** 2)) if left.size else 1e-10
    right_std = np.sqrt(np.mean(right ** 2)) if right.size else 1e-10
    gamma_hat = left_std / right_std
    abs_mean = np.abs(vec).mean()
    sq_mean = (vec ** 2).mean()
    if sq_mean < 1e-300:
        raise FloatingPointError("degenerate (all-zero) coefficient field")
    r_hat = abs_mean ** 2 / sq_mean
    r_hat_norm = r_hat * (gamma_hat ** 3 + 1.0) * (gamma_hat + 1.0) / (gamma_hat ** 2 + 1.0) ** 2
    alpha = _gamma_grid[np.argmin((_r_gam - r_hat_norm) ** 2)]
    ratio = math.sqrt(math.gamma(1.0 / alpha) / math.gamma(3.0 / alpha))
    return alpha, left_std * ratio, right_std * ratio


_SHIFTS = ((0, 1), (1, 0), (1, 1), (1, -1))  # H, V, D1, D2 neighbor products


def _patch_features(mscn: np.ndarray) -> np.ndarray:
    feats = []
    alpha, bl, br = estimate_aggd(mscn)
    feats.extend([alpha, (bl + br) / 2.0])
    for dy, dx in _SHIFTS:
        paired = mscn * np.roll(np.roll(mscn, dy, axis=0), dx, axis=1)
        alpha, bl, br = estimate_aggd(paired)
        eta = (br - bl) * (math.gamma(2.0 / alpha) / math.gamma(1.0 / alpha))
        feats.extend([alpha, eta, bl, br])
    return np.asarray(feats)


def _halve(gray255: np.ndarray) -> np.ndarray:
    h, w = gray255.shape
    trimmed = gray255[:h - h % 2, :w - w % 2]
    return 0.25 * (trimmed[0::2, 0::2] + trimmed[0::2, 1::2]
                   + trimmed[1::2, 0::2] + trimmed[1::2, 1::2])


def image_nss_features(image, patch_size: int = DEFAULT_PATCH):
    """Per-patch 36-D feature matrix plus scale-1 patch sharpness."""
    gray = _as_gray255(image)
    h, w = gray.shape
    if h < 2 * patch_size or w < 2 * patch_size:
        raise ValueError(
            f"image {h}x{w} is too small; need at least {2 * patch_size} per side "
            f"for patch size {patch_size}")
    ny, nx = h // patch_size, w // patch_size
    gray = gray[:ny * patch_size, :nx * patch_size]

    per_scale = []
    sharpness = None
    current = gray
    for scale in (1, 2):
        block = patch_size // scale
        mscn, sigma_field = compute_mscn(current)
        feats = np.empty((ny * nx, _FEATURES_PER_SCALE))
        sharp = np.empty(ny * nx)
        idx = 0
        for by in range(ny):
            for bx in range(nx):
                sl = (slice(by * block, (by + 1) * block), slice(bx * block, (bx + 1) * block))
                feats[idx] = _patch_features(mscn[sl])
                sharp[idx] = sigma_field[sl].mean()
                idx += 1
        per_scale.append(feats)
        if scale == 1:
            sharpness = sharp
            current = _halve(current)
    return np.hstack(per_scale), sharpness


def fit_pristine_model(corpus, patch_size: int = DEFAULT_PATCH,
                       sharpness_fraction: float = SHARPNESS_FRACTION) -> NiqeModel:
    """Fit the pristine Gaussian model from sharp patches of a clean corpus.

    ``corpus`` is a directory path or an iterable of images. Keeps patches
    whose local-contrast mean exceeds ``sharpness_fraction`` of the sharpest
    patch in the same image.
    """
    if isinstance(corpus, (str, Path)):
        items = [load_image(p) for p in list_images(corpus)]
    else:
        items = list(corpus)
    if len(items) < 10:
        raise ValueError(f"pristine corpus needs at least 10 images, got {len(items)}")
    selected = []
    for item in items:
        feats, sharp = image_nss_features(item, patch_size)
        keep = sharp > sharpness_fraction * sharp.max()
        if not keep.any():
            keep = np.ones_like(keep, dtype=bool)
        selected.append(feats[keep])
    feats = np.vstack(selected)
    if not np.all(np.isfinite(feats)):
        raise FloatingPointError("pristine corpus produced degenerate features "
                                 "(flat images?)")
    mu = feats.mean(axis=0)
    cov = np.cov(feats.T)
    return NiqeModel(mu, cov, patch_size)


def niqe(image, model: NiqeModel) -> float:
    """Mahalanobis-style distance between the image's feature Gaussian and the
    pristine model; lower means more natural."""
    feats, _ = image_nss_features(image, model.patch_size)
    feats = feats[np.all(np.isfinite(feats), axis=1)]
    if feats.shape[0] == 0:
        raise FloatingPointError("no usable patches in image")
    mu_img = feats.mean(axis=0)
    cov_img = np.cov(feats.T) if feats.shape[0] > 1 else np.zeros_like(model.cov)
    diff = model.mu - mu_img
    pooled = (model.cov + cov_img) / 2.0
    dist_sq = diff @ np.linalg.pinv(pooled) @ diff
    return float(np.sqrt(max(dist_sq, 0.0)))


# -- sharpness ---------------------------------------------------------------------


def vollath_f4(gray) -> float:
    """Autocorrelation-difference sharpness on 8-bit-scaled values.

    sum_x I(x,y) I(x+1,y) - sum_x I(x,y) I(x+2,y), each sum over its own full
    valid range along the horizontal axis. Transposing the image swaps the
    directional reading; vertical flips leave it unchanged.
    """
    g = _as_gray255(gray)
    if isinstance(gray, ImageBuffer) and gray.channels == 3:
        raise ValueError("vollath_f4 expects a grayscale image")
    if g.shape[1] < 3:
        raise ValueError(f"vollath_f4 needs width >= 3, got {g.shape[1]}")
    s1 = float((g[:, :-1] * g[:, 1:]).sum())
    s2 = float((g[:, :-2] * g[:, 2:]).sum())
    return s1 - s2


# -- noise estimation ---------------------------------------------------------------


_PATCH = 5
_SELECT_QUANTILE = 0.99


def pca_noise(image, max_iter: int = 10, tol: float = 1e-4) -> float:
    """Noise sigma estimate in 8-bit units from weak-texture 5x5 patches.

    Iteratively keeps patches whose sample variance is consistent with the
    current noise level, then reads sigma^2 off the smallest eigenvalue of
    the patch covariance.
    """
    gray = _as_gray255(image)
    h, w = gray.shape
    if (h - _PATCH + 1) * (w - _PATCH + 1) < 100:
        raise ValueError(f"image {h}x{w} yields fewer than 100 {_PATCH}x{_PATCH} patches")
    windows = np.lib.stride_tricks.sliding_window_view(gray, (_PATCH, _PATCH))
    patches = windows.reshape(-1, _PATCH * _PATCH)
    variances = patches.var(axis=1, ddof=1)

    def smallest_eig(sub):
        cov = np.cov(sub.T)
        return max(float(np.linalg.eigvalsh(cov)[0]), 0.0)

    sigma = math.sqrt(smallest_eig(patches))
    quantile = chi2.ppf(_SELECT_QUANTILE, _PATCH * _PATCH - 1) / (_PATCH * _PATCH - 1)
    for _ in range(max_iter):
        threshold = quantile * sigma * sigma
        keep = variances <= threshold
        if keep.sum() < 100:
            keep = variances <= np.partition(variances, 99)[99]
        sigma_new = math.sqrt(smallest_eig(patches[keep]))
        if abs(sigma_new - sigma) < tol:
            sigma = sigma_new
            break
        sigma = sigma_new
    return sigma


# -- report -----------------------------------------------------------------------


@dataclass
class MetricRow:
    filename: str
    niqe: float
    vollath: float
    pca_noise: float


@dataclass
class MetricReport:
    """Per-image metrics with aggregate means.

    Orientation: niqe lower is better, vollath higher is better, pca_noise
    lower is better.
    """

    rows: list = field(default_factory=list)
    skipped: int = 0

    LOWER_IS_BETTER = {"niqe": True, "vollath": False, "pca_noise": True}

    def aggregate(self, key: str) -> float:
        if not self.rows:
            raise ValueError("empty report")
        return float(np.mean([getattr(r, key) for r in self.rows]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["filename", "niqe", "vollath", "pca_noise"])
            for r in self.rows:
                writer.writerow([r.filename, f"{r.niqe:.6f}", f"{r.vollath:.6f}",
                                 f"{r.pca_noise:.6f}"])

    def to_text(self) -> str:
        name_w = max([len(r.filename) for r in self.rows] + [len("mean"), len("Image")])
        lines = [f"{'Image':<{name_w}}  {'NIQE(v)':>12}  {'Vollath(^)':>14}  "
                 f"{'PCA-based(v)':>13}"]
        for r in self.rows:
            lines.append(f"{r.filename:<{name_w}}  {r.niqe:>12.3f}  {r.vollath:>14.2f}  "
                         f"{r.pca_noise:>13.3f}")
        lines.append(f"{'mean':<{name_w}}  {self.aggregate('niqe'):>12.3f}  "
                     f"{self.aggregate('vollath'):>14.2f}  "
                     f"{self.aggregate('pca_noise'):>13.3f}")
        if self.skipped:
            lines.append(f"(skipped {self.skipped} unreadable file(s))")
        return "\n".join(lines)


def _metric_worker(args):
    path, model = args
    buf = load_image(path)
    gray = to_grayscale(buf) if buf.channels == 3 else buf
    return MetricRow(
        filename=path.name,
        niqe=niqe(buf, model),
        vollath=vollath_f4(gray),
        pca_noise=pca_noise(buf),
    )


def worker_count() -> int:
    env = os.environ.get("LEUGAN_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def evaluate_directory(directory, model: NiqeModel) -> MetricReport:
    """Score every readable image in a directory; unreadable files are skipped
    with a warning and counted in the report."""
    paths = list_images(directory)
    if not paths:
        raise ValueError(f"no images found in {directory}")
    report = MetricReport()
    jobs = [(p, model) for p in paths]
    threads = worker_count()
    results = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = list(pool.map(_safe_worker, jobs))
        results = futures
    else:
        results = [_safe_worker(j) for j in jobs]
    for path, row in zip(paths, results):
        if row is None:
            report.skipped += 1
        else:
            report.rows.append(row)
    return report


def _safe_worker(job):
    path = job[0]
    try:
        return _metric_worker(job)
    except (IOError, ValueError, FloatingPointError) as exc:
        warnings.warn(f"skipping {path}: {exc}")
        return None
