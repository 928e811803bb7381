"""Fréchet distance between Gaussian fits of two feature sets.

d^2 = ||mu1 - mu2||^2 + Tr(C1 + C2 - 2 (C1^(1/2) C2 C1^(1/2))^(1/2))

computed with an eigendecomposition square root (covariances are symmetric
PSD up to rounding, so no general matrix sqrt is needed). The squared form
is returned directly; callers treat it as "lower is better".
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import Encoder, forward_batch, preprocess
from .errors import (
    DimensionMismatch,
    EigenFailure,
    NonFiniteFeature,
    NotSymmetric,
    TooFewSamples,
)

# eigenvalues of a PSD matrix may round slightly negative; clamp them to zero
_SYM_ATOL = 1e-8
_NEG_TOTAL_TOL = 1e-6
_REG_SCALE = 1e-6


@dataclass(frozen=True)
class GaussianStats:
    """Mean and covariance of a feature set, with the fit sample count.

    The covariance is symmetrized on construction; n_samples is kept so the
    distance can regularize sample-deficient fits (N <= d).
    """

    mean: np.ndarray
    cov: np.ndarray
    n_samples: int | None = None

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1:
            raise DimensionMismatch(f"mean must be 1-D, got shape {mean.shape}")
        if cov.shape != (mean.size, mean.size):
            raise DimensionMismatch(
                f"cov shape {cov.shape} does not match mean dimension {mean.size}"
            )
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise NonFiniteFeature("Gaussian statistics contain non-finite entries")
        cov = 0.5 * (cov + cov.T)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def fit_gaussian(features: np.ndarray) -> GaussianStats:
    """Column mean and unbiased (N-1) covariance of an (N, d) feature matrix."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise DimensionMismatch(f"expected (N, d) features, got shape {features.shape}")
    n, d = features.shape
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples to fit a Gaussian, got {n}")
    if not np.all(np.isfinite(features)):
        raise NonFiniteFeature("feature matrix contains non-finite entries")
    mean = features.mean(axis=0)
    cov = np.atleast_2d(np.cov(features, rowvar=False, ddof=1))
    return GaussianStats(mean=mean, cov=cov, n_samples=n)


def sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues below zero (rounding noise) are clamped to zero before the
    root, so the result is always real symmetric.
    """
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {mat.shape}")
    scale = max(1.0, float(np.max(np.abs(mat))) if mat.size else 0.0)
    if float(np.max(np.abs(mat - mat.T))) > _SYM_ATOL * scale:
        raise NotSymmetric("matrix is not symmetric within tolerance")
    sym = 0.5 * (mat + mat.T)
    try:
        eigvals, eigvecs = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(f"eigendecomposition failed: {exc}") from exc
    eigvals = np.clip(eigvals, 0.0, None)
    root = (eigvecs * np.sqrt(eigvals)) @ eigvecs.T
    return 0.5 * (root + root.T)


def _regularized_cov(stats: GaussianStats) -> np.ndarray:
    """Add eps*I with eps = 1e-6 * trace/d when the fit had N <= d samples."""
    cov = stats.cov
    if stats.n_samples is not None and stats.n_samples <= stats.dim:
        eps = _REG_SCALE * float(np.trace(cov)) / stats.dim
        if eps > 0.0:
            cov = cov + eps * np.eye(stats.dim)
    return cov


def frechet_distance(g1: GaussianStats, g2: GaussianStats) -> float:
    """Squared Fréchet distance between two Gaussian fits. Symmetric, >= 0."""
    if g1.dim != g2.dim:
        raise DimensionMismatch(f"dimension mismatch: {g1.dim} vs {g2.dim}")
    c1 = _regularized_cov(g1)
    c2 = _regularized_cov(g2)
    diff = g1.mean - g2.mean
    s1 = sqrtm_psd(c1)
    inner = s1 @ c2 @ s1
    cross = sqrtm_psd(0.5 * (inner + inner.T))
    total = float(diff @ diff + np.trace(c1) + np.trace(c2) - 2.0 * np.trace(cross))
    if -_NEG_TOTAL_TOL <= total < 0.0:
        total = 0.0
    return total


def score_features(ref_features: np.ndarray, test_features: np.ndarray) -> float:
    """Distance between the Gaussian fits of two feature matrices (same d)."""
    ref_features = np.asarray(ref_features, dtype=np.float64)
    test_features = np.asarray(test_features, dtype=np.float64)
    if ref_features.ndim != 2 or test_features.ndim != 2:
        raise DimensionMismatch("feature matrices must be 2-D")
    if ref_features.shape[1] != test_features.shape[1]:
        raise DimensionMismatch(
            f"feature dimension mismatch: {ref_features.shape[1]} vs {test_features.shape[1]}"
        )
    return frechet_distance(fit_gaussian(ref_features), fit_gaussian(test_features))


def extract_features(enc: Encoder, images) -> np.ndarray:
    """Resize/replicate each image to the encoder input and run the batch."""
    side = enc.config.input_side
    batch = [preprocess(img, side) for img in images]
    return forward_batch(enc, batch)


def score_stitched(reference_images, stitched_images, enc: Encoder) -> float:
    """Fréchet distance between encoder features of two image sets."""
    refs = list(reference_images)
    tests = list(stitched_images)
    if len(refs) < 2 or len(tests) < 2:
        raise TooFewSamples("need at least 2 images on each side")
    return score_features(extract_features(enc, refs), extract_features(enc, tests))
