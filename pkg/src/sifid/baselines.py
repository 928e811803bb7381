"""Classic quality indicators for the comparison harness.

Full-reference: MSE, PSNR, SSIM. No-reference sharpness/energy: AG, SF.
No-reference statistical: NIQE-style score from MSCN coefficients fitted with
asymmetric generalized Gaussian (AGGD) moments against a pristine corpus.

All constants (SSIM window, NIQE patch size, stabilizers) are frozen here and
echoed into the model file so scores stay comparable across runs. Images use
the unit dynamic range, so PSNR matches 255-scale implementations exactly.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import gamma as _gamma_fn

from .errors import (
    DimensionHeaderInvalid,
    FormatMismatch,
    ImageTooSmall,
    NoQualifyingPatches,
    ParseError,
    ShapeMismatch,
    TooFewPristine,
)
from .imagecore import Image, load_image, resize_bilinear, to_grayscale

# fixed per-metric orientation; correlation code negates lower_better scores
ORIENTATIONS = {
    "mse": "lower_better",
    "psnr": "higher_better",
    "ssim": "higher_better",
    "ag": "higher_better",
    "sf": "higher_better",
    "niqe": "lower_better",
    "fid": "lower_better",
    "sifid": "lower_better",
}

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_L = 1.0

_NIQE_PATCH = 96
_NIQE_WINDOW = 7
_NIQE_WINDOW_SIGMA = 7.0 / 6.0
_NIQE_STABILIZER = 1e-3
_NIQE_SHARPNESS_FRAC = 0.75
_NIQE_FEATURE_DIM = 36
_NIQE_MIN_PRISTINE = 10

_NIQE_MAGIC = b"NIQEMDL\x00"
_NIQE_VERSION = 1


@dataclass(frozen=True)
class MetricScore:
    metric: str
    value: float
    orientation: str = ""

    def __post_init__(self):
        if self.metric not in ORIENTATIONS:
            raise ParseError(f"unknown metric {self.metric!r}")
        expected = ORIENTATIONS[self.metric]
        if self.orientation and self.orientation != expected:
            raise ParseError(
                f"metric {self.metric!r} has fixed orientation {expected!r}"
            )
        object.__setattr__(self, "orientation", expected)


def _pair_gray(a: Image, b: Image) -> tuple[np.ndarray, np.ndarray]:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    return to_grayscale(a).data[:, :, 0], to_grayscale(b).data[:, :, 0]


def mse(a: Image, b: Image) -> float:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    return float(np.mean(diff * diff))


def psnr(a: Image, b: Image) -> float:
    """10*log10(1/mse) on the unit range; identical images give +inf."""
    err = mse(a, b)
    if err == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / err))


def _gaussian_taps(size: int, sigma: float) -> np.ndarray:
    radius = (size - 1) // 2
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def _filter_valid(arr: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation (output shrinks by len(taps)-1)."""
    k = len(taps)
    out = np.zeros((arr.shape[0] - k + 1, arr.shape[1]), dtype=np.float64)
    for t, w in enumerate(taps):
        out += w * arr[t : t + out.shape[0], :]
    out2 = np.zeros((out.shape[0], arr.shape[1] - k + 1), dtype=np.float64)
    for t, w in enumerate(taps):
        out2 += w * out[:, t : t + out2.shape[1]]
    return out2


def _filter_same(arr: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable same-size correlation with reflected edges (101 convention)."""
    radius = len(taps) // 2
    padded = np.pad(arr, radius, mode="reflect")
    out = np.zeros((arr.shape[0], padded.shape[1]), dtype=np.float64)
    for t, w in enumerate(taps):
        out += w * padded[t : t + arr.shape[0], :]
    out2 = np.zeros(arr.shape, dtype=np.float64)
    for t, w in enumerate(taps):
        out2 += w * out[:, t : t + arr.shape[1]]
    return out2


def ssim(a: Image, b: Image) -> float:
    """Mean local SSIM over an 11x11 Gaussian window, grayscale input."""
    ga, gb = _pair_gray(a, b)
    if min(ga.shape) < _SSIM_WINDOW:
        raise ImageTooSmall(
            f"ssim needs min dimension >= {_SSIM_WINDOW}, got {ga.shape}"
        )
    taps = _gaussian_taps(_SSIM_WINDOW, _SSIM_SIGMA)
    c1 = (_SSIM_K1 * _SSIM_L) ** 2
    c2 = (_SSIM_K2 * _SSIM_L) ** 2
    mu_a = _filter_valid(ga, taps)
    mu_b = _filter_valid(gb, taps)
    var_a = _filter_valid(ga * ga, taps) - mu_a * mu_a
    var_b = _filter_valid(gb * gb, taps) - mu_b * mu_b
    cov_ab = _filter_valid(ga * gb, taps) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov_ab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def average_gradient(a: Image) -> float:
    """Mean over interior pixels of sqrt((dx^2+dy^2)/2), forward differences."""
    g = to_grayscale(a).data[:, :, 0]
    if min(g.shape) < 2:
        raise ImageTooSmall(f"average_gradient needs min dimension >= 2, got {g.shape}")
    dx = g[:, 1:] - g[:, :-1]
    dy = g[1:, :] - g[:-1, :]
    interior = np.sqrt((dx[: g.shape[0] - 1, :] ** 2 + dy[:, : g.shape[1] - 1] ** 2) / 2.0)
    return float(np.mean(interior))


def spatial_frequency(a: Image) -> float:
    """sqrt(RF^2 + CF^2) from root-mean-square row/column differences."""
    g = to_grayscale(a).data[:, :, 0]
    if min(g.shape) < 2:
        raise ImageTooSmall(f"spatial_frequency needs min dimension >= 2, got {g.shape}")
    rf2 = np.mean((g[:, 1:] - g[:, :-1]) ** 2)
    cf2 = np.mean((g[1:, :] - g[:-1, :]) ** 2)
    return float(np.sqrt(rf2 + cf2))


# ---------------------------------------------------------------------------
# NIQE-style no-reference score


_aggd_lookup: tuple[np.ndarray, np.ndarray] | None = None


def _no_patches(h: int, w: int) -> NoQualifyingPatches:
    return NoQualifyingPatches(
        f"no {_NIQE_PATCH}x{_NIQE_PATCH} patches qualify in {h}x{w} image"
    )


def _aggd_tables() -> tuple[np.ndarray, np.ndarray]:
    global _aggd_lookup
    if _aggd_lookup is None:
        gam = np.arange(0.2, 10.001, 0.001)
        r_gam = (_gamma_fn(2.0 / gam) ** 2) / (_gamma_fn(1.0 / gam) * _gamma_fn(3.0 / gam))
        _aggd_lookup = (gam, r_gam)
    return _aggd_lookup


def aggd_fit(x: np.ndarray) -> tuple[float, float, float]:
    """Moment-matching AGGD fit: returns (alpha, beta_left, beta_right)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    gam, r_gam = _aggd_tables()
    left = x[x < 0.0]
    right = x[x > 0.0]
    sigma_l = np.sqrt(np.mean(left * left)) if left.size else 0.0
    sigma_r = np.sqrt(np.mean(right * right)) if right.size else 0.0
    eps = 1e-12
    gammahat = (sigma_l + eps) / (sigma_r + eps)
    sq_mean = np.mean(x * x)
    rhat = (np.mean(np.abs(x)) ** 2) / (sq_mean + eps)
    rhatnorm = rhat * (gammahat**3 + 1.0) * (gammahat + 1.0) / ((gammahat**2 + 1.0) ** 2)
    alpha = float(gam[np.argmin((r_gam - rhatnorm) ** 2)])
    conv = np.sqrt(_gamma_fn(1.0 / alpha) / _gamma_fn(3.0 / alpha))
    return alpha, float(sigma_l * conv), float(sigma_r * conv)


def aggd_sample(alpha: float, beta_l: float, beta_r: float, n: int, rng) -> np.ndarray:
    """Draw AGGD samples; used as the independent check of the fitter.

    Side chosen with probability proportional to its beta; magnitude is
    beta_side * Gamma(1/alpha, 1)^(1/alpha).
    """
    sides = rng.uniform(0.0, 1.0, n) < (beta_r / (beta_l + beta_r))
    mags = rng.gamma(1.0 / alpha, 1.0, n) ** (1.0 / alpha)
    out = np.where(sides, beta_r * mags, -beta_l * mags)
    return out


def _mscn(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean-subtracted contrast-normalized field plus the local-sigma map."""
    taps = _gaussian_taps(_NIQE_WINDOW, _NIQE_WINDOW_SIGMA)
    mu = _filter_same(gray, taps)
    sigma = np.sqrt(np.abs(_filter_same(gray * gray, taps) - mu * mu))
    return (gray - mu) / (sigma + _NIQE_STABILIZER), sigma


def _patch_features(mscn: np.ndarray) -> np.ndarray:
    """18 AGGD features: 2 for the field itself, 4 per directional product."""
    feats = []
    alpha, bl, br = aggd_fit(mscn)
    feats.extend([alpha, (bl + br) / 2.0])
    shifts = ((0, 1), (1, 0), (1, 1), (1, -1))
    for dy, dx in shifts:
        product = mscn * np.roll(np.roll(mscn, dy, axis=0), dx, axis=1)
        alpha, bl, br = aggd_fit(product)
        eta = (br - bl) * (_gamma_fn(2.0 / alpha) / _gamma_fn(1.0 / alpha))
        feats.extend([alpha, float(eta), bl, br])
    return np.array(feats, dtype=np.float64)


def _image_features(img: Image) -> np.ndarray:
    """(n_selected_patches, 36) features at two scales, sharpness-selected."""
    gray = to_grayscale(img).data[:, :, 0]
    h, w = gray.shape
    p = _NIQE_PATCH
    if h < p or w < p:
        raise _no_patches(h, w)
    rows = range(0, h - p + 1, p)
    cols = range(0, w - p + 1, p)
    mscn1, sigma1 = _mscn(gray)
    positions = [(r, c) for r in rows for c in cols]
    sharpness = np.array([np.mean(sigma1[r : r + p, c : c + p]) for r, c in positions])
    keep = sharpness >= _NIQE_SHARPNESS_FRAC * float(np.max(sharpness))
    selected = [pos for pos, k in zip(positions, keep) if k]
    if not selected:
        raise _no_patches(h, w)

    half = resize_bilinear(Image(gray[:, :, None]), h // 2, w // 2).data[:, :, 0]
    mscn2, _ = _mscn(half)
    q = p // 2
    rows_feats = []
    for r, c in selected:
        f1 = _patch_features(mscn1[r : r + p, c : c + p])
        f2 = _patch_features(mscn2[r // 2 : r // 2 + q, c // 2 : c // 2 + q])
        rows_feats.append(np.concatenate([f1, f2]))
    return np.stack(rows_feats)


@dataclass(frozen=True)
class NiqeModel:
    mean: np.ndarray
    cov: np.ndarray
    config: dict

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.shape != (_NIQE_FEATURE_DIM,) or cov.shape != (_NIQE_FEATURE_DIM, _NIQE_FEATURE_DIM):
            raise DimensionHeaderInvalid(
                f"model statistics must be {_NIQE_FEATURE_DIM}-dimensional"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def _default_niqe_config() -> dict:
    return {
        "patch_size": _NIQE_PATCH,
        "window": _NIQE_WINDOW,
        "window_sigma": _NIQE_WINDOW_SIGMA,
        "stabilizer": _NIQE_STABILIZER,
        "sharpness_frac": _NIQE_SHARPNESS_FRAC,
        "scales": 2,
    }


def niqe_fit(pristine) -> NiqeModel:
    """Fit the pristine feature Gaussian from a directory or list of images."""
    if isinstance(pristine, (str, Path)):
        from .augment import list_images

        images = [load_image(p) for p in list_images(pristine)]
    else:
        images = list(pristine)
    if len(images) < _NIQE_MIN_PRISTINE:
        raise TooFewPristine(
            f"need >= {_NIQE_MIN_PRISTINE} pristine images, got {len(images)}"
        )
    feats = np.concatenate([_image_features(img) for img in images], axis=0)
    mean = feats.mean(axis=0)
    cov = np.atleast_2d(np.cov(feats, rowvar=False, ddof=1))
    return NiqeModel(mean=mean, cov=cov, config=_default_niqe_config())


def niqe_score(img: Image, model: NiqeModel) -> float:
    """Mahalanobis-style distance between test and pristine feature fits."""
    feats = _image_features(img)
    nu = feats.mean(axis=0)
    if feats.shape[0] >= 2:
        cov = np.atleast_2d(np.cov(feats, rowvar=False, ddof=1))
    else:
        cov = np.zeros((_NIQE_FEATURE_DIM, _NIQE_FEATURE_DIM))
    diff = model.mean - nu
    pooled = 0.5 * (model.cov + cov)
    quad = float(diff @ np.linalg.pinv(pooled) @ diff)
    return float(np.sqrt(max(quad, 0.0)))


def save_niqe_model(model: NiqeModel, path) -> None:
    header = json.dumps(
        {"d": _NIQE_FEATURE_DIM, "config": model.config}, sort_keys=True
    ).encode("utf-8")
    blob = (
        _NIQE_MAGIC
        + struct.pack("<II", _NIQE_VERSION, len(header))
        + header
        + model.mean.astype("<f8").tobytes()
        + model.cov.astype("<f8").tobytes()
    )
    Path(path).write_bytes(blob)


def load_niqe_model(path) -> NiqeModel:
    blob = Path(path).read_bytes()
    if blob[: len(_NIQE_MAGIC)] != _NIQE_MAGIC:
        raise FormatMismatch("not a NIQE model file")
    version, header_len = struct.unpack_from("<II", blob, len(_NIQE_MAGIC))
    if version != _NIQE_VERSION:
        raise FormatMismatch(f"unsupported model version {version}")
    off = len(_NIQE_MAGIC) + 8
    header = json.loads(blob[off : off + header_len].decode("utf-8"))
    d = header["d"]
    off += header_len
    mean = np.frombuffer(blob, dtype="<f8", count=d, offset=off).copy()
    off += 8 * d
    cov = np.frombuffer(blob, dtype="<f8", count=d * d, offset=off).reshape(d, d).copy()
    return NiqeModel(mean=mean, cov=cov, config=header["config"])


def read_external_scores(path) -> tuple[dict[str, dict[str, float]], dict[str, str]]:
    """Parse (image_id, metric_name, value, orientation) CSV rows.

    Returns ({metric: {image_id: value}}, {metric: orientation}) so external
    indicators can join the comparison harness.
    """
    import csv as _csv

    scores: dict[str, dict[str, float]] = {}
    orientations: dict[str, str] = {}
    with open(path, newline="") as fh:
        reader = _csv.DictReader(fh)
        required = {"image_id", "metric_name", "value", "orientation"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ParseError(f"external scores CSV must have columns {sorted(required)}")
        for row in reader:
            metric = row["metric_name"].strip()
            orient = row["orientation"].strip()
            if orient not in ("lower_better", "higher_better"):
                raise ParseError(f"bad orientation {orient!r} for metric {metric!r}")
            prev = orientations.setdefault(metric, orient)
            if prev != orient:
                raise ParseError(f"conflicting orientations for metric {metric!r}")
            try:
                value = float(row["value"])
            except ValueError as exc:
                raise ParseError(f"bad value {row['value']!r}") from exc
            per_image = scores.setdefault(metric, {})
            image_id = row["image_id"].strip()
            if image_id in per_image:
                raise ParseError(f"duplicate row for ({image_id}, {metric})")
            per_image[image_id] = value
    return scores, orientations
