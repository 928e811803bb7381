"""Parameterized distortion transforms and distorted-corpus generation.

Fourteen catalog entries across five transform families (gaussian blur,
horizontal flip, grayscale, color jitter, random resized crop) distort
training images; each (image, transform) pair owns an independent RNG
substream so corpus generation is reproducible and order-independent.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (
    EmptyInputDir,
    EvenKernel,
    HueOutOfRange,
    KernelLargerThanImage,
    PipelineError,
    WriteFailure,
    ZeroDimension,
)
from .imagecore import LUMA_WEIGHTS, Image, load_image, save_image

_MASK64 = 0xFFFFFFFFFFFFFFFF

# substream namespace tags
NS_DISTORT = 0


class Rng:
    """Seeded RNG; equal seeds give equal draw streams.

    substream() derives an independent child stream from an integer key, so
    per-image / per-transform draws do not depend on processing order.
    """

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        self.seed = int(seed) & _MASK64
        self._key = _key
        self.gen = np.random.default_rng(np.random.SeedSequence([self.seed, *_key]))

    def substream(self, *key: int) -> "Rng":
        return Rng(self.seed, self._key + tuple(int(k) & _MASK64 for k in key))

    @property
    def key(self) -> tuple[int, ...]:
        return (self.seed, *self._key)


@dataclass(frozen=True)
class NoiseSpec:
    """One distortion transform with fixed parameters."""

    kind: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "params", dict(self.params))

    @property
    def tag(self) -> str:
        p = self.params
        if self.kind == "gaussian_blur":
            return f"gaussianblur_k{int(p['kernel'])}"
        if self.kind == "horizontal_flip":
            return f"hflip_p{p['p']:g}"
        if self.kind == "random_grayscale":
            return f"grayscale_p{p['p']:g}"
        if self.kind == "color_jitter":
            return f"colorjitter_b{p['brightness']:g}_h{p['hue']:g}"
        if self.kind == "random_resized_crop":
            return f"rrc_{int(p['out_side'])}"
        raise ValueError(f"unknown noise kind {self.kind!r}")

    @property
    def canonical(self) -> bool:
        return any(self == entry for entry in CATALOG)


def blur_spec(kernel: int) -> NoiseSpec:
    if kernel < 1 or kernel % 2 == 0:
        raise EvenKernel(f"blur kernel must be odd and >= 1, got {kernel}")
    return NoiseSpec("gaussian_blur", {"kernel": int(kernel)})


def flip_spec(p: float) -> NoiseSpec:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"flip probability must be in [0, 1], got {p}")
    return NoiseSpec("horizontal_flip", {"p": float(p)})


def grayscale_spec(p: float) -> NoiseSpec:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"grayscale probability must be in [0, 1], got {p}")
    return NoiseSpec("random_grayscale", {"p": float(p)})


def jitter_spec(brightness: float, hue: float) -> NoiseSpec:
    if brightness < 0.0:
        raise ValueError(f"brightness amplitude must be >= 0, got {brightness}")
    if not 0.0 <= hue <= 0.5:
        raise HueOutOfRange(f"hue amplitude must be in [0, 0.5], got {hue}")
    return NoiseSpec("color_jitter", {"brightness": float(brightness), "hue": float(hue)})


def crop_spec(out_side: int) -> NoiseSpec:
    if out_side < 1:
        raise ZeroDimension(f"crop output side must be >= 1, got {out_side}")
    return NoiseSpec("random_resized_crop", {"out_side": int(out_side)})


# The fourteen catalog transforms: three blur kernels, two flip probabilities,
# one grayscale probability, two jitter settings, six crop sizes.
CATALOG: tuple[NoiseSpec, ...] = (
    blur_spec(3),
    blur_spec(13),
    blur_spec(39),
    flip_spec(0.5),
    flip_spec(0.8),
    grayscale_spec(0.8),
    jitter_spec(0.3, 0.1),
    jitter_spec(0.5, 0.3),
    crop_spec(39),
    crop_spec(50),
    crop_spec(100),
    crop_spec(120),
    crop_spec(150),
    crop_spec(190),
)


def catalog_by_tag(tag: str) -> NoiseSpec:
    for spec in CATALOG:
        if spec.tag == tag:
            return spec
    known = ", ".join(s.tag for s in CATALOG)
    raise KeyError(f"unknown catalog tag {tag!r}; known tags: {known}")


# --- individual transforms ---------------------------------------------------


def blur_sigma(kernel: int) -> float:
    """Kernel-size-to-sigma rule used when only the kernel size is given."""
    return 0.3 * ((kernel - 1) / 2 - 1) + 0.8


def gaussian_kernel_1d(kernel: int) -> np.ndarray:
    sigma = blur_sigma(kernel)
    radius = (kernel - 1) // 2
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return weights / weights.sum()


def _correlate_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2
    if radius == 0:
        return arr.copy()
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(arr, pad, mode="reflect")
    out = np.zeros_like(arr)
    for tap, weight in enumerate(kernel):
        sl = [slice(None)] * arr.ndim
        sl[axis] = slice(tap, tap + arr.shape[axis])
        out += weight * padded[tuple(sl)]
    return out


def gaussian_blur(img: Image, kernel: int) -> Image:
    """Separable Gaussian blur; edges handled by reflection (101 convention)."""
    if kernel < 1 or kernel % 2 == 0:
        raise EvenKernel(f"kernel must be odd and >= 1, got {kernel}")
    if kernel > min(img.height, img.width):
        raise KernelLargerThanImage(
            f"kernel {kernel} exceeds min image dimension "
            f"{min(img.height, img.width)}"
        )
    k1d = gaussian_kernel_1d(kernel)
    out = _correlate_axis(img.data, k1d, axis=0)
    out = _correlate_axis(out, k1d, axis=1)
    return Image(np.clip(out, 0.0, 1.0))


def horizontal_flip(img: Image, p: float, rng: Rng) -> Image:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must be in [0, 1], got {p}")
    if rng.gen.random() < p:
        return Image(img.data[:, ::-1])
    return img


def grayscale_with_prob(img: Image, p: float, rng: Rng) -> Image:
    """With probability p, replace channels by luma (channel count kept)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must be in [0, 1], got {p}")
    if rng.gen.random() >= p:
        return img
    if img.channels == 1:
        return img
    luma = img.data @ LUMA_WEIGHTS
    return Image(np.clip(np.repeat(luma[:, :, np.newaxis], 3, axis=2), 0.0, 1.0))


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorized RGB -> HSV on (..., 3) arrays, hue in fractional turns."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    delta = maxc - minc
    safe_delta = np.where(delta == 0.0, 1.0, delta)
    safe_max = np.where(maxc == 0.0, 1.0, maxc)
    s = np.where(maxc == 0.0, 0.0, delta / safe_max)
    rc = (maxc - r) / safe_delta
    gc = (maxc - g) / safe_delta
    bc = (maxc - b) / safe_delta
    h = np.select([r == maxc, g == maxc], [bc - gc, 2.0 + rc - bc], 4.0 + gc - rc)
    h = np.where(delta == 0.0, 0.0, (h / 6.0) % 1.0)
    return np.stack([h, s, maxc], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """Inverse of rgb_to_hsv on (..., 3) arrays."""
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    sector = np.floor(h * 6.0)
    f = h * 6.0 - sector
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    sector = sector.astype(np.intp) % 6
    r = np.choose(sector, [v, q, p, p, t, v])
    g = np.choose(sector, [t, v, v, q, p, p])
    b = np.choose(sector, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def rotate_hue(img: Image, turns: float) -> Image:
    """Shift the hue channel by a fraction of a full turn."""
    if img.channels == 1:
        return img
    hsv = rgb_to_hsv(img.data)
    hsv[..., 0] = (hsv[..., 0] + turns) % 1.0
    return Image(np.clip(hsv_to_rgb(hsv), 0.0, 1.0))


def color_jitter(img: Image, brightness: float, hue: float, rng: Rng) -> Image:
    """Random brightness factor then random hue rotation, in that order.

    The brightness factor is uniform on [max(0, 1-brightness), 1+brightness];
    the hue shift is uniform on [-hue, +hue] turns. Both draws are always
    consumed so the stream layout does not depend on the amplitudes.
    """
    if brightness < 0.0:
        raise ValueError(f"brightness amplitude must be >= 0, got {brightness}")
    if not 0.0 <= hue <= 0.5:
        raise HueOutOfRange(f"hue amplitude must be in [0, 0.5], got {hue}")
    factor = rng.gen.uniform(max(0.0, 1.0 - brightness), 1.0 + brightness)
    shift = rng.gen.uniform(-hue, hue)
    out = Image(np.clip(img.data * factor, 0.0, 1.0))
    if shift != 0.0:
        out = rotate_hue(out, shift)
    return out


def random_resized_crop(img: Image, out_side: int, rng: Rng) -> Image:
    """Crop a random area/aspect patch and resize it to out_side x out_side.

    Area fraction is uniform on [0.08, 1], aspect ratio log-uniform on
    [3/4, 4/3]; after 10 failed fits the center square is used.
    """
    if out_side < 1:
        raise ZeroDimension(f"out_side must be >= 1, got {out_side}")
    from .imagecore import resize_bilinear

    h, w = img.height, img.width
    area = h * w
    crop = None
    for _ in range(10):
        frac = rng.gen.uniform(0.08, 1.0)
        ratio = math.exp(rng.gen.uniform(math.log(3.0 / 4.0), math.log(4.0 / 3.0)))
        target = frac * area
        cw = int(round(math.sqrt(target * ratio)))
        ch = int(round(math.sqrt(target / ratio)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.gen.integers(0, h - ch + 1))
            left = int(rng.gen.integers(0, w - cw + 1))
            crop = img.data[top : top + ch, left : left + cw]
            break
    if crop is None:
        side = min(h, w)
        top = (h - side) // 2
        left = (w - side) // 2
        crop = img.data[top : top + side, left : left + side]
    return resize_bilinear(Image(crop), out_side, out_side)


def apply_noise(spec: NoiseSpec, img: Image, rng: Rng) -> Image:
    """Dispatch to the transform named by spec.kind."""
    p = spec.params
    if spec.kind == "gaussian_blur":
        return gaussian_blur(img, int(p["kernel"]))
    if spec.kind == "horizontal_flip":
        return horizontal_flip(img, p["p"], rng)
    if spec.kind == "random_grayscale":
        return grayscale_with_prob(img, p["p"], rng)
    if spec.kind == "color_jitter":
        return color_jitter(img, p["brightness"], p["hue"], rng)
    if spec.kind == "random_resized_crop":
        return random_resized_crop(img, int(p["out_side"]), rng)
    raise ValueError(f"unknown noise kind {spec.kind!r}")


# --- corpus generation -------------------------------------------------------

_IMAGE_SUFFIXES = (".png", ".ppm", ".pgm")


def list_images(input_dir) -> list[Path]:
    input_dir = Path(input_dir)
    return sorted(p for p in input_dir.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)


def build_distorted_set(input_dir, catalog, seed: int, out_dir, jobs: int = 1) -> list[dict]:
    """Distort every input image with every catalog entry.

    Writes one PNG per (image, spec) pair plus manifest.json under out_dir and
    returns the manifest entries. Output count = inputs x len(catalog); a fixed
    seed makes the run byte-reproducible because each pair owns the substream
    (seed, image index, spec index) — also what makes jobs > 1 safe.
    """
    sources = list_images(input_dir)
    if not sources:
        raise EmptyInputDir(f"no decodable images under {input_dir}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = Rng(seed)

    def _one(task: tuple[int, Path]) -> list[dict]:
        i, src = task
        img = load_image(src)
        entries = []
        for j, spec in enumerate(catalog):
            rng = root.substream(NS_DISTORT, i, j)
            distorted = apply_noise(spec, img, rng)
            name = f"{i:04d}_{src.stem}__{spec.tag}.png"
            try:
                save_image(distorted, out_dir / name)
            except OSError as exc:
                raise WriteFailure(f"cannot write {out_dir / name}: {exc}") from exc
            entries.append(
                {
                    "output_path": name,
                    "source_path": str(src),
                    "spec": {"kind": spec.kind, "params": dict(spec.params)},
                    "substream_seed": [seed, i, j],
                    "canonical": spec.canonical,
                }
            )
        return entries

    tasks = list(enumerate(sources))
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_source = list(pool.map(_one, tasks))
    else:
        per_source = [_one(t) for t in tasks]
    manifest = [entry for entries in per_source for entry in entries]
    try:
        with open(out_dir / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise WriteFailure(f"cannot write manifest: {exc}") from exc
    return manifest
