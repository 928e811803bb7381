"""Image container and elementary raster operations.

Images are immutable unit-interval float rasters, converted once from 8-bit
at load time. Supported containers: 8-bit PNG (grayscale/RGB) and binary
PPM/PGM. Everything downstream (augmentation, encoder, metrics) consumes
this representation.
"""
from __future__ import annotations

import io
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PilImage
from PIL import UnidentifiedImageError

from .errors import CorruptData, UnsupportedFormat, ZeroDimension

# BT.601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True)
class Image:
    """A (height, width, channels) raster of floats in [0, 1], channels 1 or 3."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected (h, w, 1|3) array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ZeroDimension("image dimensions must be >= 1")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image samples must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image samples must lie in [0, 1]")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def to_bytes_u8(self) -> np.ndarray:
        """Quantize back to 8-bit samples (round half away handled by np.round)."""
        return np.round(self.data * 255.0).astype(np.uint8)


def _from_u8(arr: np.ndarray) -> Image:
    return Image(arr.astype(np.float64) / 255.0)


def load_image(path) -> Image:
    """Decode a PNG or binary PPM/PGM file into a unit-interval Image.

    The container is detected from magic bytes, not the extension. 16-bit
    inputs are rejected.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw.startswith(_PNG_MAGIC):
        return _decode_png(raw)
    if raw[:2] in (b"P5", b"P6"):
        return _decode_pnm(raw)
    raise UnsupportedFormat(f"{path}: not a PNG or binary PPM/PGM file")


def _decode_png(raw: bytes) -> Image:
    try:
        with PilImage.open(io.BytesIO(raw)) as pil:
            mode = pil.mode
            if mode not in ("L", "RGB"):
                raise UnsupportedFormat(
                    f"PNG mode {mode!r} unsupported (8-bit L or RGB only)"
                )
            arr = np.asarray(pil)
    except UnidentifiedImageError as exc:
        raise CorruptData(f"undecodable PNG stream: {exc}") from exc
    except (OSError, SyntaxError, ValueError) as exc:
        raise CorruptData(f"corrupt PNG stream: {exc}") from exc
    return _from_u8(arr)


def _decode_pnm(raw: bytes) -> Image:
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # '#' comments allowed; a single whitespace byte separates header and data
    tokens = []
    pos = 2
    while len(tokens) < 3:
        match = re.match(rb"(\s*(?:#[^\n]*\n)?)*\s*(\S+)", raw[pos:])
        if match is None:
            raise CorruptData("truncated PNM header")
        tokens.append(match.group(2))
        pos += match.end()
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise CorruptData(f"bad PNM header: {exc}") from exc
    if maxval > 255:
        raise UnsupportedFormat("16-bit PNM rejected (8-bit only)")
    if maxval < 1 or width < 1 or height < 1:
        raise CorruptData("bad PNM header values")
    channels = 1 if raw[:2] == b"P5" else 3
    data = raw[pos + 1 : pos + 1 + width * height * channels]
    if len(data) < width * height * channels:
        raise CorruptData("truncated PNM pixel data")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width, channels)
    return Image(arr.astype(np.float64) / maxval)


def save_image(img: Image, path) -> None:
    """Write an Image as PNG, PPM, or PGM picked by extension."""
    path = Path(path)
    suffix = path.suffix.lower()
    u8 = img.to_bytes_u8()
    if suffix == ".png":
        arr = u8[:, :, 0] if img.channels == 1 else u8
        PilImage.fromarray(arr).save(path, format="PNG")
    elif suffix == ".pgm":
        if img.channels != 1:
            raise UnsupportedFormat("PGM holds single-channel images only")
        _write_pnm(path, b"P5", u8)
    elif suffix == ".ppm":
        if img.channels != 3:
            raise UnsupportedFormat("PPM holds 3-channel images only")
        _write_pnm(path, b"P6", u8)
    else:
        raise UnsupportedFormat(f"unknown output extension {suffix!r}")


def _write_pnm(path: Path, magic: bytes, u8: np.ndarray) -> None:
    header = magic + f"\n{u8.shape[1]} {u8.shape[0]}\n255\n".encode()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(u8.tobytes())


def to_grayscale(img: Image) -> Image:
    """BT.601 luma conversion; single-channel input is returned unchanged."""
    if img.channels == 1:
        return img
    luma = img.data @ LUMA_WEIGHTS
    return Image(np.clip(luma, 0.0, 1.0)[:, :, np.newaxis])


def replicate_channels(img: Image) -> Image:
    """Expand a single-channel image to 3 identical channels."""
    if img.channels == 3:
        return img
    return Image(np.repeat(img.data, 3, axis=2))


def resize_bilinear(img: Image, out_h: int, out_w: int) -> Image:
    """Bilinear resize with half-pixel-center sampling, clamped to [0, 1]."""
    if out_h < 1 or out_w < 1:
        raise ZeroDimension(f"output dimensions must be >= 1, got {out_h}x{out_w}")
    h, w = img.height, img.width
    if (out_h, out_w) == (h, w):
        return img
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    d = img.data
    top = d[y0][:, x0] * (1 - wx) + d[y0][:, x1] * wx
    bot = d[y1][:, x0] * (1 - wx) + d[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return Image(np.clip(out, 0.0, 1.0))
