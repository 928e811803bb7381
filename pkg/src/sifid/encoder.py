"""Trainable convolutional feature extractor with exact analytic gradients.

A stack of 3x3 stride-2 conv blocks with leaky-rectifier activations, global
average pooling, and an affine head producing a d-dimensional embedding.
Forward/backward are plain numpy; gradients are exact, which lets tests pin
them against finite differences. Feature matrices and parameter checkpoints
round-trip through small versioned binary formats.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionHeaderInvalid,
    EmptyBatch,
    FormatMismatch,
    InvalidConfig,
    ShapeMismatch,
    StaleCache,
)
from .imagecore import Image, replicate_channels, resize_bilinear

_FEAT_MAGIC = b"FEATSET\x00"
_FEAT_VERSION = 1
_CKPT_MAGIC = b"ENCCKPT\x00"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    input_side: int = 64
    conv_channels: tuple[int, ...] = (8, 16, 32)
    leak: float = 0.01
    feature_dim: int = 64
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        if self.feature_dim < 2:
            raise InvalidConfig("feature_dim must be >= 2 for covariance fitting")
        blocks = len(self.conv_channels)
        if blocks < 1 or any(c < 1 for c in self.conv_channels):
            raise InvalidConfig("conv_channels must be a nonempty tuple of positive widths")
        if self.input_side % (1 << blocks) != 0 or self.input_side < (1 << blocks):
            raise InvalidConfig(
                f"input_side {self.input_side} must be divisible by 2^{blocks}"
            )

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        shapes = []
        cin = 3
        for i, cout in enumerate(self.conv_channels):
            shapes.append((f"conv{i}_w", (cout, cin, 3, 3)))
            shapes.append((f"conv{i}_b", (cout,)))
            cin = cout
        shapes.append(("head_w", (self.feature_dim, cin)))
        shapes.append(("head_b", (self.feature_dim,)))
        return shapes

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.layer_shapes())

    def to_dict(self) -> dict:
        return {
            "input_side": self.input_side,
            "conv_channels": list(self.conv_channels),
            "leak": self.leak,
            "feature_dim": self.feature_dim,
            "init_seed": self.init_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(
            input_side=int(d["input_side"]),
            conv_channels=tuple(d["conv_channels"]),
            leak=float(d["leak"]),
            feature_dim=int(d["feature_dim"]),
            init_seed=int(d["init_seed"]),
        )


class Encoder:
    """Parameter vector plus config; parameters mutate only via update_params."""

    def __init__(self, config: EncoderConfig, params: np.ndarray):
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (config.param_count(),):
            raise InvalidConfig(
                f"parameter vector length {params.shape} does not match "
                f"config count {config.param_count()}"
            )
        if not np.all(np.isfinite(params)):
            raise InvalidConfig("parameters must be finite")
        self.config = config
        self.params = params
        self._version = 0

    def update_params(self, new_params: np.ndarray) -> None:
        new_params = np.asarray(new_params, dtype=np.float64)
        if new_params.shape != self.params.shape:
            raise ShapeMismatch("parameter vector length changed")
        self.params = new_params
        self._version += 1

    def param_views(self) -> dict[str, np.ndarray]:
        views = {}
        offset = 0
        for name, shape in self.config.layer_shapes():
            size = int(np.prod(shape))
            views[name] = self.params[offset : offset + size].reshape(shape)
            offset += size
        return views


def init_encoder(config: EncoderConfig) -> Encoder:
    """Uniform(-s, s) weights with s = sqrt(6 / (fan_in + fan_out)); zero biases."""
    gen = np.random.default_rng(np.random.SeedSequence([config.init_seed & (2**64 - 1)]))
    chunks = []
    for name, shape in config.layer_shapes():
        if name.endswith("_b"):
            chunks.append(np.zeros(int(np.prod(shape))))
            continue
        if len(shape) == 4:
            fan_in = shape[1] * shape[2] * shape[3]
            fan_out = shape[0] * shape[2] * shape[3]
        else:
            fan_in, fan_out = shape[1], shape[0]
        scale = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(gen.uniform(-scale, scale, size=int(np.prod(shape))))
    return Encoder(config, np.concatenate(chunks))


def preprocess(img: Image, input_side: int) -> Image:
    """Resize to the encoder input square and replicate grayscale to 3 channels."""
    return replicate_channels(resize_bilinear(img, input_side, input_side))


def _check_input(config: EncoderConfig, img: Image) -> np.ndarray:
    if img.height != config.input_side or img.width != config.input_side:
        raise ShapeMismatch(
            f"expected {config.input_side}x{config.input_side} input, "
            f"got {img.height}x{img.width}"
        )
    if img.channels == 1:
        return np.repeat(img.data, 3, axis=2)
    return img.data


def _conv_indices(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    # patch index grids in padded coordinates (pad 1, stride 2, 3x3 kernel)
    rows = np.arange(h // 2)[:, None] * 2 + np.arange(3)[None, :]
    cols = np.arange(w // 2)[:, None] * 2 + np.arange(3)[None, :]
    return rows, cols


def _im2col(x: np.ndarray) -> np.ndarray:
    h, w, c = x.shape
    rows, cols = _conv_indices(h, w)
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    patches = padded[rows[:, None, :, None], cols[None, :, None, :], :]
    # (h/2, w/2, 3, 3, c) -> (h/2 * w/2, c * 9)
    return patches.transpose(0, 1, 4, 2, 3).reshape((h // 2) * (w // 2), c * 9)


@dataclass
class _BranchCache:
    layers: list  # per conv block: (in_shape, patches, preact)
    pooled: np.ndarray
    feature: np.ndarray


@dataclass
class PairCache:
    version: int
    a: _BranchCache
    b: _BranchCache

    @property
    def features(self) -> tuple[np.ndarray, np.ndarray]:
        return self.a.feature, self.b.feature


def _forward_branch(enc: Encoder, x: np.ndarray, keep: bool) -> _BranchCache | np.ndarray:
    views = enc.param_views()
    cfg = enc.config
    layers = []
    for i, cout in enumerate(cfg.conv_channels):
        h, w, _ = x.shape
        patches = _im2col(x)
        w_flat = views[f"conv{i}_w"].reshape(cout, -1)
        preact = patches @ w_flat.T + views[f"conv{i}_b"]
        act = np.where(preact > 0.0, preact, cfg.leak * preact)
        if keep:
            layers.append(((h, w, x.shape[2]), patches, preact))
        x = act.reshape(h // 2, w // 2, cout)
    pooled = x.mean(axis=(0, 1))
    feature = views["head_w"] @ pooled + views["head_b"]
    if not keep:
        return feature
    return _BranchCache(layers=layers, pooled=pooled, feature=feature)


def forward(enc: Encoder, img: Image) -> np.ndarray:
    """Embed one preprocessed image; deterministic, no normalization."""
    x = _check_input(enc.config, img)
    return _forward_branch(enc, x, keep=False)


def forward_batch(enc: Encoder, imgs) -> np.ndarray:
    if len(imgs) == 0:
        raise EmptyBatch("forward_batch requires at least one image")
    return np.stack([forward(enc, img) for img in imgs])


def forward_pair(enc: Encoder, img_a: Image, img_b: Image) -> PairCache:
    """Run both siamese branches, keeping activations for backward()."""
    xa = _check_input(enc.config, img_a)
    xb = _check_input(enc.config, img_b)
    return PairCache(
        version=enc._version,
        a=_forward_branch(enc, xa, keep=True),
        b=_forward_branch(enc, xb, keep=True),
    )


def _backward_branch(enc: Encoder, cache: _BranchCache, grad_feature: np.ndarray) -> np.ndarray:
    views = enc.param_views()
    cfg = enc.config
    grads = {name: np.zeros(shape) for name, shape in cfg.layer_shapes()}

    grads["head_w"] += np.outer(grad_feature, cache.pooled)
    grads["head_b"] += grad_feature
    d_pooled = views["head_w"].T @ grad_feature

    last = len(cfg.conv_channels) - 1
    h_out = cache.layers[last][0][0] // 2
    w_out = cache.layers[last][0][1] // 2
    d_act = np.broadcast_to(
        d_pooled / (h_out * w_out), (h_out, w_out, cfg.conv_channels[last])
    )

    for i in range(last, -1, -1):
        (h, w, cin), patches, preact = cache.layers[i]
        cout = cfg.conv_channels[i]
        d_pre = d_act.reshape(-1, cout) * np.where(preact > 0.0, 1.0, cfg.leak)
        grads[f"conv{i}_w"] += (d_pre.T @ patches).reshape(cout, cin, 3, 3)
        grads[f"conv{i}_b"] += d_pre.sum(axis=0)
        if i == 0:
            break
        w_flat = views[f"conv{i}_w"].reshape(cout, -1)
        d_patches = (d_pre @ w_flat).reshape(h // 2, w // 2, cin, 3, 3)
        d_padded = np.zeros((h + 2, w + 2, cin))
        rows, cols = _conv_indices(h, w)
        np.add.at(
            d_padded,
            (rows[:, None, :, None], cols[None, :, None, :]),
            d_patches.transpose(0, 1, 3, 4, 2),
        )
        d_act = d_padded[1:-1, 1:-1, :]

    return np.concatenate([grads[name].ravel() for name, _ in cfg.layer_shapes()])


def backward(enc: Encoder, cache: PairCache, grad_fa: np.ndarray, grad_fb: np.ndarray) -> np.ndarray:
    """Gradient of a pair loss w.r.t. the flat parameter vector.

    grad_fa / grad_fb are the loss gradients w.r.t. the two branch features.
    Shared weights mean the branch gradients sum. The cache must come from a
    forward_pair on the current parameters.
    """
    if not isinstance(cache, PairCache) or cache.version != enc._version:
        raise StaleCache("forward_pair cache does not match current parameters")
    grad_fa = np.asarray(grad_fa, dtype=np.float64)
    grad_fb = np.asarray(grad_fb, dtype=np.float64)
    if grad_fa.shape != (enc.config.feature_dim,) or grad_fb.shape != (enc.config.feature_dim,):
        raise ShapeMismatch("feature gradient length does not match feature_dim")
    return _backward_branch(enc, cache.a, grad_fa) + _backward_branch(enc, cache.b, grad_fb)


# --- feature set file format -------------------------------------------------


def save_feature_file(features: np.ndarray, path) -> None:
    """Write an (N, d) feature matrix as little-endian float32 with header."""
    features = np.asarray(features)
    if features.ndim != 2:
        raise FormatMismatch("feature set must be a 2-D matrix")
    n, d = features.shape
    if d < 1:
        raise DimensionHeaderInvalid("feature dimension must be >= 1")
    with open(path, "wb") as fh:
        fh.write(_FEAT_MAGIC)
        fh.write(struct.pack("<III", _FEAT_VERSION, d, n))
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def load_feature_file(path) -> np.ndarray:
    """Read a feature matrix written by save_feature_file; exact float32 values."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(_FEAT_MAGIC) + 12 or raw[: len(_FEAT_MAGIC)] != _FEAT_MAGIC:
        raise FormatMismatch("not a feature-set file")
    version, d, n = struct.unpack_from("<III", raw, len(_FEAT_MAGIC))
    if version != _FEAT_VERSION:
        raise FormatMismatch(f"unsupported feature-file version {version}")
    if d < 1:
        raise DimensionHeaderInvalid(f"header feature dimension {d} invalid")
    payload = raw[len(_FEAT_MAGIC) + 12 :]
    if len(payload) != 4 * d * n:
        raise FormatMismatch(
            f"payload holds {len(payload) // 4} floats, header promises {n}x{d}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float32)


# --- checkpoint file format --------------------------------------------------


def save_checkpoint(enc: Encoder, path, meta: dict | None = None) -> None:
    """Persist config + parameters + free-form training metadata."""
    header = json.dumps(
        {"config": enc.config.to_dict(), "meta": meta or {}}, sort_keys=True
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(enc.params, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[Encoder, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(_CKPT_MAGIC) + 8 or raw[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise FormatMismatch("not an encoder checkpoint file")
    version, header_len = struct.unpack_from("<II", raw, len(_CKPT_MAGIC))
    if version != _CKPT_VERSION:
        raise FormatMismatch(f"unsupported checkpoint version {version}")
    start = len(_CKPT_MAGIC) + 8
    try:
        header = json.loads(raw[start : start + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatMismatch(f"corrupt checkpoint header: {exc}") from exc
    config = EncoderConfig.from_dict(header["config"])
    params = np.frombuffer(raw[start + header_len :], dtype="<f8").astype(np.float64)
    if params.shape != (config.param_count(),):
        raise FormatMismatch("checkpoint parameter payload length mismatch")
    return Encoder(config, params), header.get("meta", {})
