"""Shared fixtures: deterministic textured test images.

The generator mixes band-limited sinusoids, smoothed noise, a random linear
gradient, and a random per-channel cast, so two seeds give genuinely
different pictures (different dominant hue, frequency content, and layout).
That diversity matters: feature-space tests degenerate when every fixture
image has identical statistics.
"""
import numpy as np
import pytest

from sifid.imagecore import Image


def make_texture(h: int, w: int, seed: int, channels: int = 3) -> Image:
    g = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w, 3))
    for c in range(3):
        acc = np.zeros((h, w))
        for _ in range(3):
            fx, fy = g.uniform(0.5, 6.0, 2)
            phase = g.uniform(0.0, 2.0 * np.pi)
            acc += g.uniform(0.3, 1.0) * np.sin(2.0 * np.pi * (fx * xx / w + fy * yy / h) + phase)
        img[:, :, c] = acc
    noise = g.uniform(-1.0, 1.0, (h, w, 1))
    for _ in range(2):
        noise = 0.25 * (
            np.roll(noise, 1, 0) + np.roll(noise, -1, 0) + np.roll(noise, 1, 1) + np.roll(noise, -1, 1)
        )
    img += noise * g.uniform(0.2, 0.8)
    gx, gy = g.uniform(-1.0, 1.0, 2)
    img += (gx * xx / w + gy * yy / h)[:, :, None] * g.uniform(0.2, 1.0)
    img *= g.uniform(0.4, 1.2, 3)[None, None, :]
    img += g.uniform(0.0, 0.4, 3)[None, None, :]
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo + 1e-9)
    img = 0.02 + 0.96 * img
    if channels == 1:
        img = img.mean(axis=2, keepdims=True)
    return Image(img)


@pytest.fixture
def texture():
    return make_texture
