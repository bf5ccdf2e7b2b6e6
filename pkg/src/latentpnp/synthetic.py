"""Deterministic synthetic test images in [0, 1]."""

import numpy as np

from .errors import ConfigError
from .rng import RngStream

KINDS = ("piecewise-constant", "gaussian-field", "checkerboard")


def _dims(dims):
    dims = tuple(int(v) for v in np.atleast_1d(dims))
    if len(dims) == 1:
        dims = (1, dims[0], dims[0])
    elif len(dims) == 2:
        dims = (1,) + dims
    if len(dims) != 3 or min(dims[1:]) < 16 or dims[0] < 1:
        raise ConfigError(f"synthetic images need (C, H, W) with H, W >= 16, got {dims}")
    return dims


def generate_test_image(kind, dims, seed, field_std=0.15):
    """Synthetic stand-in image.

    ``piecewise-constant`` overlays random axis-aligned rectangles on a flat
    background; ``gaussian-field`` is smoothed white noise with mean 0.5 and
    standard deviation ``field_std`` (clipped to [0, 1]); ``checkerboard`` has
    eight squares per side at levels 0.2 and 0.8.
    """
    c, h, w = _dims(dims)
    rng = RngStream(seed)
    if kind == "checkerboard":
        bh, bw = max(1, h // 8), max(1, w // 8)
        ii = (np.arange(h) // bh)[:, None]
        jj = (np.arange(w) // bw)[None, :]
        board = np.where((ii + jj) % 2 == 0, 0.2, 0.8)
        return np.repeat(board[None], c, axis=0)
    if kind == "piecewise-constant":
        img = np.full((c, h, w), 0.1 + 0.8 * rng.uniform((c, 1, 1)))
        for _ in range(6):
            r0, c0 = rng.integers(h - 4), rng.integers(w - 4)
            rh = 4 + rng.integers(max(1, h // 2))
            rw = 4 + rng.integers(max(1, w // 2))
            level = 0.1 + 0.8 * rng.uniform((c, 1, 1))
            img[:, r0 : r0 + rh, c0 : c0 + rw] = level
        return img
    if kind == "gaussian-field":
        noise = rng.normal((c, h, w))
        bw = max(1.0, min(h, w) / 16.0)
        fy = np.fft.fftfreq(h)[:, None]
        fx = np.fft.rfftfreq(w)[None, :]
        filt = np.exp(-2.0 * (np.pi * bw) ** 2 * (fy**2 + fx**2))
        smooth = np.fft.irfft2(np.fft.rfft2(noise) * filt, s=(h, w))
        smooth -= smooth.mean(axis=(-2, -1), keepdims=True)
        smooth /= smooth.std(axis=(-2, -1), keepdims=True)
        return np.clip(0.5 + field_std * smooth, 0.0, 1.0)
    raise ConfigError(f"unknown synthetic image kind {kind!r}; choose from {KINDS}")
