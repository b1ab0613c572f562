"""RGB to HSV conversion with 1/4 box downsampling of each plane."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DOWNSAMPLE = 4


@dataclass
class HsvPlanes:
    hue: np.ndarray         # angle / 360, in [0, 1)
    saturation: np.ndarray  # [0, 1]
    value: np.ndarray       # [0, 1]

    def stack(self) -> np.ndarray:
        return np.stack([self.hue, self.saturation, self.value])


def validate_rgb(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (h, w, 3) RGB image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"empty image of shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 255:
        raise ValueError("RGB values must be finite and within [0, 255]")
    return img


def hexcone(rgb: np.ndarray) -> np.ndarray:
    """Per-pixel hexcone HSV of channel-last RGB in [0, 255]; same shape, H as angle/360.

    Achromatic pixels get hue 0.
    """
    rgb = np.asarray(rgb, dtype=np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx, mn = rgb.max(axis=-1), rgb.min(axis=-1)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    h = np.where(mx == r, np.mod((g - b) / safe, 6.0),
                 np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0))
    h = np.where(delta > 0, h / 6.0, 0.0)
    h = np.where(h >= 1.0, h - 1.0, h)
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], axis=-1)


def box_downsample(plane: np.ndarray, factor: int = DOWNSAMPLE, axes=(-2, -1)) -> np.ndarray:
    """Average non-overlapping factor x factor blocks; edge blocks average the pixels they have."""
    out = np.asarray(plane, dtype=np.float64)
    for ax in axes:
        n = out.shape[ax]
        starts = np.arange(0, n, factor)
        counts = np.minimum(starts + factor, n) - starts
        shape = [1] * out.ndim
        shape[ax] = len(starts)
        out = np.add.reduceat(out, starts, axis=ax) / counts.reshape(shape)
    return out


def rgb_to_hsv(img, factor: int = DOWNSAMPLE) -> HsvPlanes:
    img = validate_rgb(img)
    hsv = box_downsample(hexcone(img), factor, axes=(0, 1))
    return HsvPlanes(hsv[..., 0], hsv[..., 1], hsv[..., 2])


def hsv_batch(rgb_nchw: np.ndarray, factor: int = DOWNSAMPLE) -> np.ndarray:
    """(n, 3, h, w) RGB in [0, 255] -> (n, 3, ceil(h/f), ceil(w/f)) HSV planes."""
    hsv = hexcone(np.moveaxis(rgb_nchw, 1, -1))
    return np.ascontiguousarray(np.moveaxis(box_downsample(hsv, factor, axes=(1, 2)), -1, 1))
