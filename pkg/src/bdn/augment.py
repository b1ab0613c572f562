"""The seven candidate label-preserving transformations and the augmentation pipeline.

Images are (h, w, 3) float arrays with values in [0, 255]. Every transform
returns a new array and clamps to the valid range.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .color import validate_rgb

SCALE_RANGE = (0.9, 1.1)
SQUEEZE_RANGE = (0.8, 1.2)
ROTATION_RANGE = (-30.0, 30.0)  # degrees
SMALL_NOISE = 5.0
LARGE_NOISE = 30.0
ALTER_RGB_MAGNITUDE = 25.0


def _clamp(img):
    return np.clip(img, 0.0, 255.0)


def scaled_size(n: int, s: float) -> int:
    """Half-up rounding of ``s * n``, never below one pixel."""
    return max(1, int(np.floor(s * n + 0.5)))


def _interp_axis(img, new_len, axis):
    n = img.shape[axis]
    if new_len == n:
        return img
    src = (np.arange(new_len) + 0.5) * (n / new_len) - 0.5
    src = np.clip(src, 0.0, n - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    frac = src - lo
    shape = [1] * img.ndim
    shape[axis] = new_len
    frac = frac.reshape(shape)
    return np.take(img, lo, axis=axis) * (1 - frac) + np.take(img, hi, axis=axis) * frac


def resize_bilinear(img, new_h: int, new_w: int) -> np.ndarray:
    """Separable bilinear resize with half-pixel centers; exact identity at equal size."""
    img = np.asarray(img, dtype=np.float64)
    return _interp_axis(_interp_axis(img, new_h, 0), new_w, 1)


def reflect(img) -> np.ndarray:
    return validate_rgb(img)[:, ::-1].copy()


def random_scale(img, s=None, seed=None) -> np.ndarray:
    img = validate_rgb(img)
    if s is None:
        s = np.random.default_rng(seed).uniform(*SCALE_RANGE)
    h, w = img.shape[:2]
    return _clamp(resize_bilinear(img, scaled_size(h, s), scaled_size(w, s)))


def add_noise(img, sigma=SMALL_NOISE, seed=None) -> np.ndarray:
    img = validate_rgb(img)
    if sigma == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    return _clamp(img + rng.normal(0.0, sigma, img.shape))


def rgb_offsets(magnitude, rng) -> np.ndarray:
    return rng.normal(0.0, magnitude, 3)


def alter_rgb(img, magnitude=ALTER_RGB_MAGNITUDE, seed=None) -> np.ndarray:
    """Add one Gaussian offset per channel, constant over the image."""
    img = validate_rgb(img)
    if magnitude == 0:
        return img.copy()
    return _clamp(img + rgb_offsets(magnitude, np.random.default_rng(seed)))


def rotate(img, angle_deg: float) -> np.ndarray:
    """Bilinear rotation about the image center with black border fill."""
    img = validate_rgb(img)
    if angle_deg == 0:
        return img.copy()
    t = np.deg2rad(angle_deg)
    # rounding keeps exact quarter turns from sampling just outside the border
    rot = np.round(np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]]), 12)
    center = (np.array(img.shape[:2]) - 1) / 2.0
    offset = center - rot @ center
    out = np.empty_like(img)
    for c in range(3):
        out[..., c] = ndimage.affine_transform(img[..., c], rot, offset=offset, order=1,
                                               mode="constant", cval=0.0)
    return _clamp(out)


def rotate_affine(img, seed=None, angle=None) -> np.ndarray:
    if angle is None:
        angle = np.random.default_rng(seed).uniform(*ROTATION_RANGE)
    return rotate(img, angle)


def squeeze(img, s=None, seed=None) -> np.ndarray:
    """Rescale the width by ``s``; the height is unchanged."""
    img = validate_rgb(img)
    if s is None:
        s = np.random.default_rng(seed).uniform(*SQUEEZE_RANGE)
    h, w = img.shape[:2]
    return _clamp(resize_bilinear(img, h, scaled_size(w, s)))


class OpKind(str, enum.Enum):
    REFLECTION = "reflection"
    RANDOM_SCALING = "random_scaling"
    SMALL_NOISE = "small_noise"
    LARGE_NOISE = "large_noise"
    ALTER_RGB = "alter_rgb"
    ROTATION = "rotation"
    SQUEEZING = "squeezing"


GEOMETRIC = {OpKind.RANDOM_SCALING, OpKind.ROTATION, OpKind.SQUEEZING}


@dataclass(frozen=True)
class AugmentOp:
    kind: OpKind
    prob: float = 1.0
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", OpKind(self.kind))
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError(f"probability must be in [0, 1], got {self.prob}")

    def draw(self, rng) -> dict:
        """Sample this op's random parameters (fixed values in ``params`` win)."""
        k = self.kind
        if k is OpKind.RANDOM_SCALING:
            p = {"s": rng.uniform(*SCALE_RANGE)}
        elif k is OpKind.SQUEEZING:
            p = {"s": rng.uniform(*SQUEEZE_RANGE)}
        elif k is OpKind.ROTATION:
            p = {"angle": rng.uniform(*ROTATION_RANGE)}
        elif k is OpKind.SMALL_NOISE:
            p = {"sigma": SMALL_NOISE}
        elif k is OpKind.LARGE_NOISE:
            p = {"sigma": LARGE_NOISE}
        elif k is OpKind.ALTER_RGB:
            p = {"magnitude": ALTER_RGB_MAGNITUDE}
        else:
            p = {}
        p.update(self.params)
        return p

    def apply(self, img, params: dict, seed=None) -> np.ndarray:
        k = self.kind
        if k is OpKind.REFLECTION:
            return reflect(img)
        if k is OpKind.RANDOM_SCALING:
            return random_scale(img, params["s"])
        if k is OpKind.SQUEEZING:
            return squeeze(img, params["s"])
        if k is OpKind.ROTATION:
            return rotate(img, params["angle"])
        if k is OpKind.ALTER_RGB:
            return alter_rgb(img, params["magnitude"], seed)
        return add_noise(img, params["sigma"], seed)


DEFAULT_PIPELINE = (
    AugmentOp(OpKind.REFLECTION, prob=0.5),
    AugmentOp(OpKind.RANDOM_SCALING),
    AugmentOp(OpKind.SMALL_NOISE),
)


def augment_pipeline(img, ops=DEFAULT_PIPELINE, seed=None) -> np.ndarray:
    """Apply ``ops`` in order; each op fires with its probability."""
    img = validate_rgb(img)
    rng = np.random.default_rng(seed)
    out = img.copy()
    for op in ops:
        fire = rng.random() < op.prob
        params = op.draw(rng)
        op_seed = int(rng.integers(2**63))
        if fire:
            out = op.apply(out, params, op_seed)
    return out


def augment_batch(images, ops=DEFAULT_PIPELINE, seed=None) -> list[np.ndarray]:
    """Augment a batch so that it stays rectangular.

    Geometric ops draw their parameters (and firing decision) once per batch;
    reflection and noise are drawn per image.
    """
    rng = np.random.default_rng(seed)
    shared = {}
    for i, op in enumerate(ops):
        if op.kind in GEOMETRIC:
            shared[i] = (rng.random() < op.prob, op.draw(rng))
    out = []
    for img in images:
        img = validate_rgb(img).copy()
        for i, op in enumerate(ops):
            if i in shared:
                fire, params = shared[i]
            else:
                fire, params = rng.random() < op.prob, op.draw(rng)
            op_seed = int(rng.integers(2**63))
            if fire:
                img = op.apply(img, params, op_seed)
        out.append(img)
    return out


PIPELINES = {
    "default": DEFAULT_PIPELINE,
    "none": (),
}


def parse_pipeline(name: str) -> tuple[AugmentOp, ...]:
    """A named pipeline, or a comma-separated list of op kinds (``kind`` or ``kind:prob``)."""
    if name in PIPELINES:
        return PIPELINES[name]
    ops = []
    for part in name.split(","):
        part = part.strip()
        if not part:
            continue
        kind, _, prob = part.partition(":")
        try:
            ops.append(AugmentOp(OpKind(kind), float(prob) if prob else 1.0))
        except ValueError:
            raise ValueError(f"unknown augmentation {part!r}; choose from "
                             f"{sorted(PIPELINES) + [k.value for k in OpKind]}") from None
    return tuple(ops)
