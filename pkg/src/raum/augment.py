"""Weak and strong augmentation for the two-stream protocol.

Weak is flip + pad-and-crop only. Strong samples from a small RandAugment-style
pool suited to synthetic float images. Both are pure functions of
(image, rng state) and never change the image shape; outputs stay in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ConfigError


@dataclass
class AugmentSpec:
    crop_padding: int = 4
    strong_ops: int = 2
    strong_magnitude: float = 9.0

    def __post_init__(self):
        if not 0.0 <= self.strong_magnitude <= 10.0:
            raise ConfigError(f"strong_magnitude must be in [0, 10], got {self.strong_magnitude}")
        if self.strong_ops < 0 or self.crop_padding < 0:
            raise ConfigError("strong_ops and crop_padding must be >= 0")


def weak_augment(image: np.ndarray, rng: np.random.Generator,
                 crop_padding: int = 4) -> np.ndarray:
    """Horizontal flip with p=0.5, then reflect-pad and random crop back."""
    out = image
    if rng.random() < 0.5:
        out = out[:, ::-1, :]
    if crop_padding > 0:
        p = crop_padding
        padded = np.pad(out, ((p, p), (p, p), (0, 0)), mode="reflect")
        dy, dx = rng.integers(0, 2 * p + 1, size=2)
        out = padded[dy:dy + image.shape[0], dx:dx + image.shape[1], :]
    return np.ascontiguousarray(out, dtype=np.float64)


# --- strong op pool -------------------------------------------------------

def _brightness(img, m, rng):
    delta = (m / 10.0) * 0.4 * (1.0 if rng.random() < 0.5 else -1.0)
    return img + delta


def _contrast(img, m, rng):
    factor = 1.0 + (m / 10.0) * 0.8 * (1.0 if rng.random() < 0.5 else -1.0)
    mean = img.mean()
    return mean + factor * (img - mean)


def _cutout(img, m, rng):
    h, w = img.shape[:2]
    side = int(round((m / 10.0) * 0.45 * min(h, w)))
    if side == 0:
        return img
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    out = img.copy()
    out[top:top + side, left:left + side, :] = 0.5
    return out


def _translate(img, shift, axis):
    if shift == 0:
        return img
    out = np.full_like(img, 0.5)
    if axis == 0:
        if shift > 0:
            out[shift:, :, :] = img[:-shift, :, :]
        else:
            out[:shift, :, :] = img[-shift:, :, :]
    else:
        if shift > 0:
            out[:, shift:, :] = img[:, :-shift, :]
        else:
            out[:, :shift, :] = img[:, -shift:, :]
    return out


def _translate_x(img, m, rng):
    w = img.shape[1]
    shift = int(round((m / 10.0) * 0.3 * w)) * (1 if rng.random() < 0.5 else -1)
    return _translate(img, shift, axis=1)


def _translate_y(img, m, rng):
    h = img.shape[0]
    shift = int(round((m / 10.0) * 0.3 * h)) * (1 if rng.random() < 0.5 else -1)
    return _translate(img, shift, axis=0)


def _gaussian_noise(img, m, rng):
    std = (m / 10.0) * 0.08
    if std == 0.0:
        return img
    return img + rng.normal(0.0, std, size=img.shape)


def _posterize(img, m, rng):
    bits = 8 - int(round((m / 10.0) * 4))
    levels = float(2 ** bits)
    return np.floor(img * levels) / levels


STRONG_OP_POOL = (
    ("brightness", _brightness),
    ("contrast", _contrast),
    ("cutout", _cutout),
    ("translate_x", _translate_x),
    ("translate_y", _translate_y),
    ("gaussian_noise", _gaussian_noise),
    ("posterize", _posterize),
)


def strong_augment(image: np.ndarray, rng: np.random.Generator,
                   num_ops: int = 2, magnitude: float = 9.0) -> np.ndarray:
    """Apply num_ops ops sampled uniformly from the pool, clamped to [0, 1]."""
    out = np.asarray(image, dtype=np.float64)
    for _ in range(num_ops):
        _, op = STRONG_OP_POOL[int(rng.integers(0, len(STRONG_OP_POOL)))]
        out = np.clip(op(out, magnitude, rng), 0.0, 1.0)
    return np.ascontiguousarray(out)
