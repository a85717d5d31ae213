"""Paired image/mask augmentation.

Geometric transforms (flips, right-angle rotations, crop-and-resize) are
applied identically to image and mask; photometric jitter touches the image
only. Masks are resampled nearest-neighbour, so they stay binary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import FrozenSet, Tuple

import numpy as np

from .data import Sample, nearest_resize
from .functional import resize_bilinear_array

AUGMENTATIONS = ("hflip", "vflip", "rot90", "crop", "jitter")


@dataclass(frozen=True)
class AugmentConfig:
    enabled: FrozenSet[str] = frozenset(AUGMENTATIONS)
    p: float = 0.5
    crop_scale: Tuple[float, float] = (0.8, 1.0)
    jitter: float = 0.2

    def __post_init__(self):
        unknown = set(self.enabled) - set(AUGMENTATIONS)
        if unknown:
            raise ValueError(f"unknown augmentations {sorted(unknown)}; choose from {AUGMENTATIONS}")
        object.__setattr__(self, "enabled", frozenset(self.enabled))

    @classmethod
    def none(cls) -> "AugmentConfig":
        return cls(enabled=frozenset())

    @classmethod
    def parse(cls, text: str) -> "AugmentConfig":
        text = text.strip()
        if text in ("", "none", "off"):
            return cls.none()
        if text in ("all", "on"):
            return cls()
        return cls(enabled=frozenset(t.strip() for t in text.split(",") if t.strip()))


def hflip(s: Sample) -> Sample:
    return Sample(s.id, s.image[:, :, ::-1].copy(), s.mask[:, ::-1].copy(), s.center, s.split)


def vflip(s: Sample) -> Sample:
    return Sample(s.id, s.image[:, ::-1, :].copy(), s.mask[::-1, :].copy(), s.center, s.split)


def rot90(s: Sample, k: int) -> Sample:
    return Sample(s.id, np.rot90(s.image, k, axes=(1, 2)).copy(), np.rot90(s.mask, k).copy(), s.center, s.split)


def crop_resize(s: Sample, top: int, left: int, ch: int, cw: int) -> Sample:
    h, w = s.mask.shape
    img = s.image[:, top : top + ch, left : left + cw]
    msk = s.mask[top : top + ch, left : left + cw]
    if (ch, cw) != (h, w):
        img = np.clip(resize_bilinear_array(img, h, w), 0.0, 1.0).astype(np.float32)
        msk = nearest_resize(msk, h, w)
    return Sample(s.id, np.ascontiguousarray(img), np.ascontiguousarray(msk), s.center, s.split)


def jitter(s: Sample, brightness: float, contrast: float) -> Sample:
    mean = s.image.mean()
    img = (s.image - mean) * contrast + mean * brightness
    return Sample(s.id, np.clip(img, 0.0, 1.0).astype(np.float32), s.mask, s.center, s.split)


def augment(sample: Sample, rng: np.random.Generator, config: AugmentConfig = AugmentConfig()) -> Sample:
    """Randomly compose the enabled transforms, each firing with probability ``config.p``.

    Random draws happen in a fixed order regardless of outcome, so a given
    generator state always yields the same result.
    """
    s = sample
    if not config.enabled:
        return s
    h, w = s.mask.shape
    if "hflip" in config.enabled and rng.random() < config.p:
        s = hflip(s)
    if "vflip" in config.enabled and rng.random() < config.p:
        s = vflip(s)
    if "rot90" in config.enabled:
        fire = rng.random() < config.p
        k = int(rng.integers(1, 4))
        if fire:
            # 90/270 degree turns would change the shape of non-square samples
            s = rot90(s, k if h == w else 2)
    if "crop" in config.enabled:
        fire = rng.random() < config.p
        scale = rng.uniform(*config.crop_scale)
        ch, cw = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        if fire:
            s = crop_resize(s, top, left, ch, cw)
    if "jitter" in config.enabled:
        fire = rng.random() < config.p
        b = rng.uniform(1.0 - config.jitter, 1.0 + config.jitter)
        c = rng.uniform(1.0 - config.jitter, 1.0 + config.jitter)
        if fire:
            s = jitter(s, b, c)
    return s
