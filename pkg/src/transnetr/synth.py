"""Synthetic polyp-like images for desk-scale runs.

Each image is a noisy, smoothly shaded background with one to three
anti-aliased textured ellipses. The mask is the exact union of ellipse
interiors evaluated at pixel centers. Optional synthetic "centers" rotate the
background hue, giving a controllable distribution shift.
"""

from __future__ import annotations

import colorsys
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .data import DatasetManifest, Sample, SampleRecord

MIN_FRACTION = 0.01
MAX_FRACTION = 0.6
SUPERSAMPLE = 4


def ellipse_inside(ys: np.ndarray, xs: np.ndarray, cy: float, cx: float, a: float, b: float, theta: float) -> np.ndarray:
    """Point-in-ellipse test; ``a`` is the semi-axis along direction ``theta``."""
    dx, dy = xs - cx, ys - cy
    ct, st = np.cos(theta), np.sin(theta)
    u = dx * ct + dy * st
    v = -dx * st + dy * ct
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def ellipse_mask(h: int, w: int, cy: float, cx: float, a: float, b: float, theta: float) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w] + 0.5
    return ellipse_inside(ys, xs, cy, cx, a, b, theta)


def ellipse_coverage(h: int, w: int, cy: float, cx: float, a: float, b: float, theta: float) -> np.ndarray:
    """Fractional pixel coverage from a SUPERSAMPLE×SUPERSAMPLE grid (anti-aliasing alpha)."""
    k = SUPERSAMPLE
    offs = (np.arange(k) + 0.5) / k
    ys = (np.arange(h)[:, None] + offs[None, :]).reshape(-1)
    xs = (np.arange(w)[:, None] + offs[None, :]).reshape(-1)
    inside = ellipse_inside(ys[:, None], xs[None, :], cy, cx, a, b, theta)
    return inside.reshape(h, k, w, k).mean(axis=(1, 3))


def _hue_shift(rgb: Tuple[float, float, float], shift: float) -> np.ndarray:
    hh, ss, vv = colorsys.rgb_to_hsv(*rgb)
    return np.array(colorsys.hsv_to_rgb((hh + shift) % 1.0, ss, vv))


def _smooth_field(rng: np.random.Generator, h: int, w: int, terms: int = 3) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w] / max(h, w)
    field = np.zeros((h, w))
    for _ in range(terms):
        fy, fx = rng.uniform(0.5, 2.5, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        field += np.sin(2 * np.pi * (fy * ys + fx * xs) + phase)
    return field / terms


def synth_sample(
    index: int, size: int, seed: int, center: Optional[str] = None, hue_shift: float = 0.0
) -> Sample:
    rng = np.random.default_rng([seed, index])
    h = w = size
    base = _hue_shift((0.80, 0.42, 0.38), hue_shift + rng.uniform(-0.02, 0.02))
    shade = 1.0 + 0.12 * _smooth_field(rng, h, w)
    image = base[:, None, None] * shade[None] + rng.normal(0.0, 0.03, size=(3, h, w))

    while True:
        count = int(rng.integers(1, 4))
        shapes = []
        for _ in range(count):
            a = rng.uniform(0.08, 0.22) * size
            b = rng.uniform(0.6, 1.0) * a
            cy = rng.uniform(0.2, 0.8) * size
            cx = rng.uniform(0.2, 0.8) * size
            theta = rng.uniform(0, np.pi)
            shapes.append((cy, cx, a, b, theta))
        mask = np.zeros((h, w), dtype=bool)
        for s in shapes:
            mask |= ellipse_mask(h, w, *s)
        frac = mask.mean()
        if MIN_FRACTION < frac < MAX_FRACTION:
            break

    ys, xs = np.mgrid[0:h, 0:w]
    for cy, cx, a, b, theta in shapes:
        alpha = ellipse_coverage(h, w, cy, cx, a, b, theta)
        tint = _hue_shift((0.92, 0.62, 0.45), hue_shift * 0.5 + rng.uniform(-0.03, 0.03))
        freq = rng.uniform(0.15, 0.4)
        texture = 1.0 + 0.08 * np.sin(freq * (xs * np.cos(theta) + ys * np.sin(theta)))
        # brighter toward the ellipse centre, like a specular dome
        r2 = ((ys + 0.5 - cy) ** 2 + (xs + 0.5 - cx) ** 2) / (a * a)
        dome = 1.0 + 0.15 * np.exp(-2.0 * r2)
        fg = tint[:, None, None] * (texture * dome)[None]
        image = image * (1.0 - alpha[None]) + fg * alpha[None]
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    sid = f"{center}/synth_{index:04d}" if center else f"synth_{index:04d}"
    return Sample(sid, image, mask.astype(np.uint8), center)


def synth_dataset(
    n: int,
    size: int = 64,
    seed: int = 0,
    centers: Union[int, Sequence[str], None] = None,
    hue_step: float = 0.08,
) -> DatasetManifest:
    """Deterministic in-memory dataset of ``n`` samples at ``size``×``size``.

    ``centers`` may be a count (tags ``C1``..``Ck``) or a list of names;
    samples are assigned round-robin and center ``k`` shifts the background
    hue by ``k * hue_step``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if size % 32 or size < 32:
        raise ValueError(f"size must be a positive multiple of 32, got {size}")
    if isinstance(centers, int):
        names: List[Optional[str]] = [f"C{k + 1}" for k in range(centers)] if centers > 0 else [None]
    elif centers:
        names = list(centers)
    else:
        names = [None]
    records = []
    for i in range(n):
        k = i % len(names)
        s = synth_sample(i, size, seed, names[k], hue_shift=k * hue_step if names[k] else 0.0)
        records.append(SampleRecord(s.id, center=s.center, sample=s))
    return DatasetManifest(None, tuple(records), "centered" if names[0] else "flat")


def parse_synth_spec(spec: str) -> dict:
    """Parse ``synth:n=8,size=64,seed=0,centers=3`` into keyword arguments."""
    if not spec.startswith("synth"):
        raise ValueError(f"not a synthetic dataset spec: {spec!r}")
    kwargs = {"n": 8, "size": 64, "seed": 0}
    _, _, rest = spec.partition(":")
    for part in filter(None, rest.split(",")):
        key, sep, value = part.partition("=")
        if not sep or key not in ("n", "size", "seed", "centers"):
            raise ValueError(f"bad synthetic dataset option {part!r}")
        kwargs[key] = int(value)
    return kwargs
