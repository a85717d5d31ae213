"""Eval-mode prediction and throughput measurement."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from .tensor import Tensor, no_grad


def predict(model, images: np.ndarray) -> np.ndarray:
    """Probabilities N×1×H×W for an N×3×H×W batch; BN statistics are left untouched."""
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            out = model(Tensor(np.asarray(images, dtype=np.float32)))
    finally:
        model.train(was_training)
    return out.data


@dataclass
class BenchResult:
    fps: float
    latency_ms: Dict[str, float]
    iters: int
    input_size: Tuple[int, int]


def fps_benchmark(model, input_size: Tuple[int, int], warmup: int = 2, iters: int = 10, seed: int = 0) -> BenchResult:
    """Batch-1 eval-mode forwards per second, timed with a monotonic clock."""
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    h, w = input_size
    image = np.random.default_rng(seed).random((1, 3, h, w), dtype=np.float32)
    for _ in range(warmup):
        predict(model, image)
    times = []
    for _ in range(iters):
        t0 = time.perf_counter()
        predict(model, image)
        times.append(time.perf_counter() - t0)
    elapsed = float(np.sum(times))
    lat = np.asarray(times) * 1e3
    pct = {f"p{q}": float(np.percentile(lat, q)) for q in (50, 90, 99)}
    pct["mean"] = float(lat.mean())
    return BenchResult(iters / elapsed, pct, iters, (h, w))
