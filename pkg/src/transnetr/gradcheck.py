"""Central-difference gradient verification."""

from __future__ import annotations

from typing import Callable, Tuple

import numpy as np

from .tensor import Tensor


def numerical_grad(f: Callable[[Tensor], Tensor], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(Tensor(x.copy())).data)
        flat[i] = orig - eps
        lo = float(f(Tensor(x.copy())).data)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def analytic_grad(f: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    t = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    f(t).backward()
    return np.zeros_like(t.data) if t.grad is None else t.grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a-b| / max(|a|, |b|, 1e-8), elementwise."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / den)) if a.size else 0.0


def finite_diff_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max relative error between autodiff and central differences of scalar ``f`` at ``x``."""
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    x = x.data if isinstance(x, Tensor) else x
    return relative_error(analytic_grad(f, x), numerical_grad(f, x, eps))


def check_grads(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> Tuple[float, np.ndarray, np.ndarray]:
    x = x.data if isinstance(x, Tensor) else x
    a, n = analytic_grad(f, x), numerical_grad(f, x, eps)
    return relative_error(a, n), a, n
