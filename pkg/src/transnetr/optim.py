"""Bias-corrected Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from .tensor import Tensor


@dataclass
class AdamConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class OptimizerState:
    """First/second moment arrays keyed by parameter name, plus the step count."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, Tensor]) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adam_step(params: Mapping[str, Tensor], state: OptimizerState, config: AdamConfig) -> None:
    """Apply one Adam update in place and advance ``state.t``.

    Every parameter must carry a gradient; a missing one is an error rather
    than a silent skip.
    """
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = p.grad.astype(p.dtype, copy=False)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = config.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + config.eps)
        p.data = p.data - step.astype(p.dtype, copy=False)
