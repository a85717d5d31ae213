"""Parameter and multiply-accumulate accounting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from . import functional as F
from .tensor import Tensor, no_grad

# figures reported for the original model, shown next to ours for comparison only
REFERENCE_PARAMS_M = 27.27
REFERENCE_GMAC = 10.58


def count_parameters(model) -> int:
    return int(sum(p.data.size for p in model.parameters().values()))


def parameter_breakdown(model, depth: int = 1) -> Dict[str, int]:
    """Parameter counts grouped by the first ``depth`` components of the registry name."""
    out: Dict[str, int] = {}
    for name, p in model.parameters().items():
        key = ".".join(name.split(".")[:depth])
        out[key] = out.get(key, 0) + int(p.data.size)
    return out


@dataclass
class FlopReport:
    total: int
    by_scope: Dict[str, int]
    input_shape: Tuple[int, ...]

    @property
    def gmac(self) -> float:
        return self.total / 1e9

    def grouped(self, depth: int = 1) -> Dict[str, int]:
        out: Dict[str, int] = {}
        for scope, macs in self.by_scope.items():
            key = ".".join(scope.split(".")[:depth])
            out[key] = out.get(key, 0) + macs
        return out


def _input_shape(input_size: Sequence[int]) -> Tuple[int, ...]:
    size = tuple(int(v) for v in input_size)
    return (1, 3) + size if len(size) == 2 else size


def flop_report(model, input_size: Sequence[int]) -> FlopReport:
    """Trace one eval-mode forward on zeros and tally MACs per innermost module.

    ``input_size`` is (H, W) for a batch-1 RGB image, or a full input shape.
    """
    shape = _input_shape(input_size)
    was_training = model.training
    model.eval()
    try:
        with no_grad(), F.count_macs() as counter:
            model(Tensor(np.zeros(shape, dtype=np.float32)))
    finally:
        model.train(was_training)
    return FlopReport(counter.total, dict(counter.by_scope), shape)


def count_flops(model, input_size: Sequence[int]) -> int:
    return flop_report(model, input_size).total


def format_cost(params: int, macs: int) -> str:
    """One-line comparison of our totals with the reference figures."""
    pm, gm = params / 1e6, macs / 1e9
    return (
        f"parameters {pm:.2f}M (reference {REFERENCE_PARAMS_M}M, delta {pm - REFERENCE_PARAMS_M:+.2f}M); "
        f"MACs {gm:.2f} GMac (reference {REFERENCE_GMAC} GMac, delta {gm - REFERENCE_GMAC:+.2f})"
    )
