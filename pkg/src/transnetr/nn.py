"""Minimal module containers holding named parameters and buffers."""

from __future__ import annotations

from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from . import functional as F
from .tensor import Tensor


class Parameter(Tensor):
    """A leaf tensor that is trained."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Base container. Attribute assignment order fixes registry order."""

    def __init__(self) -> None:
        object.__setattr__(self, "_parameters", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        elif name in self._buffers:
            self._buffers[name] = value
            return
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def __getattr__(self, name):
        buffers = self.__dict__.get("_buffers")
        if buffers is not None and name in buffers:
            return buffers[name]
        raise AttributeError(f"{type(self).__name__} has no attribute {name!r}")

    def __call__(self, *args, **kwargs):
        if F.counting_active():
            with F.mac_scope(getattr(self, "_scope_name", type(self).__name__)):
                return self.forward(*args, **kwargs)
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    # registry traversal ------------------------------------------------
    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._modules.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for mod_name, mod in self.named_modules(prefix):
            for name, p in mod._parameters.items():
                yield (f"{mod_name}.{name}" if mod_name else name), p

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for mod_name, mod in self.named_modules(prefix):
            for name, b in mod._buffers.items():
                yield (f"{mod_name}.{name}" if mod_name else name), b

    def parameters(self) -> Dict[str, Parameter]:
        return dict(self.named_parameters())

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Parameters then buffers, keyed by registry name."""
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        expected = {name: p for name, p in self.named_parameters()}
        owners = {}
        for mod_name, mod in self.named_modules():
            for name in mod._buffers:
                owners[f"{mod_name}.{name}" if mod_name else name] = (mod, name)
        for name, p in expected.items():
            if name not in state:
                if strict:
                    raise KeyError(f"missing tensor {name!r}")
                continue
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"shape mismatch for {name!r}: model {p.shape} vs archive {value.shape}")
            p.data = value.astype(p.dtype, copy=True)
        for full, (mod, name) in owners.items():
            if full not in state:
                if strict:
                    raise KeyError(f"missing tensor {full!r}")
                continue
            value = np.asarray(state[full])
            current = mod._buffers[name]
            if value.shape != current.shape:
                raise ValueError(f"shape mismatch for {full!r}: model {current.shape} vs archive {value.shape}")
            mod._buffers[name] = value.astype(current.dtype, copy=True)
        if strict:
            unknown = sorted(set(state) - set(expected) - set(owners))
            if unknown:
                raise KeyError(f"unexpected tensor {unknown[0]!r}")

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        for _, m in self.named_modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def to(self, dtype) -> "Module":
        """Cast every parameter and buffer to ``dtype`` in place."""
        for _, m in self.named_modules():
            for p in m._parameters.values():
                p.data = p.data.astype(dtype)
                p.grad = None
            for name in list(m._buffers):
                m._buffers[name] = m._buffers[name].astype(dtype)
        return self


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        bias: bool = False,
    ) -> None:
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(he_normal(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in))
        if bias:
            self.bias = Parameter(np.zeros(out_channels, dtype=np.float32))
        else:
            self.bias = None
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5) -> None:
        super().__init__()
        self.weight = Parameter(np.ones(channels, dtype=np.float32))
        self.bias = Parameter(np.zeros(channels, dtype=np.float32))
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float32))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float32))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.batchnorm2d(
            x,
            self.weight,
            self.bias,
            self._buffers["running_mean"],
            self._buffers["running_var"],
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True) -> None:
        super().__init__()
        self.weight = Parameter(uniform_fan_in(rng, (out_features, in_features), in_features))
        self.bias = Parameter(uniform_fan_in(rng, (out_features,), in_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5) -> None:
        super().__init__()
        self.weight = Parameter(np.ones(dim, dtype=np.float32))
        self.bias = Parameter(np.zeros(dim, dtype=np.float32))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layernorm(x, self.weight, self.bias, self.eps)


class ConvBNAct(Module):
    """Convolution, batch normalization, and an optional activation."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        act: Optional[str] = "leaky_relu",
        slope: float = 0.01,
    ) -> None:
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, kernel_size, rng, stride=stride, padding=kernel_size // 2)
        self.bn = BatchNorm2d(out_channels)
        self.act = act
        self.slope = slope

    def forward(self, x: Tensor) -> Tensor:
        y = self.bn(self.conv(x))
        if self.act is None:
            return y
        return F.activation(y, self.act, self.slope)
