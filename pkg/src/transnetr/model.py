"""TransNetR: ResNet-style encoder, reduction blocks, and three decoder blocks.

Data flow for an N×3×H×W input::

    encoder -> f1 (stride 2), f2 (4), f3 (8), f4 (16)
    reduce_k: 1×1 conv + BN + LeakyReLU on each f_k
    decoder1: up(r4) ‖ r3 -> RT block        (stride 8)
    decoder2: up(d1) ‖ r2 -> RT block        (stride 4)
    decoder3: up(d2) ‖ r1 -> residual block  (stride 2)
    head:     up(d3) -> 1×1 conv -> sigmoid  (stride 1)

The ``no_rt`` variant swaps the RT blocks of decoders 1-2 for a plain
1×1 conv + BN + LeakyReLU stage; ``residual_only`` swaps them for residual
blocks.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import functional as F
from .nn import BatchNorm2d, Conv2d, ConvBNAct, LayerNorm, Linear, Module, Parameter
from .tensor import Tensor, no_grad

VARIANTS = ("full", "no_rt", "residual_only")
VARIANT_LABELS = {
    "no_rt": "TransNetR without RT block",
    "residual_only": "TransNetR (RT block replaced with residual block)",
    "full": "TransNetR",
}

# stem width, bottleneck mid widths per stage, blocks per stage; expansion 4
ENCODER_PRESETS = {
    "resnet50": {"stem": 64, "mids": (64, 128, 256), "blocks": (3, 4, 6)},
    "tiny": {"stem": 8, "mids": (8, 16, 32), "blocks": (1, 1, 1)},
}
EXPANSION = 4
TRANSFORMER_MARKERS = ("patch_embed", "pos_embed", "transformer", "unembed")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    encoder_preset: str = "resnet50"
    variant: str = "full"
    reduction_channels: int = 64
    patch_size: int = 4
    attn_heads: int = 4
    transformer_layers: int = 2
    token_dim: int = 128
    ff_hidden: Optional[int] = None
    positional_embedding: bool = True
    train_resolution: Tuple[int, int] = (256, 256)
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.ff_hidden is None:
            object.__setattr__(self, "ff_hidden", 2 * self.token_dim)
        object.__setattr__(self, "train_resolution", tuple(int(v) for v in self.train_resolution))
        self.validate()

    def validate(self) -> None:
        if self.encoder_preset not in ENCODER_PRESETS:
            raise ConfigError(f"encoder_preset must be one of {sorted(ENCODER_PRESETS)}, got {self.encoder_preset!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("reduction_channels", "patch_size", "attn_heads", "transformer_layers", "token_dim", "ff_hidden"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.token_dim % self.attn_heads:
            raise ConfigError(f"token_dim ({self.token_dim}) must be divisible by attn_heads ({self.attn_heads})")
        h, w = self.train_resolution
        if h % 32 or w % 32 or h < 32 or w < 32:
            raise ConfigError(f"train_resolution {self.train_resolution} must be positive multiples of 32")
        if self.variant == "full":
            for stride in (8, 4):
                if (h // stride) % self.patch_size or (w // stride) % self.patch_size:
                    raise ConfigError(
                        f"patch_size {self.patch_size} must divide the stride-{stride} decoder grid "
                        f"{(h // stride, w // stride)} implied by train_resolution {self.train_resolution}"
                    )

    @property
    def size_multiple(self) -> int:
        """Input H and W must be multiples of this."""
        if self.variant == "full":
            return math.lcm(32, 8 * self.patch_size)
        return 32

    def to_dict(self) -> Dict:
        d = asdict(self)
        d["train_resolution"] = list(self.train_resolution)
        return d

    @classmethod
    def from_dict(cls, d: Dict) -> "ModelConfig":
        d = dict(d)
        if "train_resolution" in d:
            d["train_resolution"] = tuple(d["train_resolution"])
        return cls(**d)


class Sequential(Module):
    def __init__(self, *modules: Module) -> None:
        super().__init__()
        for i, m in enumerate(modules):
            setattr(self, str(i), m)

    def __iter__(self):
        return iter(self._modules.values())

    def __len__(self):
        return len(self._modules)

    def forward(self, x):
        for m in self._modules.values():
            x = m(x)
        return x


# ----------------------------------------------------------------------
# encoder
# ----------------------------------------------------------------------


class Bottleneck(Module):
    """1×1 reduce, 3×3 (strided), 1×1 expand, with projection shortcut when needed."""

    def __init__(self, in_ch: int, mid: int, stride: int, rng: np.random.Generator) -> None:
        super().__init__()
        out = mid * EXPANSION
        self.conv1 = Conv2d(in_ch, mid, 1, rng)
        self.bn1 = BatchNorm2d(mid)
        self.conv2 = Conv2d(mid, mid, 3, rng, stride=stride, padding=1)
        self.bn2 = BatchNorm2d(mid)
        self.conv3 = Conv2d(mid, out, 1, rng)
        self.bn3 = BatchNorm2d(out)
        if stride != 1 or in_ch != out:
            self.downsample = Sequential(Conv2d(in_ch, out, 1, rng, stride=stride), BatchNorm2d(out))
        else:
            self.downsample = None

    def forward(self, x: Tensor) -> Tensor:
        y = F.relu(self.bn1(self.conv1(x)))
        y = F.relu(self.bn2(self.conv2(y)))
        y = self.bn3(self.conv3(y))
        shortcut = x if self.downsample is None else self.downsample(x)
        return F.relu(y + shortcut)


class Encoder(Module):
    """ResNet stem plus the first three bottleneck stages."""

    def __init__(self, preset: str, rng: np.random.Generator) -> None:
        super().__init__()
        spec = ENCODER_PRESETS[preset]
        stem = spec["stem"]
        self.conv1 = Conv2d(3, stem, 7, rng, stride=2, padding=3)
        self.bn1 = BatchNorm2d(stem)
        in_ch = stem
        self.channels = [stem]
        for stage, (mid, count) in enumerate(zip(spec["mids"], spec["blocks"]), start=1):
            blocks = []
            for b in range(count):
                stride = 2 if (b == 0 and stage > 1) else 1
                blocks.append(Bottleneck(in_ch, mid, stride, rng))
                in_ch = mid * EXPANSION
            setattr(self, f"layer{stage}", Sequential(*blocks))
            self.channels.append(in_ch)

    def forward(self, x: Tensor) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
        f1 = F.relu(self.bn1(self.conv1(x)))
        y = F.maxpool2d(f1, 3, 2, 1)
        f2 = self.layer1(y)
        f3 = self.layer2(f2)
        f4 = self.layer3(f3)
        return f1, f2, f3, f4


# ----------------------------------------------------------------------
# decoder components
# ----------------------------------------------------------------------


class ResidualBlock(Module):
    """Two 3×3 conv + BN layers around an identity or 1×1 projection shortcut."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, slope: float = 0.01) -> None:
        super().__init__()
        self.conv1 = Conv2d(in_ch, out_ch, 3, rng, padding=1)
        self.bn1 = BatchNorm2d(out_ch)
        self.conv2 = Conv2d(out_ch, out_ch, 3, rng, padding=1)
        self.bn2 = BatchNorm2d(out_ch)
        self.shortcut = ConvBNAct(in_ch, out_ch, 1, rng, act=None) if in_ch != out_ch else None
        self.slope = slope

    def forward(self, x: Tensor) -> Tensor:
        y = F.leaky_relu(self.bn1(self.conv1(x)), self.slope)
        y = self.bn2(self.conv2(y))
        s = x if self.shortcut is None else self.shortcut(x)
        return F.leaky_relu(y + s, self.slope)


class SelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.heads = heads

    def forward(self, t: Tensor) -> Tensor:
        n, length, dim = t.shape
        h = self.heads
        qkv = self.qkv(t).reshape(n, length, 3, h, dim // h).transpose(2, 0, 3, 1, 4)
        out = F.scaled_dot_product_attention(qkv[0], qkv[1], qkv[2])
        return self.proj(out.transpose(0, 2, 1, 3).reshape(n, length, dim))


class TransformerLayer(Module):
    """Pre-norm encoder layer: attention and GELU feed-forward, each residual."""

    def __init__(self, dim: int, heads: int, ff_hidden: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.attn = SelfAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.ff1 = Linear(dim, ff_hidden, rng)
        self.ff2 = Linear(ff_hidden, dim, rng)

    def forward(self, t: Tensor) -> Tensor:
        t = t + self.attn(self.norm1(t))
        return t + self.ff2(F.gelu(self.ff1(self.norm2(t))))


def patchify(x: Tensor, p: int) -> Tensor:
    """N×C×H×W -> N×(H/p·W/p)×(C·p·p), patches in row-major grid order."""
    n, c, h, w = x.shape
    if h % p or w % p:
        raise ValueError(f"spatial size {(h, w)} is not divisible by patch_size {p}")
    return x.reshape(n, c, h // p, p, w // p, p).transpose(0, 2, 4, 1, 3, 5).reshape(n, (h // p) * (w // p), c * p * p)


def unpatchify(t: Tensor, c: int, h: int, w: int, p: int) -> Tensor:
    n = t.shape[0]
    return t.reshape(n, h // p, w // p, c, p, p).transpose(0, 3, 1, 4, 2, 5).reshape(n, c, h, w)


class RTBlock(Module):
    """Residual Transformer block.

    1×1 conv+BN+LeakyReLU, patch tokens through the transformer, back to the
    grid, 1×1 conv+BN, add the block input, LeakyReLU, then a residual block.
    """

    def __init__(self, in_ch: int, out_ch: int, cfg: ModelConfig, grid: Tuple[int, int], rng: np.random.Generator):
        super().__init__()
        p, d = cfg.patch_size, cfg.token_dim
        self.conv_in = ConvBNAct(in_ch, out_ch, 1, rng, slope=cfg.leaky_slope)
        self.patch_embed = Linear(out_ch * p * p, d, rng)
        if cfg.positional_embedding:
            self.pos_embed = Parameter((rng.standard_normal((1, d) + tuple(grid)) * 0.02).astype(np.float32))
        else:
            self.pos_embed = None
        self.transformer = Sequential(*[TransformerLayer(d, cfg.attn_heads, cfg.ff_hidden, rng) for _ in range(cfg.transformer_layers)])
        self.unembed = Linear(d, out_ch * p * p, rng)
        self.conv_out = ConvBNAct(out_ch, in_ch, 1, rng, act=None)
        self.res = ResidualBlock(in_ch, out_ch, rng, cfg.leaky_slope)
        self.patch_size = p
        self.hidden = out_ch
        self.slope = cfg.leaky_slope
        # ablation hook: replace the token pathway output by zeros
        self.zero_transformer = False

    def tokens(self, y: Tensor) -> Tensor:
        n, c, h, w = y.shape
        p = self.patch_size
        gh, gw = h // p, w // p
        t = self.patch_embed(patchify(y, p))
        if self.pos_embed is not None:
            pe = self.pos_embed
            if pe.shape[2:] != (gh, gw):
                pe = F.interpolate_bilinear(pe, (gh, gw))
            t = t + pe.reshape(1, pe.shape[1], gh * gw).transpose(0, 2, 1)
        for layer in self.transformer:
            t = layer(t)
        return unpatchify(self.unembed(t), c, h, w, p)

    def pre_residual(self, x: Tensor) -> Tensor:
        if x.shape[2] % self.patch_size or x.shape[3] % self.patch_size:
            raise ValueError(f"RT block input {x.shape} spatial size is not divisible by patch_size {self.patch_size}")
        y = self.conv_in(x)
        if self.zero_transformer:
            z = Tensor(np.zeros(y.shape, dtype=y.dtype))
        else:
            z = self.tokens(y)
        return F.leaky_relu(self.conv_out(z) + x, self.slope)

    def forward(self, x: Tensor) -> Tensor:
        return self.res(self.pre_residual(x))


class PlainBlock(Module):
    """Stand-in for the RT block in the ``no_rt`` ablation: its entry stage only."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, slope: float = 0.01) -> None:
        super().__init__()
        self.conv_in = ConvBNAct(in_ch, out_ch, 1, rng, slope=slope)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv_in(x)


class Decoder(Module):
    def __init__(self, block: Module) -> None:
        super().__init__()
        self.block = block

    def forward(self, deep: Tensor, skip: Tensor) -> Tensor:
        up = F.bilinear_upsample2x(deep)
        if up.shape[2:] != skip.shape[2:]:
            raise ValueError(f"decoder spatial mismatch: upsampled {up.shape} vs skip {skip.shape}")
        return self.block(F.concat_channels(up, skip))


class TransNetR(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.config = config
        c = config.reduction_channels
        slope = config.leaky_slope
        self.encoder = Encoder(config.encoder_preset, rng)
        for k, ch in enumerate(self.encoder.channels, start=1):
            setattr(self, f"reduce{k}", ConvBNAct(ch, c, 1, rng, slope=slope))
        h, w = config.train_resolution
        for k, stride in zip((1, 2, 3), (8, 4, 2)):
            if k < 3 and config.variant == "full":
                grid = (h // stride // config.patch_size, w // stride // config.patch_size)
                block = RTBlock(2 * c, c, config, grid, rng)
            elif k < 3 and config.variant == "no_rt":
                block = PlainBlock(2 * c, c, rng, slope)
            else:
                block = ResidualBlock(2 * c, c, rng, slope)
            setattr(self, f"decoder{k}", Decoder(block))
        self.head = Conv2d(c, 1, 1, rng, bias=True)
        for name, mod in self.named_modules():
            object.__setattr__(mod, "_scope_name", name or "<model>")

    def check_input(self, shape) -> None:
        if len(shape) != 4 or shape[1] != 3:
            raise ValueError(f"expected an N×3×H×W image batch, got shape {tuple(shape)}")
        m = self.config.size_multiple
        h, w = shape[2], shape[3]
        if h % m or w % m or h < m or w < m:
            raise ValueError(
                f"input size {h}x{w} is invalid: height and width must be positive multiples of {m} "
                f"(encoder stride 16 times the 2x decoder chain, and patch_size {self.config.patch_size} "
                f"dividing the stride-8 decoder grid)"
            )

    def encode(self, x: Tensor):
        self.check_input(x.shape)
        return self.encoder(x)

    def forward(self, x: Tensor, return_features: bool = False):
        f1, f2, f3, f4 = self.encode(x)
        r1, r2, r3, r4 = self.reduce1(f1), self.reduce2(f2), self.reduce3(f3), self.reduce4(f4)
        d1 = self.decoder1(r4, r3)
        d2 = self.decoder2(d1, r2)
        d3 = self.decoder3(d2, r1)
        logits = self.head(F.bilinear_upsample2x(d3))
        out = F.sigmoid(logits)
        if return_features:
            feats = {"reduce1": r1, "reduce2": r2, "reduce3": r3, "reduce4": r4, "decoder1": d1, "decoder2": d2, "decoder3": d3}
            return out, feats
        return out

    def rt_blocks(self) -> List[RTBlock]:
        return [m for _, m in self.named_modules() if isinstance(m, RTBlock)]


def build_model(config: ModelConfig, seed: int = 0) -> TransNetR:
    """Construct a TransNetR with parameters drawn deterministically from ``seed``."""
    return TransNetR(config, np.random.default_rng(seed))


def is_transformer_param(name: str) -> bool:
    return any(f".{m}" in name or name.startswith(m) for m in TRANSFORMER_MARKERS)


def encoder_forward(model: TransNetR, image: Tensor):
    return model.encode(image)


HEATMAP_STAGES = ("reduce1", "reduce2", "reduce3", "reduce4", "decoder1", "decoder2", "decoder3")


def stage_heatmap(act: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Channel-mean |activation|, min-max scaled per image to [0, 1], resized to ``size``."""
    m = np.abs(act).mean(axis=1)
    lo = m.min(axis=(1, 2), keepdims=True)
    span = m.max(axis=(1, 2), keepdims=True) - lo
    scaled = np.where(span > 0, (m - lo) / np.where(span > 0, span, 1.0), 0.0)
    out = F.resize_bilinear_array(scaled, size[0], size[1])
    return np.clip(out, 0.0, 1.0)


def extract_feature_heatmaps(model: TransNetR, image: Tensor) -> List[Tuple[str, np.ndarray]]:
    """Heatmaps of the reduced encoder maps and decoder outputs, each N×H×W in [0, 1]."""
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            _, feats = model(image, return_features=True)
    finally:
        model.train(was_training)
    size = image.shape[2:]
    return [(name, stage_heatmap(feats[name].data, size)) for name in HEATMAP_STAGES]
