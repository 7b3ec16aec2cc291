"""Residual convolutional encoder and generator.

The layer ladder generalises the 256x256 reference topology to any
power-of-two input size: the encoder halves the spatial size with average
pooling until it reaches 4x4, doubling channels from ``base_channels`` up to
``max_channels``; the generator mirrors it with nearest-neighbour upsampling.

Encoder projection layout (fixed): ``[mu_R | logvar_R | mu_I | logvar_I]``,
each ``latent_dim`` wide.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import InvalidArgumentError
from .latent import DisentangledPosterior, GaussianDiag

LEAK = 0.2


@dataclass
class ArchitectureConfig:
    input_size: int = 32
    base_channels: int = 16
    max_channels: int = 128
    latent_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        s = int(self.input_size)
        if s < 8 or s & (s - 1):
            raise InvalidArgumentError(f"input_size must be a power of two >= 8, got {self.input_size}")
        if self.latent_dim < 1:
            raise InvalidArgumentError("latent_dim must be >= 1")
        if self.base_channels < 1 or self.max_channels < 1:
            raise InvalidArgumentError("channel counts must be positive")

    @property
    def levels(self) -> int:
        return int(math.log2(self.input_size)) - 2

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str          # conv | res | avgpool | upsample | fc | split | repara | cat
    kernel: int
    in_channels: int
    out_channels: int
    out_size: int      # spatial side, 0 for vector outputs


@dataclass(frozen=True)
class ArchitecturePlan:
    encoder: tuple
    generator: tuple

    def downsampling_stages(self) -> int:
        return sum(1 for l in self.encoder if l.kind == "avgpool")


def build_architecture(cfg: ArchitectureConfig) -> ArchitecturePlan:
    b, mx, C, S = cfg.base_channels, cfg.max_channels, cfg.latent_dim, cfg.input_size
    levels = cfg.levels

    def width(k):
        # channels at the k-th pyramid level (spatial = S / 2**k)
        return min(b * 2 ** max(k, 1), mx)

    enc = [LayerSpec("E_conv1", "conv", 5, 3, b, S)]
    ch, size = b, S
    for k in range(1, levels + 1):
        size //= 2
        enc.append(LayerSpec(f"E_avgpool{k}", "avgpool", 2, ch, ch, size))
        enc.append(LayerSpec(f"E_res{k}", "res", 3, ch, width(k), size))
        ch = width(k)
    enc.append(LayerSpec("E_fc", "fc", 0, ch * 16, 4 * C, 0))
    enc.append(LayerSpec("E_split", "split", 0, 4 * C, C, 0))
    enc.append(LayerSpec("E_repara1", "repara", 0, 2 * C, C, 0))
    enc.append(LayerSpec("E_repara2", "repara", 0, 2 * C, C, 0))
    enc.append(LayerSpec("E_cat", "cat", 0, 2 * C, 2 * C, 0))

    top = width(levels)
    gen = [LayerSpec("G_fc", "fc", 0, 2 * C, top * 16, 4)]
    ch, size = top, 4
    for j, k in enumerate(range(levels, -1, -1), start=1):
        if j > 1:
            size *= 2
            gen.append(LayerSpec(f"G_upsample{j - 1}", "upsample", 2, ch, ch, size))
        gen.append(LayerSpec(f"G_res{j}", "res", 3, ch, width(k), size))
        ch = width(k)
    gen.append(LayerSpec("G_conv1", "conv", 5, ch, 3, S))
    return ArchitecturePlan(tuple(enc), tuple(gen))


class ResBlock(nn.Module):
    """act -> conv3x3 -> act -> conv3x3, plus a 1x1 projection shortcut on channel change."""

    def __init__(self, cin, cout):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.shortcut = nn.Conv2d(cin, cout, 1) if cin != cout else None

    def forward(self, x):
        h = self.conv1(F.leaky_relu(x, LEAK))
        h = self.conv2(F.leaky_relu(h, LEAK))
        s = x if self.shortcut is None else self.shortcut(x)
        return s + h


def _build(layers):
    mods = nn.ModuleDict()
    order = []
    for l in layers:
        if l.kind == "conv":
            mods[l.name] = nn.Conv2d(l.in_channels, l.out_channels, l.kernel, padding=l.kernel // 2)
        elif l.kind == "res":
            mods[l.name] = ResBlock(l.in_channels, l.out_channels)
        elif l.kind == "fc":
            mods[l.name] = nn.Linear(l.in_channels, l.out_channels)
        elif l.kind not in ("avgpool", "upsample"):
            continue
        order.append(l)
    return mods, order


class Encoder(nn.Module):
    def __init__(self, cfg: ArchitectureConfig, plan: ArchitecturePlan):
        super().__init__()
        self.layers, self._order = _build(plan.encoder)
        self.latent_dim = cfg.latent_dim

    def forward(self, x):
        h = x.contiguous(memory_format=torch.channels_last)
        for l in self._order:
            if l.kind == "avgpool":
                h = F.avg_pool2d(h, 2)
            elif l.kind == "fc":
                h = self.layers[l.name](F.leaky_relu(h, LEAK).flatten(1))
            else:
                h = self.layers[l.name](h)
        return h  # [N, 4C]


class Generator(nn.Module):
    def __init__(self, cfg: ArchitectureConfig, plan: ArchitecturePlan):
        super().__init__()
        self.layers, self._order = _build(plan.generator)
        self.top_channels = plan.generator[0].out_channels // 16

    def forward(self, z):
        h = None
        for l in self._order:
            if l.kind == "fc":
                h = self.layers[l.name](z).view(z.shape[0], self.top_channels, 4, 4)
                h = h.contiguous(memory_format=torch.channels_last)
            elif l.kind == "upsample":
                h = F.interpolate(h, scale_factor=2, mode="nearest")
            elif l.kind == "conv":
                h = self.layers[l.name](F.leaky_relu(h, LEAK))
            else:
                h = self.layers[l.name](h)
        return torch.sigmoid(h).contiguous()


class UVAModel(nn.Module):
    """Encoder E and generator G. Parameter names start with ``encoder.`` or ``generator.``."""

    def __init__(self, cfg: ArchitectureConfig):
        super().__init__()
        self.cfg = cfg
        self.plan = build_architecture(cfg)
        self.encoder = Encoder(cfg, self.plan)
        self.generator = Generator(cfg, self.plan)
        self.age_scale = 1.0  # latent units per year of age
        # NHWC convolutions are markedly faster on CPU
        self.to(memory_format=torch.channels_last)

    def encoder_params(self):
        return {n: p for n, p in self.named_parameters() if n.startswith("encoder.")}

    def generator_params(self):
        return {n: p for n, p in self.named_parameters() if n.startswith("generator.")}


def _reset(model: UVAModel, gen: torch.Generator):
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                p.zero_()
                continue
            fan_in = p[0].numel()
            bound = math.sqrt(3.0 / fan_in)
            p.copy_((torch.rand(p.shape, generator=gen, dtype=p.dtype) * 2 - 1) * bound)


def init_params(cfg: ArchitectureConfig, rng=None, dtype=torch.float32) -> UVAModel:
    """Build a model with fan-in scaled uniform weights and zero biases.

    Weights have variance 1/fan_in. Deterministic in ``rng`` (seed or
    ``torch.Generator``; defaults to ``cfg.seed``).
    """
    from .latent import as_generator

    gen = as_generator(cfg.seed if rng is None else rng)
    model = UVAModel(cfg).to(dtype)
    _reset(model, gen)
    return model


def _check_images(model: UVAModel, x):
    S = model.cfg.input_size
    if x.dim() != 4 or x.shape[1] != 3 or x.shape[2] != S or x.shape[3] != S:
        raise InvalidArgumentError(f"expected images [N,3,{S},{S}], got {tuple(x.shape)}")


def encode(model: UVAModel, x: torch.Tensor, check: bool = True) -> DisentangledPosterior:
    """Posterior pair for a batch of images in [0, 1]."""
    if check:
        _check_images(model, x)
        if not bool(torch.isfinite(x).all()):
            raise InvalidArgumentError("input images contain non-finite values")
    h = model.encoder(x)
    mu_R, lv_R, mu_I, lv_I = torch.chunk(h, 4, dim=1)
    return DisentangledPosterior(
        GaussianDiag.from_logvar(mu_R, lv_R), GaussianDiag.from_logvar(mu_I, lv_I)
    )


def decode(model: UVAModel, z_R: torch.Tensor, z_I: torch.Tensor) -> torch.Tensor:
    C = model.cfg.latent_dim
    if z_R.dim() == 1:
        z_R = z_R.unsqueeze(0)
    if z_I.dim() == 1:
        z_I = z_I.unsqueeze(0)
    if z_R.shape != z_I.shape or z_R.shape[-1] != C:
        raise InvalidArgumentError(
            f"latents must both be [N,{C}], got {tuple(z_R.shape)} and {tuple(z_I.shape)}"
        )
    return model.generator(torch.cat([z_R, z_I], dim=1))


def parameter_count(model: UVAModel) -> int:
    return sum(p.numel() for p in model.parameters())
