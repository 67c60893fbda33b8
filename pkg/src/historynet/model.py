"""Generator (G0-G3) and critic (D1, D2) networks.

Layout, for an H x W input and backbone widths (c1, c2, c3):

* G0: VGG-16 style stages. Stage 1 at H, max-pool, stage 2 at H/2, max-pool,
  stage 3 at H/4. Stage outputs serve as skip connections.
* G2: two stride-2 conv stages on top of G0, global average pool, a shared
  fully connected layer, then two parallel heads: ``label_logits`` and
  ``info_g``. ``info_g`` is broadcast over the G1 bottleneck and concatenated.
* G3: U-net style upsampling path fed by G0 stage 3 with skips from stages 2
  and 1. Its feature maps at H/2 and H are concatenated into G1, and a 1x1
  head renders the colour-coded parsing map.
* G1: decoder from the H/4 bottleneck back to H, predicting normalised ab.
* D1: four-layer patch critic on (L, a, b), total stride 4, no normalisation.
* D2: small conv stack + fully connected head mapping ab to ``info_d``.

Every width is configurable so the ``test`` and ``paper`` presets share a
single code path.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Mapping, NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

CRITIC_STRIDE = 4
BACKBONE_DOWNSAMPLE = 4


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_size: tuple[int, int] = (224, 224)
    backbone_channels: tuple[int, int, int] = (64, 128, 256)
    backbone_depths: tuple[int, int, int] = (2, 2, 3)
    classifier_channels: tuple[int, int] = (512, 512)
    classifier_hidden: int = 1024
    decoder_channels: tuple[int, int, int] = (128, 64, 32)
    parsing_channels: tuple[int, int] = (64, 32)
    critic_channels: tuple[int, int, int] = (64, 128, 256)
    info_critic_channels: tuple[int, int] = (64, 128)
    parsing_classes: int = 20
    label_count: int = 42
    info_dim: int = 256
    scale_preset: str = "paper"

    def __post_init__(self):
        h, w = self.input_size
        if h < 1 or w < 1:
            raise ValueError(f"input_size must be positive, got {self.input_size}")
        if h % BACKBONE_DOWNSAMPLE or w % BACKBONE_DOWNSAMPLE:
            raise ValueError(
                f"input_size {self.input_size} must be divisible by {BACKBONE_DOWNSAMPLE} "
                "(two 2x pools in G0, total critic stride 4)"
            )
        if self.label_count < 2:
            raise ValueError("label_count must be >= 2")
        if self.info_dim < 2:
            raise ValueError("info_dim must be >= 2")
        if self.parsing_classes < 2:
            raise ValueError("parsing_classes must be >= 2")
        if self.scale_preset not in ("test", "paper"):
            raise ValueError(f"unknown scale_preset {self.scale_preset!r}")
        widths = (
            *self.backbone_channels, *self.backbone_depths, *self.classifier_channels,
            self.classifier_hidden, *self.decoder_channels, *self.parsing_channels,
            *self.critic_channels, *self.info_critic_channels,
        )
        if min(widths) < 1:
            raise ValueError("all widths and depths must be positive")

    @property
    def patch_grid(self) -> tuple[int, int]:
        return self.input_size[0] // CRITIC_STRIDE, self.input_size[1] // CRITIC_STRIDE

    @classmethod
    def test(cls, **overrides) -> "ModelConfig":
        base = cls(
            input_size=(32, 32),
            backbone_channels=(8, 16, 32),
            backbone_depths=(2, 2, 3),
            classifier_channels=(32, 32),
            classifier_hidden=32,
            decoder_channels=(32, 16, 8),
            parsing_channels=(16, 8),
            critic_channels=(8, 16, 32),
            info_critic_channels=(8, 16),
            label_count=4,
            info_dim=8,
            scale_preset="test",
        )
        return replace(base, **overrides)

    @classmethod
    def paper(cls, **overrides) -> "ModelConfig":
        return replace(cls(), **overrides)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


class GeneratorOutput(NamedTuple):
    """Tensors are NCHW: ``ab`` is (N, 2, H, W), ``parsing_pred`` (N, 3, H, W)."""

    ab: torch.Tensor
    label_logits: torch.Tensor
    info_g: torch.Tensor
    parsing_pred: torch.Tensor


class CriticOutput(NamedTuple):
    patch_scores: torch.Tensor  # (N, h, w)
    info_d: torch.Tensor  # (N, info_dim) logits


def _conv(cin, cout, stride=1, act=True):
    layers = [nn.Conv2d(cin, cout, 3, stride=stride, padding=1)]
    if act:
        layers.append(nn.ReLU())
    return layers


def _up(x, size):
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


class LowLevelFeatures(nn.Module):
    """G0: the first three VGG-16 stages on a one-channel luminance input."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        stages = []
        cin = 1
        for width, depth in zip(cfg.backbone_channels, cfg.backbone_depths):
            layers = []
            for _ in range(depth):
                layers += _conv(cin, width)
                cin = width
            stages.append(nn.Sequential(*layers))
        self.stage1, self.stage2, self.stage3 = stages

    def forward(self, x):
        s1 = self.stage1(x)
        s2 = self.stage2(F.max_pool2d(s1, 2))
        s3 = self.stage3(F.max_pool2d(s2, 2))
        return s1, s2, s3

    def conv_layers(self) -> list[tuple[str, nn.Conv2d]]:
        return [(n, m) for n, m in self.named_modules() if isinstance(m, nn.Conv2d)]


class ClassificationBranch(nn.Module):
    """G2: conv stages, then a label head and an info head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c3 = cfg.backbone_channels[2]
        k1, k2 = cfg.classifier_channels
        self.convs = nn.Sequential(*_conv(c3, k1, stride=2), *_conv(k1, k1), *_conv(k1, k2, stride=2), *_conv(k2, k2))
        self.shared = nn.Sequential(nn.Linear(k2, cfg.classifier_hidden), nn.ReLU())
        self.label_head = nn.Linear(cfg.classifier_hidden, cfg.label_count)
        self.info_head = nn.Linear(cfg.classifier_hidden, cfg.info_dim)

    def forward(self, s3):
        h = self.convs(s3).mean(dim=(2, 3))
        h = self.shared(h)
        return self.label_head(h), self.info_head(h)


class ParsingBranch(nn.Module):
    """G3: upsampling path with skips from G0."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c1, c2, c3 = cfg.backbone_channels
        p2, p1 = cfg.parsing_channels
        self.block2 = nn.Sequential(*_conv(c3 + c2, p2), *_conv(p2, p2))
        self.block1 = nn.Sequential(*_conv(p2 + c1, p1), *_conv(p1, p1))
        self.render = nn.Conv2d(p1, 3, 1)

    def forward(self, s1, s2, s3):
        f2 = self.block2(torch.cat([_up(s3, s2.shape[-2:]), s2], dim=1))
        f1 = self.block1(torch.cat([_up(f2, s1.shape[-2:]), s1], dim=1))
        return f2, f1, torch.sigmoid(self.render(f1))


class ColorDecoder(nn.Module):
    """G1: bottleneck fusion with ``info_g`` then upsampling with parsing features."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c3 = cfg.backbone_channels[2]
        d3, d2, d1 = cfg.decoder_channels
        p2, p1 = cfg.parsing_channels
        self.fuse = nn.Sequential(*_conv(c3 + cfg.info_dim, d3), *_conv(d3, d3))
        self.block2 = nn.Sequential(*_conv(d3 + p2, d2), *_conv(d2, d2))
        self.block1 = nn.Sequential(*_conv(d2 + p1, d1), *_conv(d1, d1))
        self.to_ab = nn.Conv2d(d1, 2, 3, padding=1)

    def forward(self, s3, info, parse2, parse1):
        g = info[:, :, None, None].expand(-1, -1, *s3.shape[-2:])
        x = self.fuse(torch.cat([s3, g], dim=1))
        x = self.block2(torch.cat([_up(x, parse2.shape[-2:]), parse2], dim=1))
        x = self.block1(torch.cat([_up(x, parse1.shape[-2:]), parse1], dim=1))
        return torch.tanh(self.to_ab(x))


class Generator(nn.Module):
    """Input: normalised luminance (N, 1, H, W) in [-1, 1].

    ``use_parsing`` and ``use_info`` implement the ablation wiring. With
    parsing off, zeros replace the G3 feature maps fed to G1, so G3 receives
    no gradient. With the info branch off, ``info_g`` is detached before the
    bottleneck fusion, so the info head only learns through the info loss
    (whose weight is then zero).
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.g0 = LowLevelFeatures(cfg)
        self.g1 = ColorDecoder(cfg)
        self.g2 = ClassificationBranch(cfg)
        self.g3 = ParsingBranch(cfg)
        self.use_parsing = True
        self.use_info = True

    def branches(self) -> dict[str, nn.Module]:
        return {"G0": self.g0, "G1": self.g1, "G2": self.g2, "G3": self.g3}

    def forward(self, gray: torch.Tensor) -> GeneratorOutput:
        _check_input(gray, 1, self.cfg.input_size, "generator")
        s1, s2, s3 = self.g0(gray)
        label_logits, info_g = self.g2(s3)
        parse2, parse1, parsing_pred = self.g3(s1, s2, s3)
        if not self.use_parsing:
            parse2, parse1 = torch.zeros_like(parse2), torch.zeros_like(parse1)
        fused = info_g if self.use_info else info_g.detach()
        ab = self.g1(s3, fused, parse2, parse1)
        return GeneratorOutput(ab, label_logits, info_g, parsing_pred)


class PatchCritic(nn.Module):
    """D1: strided patch critic. Output grid is input / 4."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        k1, k2, k3 = cfg.critic_channels
        self.net = nn.Sequential(
            nn.Conv2d(3, k1, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(k1, k2, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(k2, k3, 3, stride=1, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(k3, 1, 3, stride=1, padding=1),
        )

    def forward(self, lab):
        return self.net(lab)[:, 0]


class InfoCritic(nn.Module):
    """D2: recovers the info code from ab planes.

    The convs carry no bias, so chroma-free input maps to the head bias.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        k1, k2 = cfg.info_critic_channels
        self.convs = nn.Sequential(
            nn.Conv2d(2, k1, 4, stride=2, padding=1, bias=False), nn.LeakyReLU(0.2),
            nn.Conv2d(k1, k2, 4, stride=2, padding=1, bias=False), nn.LeakyReLU(0.2),
        )
        self.head = nn.Linear(k2, cfg.info_dim)

    def forward(self, ab):
        return self.head(self.convs(ab).mean(dim=(2, 3)))


class Critic(nn.Module):
    """Input: normalised Lab stack (N, 3, H, W): L/50 - 1, a/110, b/110."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.d1 = PatchCritic(cfg)
        self.d2 = InfoCritic(cfg)

    def branches(self) -> dict[str, nn.Module]:
        return {"D1": self.d1, "D2": self.d2}

    def score(self, lab: torch.Tensor) -> torch.Tensor:
        _check_input(lab, 3, self.cfg.input_size, "critic")
        return self.d1(lab)

    def info(self, ab: torch.Tensor) -> torch.Tensor:
        _check_input(ab, 2, self.cfg.input_size, "info critic")
        return self.d2(ab)

    def forward(self, lab: torch.Tensor) -> CriticOutput:
        return CriticOutput(self.score(lab), self.info(lab[:, 1:]))


def _check_input(x: torch.Tensor, channels: int, size: tuple[int, int], who: str) -> None:
    if x.ndim != 4 or x.shape[1] != channels or tuple(x.shape[-2:]) != tuple(size):
        raise ShapeError(f"{who}: expected input (N, {channels}, {size[0]}, {size[1]}), got {tuple(x.shape)}")


# --- backbone initialisation -------------------------------------------------

DEFAULT_BACKBONE_MAP = Path(__file__).parent / "assets" / "vgg16_backbone_map.txt"


def read_backbone_map(path: str | Path = DEFAULT_BACKBONE_MAP) -> dict[str, str]:
    """Parse ``<g0 parameter> <source tensor>`` lines; '#' starts a comment."""
    mapping = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        ours, theirs = line.split()
        mapping[ours] = theirs
    return mapping


def load_backbone(g0: LowLevelFeatures, weights: Mapping[str, torch.Tensor],
                  mapping: Mapping[str, str] | None = None) -> None:
    """Copy pretrained VGG-16 tensors into G0.

    The first VGG conv expects RGB; its kernel is summed over the colour axis
    so a grey input replicated on three channels gives the same response.
    """
    mapping = dict(mapping or read_backbone_map())
    params = dict(g0.named_parameters())
    missing = [k for k in params if k not in mapping]
    if missing:
        raise ShapeError(f"backbone map has no entry for G0 parameter(s): {', '.join(missing)}")
    staged = {}
    for ours, theirs in mapping.items():
        if ours not in params:
            raise ShapeError(f"backbone map names unknown G0 parameter {ours!r}")
        if theirs not in weights:
            raise ShapeError(f"layer {ours}: source tensor {theirs!r} not found in weight source")
        src = torch.as_tensor(weights[theirs])
        dst = params[ours]
        if src.ndim == 4 and dst.shape[1] == 1 and src.shape[1] == 3:
            src = src.sum(dim=1, keepdim=True)
        if tuple(src.shape) != tuple(dst.shape):
            raise ShapeError(
                f"layer {ours} (from {theirs}): expected shape {tuple(dst.shape)}, got {tuple(src.shape)}"
            )
        staged[ours] = src
    with torch.no_grad():
        for name, src in staged.items():
            params[name].copy_(src)


def build_generator(cfg: ModelConfig, backbone_init: Mapping[str, torch.Tensor] | str | Path | None = None,
                    mapping: Mapping[str, str] | None = None) -> Generator:
    gen = Generator(cfg)
    if backbone_init is not None:
        if isinstance(backbone_init, (str, Path)):
            backbone_init = torch.load(backbone_init, map_location="cpu", weights_only=True)
        load_backbone(gen.g0, backbone_init, mapping)
    return gen


def build_critic(cfg: ModelConfig) -> Critic:
    return Critic(cfg)


def generator_forward(gen: Generator, gray: torch.Tensor) -> GeneratorOutput:
    """Forward a luminance batch; accepts (H, W), (N, H, W) or (N, 1, H, W)."""
    if gray.ndim == 2:
        gray = gray[None, None]
    elif gray.ndim == 3:
        gray = gray[:, None]
    return gen(gray)


def critic_forward(critic: Critic, lab: torch.Tensor) -> CriticOutput:
    if lab.ndim == 3:
        lab = lab[None]
    return critic(lab)


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
