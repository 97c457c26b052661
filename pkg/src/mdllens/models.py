"""Width-scalable 32-layer residual classifier with one linear head per task.

The backbone is the small-image residual family: a 3x3 stem, three stages of
five basic blocks at base widths 16/32/64 (scaled by a multiplier), stride 2
at stage transitions, and global average pooling. Normalization is GroupNorm
with an adaptive group count, activations are Mish throughout. Heads are
plain linear classifiers keyed by task label and are the only parameters not
shared between tasks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = [
    "WidthConfig",
    "ForwardResult",
    "MDLModel",
    "group_count",
    "norm_groups",
    "mish",
    "scaled_channels",
    "build_model",
    "forward",
    "param_count",
    "images_to_tensor",
]

BASE_CHANNELS = (16, 32, 64)
BLOCKS_PER_STAGE = 5


@dataclass(frozen=True)
class WidthConfig:
    """Backbone width multiplier and the normalization group divisor."""

    multiplier: float = 1.0
    norm_k: int = 2

    def validate(self) -> None:
        if self.multiplier <= 0:
            raise ValueError(f"width multiplier must be > 0, got {self.multiplier}")
        if self.norm_k < 1:
            raise ValueError(f"norm_k must be >= 1, got {self.norm_k}")


@dataclass
class ForwardResult:
    """Penultimate features (post pooling, pre head) and per-task logits."""

    features: torch.Tensor  # (B, feat_dim)
    logits: dict[int, torch.Tensor]  # task label -> (B, num_classes)


def scaled_channels(base: int, multiplier: float) -> int:
    """Channel count under a width multiplier: round half up, floor 1."""
    return max(1, int(math.floor(base * multiplier + 0.5)))


def group_count(channels: int, k: int) -> int:
    """Adaptive group count: min(32, channels // k), clamped to at least 1."""
    if channels < 1 or k < 1:
        raise ValueError(f"channels and k must be >= 1, got {channels}, {k}")
    return max(1, min(32, channels // k))


def norm_groups(channels: int, k: int) -> int:
    """Group count actually used by a norm layer: groups must divide channels,
    so fall back to the largest divisor of ``channels`` not exceeding
    ``group_count(channels, k)``."""
    g = group_count(channels, k)
    while channels % g:
        g -= 1
    return g


def mish(x: torch.Tensor) -> torch.Tensor:
    """x * tanh(softplus(x)); stable far into both tails."""
    return x * torch.tanh(F.softplus(x))


class _BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int, norm_k: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.norm1 = nn.GroupNorm(norm_groups(cout, norm_k), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, stride=1, padding=1, bias=False)
        self.norm2 = nn.GroupNorm(norm_groups(cout, norm_k), cout)
        if stride != 1 or cin != cout:
            self.down_conv: nn.Conv2d | None = nn.Conv2d(cin, cout, 1, stride=stride, bias=False)
            self.down_norm: nn.GroupNorm | None = nn.GroupNorm(norm_groups(cout, norm_k), cout)
        else:
            self.down_conv = None
            self.down_norm = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = mish(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        if self.down_conv is not None:
            x = self.down_norm(self.down_conv(x))
        return mish(h + x)


class _Backbone(nn.Module):
    def __init__(self, width: WidthConfig):
        super().__init__()
        chans = [scaled_channels(c, width.multiplier) for c in BASE_CHANNELS]
        self.stem_conv = nn.Conv2d(3, chans[0], 3, stride=1, padding=1, bias=False)
        self.stem_norm = nn.GroupNorm(norm_groups(chans[0], width.norm_k), chans[0])
        blocks = []
        cin = chans[0]
        for stage, cout in enumerate(chans):
            for b in range(BLOCKS_PER_STAGE):
                stride = 2 if (b == 0 and stage > 0) else 1
                blocks.append(_BasicBlock(cin, cout, stride, width.norm_k))
                cin = cout
        self.blocks = nn.Sequential(*blocks)
        self.feature_dim = chans[-1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = mish(self.stem_norm(self.stem_conv(x)))
        h = self.blocks(h)
        return h.mean(dim=(2, 3))


class MDLModel(nn.Module):
    """Shared backbone plus disjoint per-task linear heads."""

    def __init__(self, width: WidthConfig, head_sizes: dict[int, int]):
        super().__init__()
        width.validate()
        if not head_sizes:
            raise ValueError("head_sizes must be non-empty")
        self.width = width
        self.head_sizes = dict(head_sizes)
        self.backbone = _Backbone(width)
        self.heads = nn.ModuleDict(
            {str(t): nn.Linear(self.backbone.feature_dim, n) for t, n in head_sizes.items()}
        )
        # bookkeeping carried into checkpoints
        self.train_steps = 0
        self.trial_seed = 0

    @property
    def feature_dim(self) -> int:
        return self.backbone.feature_dim

    def forward(self, images: torch.Tensor) -> ForwardResult:
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) images, got {tuple(images.shape)}")
        feats = self.backbone(images)
        logits = {int(t): head(feats) for t, head in self.heads.items()}
        return ForwardResult(features=feats, logits=logits)

    def backbone_parameters(self):
        return self.backbone.parameters()

    def head_parameters(self, task_label: int):
        return self.heads[str(task_label)].parameters()


def _init_parameters(model: MDLModel, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for mod in model.modules():
            if isinstance(mod, nn.Conv2d):
                fan_out = mod.kernel_size[0] * mod.kernel_size[1] * mod.out_channels
                mod.weight.normal_(0.0, math.sqrt(2.0 / fan_out), generator=gen)
            elif isinstance(mod, nn.GroupNorm):
                mod.weight.fill_(1.0)
                mod.bias.fill_(0.0)
            elif isinstance(mod, nn.Linear):
                mod.weight.normal_(0.0, math.sqrt(2.0 / mod.in_features), generator=gen)
                mod.bias.fill_(0.0)


def build_model(width: WidthConfig, head_sizes: dict[int, int], seed: int = 0) -> MDLModel:
    """Construct and deterministically initialize a model."""
    model = MDLModel(width, head_sizes)
    _init_parameters(model, seed)
    model.trial_seed = seed
    return model


def forward(model: MDLModel, images: torch.Tensor) -> ForwardResult:
    """Functional alias for ``model(images)``."""
    return model(images)


def param_count(model: MDLModel, include_heads: bool = False) -> int:
    total = sum(p.numel() for p in model.backbone.parameters())
    if include_heads:
        total += sum(p.numel() for p in model.heads.parameters())
    return total


def images_to_tensor(images: np.ndarray) -> torch.Tensor:
    """(N, H, W, C) float arrays in [0, 1] -> contiguous (N, C, H, W) tensor."""
    if images.ndim != 4 or images.shape[-1] != 3:
        raise ValueError(f"expected (N, H, W, 3) images, got {images.shape}")
    return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2)))
