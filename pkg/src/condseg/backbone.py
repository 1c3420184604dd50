"""Four-stage encoders with output strides 4/8/16/32, and the minimal stage-1 network."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn
from torchvision.models.resnet import Bottleneck, ResNet

from .core import torch_generator
from .layers import CBR, he_init, make_norm, upsample

STRIDES = (4, 8, 16, 32)


class ResidualBlock(nn.Module):
    def __init__(self, in_c: int, out_c: int, stride: int, norm: str):
        super().__init__()
        self.conv1 = CBR(in_c, out_c, 3, stride=stride, norm=norm)
        self.conv2 = CBR(out_c, out_c, 3, norm=norm, act=False)
        self.shortcut = (
            nn.Identity() if stride == 1 and in_c == out_c
            else CBR(in_c, out_c, 1, stride=stride, norm=norm, act=False)
        )
        self.relu = nn.ReLU()

    def forward(self, x):
        return self.relu(self.conv2(self.conv1(x)) + self.shortcut(x))


class Encoder(nn.Module):
    """Base class: subclasses return the four feature maps f1..f4."""

    channels: tuple[int, int, int, int]

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, ...]:
        raise NotImplementedError


class TinyResidual(Encoder):
    def __init__(self, channels: Sequence[int], norm: str = "batch"):
        super().__init__()
        self.channels = tuple(int(c) for c in channels)
        c1, c2, c3, c4 = self.channels
        stem = max(c1 // 2, 4)
        self.stem = CBR(3, stem, 3, stride=2, norm=norm)
        self.layer1 = ResidualBlock(stem, c1, 2, norm)
        self.layer2 = ResidualBlock(c1, c2, 2, norm)
        self.layer3 = ResidualBlock(c2, c3, 2, norm)
        self.layer4 = ResidualBlock(c3, c4, 2, norm)

    def forward(self, x):
        f1 = self.layer1(self.stem(x))
        f2 = self.layer2(f1)
        f3 = self.layer3(f2)
        f4 = self.layer4(f3)
        return f1, f2, f3, f4


class ResNet50Shape(Encoder):
    """ResNet-50 layout (bottleneck stages 3/4/6/3, widths 256..2048), random init."""

    def __init__(self, channels: Sequence[int], norm: str = "batch"):
        super().__init__()
        self.channels = tuple(int(c) for c in channels)
        if self.channels != (256, 512, 1024, 2048):
            raise ValueError("paper-resnet50-shape requires channel widths [256, 512, 1024, 2048]")
        net = ResNet(Bottleneck, [3, 4, 6, 3], norm_layer=lambda c: make_norm(norm, c))
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.layer1, self.layer2, self.layer3, self.layer4 = net.layer1, net.layer2, net.layer3, net.layer4

    def forward(self, x):
        f1 = self.layer1(self.stem(x))
        f2 = self.layer2(f1)
        f3 = self.layer3(f2)
        f4 = self.layer4(f3)
        return f1, f2, f3, f4


ENCODERS: dict[str, Callable[..., Encoder]] = {
    "tiny-residual": TinyResidual,
    "paper-resnet50-shape": ResNet50Shape,
}


def make_encoder(encoder_id: str, channel_widths: Sequence[int], rng: np.random.Generator,
                 norm: str = "batch") -> Encoder:
    if encoder_id not in ENCODERS:
        raise KeyError(f"unknown encoder {encoder_id!r}; registered: {', '.join(sorted(ENCODERS))}")
    with torch.random.fork_rng(devices=[]):  # default layer init would draw from the global RNG
        enc = ENCODERS[encoder_id](channel_widths, norm=norm)
    init_module(enc, rng)
    return enc


def init_module(module: nn.Module, rng: np.random.Generator) -> None:
    """He-initialize ``module`` from a torch generator derived from ``rng``."""
    g = torch_generator(rng)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(torch.randint(0, 2**62, (1,), generator=g)))
        he_init(module)


def check_input(x: torch.Tensor) -> None:
    if x.dim() != 4 or x.shape[1] != 3:
        raise ValueError(f"expected (B, 3, H, W) input, got {tuple(x.shape)}")
    if x.shape[2] % 32 or x.shape[3] % 32:
        raise ValueError(f"input size {tuple(x.shape[2:])} must be divisible by 32")


def encode(x: torch.Tensor, encoder: Encoder) -> tuple[torch.Tensor, ...]:
    check_input(x)
    return encoder(x)


class Net0(nn.Module):
    """Encoder plus a single 1x1 projection of f4, upsampled and squashed."""

    def __init__(self, encoder: Encoder):
        super().__init__()
        self.encoder = encoder
        self.head = nn.Conv2d(encoder.channels[3], 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        f4 = encode(x, self.encoder)[3]
        return torch.sigmoid(upsample(self.head(f4), tuple(x.shape[2:])))


def net0_forward(x: torch.Tensor, net: Net0) -> torch.Tensor:
    return net(x)


def make_net0(encoder_id: str, channel_widths: Sequence[int], rng: np.random.Generator,
              norm: str = "batch") -> Net0:
    encoder = make_encoder(encoder_id, channel_widths, rng, norm)
    with torch.random.fork_rng(devices=[]):
        net = Net0(encoder)
    init_module(net.head, rng)
    return net
