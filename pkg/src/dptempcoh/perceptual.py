"""Pluggable frozen feature extractors for perceptual losses and metrics.

The default is a fixed random-weight convolutional pyramid: deterministic per
seed, frozen, and multi-scale, standing in for a pretrained backbone at desk
scale. Any callable mapping (B, C, H, W) images to a list of feature blocks
can be swapped in.
"""
from __future__ import annotations

import torch
from torch import nn


class IdentityExtractor(nn.Module):
    """Returns the input as its single feature layer."""

    def forward(self, frames: torch.Tensor) -> list[torch.Tensor]:
        return [frames]


class RandomFeaturePyramid(nn.Module):
    """Three frozen stride-2 conv blocks with fixed seeded random weights."""

    def __init__(self, in_channels: int = 3, widths: tuple[int, ...] = (8, 16, 24), seed: int = 77):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        blocks = []
        prev = in_channels
        for width in widths:
            conv = nn.Conv2d(prev, width, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (prev * 9) ** -0.5)
                conv.bias.zero_()
            blocks.append(conv)
            prev = width
        self.blocks = nn.ModuleList(blocks)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):  # stays frozen
        return super().train(False)

    def forward(self, frames: torch.Tensor) -> list[torch.Tensor]:
        if frames.ndim != 4:
            raise ValueError(f"expected (B, C, H, W), got {tuple(frames.shape)}")
        feats = []
        x = frames
        for conv in self.blocks:
            x = torch.tanh(conv(x))
            feats.append(x)
        return feats
