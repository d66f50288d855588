"""Encoder-decoder segmentation network built from strided convolutions only.

Downsampling happens exclusively through stride-2 convolutions and upsampling
through stride-2 transposed convolutions (no pooling or unpooling anywhere);
each encoder stage forwards its activations to the same-resolution decoder
stage by concatenation, so the output keeps pixel-level detail at the input
resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn


@dataclass(frozen=True)
class NetSpec:
    """Architecture description; construction validates the invariants."""

    input_size: tuple[int, int] = (64, 64)
    channels: tuple[int, ...] = (32, 64, 128, 256)  # one entry per stride-2 stage
    stem_channels: int = 16
    in_channels: int = 1
    num_classes: int = 3

    def __post_init__(self):
        if not self.channels:
            raise ValueError("at least one encoder stage is required")
        if self.num_classes != 3:
            raise ValueError("the segmenter emits exactly the 3 hand classes")
        factor = 2 ** len(self.channels)
        h, w = self.input_size
        if h % factor or w % factor:
            raise ValueError(
                f"input {h}x{w} is not divisible by the total stride {factor}; "
                "the decoder could not mirror the encoder back to full resolution"
            )
        if min(self.channels) < 1 or self.stem_channels < 1 or self.in_channels < 1:
            raise ValueError("channel widths must be positive")


def _conv_block(cin: int, cout: int, stride: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel_size=3, stride=stride, padding=1),
        nn.ReLU(inplace=True),
    )


def _upconv_block(cin: int, cout: int) -> nn.Sequential:
    # kernel 4 / stride 2 / pad 1 exactly doubles the resolution
    return nn.Sequential(
        nn.ConvTranspose2d(cin, cout, kernel_size=4, stride=2, padding=1),
        nn.ReLU(inplace=True),
    )


class SegNet(nn.Module):
    """U-shaped segmenter per NetSpec; forward maps (N, Cin, H, W) to
    (N, 3, H, W) logits."""

    def __init__(self, spec: NetSpec):
        super().__init__()
        self.spec = spec
        ch = spec.channels
        self.stem = _conv_block(spec.in_channels, spec.stem_channels, stride=1)
        self.encoder = nn.ModuleList()
        cin = spec.stem_channels
        for cout in ch:
            self.encoder.append(_conv_block(cin, cout, stride=2))
            cin = cout
        self.decoder = nn.ModuleList()
        skip_widths = [spec.stem_channels] + list(ch[:-1])
        for i in reversed(range(len(ch))):
            cout = skip_widths[i]
            self.decoder.append(_upconv_block(cin, cout))
            cin = cout + skip_widths[i]  # concatenated skip
        self.head = nn.Conv2d(cin, spec.num_classes, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = [self.stem(x)]
        out = skips[0]
        for stage in self.encoder:
            out = stage(out)
            skips.append(out)
        skips.pop()  # the bottleneck feeds the decoder directly, not a skip
        for stage in self.decoder:
            out = stage(out)
            skip = skips.pop()
            out = torch.cat([out, skip], dim=1)
        return self.head(out)


def build_network(spec: NetSpec = NetSpec()) -> SegNet:
    return SegNet(spec)
