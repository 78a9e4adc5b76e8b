"""Two-branch feature extractor shared between the left and right images.

A shallow branch keeps spatial detail (3 levels, plain 3x3 convolutions) while
a deep branch builds semantic context cheaply (stem + gather-and-expansion
blocks down to 1/32 resolution, plus a global-context block).  A mutual
attention fusion step merges both into a single 1/8-resolution feature map.
"""

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class BackboneConfig:
    shallow_channels: tuple = (64, 64, 128)
    deep_channels: tuple = (16, 32, 64, 128)
    ge_expansion: int = 6
    out_channels: int = 128

    def __post_init__(self):
        self.shallow_channels = tuple(self.shallow_channels)
        self.deep_channels = tuple(self.deep_channels)
        if len(self.shallow_channels) != 3 or len(self.deep_channels) != 4:
            raise ValueError("shallow_channels needs 3 entries, deep_channels 4")


@dataclass
class ImageBatch:
    """Standardized RGB batch whose spatial dims are divisible by 32."""

    data: torch.Tensor
    orig_height: int = 0
    orig_width: int = 0

    def __post_init__(self):
        if self.data.dim() != 4 or self.data.shape[1] != 3:
            raise ValueError(f"expected [B,3,H,W] tensor, got {tuple(self.data.shape)}")
        _, _, h, w = self.data.shape
        if h % 32 != 0 or w % 32 != 0:
            raise ValueError(f"image dims {h}x{w} must be divisible by 32")
        if self.orig_height == 0:
            self.orig_height = h
        if self.orig_width == 0:
            self.orig_width = w


@dataclass(frozen=True)
class FeatureMap:
    """Feature tensor tagged with its downsampling level (spatial = input / 2^level)."""

    data: torch.Tensor
    level: int

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("level must be >= 0")

    def check_against_input(self, in_h, in_w):
        f = 2 ** self.level
        h, w = self.data.shape[-2:]
        if h * f != in_h or w * f != in_w:
            raise ValueError(
                f"feature map {h}x{w} at level {self.level} inconsistent with input {in_h}x{in_w}"
            )


def standardize(images: torch.Tensor) -> torch.Tensor:
    """Apply fixed per-channel ImageNet statistics to an RGB batch in [0, 1]."""
    mean = images.new_tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
    std = images.new_tensor(IMAGENET_STD).view(1, 3, 1, 1)
    return (images - mean) / std


def convbn(in_ch, out_ch, kernel=3, stride=1):
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel, stride, padding=kernel // 2, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class ShallowBranch(nn.Module):
    """Eight plain convolutions over three levels; output at 1/8 resolution."""

    def __init__(self, channels=(64, 64, 128)):
        super().__init__()
        c1, c2, c3 = channels
        self.layers = nn.Sequential(
            convbn(3, c1, stride=2),
            convbn(c1, c1),
            convbn(c1, c2, stride=2),
            convbn(c2, c2),
            convbn(c2, c2),
            convbn(c2, c3, stride=2),
            convbn(c3, c3),
            convbn(c3, c3),
        )

    def forward(self, x):
        return self.layers(x)


class StemBlock(nn.Module):
    """Aggressive 4x downsampling: stride-2 conv then parallel conv / max-pool paths."""

    def __init__(self, out_ch):
        super().__init__()
        self.conv = convbn(3, out_ch, stride=2)
        self.branch_conv = nn.Sequential(
            convbn(out_ch, out_ch // 2, kernel=1),
            convbn(out_ch // 2, out_ch, stride=2),
        )
        self.branch_pool = nn.MaxPool2d(3, stride=2, padding=1)
        self.fuse = convbn(2 * out_ch, out_ch)

    def forward(self, x):
        x = self.conv(x)
        x = torch.cat([self.branch_conv(x), self.branch_pool(x)], dim=1)
        return self.fuse(x)


class GELayer1(nn.Module):
    """Stride-1 gather-and-expansion block with a residual connection."""

    def __init__(self, channels, expansion=6):
        super().__init__()
        mid = channels * expansion
        self.conv = convbn(channels, channels)
        self.dwconv = nn.Sequential(
            nn.Conv2d(channels, mid, 3, padding=1, groups=channels, bias=False),
            nn.BatchNorm2d(mid),
            nn.ReLU(inplace=True),
        )
        self.project = nn.Sequential(
            nn.Conv2d(mid, channels, 1, bias=False),
            nn.BatchNorm2d(channels),
        )
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x):
        out = self.project(self.dwconv(self.conv(x)))
        return self.relu(out + x)


class GELayer2(nn.Module):
    """Stride-2 gather-and-expansion block with a depthwise shortcut."""

    def __init__(self, in_ch, out_ch, expansion=6):
        super().__init__()
        mid = in_ch * expansion
        self.conv = convbn(in_ch, in_ch)
        self.dwconv1 = nn.Sequential(
            nn.Conv2d(in_ch, mid, 3, stride=2, padding=1, groups=in_ch, bias=False),
            nn.BatchNorm2d(mid),
        )
        self.dwconv2 = nn.Sequential(
            nn.Conv2d(mid, mid, 3, padding=1, groups=mid, bias=False),
            nn.BatchNorm2d(mid),
            nn.ReLU(inplace=True),
        )
        self.project = nn.Sequential(
            nn.Conv2d(mid, out_ch, 1, bias=False),
            nn.BatchNorm2d(out_ch),
        )
        self.shortcut = nn.Sequential(
            nn.Conv2d(in_ch, in_ch, 3, stride=2, padding=1, groups=in_ch, bias=False),
            nn.BatchNorm2d(in_ch),
            nn.Conv2d(in_ch, out_ch, 1, bias=False),
            nn.BatchNorm2d(out_ch),
        )
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x):
        out = self.project(self.dwconv2(self.dwconv1(self.conv(x))))
        return self.relu(out + self.shortcut(x))


class ContextBlock(nn.Module):
    """Global-average-pooled context re-broadcast onto the feature map."""

    def __init__(self, channels):
        super().__init__()
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.squeeze = convbn(channels, channels, kernel=1)
        self.conv = convbn(channels, channels)

    def forward(self, x):
        x = x + self.pool(x)
        return self.conv(self.squeeze(x))


class DeepBranch(nn.Module):
    """Stem + gather-and-expansion stack down to 1/32 resolution, then context."""

    def __init__(self, channels=(16, 32, 64, 128), expansion=6):
        super().__init__()
        d1, d2, d3, d4 = channels
        self.stem = StemBlock(d1)
        self.stage3 = nn.Sequential(GELayer2(d1, d2, expansion), GELayer1(d2, expansion))
        self.stage4 = nn.Sequential(GELayer2(d2, d3, expansion), GELayer1(d3, expansion))
        self.stage5 = nn.Sequential(
            GELayer2(d3, d4, expansion),
            GELayer1(d4, expansion),
            GELayer1(d4, expansion),
            GELayer1(d4, expansion),
        )
        self.context = ContextBlock(d4)

    def forward(self, x):
        x = self.stem(x)
        x = self.stage3(x)
        x = self.stage4(x)
        x = self.stage5(x)
        return self.context(x)


class BranchFusion(nn.Module):
    """Mutual-attention fusion of the 1/8 shallow and 1/32 deep feature maps.

    Each branch gates the other: deep features (upsampled) gate the shallow
    map, downsampled shallow features gate the deep map, and the gated deep
    path is upsampled and added before a final projection.  Gate convolutions
    are bias-free so an all-zero branch yields the neutral 0.5 gate.
    """

    def __init__(self, channels):
        super().__init__()
        self.deep_gate_conv = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.shallow_down = nn.Sequential(
            nn.Conv2d(channels, channels, 3, stride=2, padding=1, bias=False),
            nn.AvgPool2d(3, stride=2, padding=1),
        )
        self.out_conv = nn.Conv2d(channels, channels, 3, padding=1, bias=False)

    def gates(self, shallow, deep):
        gate_a = torch.sigmoid(
            F.interpolate(self.deep_gate_conv(deep), scale_factor=4, mode="bilinear", align_corners=False)
        )
        gate_b = torch.sigmoid(self.shallow_down(shallow))
        return gate_a, gate_b

    def forward(self, shallow, deep):
        if shallow.shape[1] != deep.shape[1]:
            raise ValueError("fusion requires equal channel counts")
        if shallow.shape[-1] != 4 * deep.shape[-1] or shallow.shape[-2] != 4 * deep.shape[-2]:
            raise ValueError("expected shallow at level 3 and deep at level 5")
        gate_a, gate_b = self.gates(shallow, deep)
        branch_a = gate_a * shallow
        branch_b = gate_b * deep
        branch_b = F.interpolate(branch_b, scale_factor=4, mode="bilinear", align_corners=False)
        return self.out_conv(branch_a + branch_b)


class StereoBackbone(nn.Module):
    """Weight-shared feature extractor producing level-3 maps for both views."""

    def __init__(self, cfg: BackboneConfig = None):
        super().__init__()
        self.cfg = cfg or BackboneConfig()
        if self.cfg.shallow_channels[-1] != self.cfg.deep_channels[-1]:
            raise ValueError("branch output widths must match for fusion")
        self.shallow = ShallowBranch(self.cfg.shallow_channels)
        self.deep = DeepBranch(self.cfg.deep_channels, self.cfg.ge_expansion)
        self.fusion = BranchFusion(self.cfg.out_channels)

    def shallow_forward(self, img: ImageBatch) -> FeatureMap:
        fm = FeatureMap(self.shallow(img.data), level=3)
        fm.check_against_input(*img.data.shape[-2:])
        return fm

    def deep_forward(self, img: ImageBatch) -> FeatureMap:
        fm = FeatureMap(self.deep(img.data), level=5)
        fm.check_against_input(*img.data.shape[-2:])
        return fm

    def aggregate_features(self, shallow: FeatureMap, deep: FeatureMap) -> FeatureMap:
        if shallow.level != 3 or deep.level != 5:
            raise ValueError("fusion expects levels (3, 5)")
        return FeatureMap(self.fusion(shallow.data, deep.data), level=3)

    def forward_single(self, img: ImageBatch) -> FeatureMap:
        return self.aggregate_features(self.shallow_forward(img), self.deep_forward(img))

    def forward(self, left: ImageBatch, right: ImageBatch):
        if left.data.shape != right.data.shape:
            raise ValueError("left/right shapes differ")
        return self.forward_single(left), self.forward_single(right)
