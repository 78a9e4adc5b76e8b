"""3D cost aggregation (pre-convolutions + two stacked hourglasses) and
soft-argmax disparity regression, wrapped into the full stereo model."""

from dataclasses import dataclass, field
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import BackboneConfig, ImageBatch, StereoBackbone
from .cost_volume import CostVolume, CostVolumeBuilder, CostVolumeConfig, convbn3d


@dataclass
class HeadConfig:
    base_channels: int = 32
    mid_channels: int = 64
    bottleneck_channels: int = 192
    separable: bool = False


class SeparableConv3d(nn.Module):
    """3D convolution factored into a spatial (1,k,k) and a disparity (k,1,1) part."""

    def __init__(self, in_ch, out_ch, kernel=3, stride=1):
        super().__init__()
        p = kernel // 2
        self.spatial = nn.Sequential(
            nn.Conv3d(in_ch, out_ch, (1, kernel, kernel), (1, stride, stride),
                      padding=(0, p, p), bias=False),
            nn.BatchNorm3d(out_ch),
            nn.ReLU(inplace=True),
        )
        self.disparity = nn.Conv3d(out_ch, out_ch, (kernel, 1, 1), (stride, 1, 1),
                                   padding=(p, 0, 0), bias=False)

    def forward(self, x):
        return self.disparity(self.spatial(x))


class SeparableTranspose3d(nn.Module):
    """Transpose 3D convolution factored the same way (spatial then disparity)."""

    def __init__(self, in_ch, out_ch, kernel=3, stride=2):
        super().__init__()
        p = kernel // 2
        self.spatial = nn.Sequential(
            nn.ConvTranspose3d(in_ch, out_ch, (1, kernel, kernel), (1, stride, stride),
                               padding=(0, p, p), output_padding=(0, 1, 1), bias=False),
            nn.BatchNorm3d(out_ch),
            nn.ReLU(inplace=True),
        )
        self.disparity = nn.ConvTranspose3d(out_ch, out_ch, (kernel, 1, 1), (stride, 1, 1),
                                            padding=(p, 0, 0), output_padding=(1, 0, 0),
                                            bias=False)

    def forward(self, x):
        return self.disparity(self.spatial(x))


def _conv3d(in_ch, out_ch, stride, separable):
    if separable:
        return nn.Sequential(SeparableConv3d(in_ch, out_ch, stride=stride),
                             nn.BatchNorm3d(out_ch))
    return nn.Sequential(
        nn.Conv3d(in_ch, out_ch, 3, stride, padding=1, bias=False),
        nn.BatchNorm3d(out_ch),
    )


def _deconv3d(in_ch, out_ch, separable):
    if separable:
        return nn.Sequential(SeparableTranspose3d(in_ch, out_ch), nn.BatchNorm3d(out_ch))
    return nn.Sequential(
        nn.ConvTranspose3d(in_ch, out_ch, 3, 2, padding=1, output_padding=1, bias=False),
        nn.BatchNorm3d(out_ch),
    )


class PreAggregation(nn.Module):
    """Four stride-1 3D convolutions at base width with a residual pair."""

    def __init__(self, in_channels, base=32):
        super().__init__()
        self.entry = nn.Sequential(convbn3d(in_channels, base), convbn3d(base, base))
        self.res = nn.Sequential(convbn3d(base, base), _conv3d(base, base, 1, False))

    def forward(self, x):
        x = self.entry(x)
        return F.relu(x + self.res(x))


class Hourglass(nn.Module):
    """Shape-preserving 3D encoder-decoder with two halvings and skip adds."""

    def __init__(self, cfg: HeadConfig):
        super().__init__()
        b, m, bn = cfg.base_channels, cfg.mid_channels, cfg.bottleneck_channels
        sep = cfg.separable
        self.conv1 = nn.Sequential(_conv3d(b, m, 2, sep), nn.ReLU(inplace=True))
        self.conv2 = _conv3d(m, m, 1, sep)
        self.conv3 = nn.Sequential(_conv3d(m, bn, 2, sep), nn.ReLU(inplace=True))
        self.conv4 = nn.Sequential(_conv3d(bn, bn, 1, sep), nn.ReLU(inplace=True))
        self.deconv5 = _deconv3d(bn, m, sep)
        self.deconv6 = _deconv3d(m, b, sep)

    def forward(self, x):
        for size in x.shape[2:]:
            if size % 4 != 0:
                raise ValueError(f"hourglass dims {tuple(x.shape[2:])} must be divisible by 4")
        enc1 = self.conv2(self.conv1(x))
        enc2 = self.conv4(self.conv3(F.relu(enc1)))
        dec1 = F.relu(self.deconv5(enc2) + enc1)
        return F.relu(self.deconv6(dec1) + x)

    def bottleneck(self, x):
        """Encoder output before decoding (used for shape introspection)."""
        return self.conv4(self.conv3(F.relu(self.conv2(self.conv1(x)))))


class DisparityHead(nn.Module):
    """Two 3D convolutions reducing the aggregated volume to one channel."""

    def __init__(self, base=32):
        super().__init__()
        self.net = nn.Sequential(convbn3d(base, base), nn.Conv3d(base, 1, 3, padding=1, bias=False))

    def forward(self, x):
        return self.net(x)


def disparity_probabilities(logits: torch.Tensor, max_disparity: int, full_h: int,
                            full_w: int) -> torch.Tensor:
    """Upsample 1-channel cost logits to [B, D, H, W] and softmax over disparity."""
    up = F.interpolate(logits, size=(max_disparity, full_h, full_w),
                       mode="trilinear", align_corners=False)
    return F.softmax(up.squeeze(1), dim=1)


def soft_argmax(probs: torch.Tensor) -> torch.Tensor:
    """Expected disparity under per-pixel probabilities: sum_d d * p_d."""
    d = probs.shape[1]
    bins = torch.arange(d, device=probs.device, dtype=probs.dtype).view(1, d, 1, 1)
    return (probs * bins).sum(dim=1)


def regress_disparity(volume: torch.Tensor, max_disparity: int, full_h: int,
                      full_w: int) -> torch.Tensor:
    return soft_argmax(disparity_probabilities(volume, max_disparity, full_h, full_w))


class HeadOutputs(NamedTuple):
    out0: torch.Tensor
    out1: torch.Tensor
    out2: torch.Tensor


class AggregationHead(nn.Module):
    """Pre-convolutions, two hourglasses and three regression heads."""

    def __init__(self, in_channels, cfg: HeadConfig = None):
        super().__init__()
        self.cfg = cfg or HeadConfig()
        base = self.cfg.base_channels
        self.pre = PreAggregation(in_channels, base)
        self.hourglass1 = Hourglass(self.cfg)
        self.hourglass2 = Hourglass(self.cfg)
        self.head0 = DisparityHead(base)
        self.head1 = DisparityHead(base)
        self.head2 = DisparityHead(base)

    def forward(self, volume, max_disparity, full_h, full_w, training: bool):
        agg0 = self.pre(volume)
        agg1 = self.hourglass1(agg0)
        agg2 = self.hourglass2(agg1)
        out2 = regress_disparity(self.head2(agg2), max_disparity, full_h, full_w)
        if not training:
            return out2
        out0 = regress_disparity(self.head0(agg0), max_disparity, full_h, full_w)
        out1 = regress_disparity(self.head1(agg1), max_disparity, full_h, full_w)
        return HeadOutputs(out0, out1, out2)


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    cost_volume: CostVolumeConfig = field(default_factory=CostVolumeConfig)
    head: HeadConfig = field(default_factory=HeadConfig)


class StereoModel(nn.Module):
    """End-to-end disparity network: shared backbone, attention volume, 3D head."""

    def __init__(self, cfg: ModelConfig = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.backbone = StereoBackbone(self.cfg.backbone)
        self.volume = CostVolumeBuilder(self.cfg.backbone.out_channels, self.cfg.cost_volume)
        self.head = AggregationHead(self.volume.out_channels, self.cfg.head)

    @property
    def max_disparity(self):
        return self.cfg.cost_volume.max_disparity

    def forward(self, left: ImageBatch, right: ImageBatch, mode: str = None):
        """Three supervised disparity maps in train mode, final map in eval mode.

        `mode` ("train" | "eval") overrides the module flag for the output
        selection only; normalization statistics still follow the module state.
        """
        if mode not in (None, "train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        training = self.training if mode is None else mode == "train"
        lf, rf = self.backbone(left, right)
        vol = self.volume(lf, rf)
        h, w = left.data.shape[-2:]
        return self.head(vol.data, self.max_disparity, h, w, training)
