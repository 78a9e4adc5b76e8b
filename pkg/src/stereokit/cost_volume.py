"""Cost volume construction and learned attention filtering.

Two volumes are built from the level-3 feature maps: a concatenation volume
(the unfiltered matching volume) and a group-wise correlation volume.  A small
3D network turns the correlation volume into per-disparity attention weights
in (0, 1) that gate the concatenation volume.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import FeatureMap


@dataclass
class CostVolumeConfig:
    max_disparity: int = 192
    num_groups: int = 32
    concat_channels: int = 12
    num_subgroups: int = 3
    attention_channels: int = 8
    # Full-resolution pixels per disparity bin; 0 means 2**level (one bin per
    # feature-map pixel).
    disp_stride: int = 0
    use_attention: bool = True

    def num_bins(self, level: int) -> int:
        stride = self.bin_stride(level)
        if self.max_disparity % stride != 0:
            raise ValueError(
                f"max_disparity {self.max_disparity} not divisible by bin stride {stride}"
            )
        return self.max_disparity // stride

    def bin_stride(self, level: int) -> int:
        return self.disp_stride if self.disp_stride else 2 ** level


@dataclass(frozen=True)
class CostVolume:
    """4D matching volume [B, C, D, H, W] plus scale metadata."""

    data: torch.Tensor
    level: int
    disp_stride: int

    def __post_init__(self):
        if self.data.dim() != 5:
            raise ValueError(f"cost volume must be 5D, got {tuple(self.data.shape)}")


@dataclass(frozen=True)
class AttentionWeights:
    """Per-disparity gate [B, 1, D, H, W] with values in (0, 1)."""

    data: torch.Tensor

    def __post_init__(self):
        if self.data.dim() != 5 or self.data.shape[1] != 1:
            raise ValueError("attention weights must be [B,1,D,H,W]")


def _shifted_right(right: torch.Tensor, shift: float) -> torch.Tensor:
    """Right features shifted by `shift` feature pixels along width, zero-filled.

    Fractional shifts (sub-feature-pixel disparity bins) interpolate linearly
    between the two neighbouring integer shifts.
    """
    if shift == 0:
        return right
    lo = int(shift)
    if lo >= right.shape[-1]:
        return torch.zeros_like(right)
    if shift == lo:
        out = torch.zeros_like(right)
        out[..., lo:] = right[..., : right.shape[-1] - lo]
        return out
    frac = shift - lo
    return (1.0 - frac) * _shifted_right(right, lo) + frac * _shifted_right(right, lo + 1)


def build_concat_volume(left: torch.Tensor, right: torch.Tensor, num_bins: int,
                        shift_per_bin: float = 1.0) -> torch.Tensor:
    """Stack channel-concatenated (left, shifted right) slices over disparity bins."""
    b, c, h, w = left.shape
    volume = left.new_zeros(b, 2 * c, num_bins, h, w)
    for d in range(num_bins):
        shifted = _shifted_right(right, d * shift_per_bin)
        mask = _valid_columns(w, d * shift_per_bin, left)
        volume[:, :c, d] = left * mask
        volume[:, c:, d] = shifted * mask
    return volume


def _valid_columns(width, shift, like):
    cols = torch.arange(width, device=like.device, dtype=like.dtype)
    return (cols >= shift).to(like.dtype).view(1, 1, 1, width)


def groupwise_correlation(left: torch.Tensor, right: torch.Tensor, num_groups: int) -> torch.Tensor:
    b, c, h, w = left.shape
    if c % num_groups != 0:
        raise ValueError(f"channels {c} not divisible by num_groups {num_groups}")
    group_size = c // num_groups
    prod = (left * right).view(b, num_groups, group_size, h, w)
    return prod.mean(dim=2)


def build_gwc_volume(left: torch.Tensor, right: torch.Tensor, num_bins: int, num_groups: int,
                     shift_per_bin: float = 1.0) -> torch.Tensor:
    """Group-wise correlation against disparity-shifted right features, zero-filled."""
    b, _, h, w = left.shape
    volume = left.new_zeros(b, num_groups, num_bins, h, w)
    for d in range(num_bins):
        shifted = _shifted_right(right, d * shift_per_bin)
        mask = _valid_columns(w, d * shift_per_bin, left)
        volume[:, :, d] = groupwise_correlation(left, shifted, num_groups) * mask
    return volume


def apply_attention(pre: CostVolume, att: AttentionWeights) -> CostVolume:
    """Gate every channel of the pre-attention volume with the disparity weights."""
    if pre.data.shape[2:] != att.data.shape[2:] or pre.data.shape[0] != att.data.shape[0]:
        raise ValueError(
            f"shape mismatch: volume {tuple(pre.data.shape)} vs weights {tuple(att.data.shape)}"
        )
    return CostVolume(pre.data * att.data, pre.level, pre.disp_stride)


def convbn3d(in_ch, out_ch, kernel=3, stride=1):
    return nn.Sequential(
        nn.Conv3d(in_ch, out_ch, kernel, stride, padding=kernel // 2, bias=False),
        nn.BatchNorm3d(out_ch),
        nn.ReLU(inplace=True),
    )


def split_sizes(total: int, parts: int):
    """Contiguous near-equal split, larger blocks first (32 into 3 -> 11/11/10)."""
    base, rem = divmod(total, parts)
    return [base + (1 if i < rem else 0) for i in range(parts)]


class AttentionNet(nn.Module):
    """Derives disparity attention weights from the correlation volume.

    The correlation channels are split into contiguous sub-groups, each
    processed by two 3D convolutions; the per-group outputs are summed and two
    further convolutions reduce to a single sigmoid-squashed channel.
    """

    def __init__(self, in_channels: int, num_subgroups: int = 3, width: int = 16):
        super().__init__()
        self.split = split_sizes(in_channels, num_subgroups)
        self.branches = nn.ModuleList(
            nn.Sequential(convbn3d(c, width), convbn3d(width, width)) for c in self.split
        )
        self.merge = convbn3d(width, width)
        self.head = nn.Conv3d(width, 1, 3, padding=1, bias=False)

    def forward(self, corr: torch.Tensor) -> torch.Tensor:
        blocks = torch.split(corr, self.split, dim=1)
        merged = sum(branch(block) for branch, block in zip(self.branches, blocks))
        return torch.sigmoid(self.head(self.merge(merged)))


class CostVolumeBuilder(nn.Module):
    """Builds the (optionally attention-filtered) matching volume from features."""

    def __init__(self, feature_channels: int, cfg: CostVolumeConfig = None):
        super().__init__()
        self.cfg = cfg or CostVolumeConfig()
        if feature_channels % self.cfg.num_groups != 0:
            raise ValueError(
                f"feature channels {feature_channels} not divisible by "
                f"num_groups {self.cfg.num_groups}"
            )
        self.compress = nn.Conv2d(feature_channels, self.cfg.concat_channels, 1, bias=False)
        self.attention = (
            AttentionNet(self.cfg.num_groups, self.cfg.num_subgroups, self.cfg.attention_channels)
            if self.cfg.use_attention else None
        )

    @property
    def out_channels(self) -> int:
        return 2 * self.cfg.concat_channels

    def concat_volume(self, lf: FeatureMap, rf: FeatureMap) -> CostVolume:
        if lf.level != rf.level or lf.data.shape != rf.data.shape:
            raise ValueError("left/right feature maps must share shape and level")
        bins = self.cfg.num_bins(lf.level)
        shift = self.cfg.bin_stride(lf.level) / 2 ** lf.level
        vol = build_concat_volume(self.compress(lf.data), self.compress(rf.data), bins, shift)
        return CostVolume(vol, lf.level, self.cfg.bin_stride(lf.level))

    def gwc_volume(self, lf: FeatureMap, rf: FeatureMap) -> CostVolume:
        if lf.level != rf.level or lf.data.shape != rf.data.shape:
            raise ValueError("left/right feature maps must share shape and level")
        bins = self.cfg.num_bins(lf.level)
        shift = self.cfg.bin_stride(lf.level) / 2 ** lf.level
        vol = build_gwc_volume(lf.data, rf.data, bins, self.cfg.num_groups, shift)
        return CostVolume(vol, lf.level, self.cfg.bin_stride(lf.level))

    def attention_weights(self, corr: CostVolume) -> AttentionWeights:
        if self.attention is None:
            raise RuntimeError("attention disabled in config")
        return AttentionWeights(self.attention(corr.data))

    def forward(self, lf: FeatureMap, rf: FeatureMap) -> CostVolume:
        pre = self.concat_volume(lf, rf)
        if self.attention is None:
            return pre
        att = self.attention_weights(self.gwc_volume(lf, rf))
        return apply_attention(pre, att)
