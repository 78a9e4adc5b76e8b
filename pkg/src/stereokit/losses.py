"""Disparity losses over valid pixels: log-of-absolute-error plus the usual
L1 / L2 / smooth-L1 baselines, and the weighted multi-output combination."""

from dataclasses import dataclass

import torch

LOSS_KINDS = ("logl1", "smooth_l1", "l1", "l2")


class EmptyMaskError(ValueError):
    """Raised when a loss or metric is requested over zero valid pixels."""


@dataclass
class LossConfig:
    kind: str = "logl1"
    epsilon: float = 1.0
    output_weights: tuple = (0.5, 0.7, 1.0)

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}, expected one of {LOSS_KINDS}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        self.output_weights = tuple(float(w) for w in self.output_weights)
        if len(self.output_weights) != 3 or any(w < 0 for w in self.output_weights) \
                or not any(self.output_weights):
            raise ValueError("output_weights must be three non-negative values, not all zero")


def validity_mask(gt: torch.Tensor, max_disparity: int) -> torch.Tensor:
    """True where ground truth is labeled and in range: 0 < gt < max_disparity."""
    return (gt > 0) & (gt < max_disparity)


def _masked_errors(pred, gt, mask):
    if mask.sum() == 0:
        raise EmptyMaskError("no valid pixels in mask")
    return pred[mask] - gt[mask]


def logl1_loss(pred, gt, mask, epsilon: float = 1.0) -> torch.Tensor:
    """Mean of ln(|pred - gt| + epsilon) over masked pixels."""
    err = _masked_errors(pred, gt, mask)
    return torch.log(err.abs() + epsilon).mean()


def baseline_loss(pred, gt, mask, kind: str) -> torch.Tensor:
    """Masked mean of |e| (l1), e^2 (l2) or the smooth-L1 huberized error."""
    err = _masked_errors(pred, gt, mask)
    if kind == "l1":
        return err.abs().mean()
    if kind == "l2":
        return (err ** 2).mean()
    if kind == "smooth_l1":
        ae = err.abs()
        return torch.where(ae < 1, 0.5 * ae ** 2, ae - 0.5).mean()
    raise ValueError(f"unknown loss kind {kind!r}")


def disparity_loss(pred, gt, mask, cfg: LossConfig) -> torch.Tensor:
    if cfg.kind == "logl1":
        return logl1_loss(pred, gt, mask, cfg.epsilon)
    return baseline_loss(pred, gt, mask, cfg.kind)


def multi_output_loss(outputs, gt, mask, cfg: LossConfig) -> torch.Tensor:
    """Weighted sum of the per-output losses for the three supervision points."""
    total = None
    for weight, out in zip(cfg.output_weights, outputs):
        if weight == 0:
            continue
        term = weight * disparity_loss(out, gt, mask, cfg)
        total = term if total is None else total + term
    return total
