import math

import pytest
import torch

from stereokit.losses import (EmptyMaskError, LossConfig, baseline_loss,
                              disparity_loss, logl1_loss, multi_output_loss,
                              validity_mask)


def field(values):
    return torch.tensor(values, dtype=torch.float64)


def full_mask(t):
    return torch.ones_like(t, dtype=torch.bool)


class TestValidityMask:
    def test_zero_is_invalid(self):
        assert not validity_mask(field([[0.0]]), 192).any()

    def test_in_range_is_valid(self):
        assert validity_mask(field([[95.5]]), 192).all()

    def test_upper_bound_open(self):
        assert not validity_mask(field([[192.0]]), 192).any()
        assert not validity_mask(field([[-1.0]]), 192).any()


class TestLogL1:
    def test_zero_error(self):
        gt = field([[3.0, 7.0]])
        assert logl1_loss(gt, gt, full_mask(gt)).item() == 0.0

    def test_unit_value_at_e_minus_one(self):
        pred = field([[math.e - 1.0]])
        gt = field([[0.0]])
        assert logl1_loss(pred, gt, full_mask(gt)).item() == pytest.approx(1.0, abs=1e-12)

    def test_closed_form_two_pixels(self):
        pred, gt = field([[2.0, 5.0]]), field([[0.0, 5.0]])
        want = math.log(3.0) / 2
        assert logl1_loss(pred, gt, full_mask(gt)).item() == pytest.approx(want, abs=1e-12)

    def test_empty_mask_raises(self):
        gt = field([[1.0]])
        with pytest.raises(EmptyMaskError):
            logl1_loss(gt, gt, torch.zeros_like(gt, dtype=torch.bool))


class TestBaselines:
    def test_zero_error_all_kinds(self):
        gt = field([[1.0, 2.0]])
        for kind in ("l1", "l2", "smooth_l1"):
            assert baseline_loss(gt, gt, full_mask(gt), kind).item() == 0.0

    def test_half_pixel_error(self):
        pred, gt = field([[0.5]]), field([[0.0]])
        m = full_mask(gt)
        assert baseline_loss(pred, gt, m, "l1").item() == pytest.approx(0.5)
        assert baseline_loss(pred, gt, m, "l2").item() == pytest.approx(0.25)
        assert baseline_loss(pred, gt, m, "smooth_l1").item() == pytest.approx(0.125)

    def test_smooth_l1_linear_branch(self):
        pred, gt = field([[2.0]]), field([[0.0]])
        assert baseline_loss(pred, gt, full_mask(gt), "smooth_l1").item() == pytest.approx(1.5)

    def test_unknown_kind(self):
        gt = field([[1.0]])
        with pytest.raises(ValueError):
            baseline_loss(gt, gt, full_mask(gt), "huber9")


def analytic_grad(kind, e, eps=1.0):
    if kind == "logl1":
        return math.copysign(1.0, e) / (abs(e) + eps)
    if kind == "l1":
        return math.copysign(1.0, e)
    if kind == "l2":
        return 2.0 * e
    return e if abs(e) < 1 else math.copysign(1.0, e)  # smooth_l1


@pytest.mark.parametrize("kind", ["logl1", "l1", "l2", "smooth_l1"])
@pytest.mark.parametrize("e", [0.1, 1.0 + 1e-3, 10.0])
def test_gradients_match_finite_differences(kind, e):
    cfg = LossConfig(kind=kind)
    gt = field([[0.0]])
    mask = full_mask(gt)

    pred = field([[e]]).requires_grad_(True)
    disparity_loss(pred, gt, mask, cfg).backward()
    auto = pred.grad.item()

    h = 1e-6
    hi = disparity_loss(field([[e + h]]), gt, mask, cfg).item()
    lo = disparity_loss(field([[e - h]]), gt, mask, cfg).item()
    fd = (hi - lo) / (2 * h)

    closed = analytic_grad(kind, e)
    assert auto == pytest.approx(fd, rel=1e-4)
    assert auto == pytest.approx(closed, rel=1e-4)


def test_logl1_gradient_strictly_decreasing_in_error():
    grads = []
    for e in (0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0):
        pred = field([[e]]).requires_grad_(True)
        logl1_loss(pred, field([[0.0]]), torch.tensor([[True]])).backward()
        grads.append(abs(pred.grad.item()))
    assert all(a > b for a, b in zip(grads, grads[1:]))


def test_losses_permutation_invariant():
    torch.manual_seed(0)
    pred = torch.randn(1, 40, dtype=torch.float64)
    gt = torch.randn(1, 40, dtype=torch.float64).abs() + 1
    mask = torch.rand(1, 40) > 0.3
    perm = torch.randperm(40)
    for kind in ("logl1", "l1", "l2", "smooth_l1"):
        cfg = LossConfig(kind=kind)
        a = disparity_loss(pred, gt, mask, cfg)
        b = disparity_loss(pred[:, perm], gt[:, perm], mask[:, perm], cfg)
        assert a.item() == pytest.approx(b.item(), rel=1e-12)


def test_masked_pixels_contribute_nothing():
    pred = field([[1.0, 3.0], [5.0, 7.0]])
    gt = field([[1.5, 0.0], [5.5, 0.0]])
    mask = validity_mask(gt, 192)
    base = logl1_loss(pred, gt, mask).item()
    pred_perturbed = pred.clone()
    pred_perturbed[:, 1] += 100.0
    assert logl1_loss(pred_perturbed, gt, mask).item() == base


class TestMultiOutput:
    def setup_method(self):
        self.gt = field([[10.0, 20.0]])
        self.mask = full_mask(self.gt)
        self.cfg = LossConfig()

    def test_all_equal_gives_zero(self):
        outs = (self.gt, self.gt, self.gt)
        assert multi_output_loss(outs, self.gt, self.mask, self.cfg).item() == 0.0

    def test_only_final_output_counts_with_unit_weight(self):
        bad = self.gt + 2.0
        outs = (self.gt, self.gt, bad)
        single = disparity_loss(bad, self.gt, self.mask, self.cfg)
        total = multi_output_loss(outs, self.gt, self.mask, self.cfg)
        assert total.item() == pytest.approx(1.0 * single.item(), rel=1e-12)

    def test_zero_weights_reduce_to_single(self):
        cfg = LossConfig(output_weights=(0.0, 0.0, 1.0))
        bad = self.gt + 3.0
        outs = (self.gt + 9, self.gt + 9, bad)
        want = disparity_loss(bad, self.gt, self.mask, cfg)
        got = multi_output_loss(outs, self.gt, self.mask, cfg)
        assert got.item() == pytest.approx(want.item(), rel=1e-12)

    def test_weighted_sum(self):
        outs = (self.gt + 1, self.gt + 1, self.gt + 1)
        per = disparity_loss(self.gt + 1, self.gt, self.mask, self.cfg)
        got = multi_output_loss(outs, self.gt, self.mask, self.cfg)
        assert got.item() == pytest.approx((0.5 + 0.7 + 1.0) * per.item(), rel=1e-12)


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(kind="l3")
    with pytest.raises(ValueError):
        LossConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        LossConfig(output_weights=(0, 0, 0))
    with pytest.raises(ValueError):
        LossConfig(output_weights=(-1, 0, 1))
