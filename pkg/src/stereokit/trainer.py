"""Training and evaluation loops driving the stereo model end to end."""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .aggregation import StereoModel
from .config import RunConfig
from .data import (DatasetSpec, StereoSample, generate_synthetic_pair,
                   list_samples, load_sample, preprocess, unpad_prediction)
from .losses import multi_output_loss, validity_mask
from .metrics import combine_reports, metrics_report


def set_all_seeds(seed: int):
    torch.manual_seed(seed)
    np.random.seed(seed % 2 ** 32)


def build_optimizer(model, cfg):
    t = cfg.train
    if t.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=t.lr, betas=(t.beta1, t.beta2))
    if t.optimizer == "adamw":
        return torch.optim.AdamW(model.parameters(), lr=t.lr, betas=(t.beta1, t.beta2))
    return torch.optim.SGD(model.parameters(), lr=t.lr, momentum=t.momentum)


def load_dataset(cfg: RunConfig):
    """Samples from the configured directory, or generated in-memory when the
    dataset kind is synthetic and no root is given."""
    spec = cfg.dataset
    if spec.kind == "synthetic" and not spec.root:
        s = cfg.synth
        return [
            generate_synthetic_pair(cfg.train.seed + i, s.height, s.width,
                                    s.num_shapes, (s.d_min, s.d_max))
            for i in range(s.count)
        ]
    return [load_sample(t, spec.kind) for t in list_samples(spec)]


def save_checkpoint(path, model, cfg: RunConfig, iteration: int):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "model": model.state_dict(),
        "config": cfg.to_text(),
        "iteration": iteration,
    }, path)


def load_checkpoint(path, device="cpu"):
    from .config import load_config

    payload = torch.load(path, map_location=device, weights_only=False)
    cfg = load_config(overrides=())
    for line in payload["config"].splitlines():
        key, _, value = line.partition("=")
        cfg.set_value(key.strip(), value.strip())
    model = StereoModel(cfg.model_config()).to(device)
    model.load_state_dict(payload["model"])
    return model, cfg, payload.get("iteration", 0)


def make_batch(samples, spec: DatasetSpec, rng, device):
    """Random-crop each sample and stack into batch tensors."""
    items = [preprocess(s, spec, training=True, rng=rng) for s in samples]
    left = torch.cat([it["left"].data for it in items]).to(device)
    right = torch.cat([it["right"].data for it in items]).to(device)
    gt = torch.stack([it["gt"] for it in items]).to(device)
    valid = torch.stack([it["valid"] for it in items]).to(device)
    return left, right, gt, valid


@dataclass
class TrainResult:
    loss_curve: list         # (iteration, loss, lr)
    val_curve: list          # (iteration, epe)
    final_report: object
    best_checkpoint: str
    last_checkpoint: str


def evaluate_model(model, samples, max_disparity, device="cpu"):
    """Pad, infer the final output, unpad, and pool per-sample metrics."""
    model.eval()
    reports = []
    spec = DatasetSpec(root="", kind="synthetic")
    with torch.no_grad():
        for sample in samples:
            item = preprocess(sample, spec, training=False)
            left = item["left"]
            right = item["right"]
            left.data = left.data.to(device)
            right.data = right.data.to(device)
            pred = model(left, right)
            pred = unpad_prediction(pred, item["pads"])[0].cpu().numpy()
            mask = item["valid"].numpy()
            reports.append(metrics_report(pred, sample.gt_disparity, max_disparity, mask))
    return combine_reports(reports)


def train(cfg: RunConfig, out_dir, train_samples=None, val_samples=None,
          log_fn=None) -> TrainResult:
    """Run the full training loop; writes loss curve CSV and checkpoints."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    device = cfg.train.resolved_device()
    set_all_seeds(cfg.train.seed)
    rng = np.random.default_rng(cfg.train.seed)

    if train_samples is None:
        train_samples = load_dataset(cfg)
    if val_samples is None:
        val_samples = train_samples

    model = StereoModel(cfg.model_config()).to(device)
    optimizer = build_optimizer(model, cfg)
    decay_steps = set(cfg.train.resolved_decay_steps())
    max_disp = cfg.cost_volume.max_disparity

    loss_curve, val_curve = [], []
    best_epe = float("inf")
    best_path = str(out_dir / "best.pt")
    last_path = str(out_dir / "last.pt")

    from .backbone import ImageBatch

    for iteration in range(1, cfg.train.iterations + 1):
        model.train()
        picks = rng.integers(0, len(train_samples), size=cfg.train.batch_size)
        left, right, gt, valid = make_batch(
            [train_samples[i] for i in picks], cfg.dataset, rng, device)
        outputs = model(ImageBatch(left), ImageBatch(right))
        mask = valid & validity_mask(gt, max_disp)
        loss = multi_output_loss(outputs, gt, mask, cfg.loss)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        if iteration in decay_steps:
            for group in optimizer.param_groups:
                group["lr"] *= 0.5
        lr = optimizer.param_groups[0]["lr"]
        loss_curve.append((iteration, float(loss.item()), lr))
        if log_fn:
            log_fn(iteration, float(loss.item()), lr)

        if cfg.train.val_interval and iteration % cfg.train.val_interval == 0:
            report = evaluate_model(model, val_samples, max_disp, device)
            val_curve.append((iteration, report.epe))
            if report.epe < best_epe:
                best_epe = report.epe
                save_checkpoint(best_path, model, cfg, iteration)

    final_report = evaluate_model(model, train_samples, max_disp, device)
    save_checkpoint(last_path, model, cfg, cfg.train.iterations)
    if not val_curve or final_report.epe < best_epe:
        save_checkpoint(best_path, model, cfg, cfg.train.iterations)

    with open(out_dir / "loss_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "lr"])
        writer.writerows(loss_curve)
    with open(out_dir / "val_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "val_epe"])
        writer.writerows(val_curve)

    return TrainResult(loss_curve, val_curve, final_report, best_path, last_path)
