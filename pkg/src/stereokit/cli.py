"""Command-line surface: train / evaluate / infer / profile / benchmark / synth.

Exit codes: 0 success, 2 usage error, 3 data error (missing/bad files),
4 runtime failure.
"""

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

from . import profiler
from .aggregation import StereoModel
from .backbone import ImageBatch
from .config import PRESETS, apply_preset, load_config
from .data import (DatasetSpec, PfmError, StereoSample, list_samples,
                   load_sample, preprocess, read_pfm_disparity, unpad_prediction,
                   write_pfm, write_synthetic_dataset, _load_image)
from .trainer import evaluate_model, load_checkpoint, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def build_parser():
    parser = argparse.ArgumentParser(prog="stereokit",
                                     description="Fast two-branch stereo matching toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--preset", choices=sorted(PRESETS), help="named config preset")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config value")
        p.add_argument("--seed", type=int, help="override train.seed")
        p.add_argument("--device", help="override train.device")

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--dataset", help="dataset root (overrides dataset.root)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="report file (default: stdout)")

    p = sub.add_parser("infer", help="predict disparity for one image pair")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--gt", help="optional ground-truth PFM for an error map")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("profile", help="analytic parameter/MAC report")
    common(p)
    p.add_argument("--resolution", default="544x960", help="HxW input resolution")
    p.add_argument("--out", help="report file (default: stdout)")

    p = sub.add_parser("benchmark", help="warm-up/measure inference timing")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--resolution", default="512x960")
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--warmup", type=int, default=20)
    p.add_argument("--timed", type=int, default=400)
    p.add_argument("--out", help="report file (default: stdout)")

    p = sub.add_parser("synth", help="write a synthetic stereo dataset")
    common(p)
    p.add_argument("--out", required=True, help="dataset root to create")
    p.add_argument("--count", type=int, help="override synth.count")

    return parser


def _config_from_args(args):
    cfg = load_config(args.config, args.overrides)
    if args.preset:
        apply_preset(cfg, args.preset)
        for item in args.overrides:  # explicit flags beat the preset
            key, _, value = item.partition("=")
            cfg.set_value(key.strip(), value.strip())
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.device:
        cfg.train.device = args.device
    if getattr(args, "dataset", None):
        cfg.dataset.root = args.dataset
    return cfg


def _write_or_print(text, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _parse_resolution(spec):
    try:
        h, w = (int(v) for v in spec.lower().split("x"))
        return h, w
    except ValueError:
        raise ValueError(f"bad resolution {spec!r}, expected HxW") from None


def cmd_train(args):
    cfg = _config_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.txt").write_text(cfg.to_text())
    result = train(cfg, out_dir)
    print(f"final train metrics over {result.final_report.valid_count} px:")
    print(result.final_report.to_text_table())
    print(f"checkpoints: {result.best_checkpoint} (best), {result.last_checkpoint} (last)")
    return EXIT_OK


def cmd_evaluate(args):
    cfg = _config_from_args(args)
    model, ckpt_cfg, _ = load_checkpoint(args.checkpoint, cfg.train.resolved_device())
    spec = DatasetSpec(root=args.dataset, kind=cfg.dataset.kind, crop=cfg.dataset.crop)
    samples = [load_sample(t, spec.kind) for t in list_samples(spec)]
    report = evaluate_model(model, samples, ckpt_cfg.cost_volume.max_disparity,
                            cfg.train.resolved_device())
    _write_or_print(report.to_text_table() + "\n" + report.to_records(), args.out)
    return EXIT_OK


def _colorize(values, max_value, colormap="turbo"):
    from matplotlib import colormaps

    norm = np.clip(values / max(max_value, 1e-6), 0.0, 1.0)
    rgba = colormaps[colormap](norm)
    return (rgba[:, :, :3] * 255).astype(np.uint8)


def cmd_infer(args):
    from PIL import Image

    cfg = _config_from_args(args)
    device = cfg.train.resolved_device()
    model, ckpt_cfg, _ = load_checkpoint(args.checkpoint, device)
    left = _load_image(args.left)
    right = _load_image(args.right)
    if left.shape != right.shape:
        raise ValueError(f"left/right image sizes differ: {left.shape} vs {right.shape}")
    h, w = left.shape[1:]
    sample = StereoSample(left, right, np.zeros((h, w), np.float32),
                          np.ones((h, w), bool))
    item = preprocess(sample, cfg.dataset, training=False)
    item["left"].data = item["left"].data.to(device)
    item["right"].data = item["right"].data.to(device)
    model.eval()
    with torch.no_grad():
        pred = model(item["left"], item["right"])
    pred = unpad_prediction(pred, item["pads"])[0].cpu().numpy()

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_pfm(out_dir / "disparity.pfm", pred)
    max_disp = ckpt_cfg.cost_volume.max_disparity
    Image.fromarray(_colorize(pred, max_disp)).save(out_dir / "disparity.png")
    if args.gt:
        gt = read_pfm_disparity(args.gt)
        if gt.shape != pred.shape:
            raise ValueError(f"gt shape {gt.shape} does not match prediction {pred.shape}")
        err = np.abs(pred - gt)
        Image.fromarray(_colorize(err, 5.0)).save(out_dir / "error.png")
    print(f"wrote {out_dir / 'disparity.pfm'}")
    return EXIT_OK


def cmd_profile(args):
    cfg = _config_from_args(args)
    h, w = _parse_resolution(args.resolution)
    model = StereoModel(cfg.model_config())
    report = profile_model(model, h, w)
    _write_or_print(report.to_text_table() + "\n" + report.to_records(), args.out)
    return EXIT_OK


def profile_model(model, height, width, device="cpu"):
    """Analytic profile: MACs over the inference path at (height, width), plus
    the full parameter set traced cheaply via a train-mode pass at low res."""
    model = model.to(device).eval()

    def pair(h, w):
        return (ImageBatch(torch.zeros(1, 3, h, w, device=device)),
                ImageBatch(torch.zeros(1, 3, h, w, device=device)))

    left, right = pair(height, width)
    mac_layers = profiler.build_layer_graph(model, lambda: model(left, right, mode="eval"))
    small = pair(64, 128)
    param_layers = profiler.build_layer_graph(
        model, lambda: model(*small, mode="train"))
    return profiler.ProfileReport(mac_layers, (height, width), param_layers)


def cmd_benchmark(args):
    cfg = _config_from_args(args)
    device = cfg.train.resolved_device()
    if args.checkpoint:
        model, _, _ = load_checkpoint(args.checkpoint, device)
    else:
        model = StereoModel(cfg.model_config()).to(device)
    model.eval()
    h, w = _parse_resolution(args.resolution)
    pad_h, pad_w = (-h) % 32, (-w) % 32
    left = ImageBatch(torch.randn(1, 3, h + pad_h, w + pad_w, device=device))
    right = ImageBatch(torch.randn(1, 3, h + pad_h, w + pad_w, device=device))

    sync = torch.cuda.synchronize if device.startswith("cuda") else None

    def step():
        with torch.no_grad():
            model(left, right)

    result = profiler.benchmark_inference(step, k=args.runs, warmup=args.warmup,
                                          timed=args.timed, sync_fn=sync)
    lines = [
        f"run_{i}_mean_ms={m:.3f}\nrun_{i}_std_ms={s:.3f}"
        for i, (m, s) in enumerate(zip(result.run_means_ms, result.run_stds_ms))
    ]
    lines.append(f"overall_mean_ms={result.overall_ms:.3f}")
    _write_or_print("\n".join(lines), args.out)
    return EXIT_OK


def cmd_synth(args):
    cfg = _config_from_args(args)
    s = cfg.synth
    count = args.count if args.count is not None else s.count
    write_synthetic_dataset(args.out, count, cfg.train.seed, s.height, s.width,
                            s.num_shapes, (s.d_min, s.d_max))
    print(f"wrote {count} samples to {args.out}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "infer": cmd_infer,
    "profile": cmd_profile,
    "benchmark": cmd_benchmark,
    "synth": cmd_synth,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (FileNotFoundError, PfmError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (KeyError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
