"""Run configuration: every module config plus the training recipe, with a
flat dotted key=value file format (CLI flags override file values)."""

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .aggregation import HeadConfig, ModelConfig
from .backbone import BackboneConfig
from .cost_volume import CostVolumeConfig
from .data import DatasetSpec
from .losses import LossConfig

OPTIMIZERS = ("adam", "adamw", "sgd")


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    momentum: float = 0.9
    batch_size: int = 2
    iterations: int = 2000
    lr_decay_steps: tuple = ()  # empty -> proportional 2N/3, 7N/9, 8N/9
    seed: int = 0
    device: str = ""            # empty -> $STEREOKIT_DEVICE or cpu
    val_interval: int = 250
    checkpoint_dir: str = "checkpoints"

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        steps = tuple(int(s) for s in self.lr_decay_steps)
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("lr_decay_steps must be strictly increasing")
        self.lr_decay_steps = steps

    def resolved_decay_steps(self):
        if self.lr_decay_steps:
            return self.lr_decay_steps
        n = self.iterations
        return (2 * n // 3, 7 * n // 9, 8 * n // 9)

    def resolved_device(self):
        return self.device or os.environ.get("STEREOKIT_DEVICE", "cpu")


@dataclass
class SynthConfig:
    count: int = 20
    height: int = 96
    width: int = 160
    num_shapes: int = 6
    d_min: int = 4
    d_max: int = 28


@dataclass
class RunConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    cost_volume: CostVolumeConfig = field(default_factory=CostVolumeConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    dataset: DatasetSpec = field(default_factory=lambda: DatasetSpec(root=""))
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.backbone, self.cost_volume, self.head)

    # -- dotted key access ----------------------------------------------------

    def set_value(self, dotted_key: str, raw: str):
        section, _, name = dotted_key.partition(".")
        if not name or not hasattr(self, section):
            raise KeyError(f"unknown config key {dotted_key!r}")
        target = getattr(self, section)
        fields = {f.name: f for f in dataclasses.fields(target)}
        if name not in fields:
            raise KeyError(f"unknown config key {dotted_key!r}")
        current = getattr(target, name)
        setattr(target, name, _coerce(raw, fields[name].type, current))
        post = getattr(target, "__post_init__", None)
        if post:
            post()

    def items(self):
        for section_field in dataclasses.fields(self):
            section = getattr(self, section_field.name)
            for f in dataclasses.fields(section):
                yield f"{section_field.name}.{f.name}", getattr(section, f.name)

    def to_text(self) -> str:
        lines = []
        for key, value in self.items():
            if isinstance(value, (tuple, list)):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def _coerce(raw, annotation, current):
    raw = raw.strip()
    if isinstance(current, bool):
        low = raw.lower()
        if low in ("1", "true", "on", "yes"):
            return True
        if low in ("0", "false", "off", "no"):
            return False
        raise ValueError(f"cannot parse {raw!r} as bool")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, (tuple, list)):
        if not raw:
            return ()
        parts = [p.strip() for p in raw.split(",")]
        out = []
        for p in parts:
            try:
                out.append(int(p))
            except ValueError:
                out.append(float(p))
        return tuple(out)
    return raw


def parse_kv_lines(lines):
    pairs = []
    for lineno, line in enumerate(lines, start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected key=value, got {line.rstrip()!r}")
        key, _, value = stripped.partition("=")
        pairs.append((key.strip(), value.strip()))
    return pairs


def load_config(path=None, overrides=()) -> RunConfig:
    """Build a RunConfig from an optional key=value file plus override strings."""
    cfg = RunConfig()
    if path:
        for key, value in parse_kv_lines(Path(path).read_text().splitlines()):
            if key == "preset":
                apply_preset(cfg, value)
            else:
                cfg.set_value(key, value)
    for item in overrides:
        key, _, value = item.partition("=")
        cfg.set_value(key.strip(), value.strip())
    return cfg


# Reduced-width preset for commodity-CPU experiments; preserves all structural
# ratios (branch levels, bin stride, hourglass depth) of the full model.
DESK_PRESET = {
    "backbone.shallow_channels": "16,16,32",
    "backbone.deep_channels": "8,16,16,32",
    "backbone.out_channels": "32",
    "cost_volume.max_disparity": "32",
    "cost_volume.num_groups": "8",
    "cost_volume.concat_channels": "4",
    "cost_volume.attention_channels": "8",
    "head.base_channels": "16",
    "head.mid_channels": "32",
    "head.bottleneck_channels": "64",
    # full-image crops: overfitting benchmarks want memorization, and random
    # crop windows act as augmentation that slows it down
    "dataset.crop": "96,160",
    "train.batch_size": "2",
    "train.iterations": "2000",
    "train.lr": "0.003",
    "synth.height": "96",
    "synth.width": "160",
    "synth.num_shapes": "4",
    "synth.d_min": "6",
    "synth.d_max": "12",
}

PRESETS = {"full": {}, "desk": DESK_PRESET}


def apply_preset(cfg: RunConfig, name: str):
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}, expected one of {sorted(PRESETS)}")
    for key, value in PRESETS[name].items():
        cfg.set_value(key, value)
    return cfg
