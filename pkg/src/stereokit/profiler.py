"""Analytic parameter/MAC accounting over the model's layer graph, and the
warm-up/measure inference timing protocol.

Conventions: normalization, activation, pooling and interpolation layers count
as 0 MACs.  A transposed convolution is counted by its exact multiply count,
i.e. anchored on its input grid (each input element contributes
Cin*Cout*prod(kernel)/groups multiplies).
"""

import time
from dataclasses import dataclass, field
from math import prod

import torch
import torch.nn as nn


@dataclass
class LayerSpec:
    name: str
    kind: str                 # conv2d | conv3d | transpose2d | transpose3d | norm | ...
    in_channels: int = 0
    out_channels: int = 0
    kernel: tuple = ()
    stride: tuple = ()
    groups: int = 1
    bias: bool = False
    in_spatial: tuple = ()
    out_spatial: tuple = ()

    def param_count(self) -> int:
        if self.kind in ("conv2d", "conv3d", "transpose2d", "transpose3d"):
            n = (self.in_channels // self.groups) * self.out_channels * prod(self.kernel)
            return n + (self.out_channels if self.bias else 0)
        if self.kind == "norm":
            return 2 * self.out_channels  # scale + shift
        if self.kind == "linear":
            return self.in_channels * self.out_channels + (self.out_channels if self.bias else 0)
        return 0

    def mac_count(self) -> int:
        if self.kind in ("conv2d", "conv3d"):
            if not self.out_spatial:
                raise ValueError(f"{self.name}: unresolved output shape")
            per_pos = (self.in_channels // self.groups) * self.out_channels * prod(self.kernel)
            return per_pos * prod(self.out_spatial)
        if self.kind in ("transpose2d", "transpose3d"):
            if not self.in_spatial:
                raise ValueError(f"{self.name}: unresolved input shape")
            per_pos = (self.in_channels // self.groups) * self.out_channels * prod(self.kernel)
            return per_pos * prod(self.in_spatial)
        if self.kind == "linear":
            return self.in_channels * self.out_channels
        return 0  # norm, activation, pool, upsample


@dataclass
class ProfileReport:
    layers: list               # inference-path invocations (MAC accounting)
    input_resolution: tuple
    param_layers: list = None  # full layer set (train path); defaults to `layers`
    batch_size: int = 1

    def __post_init__(self):
        if self.param_layers is None:
            self.param_layers = self.layers

    @property
    def total_params(self) -> int:
        # weight-shared layers appear once per invocation in the trace but
        # contribute their parameters only once
        seen = {}
        for l in self.param_layers:
            seen.setdefault(l.name, l)
        return sum(l.param_count() for l in seen.values())

    @property
    def total_macs(self) -> int:
        return sum(l.mac_count() for l in self.layers)

    @property
    def params_m(self) -> float:
        return self.total_params / 1e6

    @property
    def gmacs(self) -> float:
        return self.total_macs / 1e9

    def to_text_table(self) -> str:
        lines = [f"{'layer':<60s} {'kind':<12s} {'params':>12s} {'MACs':>16s}"]
        for l in self.layers:
            lines.append(f"{l.name:<60s} {l.kind:<12s} {l.param_count():>12d} {l.mac_count():>16d}")
        h, w = self.input_resolution
        lines.append(
            f"total @ {h}x{w}: {self.params_m:.2f}M params, {self.gmacs:.2f} GMACs"
        )
        return "\n".join(lines)

    def to_records(self) -> str:
        h, w = self.input_resolution
        return "\n".join([
            f"input_resolution={h}x{w}",
            f"params={self.total_params}",
            f"params_m={self.params_m:.4f}",
            f"macs={self.total_macs}",
            f"gmacs={self.gmacs:.4f}",
        ])


_KINDS = {
    nn.Conv2d: "conv2d",
    nn.Conv3d: "conv3d",
    nn.ConvTranspose2d: "transpose2d",
    nn.ConvTranspose3d: "transpose3d",
    nn.Linear: "linear",
    nn.BatchNorm2d: "norm",
    nn.BatchNorm3d: "norm",
}


def build_layer_graph(model: nn.Module, run_forward) -> list:
    """Trace a forward pass and return per-layer specs with resolved shapes.

    `run_forward` is a callable invoking the model once; shapes are captured
    with forward hooks on leaf modules.
    """
    specs = []
    handles = []

    def make_hook(name, module, kind):
        def hook(mod, inputs, output):
            spec = LayerSpec(
                name=name,
                kind=kind,
                in_spatial=tuple(inputs[0].shape[2:]),
                out_spatial=tuple(output.shape[2:]),
            )
            if kind == "norm":
                spec.out_channels = module.num_features
            elif kind == "linear":
                spec.in_channels = module.in_features
                spec.out_channels = module.out_features
                spec.bias = module.bias is not None
            else:
                spec.in_channels = module.in_channels
                spec.out_channels = module.out_channels
                spec.kernel = tuple(module.kernel_size)
                spec.stride = tuple(module.stride)
                spec.groups = module.groups
                spec.bias = module.bias is not None
            specs.append(spec)
        return hook

    for name, module in model.named_modules():
        kind = _KINDS.get(type(module))
        if kind is not None:
            handles.append(module.register_forward_hook(make_hook(name, module, kind)))
    try:
        was_training = model.training
        model.eval()
        with torch.no_grad():
            run_forward()
        model.train(was_training)
    finally:
        for h in handles:
            h.remove()
    return specs


def count_parameters(model: nn.Module) -> int:
    """Exact count of learnable scalars in the live model."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def count_macs(layers, batch_size: int = 1) -> float:
    """Total GMACs over a resolved layer graph."""
    return batch_size * sum(l.mac_count() for l in layers) / 1e9


@dataclass
class BenchmarkResult:
    run_means_ms: list
    run_stds_ms: list
    warmup_images: int
    timed_images: int

    @property
    def overall_ms(self) -> float:
        return sum(self.run_means_ms) / len(self.run_means_ms)


def benchmark_inference(step_fn, k=3, warmup=20, timed=400, sync_fn=None) -> BenchmarkResult:
    """Warm-up/measure timing protocol.

    Per run: `warmup` untimed calls of `step_fn`, then `timed` timed calls
    recording mean and std; the protocol repeats k times and the headline
    number is the average of the k run means.  `sync_fn` (e.g. a device
    synchronize) runs inside every timed interval.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    run_means, run_stds = [], []
    for _ in range(k):
        for _ in range(warmup):
            step_fn()
            if sync_fn:
                sync_fn()
        samples = []
        for _ in range(timed):
            start = time.perf_counter()
            step_fn()
            if sync_fn:
                sync_fn()
            samples.append((time.perf_counter() - start) * 1000.0)
        mean = sum(samples) / len(samples)
        var = sum((s - mean) ** 2 for s in samples) / len(samples)
        run_means.append(mean)
        run_stds.append(var ** 0.5)
    return BenchmarkResult(run_means, run_stds, warmup, timed)
