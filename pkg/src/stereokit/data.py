"""Dataset I/O and preprocessing: PFM read/write, 16-bit KITTI-style PNG
disparity decoding, a deterministic synthetic stereo generator with exact
ground truth, and crop/pad/standardize preparation of model inputs.

Directory conventions (one file per sample, shared stem):
    synthetic/sceneflow kind:  <root>/left/NNNN.png  right/NNNN.png  disp/NNNN.pfm
    kitti kind:                <root>/image_2/*.png  image_3/*.png  disp_occ_0/*.png
"""

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy.ndimage import gaussian_filter

from .backbone import ImageBatch, standardize


class PfmError(ValueError):
    """Malformed or truncated PFM file."""


@dataclass
class StereoSample:
    left: np.ndarray          # [3, H, W] float32 in [0, 1]
    right: np.ndarray         # [3, H, W] float32 in [0, 1]
    gt_disparity: np.ndarray  # [H, W] float32, left-view disparity
    valid: np.ndarray         # [H, W] bool


@dataclass
class DatasetSpec:
    root: str
    kind: str = "synthetic"     # synthetic | sceneflow | kitti
    split: str = "train"
    crop: tuple = (256, 512)

    def __post_init__(self):
        self.crop = tuple(int(c) for c in self.crop)
        if self.crop[0] % 32 or self.crop[1] % 32:
            raise ValueError(f"crop dims {self.crop} must be divisible by 32")


# --- PFM -------------------------------------------------------------------

def read_pfm(path):
    """Read a PFM file; returns (float32 array [H,W] or [H,W,3], scale).

    Rows are stored bottom-to-top; a negative scale marks little-endian data.
    """
    raw = Path(path).read_bytes()

    def next_line(offset):
        end = raw.find(b"\n", offset)
        if end < 0:
            raise PfmError(f"{path}: unterminated header line at byte {offset}")
        return raw[offset:end].decode("latin-1").strip(), end + 1

    header, offset = next_line(0)
    if header not in ("Pf", "PF"):
        raise PfmError(f"{path}: bad magic {header!r} at byte 0")
    channels = 3 if header == "PF" else 1
    dims, offset = next_line(offset)
    m = re.fullmatch(r"(\d+)\s+(\d+)", dims)
    if not m:
        raise PfmError(f"{path}: bad dimension line {dims!r} at byte {offset - len(dims) - 1}")
    width, height = int(m.group(1)), int(m.group(2))
    scale_line, offset = next_line(offset)
    try:
        scale = float(scale_line)
    except ValueError:
        raise PfmError(f"{path}: bad scale line {scale_line!r}") from None
    if scale == 0:
        raise PfmError(f"{path}: zero scale")
    count = width * height * channels
    payload = raw[offset:offset + 4 * count]
    if len(payload) != 4 * count:
        raise PfmError(
            f"{path}: truncated payload at byte {offset + len(payload)}, "
            f"expected {4 * count} data bytes"
        )
    endian = "<" if scale < 0 else ">"
    data = np.frombuffer(payload, dtype=endian + "f4").reshape(height, width, channels)
    data = np.flipud(data).astype(np.float32)
    if channels == 1:
        data = data[:, :, 0]
    return np.ascontiguousarray(data), scale


def write_pfm(path, image, scale=-1.0):
    """Write a float32 array as PFM (little-endian when scale < 0)."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        header = b"Pf"
        flat = image[:, :, None]
    elif image.ndim == 3 and image.shape[2] == 3:
        header = b"PF"
        flat = image
    else:
        raise PfmError(f"cannot write array of shape {image.shape} as PFM")
    endian = "<" if scale < 0 else ">"
    height, width = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        fh.write(f"{width} {height}\n".encode())
        fh.write(f"{scale}\n".encode())
        fh.write(np.flipud(flat).astype(endian + "f4").tobytes())


def read_pfm_disparity(path):
    """Read a single-channel PFM disparity map; rejects 3-channel files."""
    data, _ = read_pfm(path)
    if data.ndim != 2:
        raise PfmError(f"{path}: disparity must be single-channel (Pf), got 3-channel PF")
    return data


# --- KITTI PNG -------------------------------------------------------------

def read_kitti_disparity(path):
    """Decode a 16-bit PNG as disparity/256; raw 0 marks invalid pixels."""
    img = Image.open(path)
    if img.mode not in ("I", "I;16", "I;16B"):
        raise ValueError(f"{path}: expected 16-bit single-channel PNG, got mode {img.mode}")
    raw = np.asarray(img, dtype=np.uint16)
    disparity = raw.astype(np.float32) / 256.0
    return disparity, raw > 0


def write_kitti_disparity(path, disparity):
    raw = np.clip(np.round(np.asarray(disparity) * 256.0), 0, 65535).astype(np.uint16)
    Image.fromarray(raw).save(path)


# --- synthetic generator ----------------------------------------------------

def generate_synthetic_pair(seed, height, width, num_shapes=6, d_range=(4, 48)) -> StereoSample:
    """Random textured scene of fronto-parallel rectangles with exact ground truth.

    The right image is smoothed noise; the left image is an exact integer-pixel
    warp of it (left(x, y) = right(x - d(x, y), y)), so the photometric
    identity holds on every valid pixel.
    """
    if height % 32 or width % 32:
        raise ValueError(f"dims {height}x{width} must be divisible by 32")
    d_lo, d_hi = int(d_range[0]), int(d_range[1])
    if not 0 <= d_lo <= d_hi:
        raise ValueError(f"bad disparity range {d_range}")
    if d_hi >= width:
        raise ValueError(f"max disparity {d_hi} must be below image width {width}")
    rng = np.random.default_rng(seed)

    right = rng.random((height, width, 3), dtype=np.float32)
    for c in range(3):
        right[:, :, c] = gaussian_filter(right[:, :, c], sigma=1.5)
    right -= right.min()
    right /= max(right.max(), 1e-6)

    disparity = np.full((height, width), float(rng.integers(d_lo, d_lo + max((d_hi - d_lo) // 4, 1))),
                        dtype=np.float32)
    for _ in range(num_shapes):
        d = float(rng.integers(d_lo, d_hi + 1))
        h = int(rng.integers(height // 8, height // 2))
        w = int(rng.integers(width // 8, width // 2))
        top = int(rng.integers(0, height - h))
        left_edge = int(rng.integers(0, width - w))
        region = disparity[top:top + h, left_edge:left_edge + w]
        # nearer (larger disparity) surfaces win where rectangles overlap
        np.maximum(region, d, out=region)

    xs = np.arange(width)[None, :] - disparity.astype(np.int64)
    valid = xs >= 0
    left = rng.random((height, width, 3), dtype=np.float32)  # filler where invalid
    ys = np.arange(height)[:, None].repeat(width, axis=1)
    left[valid] = right[ys[valid], xs[valid]]

    to_chw = lambda img: np.ascontiguousarray(img.transpose(2, 0, 1))
    return StereoSample(to_chw(left), to_chw(right), disparity, valid)


# --- dataset listing / loading ----------------------------------------------

def write_synthetic_dataset(root, count, seed, height=96, width=160, num_shapes=6,
                            d_range=(4, 28)):
    """Materialize `count` generated samples under the left/right/disp layout."""
    root = Path(root)
    for sub in ("left", "right", "disp"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for i in range(count):
        sample = generate_synthetic_pair(seed + i, height, width, num_shapes, d_range)
        name = f"{i:04d}"
        _save_image(root / "left" / f"{name}.png", sample.left)
        _save_image(root / "right" / f"{name}.png", sample.right)
        gt = np.where(sample.valid, sample.gt_disparity, 0.0).astype(np.float32)
        write_pfm(root / "disp" / f"{name}.pfm", gt)
    return root


def _save_image(path, chw):
    arr = np.clip(np.round(chw.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def _load_image(path):
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def list_samples(spec: DatasetSpec):
    """Sorted (left, right, disparity) path triples for the dataset layout."""
    root = Path(spec.root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    if spec.kind == "kitti":
        lefts = sorted((root / "image_2").glob("*.png"))
        triples = [(p, root / "image_3" / p.name, root / "disp_occ_0" / p.name) for p in lefts]
    elif spec.kind in ("synthetic", "sceneflow"):
        lefts = sorted((root / "left").glob("*.png"))
        triples = [(p, root / "right" / p.name, root / "disp" / (p.stem + ".pfm")) for p in lefts]
    else:
        raise ValueError(f"unknown dataset kind {spec.kind!r}")
    if not triples:
        raise FileNotFoundError(f"no samples found under {root} for kind {spec.kind!r}")
    return triples


def load_sample(triple, kind) -> StereoSample:
    left_path, right_path, disp_path = triple
    left = _load_image(left_path)
    right = _load_image(right_path)
    if kind == "kitti":
        gt, valid = read_kitti_disparity(disp_path)
    else:
        gt = read_pfm_disparity(disp_path)
        valid = gt > 0
    return StereoSample(left, right, gt.astype(np.float32), valid)


# --- preprocessing -----------------------------------------------------------

def pad_to_multiple(height, width, multiple=32):
    pad_h = (-height) % multiple
    pad_w = (-width) % multiple
    return pad_h, pad_w


def preprocess(sample: StereoSample, spec: DatasetSpec, training: bool, rng=None):
    """Crop (train) or pad (eval) a sample and standardize the images.

    Returns a dict with `left`/`right` (standardized [1,3,H,W] tensors), `gt`,
    `valid`, and for eval the `(pad_top, pad_left)` offsets needed to unpad.
    """
    _, h, w = sample.left.shape
    if training:
        ch, cw = spec.crop
        if h < ch or w < cw:
            raise ValueError(f"sample {h}x{w} smaller than crop {ch}x{cw}")
        rng = rng or np.random.default_rng()
        top = int(rng.integers(0, h - ch + 1))
        left_edge = int(rng.integers(0, w - cw + 1))
        window = (slice(top, top + ch), slice(left_edge, left_edge + cw))
        left = sample.left[:, window[0], window[1]]
        right = sample.right[:, window[0], window[1]]
        gt = sample.gt_disparity[window]
        valid = sample.valid[window]
        pads = (0, 0)
    else:
        pad_h, pad_w = pad_to_multiple(h, w)
        # image anchored bottom-right: zeros added on top and left
        left = np.pad(sample.left, ((0, 0), (pad_h, 0), (pad_w, 0)))
        right = np.pad(sample.right, ((0, 0), (pad_h, 0), (pad_w, 0)))
        gt = sample.gt_disparity
        valid = sample.valid
        pads = (pad_h, pad_w)

    to_batch = lambda img: standardize(torch.from_numpy(img[None]).float())
    return {
        "left": ImageBatch(to_batch(left), h, w),
        "right": ImageBatch(to_batch(right), h, w),
        "gt": torch.from_numpy(np.ascontiguousarray(gt)).float(),
        "valid": torch.from_numpy(np.ascontiguousarray(valid)),
        "pads": pads,
    }


def unpad_prediction(pred: torch.Tensor, pads):
    """Invert eval-time padding; metrics apply to the unpadded region only."""
    pad_h, pad_w = pads
    return pred[..., pad_h:, pad_w:]
