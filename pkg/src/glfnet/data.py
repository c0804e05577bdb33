"""Synthetic nested-ellipse segmentation data and the dataset directory layout.

Each sample has a ring (class 2) around a disc (class 3), a separate blob
(class 1) and background (class 0).  The image is the mask rendered with a
per-class intensity plus Gaussian noise (sigma 0.05), clipped to [0, 1].

Directory layout::

    header.txt          key = value (n, height, width, channels, num_classes, seed)
    images/NNNN.glft    f64 [C, H, W]
    masks/NNNN.glft     u8  [H, W]
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .io import format_kv, parse_kv, read_array, write_tensor, atomic_write
from .spectral import is_power_of_two

CLASS_INTENSITY = (0.1, 0.4, 0.65, 0.9)
NOISE_SIGMA = 0.05
MIN_REGION_PIXELS = 8
MIN_SIZE = 16


@dataclass
class SampleRecord:
    image: np.ndarray  # [C, H, W] float64 in [0, 1]
    mask: np.ndarray  # [H, W] int64 labels in [0, K)


@dataclass(frozen=True)
class Ellipse:
    cy: float
    cx: float
    ay: float
    ax: float
    theta: float

    def contains(self, yy, xx):
        c, s = np.cos(self.theta), np.sin(self.theta)
        dy, dx = yy - self.cy, xx - self.cx
        u = c * dx + s * dy
        v = -s * dx + c * dy
        return (u / self.ax) ** 2 + (v / self.ay) ** 2 <= 1.0

    @property
    def radius(self):
        return max(self.ay, self.ax)


def _check_size(size):
    h, w = (size, size) if np.isscalar(size) else tuple(size)
    if not (is_power_of_two(h) and is_power_of_two(w)) or min(h, w) < MIN_SIZE:
        raise ConfigError(f"size must be powers of two >= {MIN_SIZE}, got {(h, w)}")
    return int(h), int(w)


def _layout(rng, h, w):
    s = min(h, w)
    theta = rng.uniform(0.0, np.pi)
    ay, ax = rng.uniform(0.13, 0.2, size=2) * s
    ratio = rng.uniform(0.5, 0.65)
    r_out = max(ay, ax)
    cy = rng.uniform(r_out + 1, h - r_out - 1)
    cx = rng.uniform(r_out + 1, w - r_out - 1)
    outer = Ellipse(cy, cx, ay, ax, theta)
    inner = Ellipse(cy, cx, ay * ratio, ax * ratio, theta)
    by, bx = rng.uniform(0.08, 0.13, size=2) * s
    r_blob = max(by, bx)
    for _ in range(200):
        py = rng.uniform(r_blob + 1, h - r_blob - 1)
        px = rng.uniform(r_blob + 1, w - r_blob - 1)
        if np.hypot(py - cy, px - cx) > r_out + r_blob + 2:
            return outer, inner, Ellipse(py, px, by, bx, rng.uniform(0.0, np.pi))
    return None


def render_sample(rng, size, num_classes=4, channels=1):
    """Draw one sample; returns ``(SampleRecord, {"outer", "inner", "blob"})``."""
    h, w = _check_size(size)
    if not 2 <= num_classes <= 4:
        raise ConfigError(f"synthetic data supports 2..4 classes, got {num_classes}")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    while True:
        shapes = _layout(rng, h, w)
        if shapes is None:
            continue
        outer, inner, blob = shapes
        mask = np.zeros((h, w), dtype=np.int64)
        mask[outer.contains(yy, xx)] = 2
        mask[inner.contains(yy, xx)] = 3
        mask[blob.contains(yy, xx)] = 1
        counts = np.bincount(mask.ravel(), minlength=4)
        if counts.min() >= MIN_REGION_PIXELS:
            break
    mask = np.minimum(mask, num_classes - 1)
    image = np.empty((channels, h, w))
    for c in range(channels):
        table = np.asarray(CLASS_INTENSITY)
        if c > 0:
            table = table[rng.permutation(4)]
        image[c] = table[mask] + rng.normal(0.0, NOISE_SIGMA, size=(h, w))
    np.clip(image, 0.0, 1.0, out=image)
    return SampleRecord(image, mask), {"outer": outer, "inner": inner, "blob": blob}


def synthesize(n, size, num_classes=4, seed=0, channels=1):
    """``n`` samples drawn from one seeded generator (in memory)."""
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    return [render_sample(rng, size, num_classes, channels)[0] for _ in range(n)]


def gen_synthetic(out_dir, n, size, num_classes=4, seed=0, channels=1):
    """Write a dataset directory and return its path."""
    h, w = _check_size(size)
    samples = synthesize(n, (h, w), num_classes, seed, channels)
    header = {
        "format": "glfnet-dataset",
        "version": "1",
        "n": str(n),
        "height": str(h),
        "width": str(w),
        "channels": str(channels),
        "num_classes": str(num_classes),
        "seed": str(seed),
    }
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    for i, s in enumerate(samples):
        write_tensor(os.path.join(out_dir, "images", f"{i:04d}.glft"), s.image, "f64")
        write_tensor(os.path.join(out_dir, "masks", f"{i:04d}.glft"), s.mask, "u8")
    atomic_write(os.path.join(out_dir, "header.txt"), format_kv(header).encode("utf-8"))
    return out_dir


def read_header(data_dir):
    path = os.path.join(data_dir, "header.txt")
    if not os.path.exists(path):
        raise DataError(f"{data_dir} has no header.txt")
    with open(path, encoding="utf-8") as fh:
        raw = parse_kv(fh.read())
    try:
        return {k: int(raw[k]) for k in ("n", "height", "width", "channels", "num_classes")}
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed dataset header in {data_dir}: {exc}") from exc


def load_dataset(data_dir):
    """Load every sample, validating it against the header."""
    hdr = read_header(data_dir)
    samples = []
    for i in range(hdr["n"]):
        image = read_array(os.path.join(data_dir, "images", f"{i:04d}.glft")).astype(np.float64)
        mask = read_array(os.path.join(data_dir, "masks", f"{i:04d}.glft")).astype(np.int64)
        if image.shape != (hdr["channels"], hdr["height"], hdr["width"]):
            raise DataError(f"sample {i}: image shape {image.shape} disagrees with header")
        if mask.shape != (hdr["height"], hdr["width"]):
            raise DataError(f"sample {i}: mask shape {mask.shape} disagrees with header")
        if mask.min() < 0 or mask.max() >= hdr["num_classes"]:
            raise DataError(f"sample {i}: labels outside [0, {hdr['num_classes']})")
        samples.append(SampleRecord(image, mask))
    return hdr, samples


def split(samples, val_count):
    """Last ``val_count`` samples are held out."""
    if not 0 <= val_count < len(samples):
        raise DataError(f"cannot hold out {val_count} of {len(samples)} samples")
    cut = len(samples) - val_count
    return samples[:cut], samples[cut:]
