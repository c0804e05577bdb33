"""Analytic FLOP model for a :class:`~glfnet.network.ModelConfig`.

Counting convention (one image, batch size 1 unless given):

* convolution: ``2 * B * C_out * C_in * k**2 * H' * W'`` (a multiply-add is
  two FLOPs, bias ignored);
* spectral transforms: ``5 * N * log2(N)`` per channel for each forward and
  inverse real transform *pair* over ``N`` points; the local branch pays
  this once per ``P x P`` patch;
* spectral multiply: 6 real FLOPs per complex half-plane bin per channel.

Normalisation, activations, pooling and residual additions are not
counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .network import NUM_ENCODERS

KINDS = ("conv", "fft", "spectral_mul")


@dataclass(frozen=True)
class FlopRow:
    layer: str
    kind: str
    flops: int


@dataclass
class FlopReport:
    rows: list

    @property
    def by_kind(self):
        out = {k: 0 for k in KINDS}
        for r in self.rows:
            out[r.kind] += r.flops
        return out

    @property
    def total(self):
        return sum(r.flops for r in self.rows)

    @property
    def gflops(self):
        return self.total / 1e9

    def format_table(self):
        width = max(len(r.layer) for r in self.rows)
        lines = [f"{'layer':<{width}}  {'kind':<12}  {'flops':>14}"]
        for r in self.rows:
            lines.append(f"{r.layer:<{width}}  {r.kind:<12}  {r.flops:>14d}")
        for kind, value in self.by_kind.items():
            lines.append(f"{'total ' + kind:<{width}}  {'':<12}  {value:>14d}")
        lines.append(f"{'total':<{width}}  {'':<12}  {self.total:>14d}  ({self.gflops:.4f} GFLOPs)")
        return "\n".join(lines)


def conv_flops(c_in, c_out, k, h, w, batch=1):
    return 2 * batch * c_out * c_in * k * k * h * w


def fft_pair_flops(h, w):
    """Forward + inverse real transform over one ``h x w`` plane."""
    n = h * w
    return int(round(5 * n * math.log2(n))) if n > 1 else 0


def spectral_mul_flops(h, w):
    return 6 * h * (w // 2 + 1)


def count_flops(cfg, batch=1):
    rows = []
    k = cfg.kernel_size
    for row in cfg.stage_plan():
        name = row["name"]
        ch, cw = row["conv_res"]
        fh, fw = row["filter_res"]
        c_in, width = row["c_in"], row["width"]
        rows.append(FlopRow(f"{name}.conv1", "conv", conv_flops(c_in, width, k, ch, cw, batch)))
        rows.append(FlopRow(f"{name}.conv2", "conv", conv_flops(width, width, k, ch, cw, batch)))
        branches = row["wiring"].split("+")
        for i, kind in enumerate(branches):
            tag = f"{name}.branch{i}.{kind}"
            if kind == "gfb":
                fft = fft_pair_flops(fh, fw)
                mul = spectral_mul_flops(fh, fw)
            else:
                p = cfg.patch_size
                patches = (fh // p) * (fw // p)
                fft = patches * fft_pair_flops(p, p)
                mul = patches * spectral_mul_flops(p, p)
            rows.append(FlopRow(tag, "fft", batch * width * fft))
            rows.append(FlopRow(tag, "spectral_mul", batch * width * mul))
        rows.append(FlopRow(f"{name}.fuse", "conv", conv_flops(width * len(branches), width, 1, fh, fw, batch)))
        for d in (1, 2, 3):
            rows.append(FlopRow(f"{name}.widefocus.d{d}", "conv", conv_flops(width, width, k, fh, fw, batch)))
        rows.append(FlopRow(f"{name}.widefocus.merge", "conv", conv_flops(width, width, k, fh, fw, batch)))
    h, w = cfg.input_size
    ws = cfg.stage_widths
    if cfg.multiscale_enabled:
        for i in range(NUM_ENCODERS):
            rows.append(
                FlopRow(f"multiscale{i}", "conv", conv_flops(cfg.in_channels, ws[i], k, h >> i, w >> i, batch))
            )
    rows.append(FlopRow("head", "conv", conv_flops(ws[0], cfg.num_classes, 1, h, w, batch)))
    for j in (1, 2, 3):
        rows.append(FlopRow(f"aux_head{j}", "conv", conv_flops(ws[j], cfg.num_classes, 1, h >> j, w >> j, batch)))
    return FlopReport(rows)
