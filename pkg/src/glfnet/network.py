"""Symmetric encoder-decoder built from GLF blocks.

Stage layout for an ``H x W`` input and widths ``w0..w4``:

=========  ==========  ==========  =======  ====================
stage      conv res    filter res  width    notes
=========  ==========  ==========  =======  ====================
enc0..3    H/2^k       H/2^(k+1)   w_k      pyramid level k added
bottleneck H/16        H/16        w4       no pooling
dec3..0    H/2^j       H/2^j       w_j      skip = enc j pre-pool
=========  ==========  ==========  =======  ====================

The main head reads dec0 (full resolution); auxiliary heads read dec1,
dec2 and dec3 (1/2, 1/4 and 1/8 resolution).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._tree import named_tensors
from .autodiff import Tensor, as_tensor, no_grad
from .blocks import WIRINGS, BlockParams, glf_block_decoder, glf_block_encoder, parse_wiring
from .errors import ConfigError, ShapeError
from .nn import Conv2dParams, avgpool2x2, conv2d
from .spectral import is_power_of_two

NUM_ENCODERS = 4
NUM_STAGES = 2 * NUM_ENCODERS + 1


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 1
    num_classes: int = 4
    input_size: tuple = (64, 64)
    stage_widths: tuple = (8, 16, 32, 64, 128)
    patch_size: int = 4
    wiring: object = "gfb+lfb"
    deep_supervision_weights: tuple = (0.5, 0.25, 0.125)
    multiscale_enabled: bool = True
    kernel_size: int = 3
    norm_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "input_size", _pair(self.input_size))
        object.__setattr__(self, "stage_widths", tuple(int(w) for w in self.stage_widths))
        object.__setattr__(self, "deep_supervision_weights", tuple(float(w) for w in self.deep_supervision_weights))
        if not isinstance(self.wiring, str):
            object.__setattr__(self, "wiring", tuple(self.wiring))
        self.validate()

    def validate(self):
        h, w = self.input_size
        if not (is_power_of_two(h) and is_power_of_two(w)):
            raise ConfigError(f"input_size must be powers of two, got {self.input_size}")
        if h % 32 or w % 32:
            raise ConfigError(f"input_size must be divisible by 32, got {self.input_size}")
        if self.in_channels < 1 or self.num_classes < 2:
            raise ConfigError("need in_channels >= 1 and num_classes >= 2")
        if len(self.stage_widths) != NUM_ENCODERS + 1 or min(self.stage_widths) < 1:
            raise ConfigError(f"stage_widths must be 5 positive ints, got {self.stage_widths}")
        if any(b < a for a, b in zip(self.stage_widths, self.stage_widths[1:])):
            raise ConfigError(f"stage_widths must be non-decreasing, got {self.stage_widths}")
        p = self.patch_size
        if not is_power_of_two(p) or p < 2:
            raise ConfigError(f"patch_size must be a power of two >= 2, got {p}")
        for name, (sh, sw) in self.filter_resolutions().items():
            if sh % p or sw % p:
                raise ConfigError(f"{name} filter resolution {(sh, sw)} not divisible by patch size {p}")
        if len(self.deep_supervision_weights) != 3 or min(self.deep_supervision_weights) < 0:
            raise ConfigError("deep_supervision_weights must be 3 non-negative floats")
        self.stage_wirings()
        if self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd")

    def stage_names(self):
        enc = [f"enc{k}" for k in range(NUM_ENCODERS)]
        dec = [f"dec{j}" for j in reversed(range(NUM_ENCODERS))]
        return enc + ["bottleneck"] + dec

    def stage_wirings(self):
        if isinstance(self.wiring, str):
            wirings = (self.wiring,) * NUM_STAGES
        else:
            wirings = tuple(self.wiring)
            if len(wirings) != NUM_STAGES:
                raise ConfigError(f"per-stage wiring needs {NUM_STAGES} entries, got {len(wirings)}")
        return tuple("+".join(parse_wiring(wr)) for wr in wirings)

    def filter_resolutions(self):
        h, w = self.input_size
        res = {f"enc{k}": (h >> (k + 1), w >> (k + 1)) for k in range(NUM_ENCODERS)}
        res["bottleneck"] = (h >> NUM_ENCODERS, w >> NUM_ENCODERS)
        for j in range(NUM_ENCODERS):
            res[f"dec{j}"] = (h >> j, w >> j)
        return res

    def stage_plan(self):
        """One dict per stage: name, c_in, width, conv_res, filter_res, pool, wiring."""
        ws = self.stage_widths
        h, w = self.input_size
        fres = self.filter_resolutions()
        wirings = dict(zip(self.stage_names(), self.stage_wirings()))
        plan = []
        for k in range(NUM_ENCODERS):
            c_in = self.in_channels if k == 0 else ws[k - 1]
            plan.append(dict(name=f"enc{k}", c_in=c_in, width=ws[k], conv_res=(h >> k, w >> k), pool=True))
        plan.append(
            dict(name="bottleneck", c_in=ws[3], width=ws[4], conv_res=fres["bottleneck"], pool=False)
        )
        for j in reversed(range(NUM_ENCODERS)):
            plan.append(dict(name=f"dec{j}", c_in=ws[j + 1] + ws[j], width=ws[j], conv_res=(h >> j, w >> j), pool=False))
        for row in plan:
            row["filter_res"] = fres[row["name"]]
            row["wiring"] = wirings[row["name"]]
        return plan

    def to_mapping(self):
        wiring = self.wiring if isinstance(self.wiring, str) else ",".join(self.wiring)
        return {
            "in_channels": str(self.in_channels),
            "num_classes": str(self.num_classes),
            "input_size": f"{self.input_size[0]},{self.input_size[1]}",
            "stage_widths": ",".join(map(str, self.stage_widths)),
            "patch_size": str(self.patch_size),
            "wiring": wiring,
            "deep_supervision_weights": ",".join(repr(w) for w in self.deep_supervision_weights),
            "multiscale_enabled": "true" if self.multiscale_enabled else "false",
            "kernel_size": str(self.kernel_size),
            "norm_eps": repr(self.norm_eps),
        }

    @classmethod
    def from_mapping(cls, mapping):
        """Build from ``key -> string`` pairs; unknown keys are ignored."""
        kw = {}
        conv = {
            "in_channels": int,
            "num_classes": int,
            "input_size": lambda s: _pair(_ints(s)),
            "stage_widths": _ints,
            "patch_size": int,
            "wiring": lambda s: s if "," not in s else tuple(x.strip() for x in s.split(",")),
            "deep_supervision_weights": lambda s: tuple(float(x) for x in s.split(",")),
            "multiscale_enabled": _bool,
            "kernel_size": int,
            "norm_eps": float,
        }
        for key, fn in conv.items():
            if key in mapping:
                try:
                    kw[key] = fn(str(mapping[key]).strip())
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key}: {mapping[key]!r}") from exc
        return cls(**kw)


def _ints(s):
    return tuple(int(x) for x in str(s).replace("x", ",").split(",") if x.strip())


def _pair(v):
    if isinstance(v, (int, np.integer)):
        return (int(v), int(v))
    v = tuple(int(x) for x in v)
    if len(v) == 1:
        return (v[0], v[0])
    if len(v) != 2:
        raise ConfigError(f"expected one or two sizes, got {v}")
    return v


def _bool(s):
    s = str(s).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


@dataclass(frozen=True)
class ModelParams:
    encoders: tuple
    bottleneck: BlockParams
    decoders: tuple  # coarse to fine: dec3, dec2, dec1, dec0
    multiscale: tuple
    head: Conv2dParams
    aux_heads: tuple  # at 1/2, 1/4, 1/8 resolution

    def named_tensors(self):
        return named_tensors(self)

    def parameter_count(self):
        return sum(t.size for t in self.named_tensors().values())

    def blocks(self):
        return tuple(self.encoders) + (self.bottleneck,) + tuple(self.decoders)


def build_model(cfg, seed=0):
    """Deterministically initialised parameters for ``cfg``."""
    if not isinstance(cfg, ModelConfig):
        raise ConfigError("build_model needs a ModelConfig")
    rng = np.random.default_rng(seed)
    k = cfg.kernel_size
    blocks = {}
    for row in cfg.stage_plan():
        blocks[row["name"]] = BlockParams.init(
            rng,
            row["c_in"],
            row["width"],
            row["filter_res"],
            cfg.patch_size,
            wiring=row["wiring"],
            pool=row["pool"],
            k=k,
        )
    ws = cfg.stage_widths
    multiscale = ()
    if cfg.multiscale_enabled:
        multiscale = tuple(Conv2dParams.init(rng, cfg.in_channels, ws[i], k) for i in range(NUM_ENCODERS))
    head = Conv2dParams.init(rng, ws[0], cfg.num_classes, 1)
    aux = tuple(Conv2dParams.init(rng, ws[j], cfg.num_classes, 1) for j in (1, 2, 3))
    return ModelParams(
        encoders=tuple(blocks[f"enc{i}"] for i in range(NUM_ENCODERS)),
        bottleneck=blocks["bottleneck"],
        decoders=tuple(blocks[f"dec{j}"] for j in reversed(range(NUM_ENCODERS))),
        multiscale=multiscale,
        head=head,
        aux_heads=aux,
    )


def multiscale_inputs(x):
    """Image pyramid at scales 1, 1/2, 1/4, 1/8 by repeated 2x2 averaging."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"expected [B, C, H, W], got {x.shape}")
    if x.shape[2] % 8 or x.shape[3] % 8:
        raise ShapeError(f"spatial dims {x.shape[2:]} must be divisible by 8")
    levels = [x]
    for _ in range(NUM_ENCODERS - 1):
        levels.append(avgpool2x2(levels[-1]))
    return levels


def forward(params, cfg, x):
    """Return ``(logits [B, K, H, W], [aux at 1/2, 1/4, 1/8])``."""
    x = as_tensor(x)
    expected = (cfg.in_channels,) + tuple(cfg.input_size)
    if x.ndim != 4 or tuple(x.shape[1:]) != expected:
        raise ShapeError(f"model expects [B, {expected[0]}, {expected[1]}, {expected[2]}], got {x.shape}")
    eps = cfg.norm_eps
    pyramid = multiscale_inputs(x) if params.multiscale else None
    h = x
    skips = []
    for k, bp in enumerate(params.encoders):
        inject = conv2d(pyramid[k], params.multiscale[k]) if pyramid is not None else None
        h, skip = glf_block_encoder(h, bp, inject=inject, eps=eps, return_skip=True)
        skips.append(skip)
    h = glf_block_encoder(h, params.bottleneck, eps=eps)
    feats = {}
    for bp, j in zip(params.decoders, reversed(range(NUM_ENCODERS))):
        h = glf_block_decoder(h, skips[j], bp, eps=eps)
        feats[j] = h
    logits = conv2d(feats[0], params.head)
    aux = [conv2d(feats[j], head) for j, head in zip((1, 2, 3), params.aux_heads)]
    return logits, aux


def predict_logits(params, cfg, images, batch_size=8):
    """Forward without recording gradients; returns an ndarray ``[N, K, H, W]``."""
    images = np.asarray(images, dtype=np.float64)
    out = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            logits, _ = forward(params, cfg, Tensor(images[start : start + batch_size]))
            out.append(logits.data)
    return np.concatenate(out, axis=0)


__all__ = [
    "ModelConfig",
    "ModelParams",
    "WIRINGS",
    "build_model",
    "forward",
    "multiscale_inputs",
    "predict_logits",
]
