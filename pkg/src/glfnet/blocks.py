"""Global/local spectral filter branches and the blocks built from them.

Block layout (encoder)::

    layernorm -> conv -> GELU -> conv -> GELU [+ pyramid injection]
      -> maxpool(2) -> filter module -> Wide-Focus

The filter module runs one or two spectral branches on the pooled tensor,
concatenates them (first branch first), fuses with a 1x1 conv and adds the
pooled tensor back.  Decoder blocks replace the leading pooling with a x2
upsample and a concatenation with the mirrored encoder skip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import gelu, parameter, reshape, transpose
from .errors import ConfigError, ShapeError
from .nn import Conv2dParams, concat_channels, conv2d, layernorm, maxpool2d, upsample2x
from .spectral import irfft2, is_power_of_two, rfft2, spectral_multiply

WIRINGS = ("gfb+lfb", "gfb+gfb", "lfb+lfb", "gfb", "lfb")
FILTER_INIT_STD = 0.02
WIDE_FOCUS_DILATIONS = (1, 2, 3)


def parse_wiring(wiring):
    """Normalise a wiring name to a tuple of branch kinds.

    >>> parse_wiring("GFB+LFB")
    ('gfb', 'lfb')
    >>> parse_wiring("LFB-only")
    ('lfb',)
    """
    name = str(wiring).strip().lower().replace(" ", "")
    if name.endswith("-only"):
        name = name[: -len("-only")]
    if name not in WIRINGS:
        raise ConfigError(f"unknown wiring {wiring!r}; expected one of {WIRINGS}")
    return tuple(name.split("+"))


@dataclass(frozen=True)
class GlobalFilterParams:
    """Spectral kernel ``[C, H, W//2 + 1]`` bound to one feature resolution."""

    k_real: object
    k_imag: object

    @property
    def channels(self):
        return self.k_real.shape[0]

    @property
    def resolution(self):
        _, h, wh = self.k_real.shape
        return h, 2 * (wh - 1)

    @classmethod
    def init(cls, rng, channels, h, w, std=FILTER_INIT_STD):
        shape = (channels, h, w // 2 + 1)
        return cls(parameter(rng.normal(0.0, std, shape)), parameter(rng.normal(0.0, std, shape)))

    @classmethod
    def identity(cls, channels, h, w):
        shape = (channels, h, w // 2 + 1)
        return cls(parameter(np.ones(shape)), parameter(np.zeros(shape)))


@dataclass(frozen=True)
class LocalFilterParams:
    """One spectral kernel ``[C, P, P//2 + 1]`` shared by every P x P patch."""

    k_real: object
    k_imag: object

    @property
    def channels(self):
        return self.k_real.shape[0]

    @property
    def patch_size(self):
        return self.k_real.shape[1]

    @classmethod
    def init(cls, rng, channels, patch, std=FILTER_INIT_STD):
        shape = (channels, patch, patch // 2 + 1)
        return cls(parameter(rng.normal(0.0, std, shape)), parameter(rng.normal(0.0, std, shape)))

    @classmethod
    def identity(cls, channels, patch):
        shape = (channels, patch, patch // 2 + 1)
        return cls(parameter(np.ones(shape)), parameter(np.zeros(shape)))


@dataclass(frozen=True)
class WideFocusParams:
    branches: tuple
    merge: Conv2dParams

    @classmethod
    def init(cls, rng, channels, k=3):
        branches = tuple(Conv2dParams.init(rng, channels, channels, k, dilation=d) for d in WIDE_FOCUS_DILATIONS)
        return cls(branches, Conv2dParams.init(rng, channels, channels, k))


@dataclass(frozen=True)
class BlockParams:
    """Everything one encoder, bottleneck or decoder block owns.

    ``branches`` holds one filter-params object per wiring entry, in order.
    """

    norm_gamma: object
    norm_beta: object
    conv1: Conv2dParams
    conv2: Conv2dParams
    branches: tuple
    fuse_conv: Conv2dParams
    widefocus: WideFocusParams
    wiring: str = "gfb+lfb"
    pool: bool = True

    def __post_init__(self):
        kinds = parse_wiring(self.wiring)
        if len(kinds) != len(self.branches):
            raise ConfigError(f"wiring {self.wiring!r} needs {len(kinds)} branches, got {len(self.branches)}")
        width = self.conv2.out_channels
        for kind, br in zip(kinds, self.branches):
            expected = GlobalFilterParams if kind == "gfb" else LocalFilterParams
            if not isinstance(br, expected):
                raise ConfigError(f"branch for {kind!r} must be {expected.__name__}")
            if br.channels != width:
                raise ConfigError(f"{kind} filter has {br.channels} channels, block width is {width}")
        if self.fuse_conv.in_channels != width * len(self.branches) or self.fuse_conv.out_channels != width:
            raise ConfigError(
                f"fuse conv must map {width * len(self.branches)} -> {width} channels, "
                f"got {self.fuse_conv.in_channels} -> {self.fuse_conv.out_channels}"
            )

    @property
    def width(self):
        return self.conv2.out_channels

    @classmethod
    def init(cls, rng, c_in, width, filter_res, patch_size, wiring="gfb+lfb", pool=True, k=3):
        """Random block for ``c_in`` input channels whose filters run at ``filter_res``."""
        h, w = filter_res
        branches = []
        for kind in parse_wiring(wiring):
            if kind == "gfb":
                branches.append(GlobalFilterParams.init(rng, width, h, w))
            else:
                branches.append(LocalFilterParams.init(rng, width, patch_size))
        return cls(
            norm_gamma=parameter(np.ones(c_in)),
            norm_beta=parameter(np.zeros(c_in)),
            conv1=Conv2dParams.init(rng, c_in, width, k),
            conv2=Conv2dParams.init(rng, width, width, k),
            branches=tuple(branches),
            fuse_conv=Conv2dParams.init(rng, width * len(branches), width, 1),
            widefocus=WideFocusParams.init(rng, width, k),
            wiring="+".join(parse_wiring(wiring)),
            pool=pool,
        )


def global_filter_branch(x, p):
    """FFT over the whole map, multiply by the learnable kernel, invert."""
    if x.ndim != 4:
        raise ShapeError(f"expected [B, C, H, W], got {x.shape}")
    if tuple(x.shape[2:]) != p.resolution:
        raise ConfigError(f"global filter is bound to {p.resolution}, input is {tuple(x.shape[2:])}")
    return irfft2(spectral_multiply(rfft2(x), p.k_real, p.k_imag))


def patchify(x, patch):
    """``[B, C, H, W] -> [B, C, H/P, W/P, P, P]`` non-overlapping tiles."""
    b, c, h, w = x.shape
    if h % patch or w % patch:
        raise ShapeError(f"spatial dims {(h, w)} not divisible by patch size {patch}")
    tiles = reshape(x, (b, c, h // patch, patch, w // patch, patch))
    return transpose(tiles, (0, 1, 2, 4, 3, 5))


def unpatchify(tiles):
    b, c, nh, nw, p, q = tiles.shape
    return reshape(transpose(tiles, (0, 1, 2, 4, 3, 5)), (b, c, nh * p, nw * q))


def local_filter_branch(x, p):
    """The global-filter recipe applied independently inside each patch."""
    if x.ndim != 4:
        raise ShapeError(f"expected [B, C, H, W], got {x.shape}")
    patch = p.patch_size
    if not is_power_of_two(patch) or patch < 2:
        raise ConfigError(f"patch size must be a power of two >= 2, got {patch}")
    tiles = patchify(x, patch)
    filtered = irfft2(spectral_multiply(rfft2(tiles), p.k_real, p.k_imag))
    return unpatchify(filtered)


def _branch(x, params):
    if isinstance(params, GlobalFilterParams):
        return global_filter_branch(x, params)
    return local_filter_branch(x, params)


def glf_module(x, bp, wiring=None):
    """``x + fuse_conv(concat(branch(x) for branch in wiring))``."""
    if wiring is not None and parse_wiring(wiring) != parse_wiring(bp.wiring):
        raise ConfigError(f"block was built for wiring {bp.wiring!r}, asked for {wiring!r}")
    if x.shape[1] != bp.width:
        raise ShapeError(f"filter module expects {bp.width} channels, got {x.shape[1]}")
    outs = [_branch(x, br) for br in bp.branches]
    mixed = outs[0] if len(outs) == 1 else concat_channels(outs)
    return x + conv2d(mixed, bp.fuse_conv)


def wide_focus(x, wf):
    """Parallel dilated 3x3 convs (GELU each), summed, merged, plus residual."""
    total = None
    for conv in wf.branches:
        y = gelu(conv2d(x, conv))
        total = y if total is None else total + y
    return x + conv2d(total, wf.merge)


def _conv_stem(x, bp, eps):
    h = layernorm(x, bp.norm_gamma, bp.norm_beta, eps)
    h = gelu(conv2d(h, bp.conv1))
    return gelu(conv2d(h, bp.conv2))


def glf_block_encoder(x, bp, inject=None, eps=1e-5, return_skip=False):
    """Encoder (or, with ``bp.pool`` false, bottleneck) block.

    ``inject`` is added to the stem output before pooling; that pre-pool
    tensor is the skip handed to the mirrored decoder stage.
    """
    if x.shape[1] != bp.conv1.in_channels:
        raise ShapeError(f"block expects {bp.conv1.in_channels} input channels, got {x.shape[1]}")
    h = _conv_stem(x, bp, eps)
    if inject is not None:
        h = h + inject
    skip = h
    if bp.pool:
        h = maxpool2d(h, 2)
    h = wide_focus(glf_module(h, bp), bp.widefocus)
    return (h, skip) if return_skip else h


def glf_block_decoder(x, skip, bp, eps=1e-5):
    """Upsample ``x``, join the encoder skip, then run the block body."""
    up = upsample2x(x)
    if skip.shape[0] != up.shape[0] or skip.shape[2:] != up.shape[2:]:
        raise ShapeError(f"skip {skip.shape} does not match upsampled input {up.shape}")
    cat = concat_channels([up, skip])
    if cat.shape[1] != bp.conv1.in_channels:
        raise ShapeError(f"decoder expects {bp.conv1.in_channels} channels after concat, got {cat.shape[1]}")
    h = _conv_stem(cat, bp, eps)
    return wide_focus(glf_module(h, bp), bp.widefocus)
