"""Differentiable network primitives on ``[B, C, H, W]`` tensors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .autodiff import Tensor, as_tensor, concat, make_op, parameter
from .errors import ShapeError


@dataclass(frozen=True)
class Conv2dParams:
    """Weights of one 2D convolution.

    ``weight`` is ``[C_out, C_in, k, k]`` with ``k`` odd, ``bias`` is
    ``[C_out]``.  ``padding`` is ``"same"`` (zero padding that preserves
    H, W at stride 1) or ``"valid"``.
    """

    weight: Tensor
    bias: Tensor
    stride: int = 1
    dilation: int = 1
    padding: str = "same"

    def __post_init__(self):
        w = self.weight
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ShapeError(f"conv weight must be [C_out, C_in, k, k], got {w.shape}")
        if w.shape[2] % 2 == 0:
            raise ShapeError(f"kernel size must be odd, got {w.shape[2]}")
        if self.bias.shape != (w.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match C_out={w.shape[0]}")
        if self.stride < 1 or self.dilation < 1:
            raise ShapeError("stride and dilation must be >= 1")
        if self.padding not in ("same", "valid"):
            raise ShapeError(f"padding must be 'same' or 'valid', got {self.padding!r}")

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def kernel_size(self):
        return self.weight.shape[2]

    @property
    def extent(self):
        return self.dilation * (self.kernel_size - 1) + 1

    @classmethod
    def init(cls, rng, c_in, c_out, k=3, dilation=1, std=None):
        """He-normal weights, zero bias."""
        std = np.sqrt(2.0 / (c_in * k * k)) if std is None else std
        weight = rng.normal(0.0, std, size=(c_out, c_in, k, k))
        return cls(parameter(weight), parameter(np.zeros(c_out)), dilation=dilation)

    @classmethod
    def zeros(cls, c_in, c_out, k=3, dilation=1):
        return cls(parameter(np.zeros((c_out, c_in, k, k))), parameter(np.zeros(c_out)), dilation=dilation)


def _require_4d(x, name):
    if x.ndim != 4:
        raise ShapeError(f"{name} expects [B, C, H, W], got shape {x.shape}")


def conv2d(x, p):
    """2D cross-correlation via an im2col view and one batched matmul."""
    x = as_tensor(x)
    _require_4d(x, "conv2d")
    b, c, h, w = x.shape
    k, d, s = p.kernel_size, p.dilation, p.stride
    if c != p.in_channels:
        raise ShapeError(f"conv2d input has {c} channels, weight expects {p.in_channels}")
    pad = d * (k - 1) // 2 if p.padding == "same" else 0
    hp, wp = h + 2 * pad, w + 2 * pad
    if hp < p.extent or wp < p.extent:
        raise ShapeError(f"input {(h, w)} too small for kernel extent {p.extent}")
    ho = (hp - p.extent) // s + 1
    wo = (wp - p.extent) // s + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else np.ascontiguousarray(x.data)
    sb, sc, sh, sw = xp.strides
    view = as_strided(xp, (b, c, k, k, ho, wo), (sb, sc, d * sh, d * sw, s * sh, s * sw), writeable=False)
    cols = view.reshape(b, c * k * k, ho * wo)
    wmat = p.weight.data.reshape(p.out_channels, -1)
    out = np.matmul(wmat, cols) + p.bias.data[None, :, None]
    out = out.reshape(b, p.out_channels, ho, wo)

    def backward(g):
        g = g.reshape(b, p.out_channels, ho * wo)
        gw = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(p.weight.shape)
        gb = g.sum(axis=(0, 2))
        gx = None
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g).reshape(b, c, k, k, ho, wo)
            gxp = np.zeros((b, c, hp, wp))
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i * d : i * d + s * (ho - 1) + 1 : s, j * d : j * d + s * (wo - 1) + 1 : s] += gcols[
                        :, :, i, j
                    ]
            gx = gxp[:, :, pad : pad + h, pad : pad + w]
        return gx, gw, gb

    return make_op(out, (x, p.weight, p.bias), backward, "conv2d")


def maxpool2d(x, window=2):
    """Non-overlapping max pooling; ties send the gradient to the first index."""
    x = as_tensor(x)
    _require_4d(x, "maxpool2d")
    b, c, h, w = x.shape
    if h % window or w % window:
        raise ShapeError(f"spatial dims {(h, w)} not divisible by window {window}")
    hw, ww = h // window, w // window
    blocks = x.data.reshape(b, c, hw, window, ww, window).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, hw, ww, -1)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(blocks.shape)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(b, c, hw, ww, window, window).transpose(0, 1, 2, 4, 3, 5)
        return (gb.reshape(b, c, h, w),)

    return make_op(out, (x,), backward, "maxpool2d")


def avgpool2x2(x):
    """2x2 average pooling (used for the input pyramid and label downsampling)."""
    x = as_tensor(x)
    _require_4d(x, "avgpool2x2")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"spatial dims {(h, w)} must be even")
    out = x.data.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return make_op(out, (x,), backward, "avgpool2x2")


def layernorm(x, gamma, beta, eps=1e-5):
    """Normalise the channel vector at every (b, h, w), then scale and shift."""
    x = as_tensor(x)
    _require_4d(x, "layernorm")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must be [{c}], got {gamma.shape}, {beta.shape}")
    if eps <= 0:
        raise ShapeError("eps must be positive")
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + eps)
    xhat = centered * inv_std
    gview = gamma.data[None, :, None, None]
    out = xhat * gview + beta.data[None, :, None, None]

    def backward(g):
        gxhat = g * gview
        gx = inv_std * (
            gxhat - gxhat.mean(axis=1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return make_op(out, (x, gamma, beta), backward, "layernorm")


def upsample2x(x):
    """Nearest-neighbour x2 upsampling."""
    x = as_tensor(x)
    _require_4d(x, "upsample2x")
    b, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        return (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return make_op(out, (x,), backward, "upsample2x")


def concat_channels(xs):
    xs = [as_tensor(t) for t in xs]
    for t in xs:
        _require_4d(t, "concat_channels")
    ref = xs[0].shape
    for t in xs[1:]:
        if t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeError(f"cannot concat {t.shape} with {ref} along channels")
    return concat(xs, axis=1)


def softmax_channels(x):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (probs * (g - (g * probs).sum(axis=1, keepdims=True)),)

    return make_op(probs, (x,), backward, "softmax")


def log_softmax_channels(x):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return make_op(out, (x,), backward, "log_softmax")
