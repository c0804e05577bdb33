"""Radix-2 real 2D FFT, its inverse and complex spectral multiplication.

Conventions: the forward transform is unnormalised, the inverse carries the
``1/(H*W)`` factor, and spectra of real inputs keep only the half plane
``[..., H, W//2 + 1]`` along the width axis.

A :class:`Spectrum` stores real and imaginary parts packed into one real
tensor of shape ``[2, ..., H, W//2 + 1]`` so every transform is an ordinary
single-output node on the gradient tape.
"""

from __future__ import annotations

import contextlib
import functools
import threading
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, getitem, make_op, stack
from .errors import ShapeError

_counter = threading.local()


def is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


@functools.lru_cache(maxsize=None)
def _bit_reverse(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@functools.lru_cache(maxsize=None)
def _twiddles(m, sign):
    k = np.arange(m // 2)
    return np.exp(sign * 2j * np.pi * k / m)


@contextlib.contextmanager
def count_fft_ops():
    """Tally real floating-point operations done by butterflies in the block.

    Yields a one-element list whose entry is updated in place.  Each radix-2
    butterfly is one complex multiply plus two complex adds (10 real flops).
    """
    tally = [0]
    previous = getattr(_counter, "tally", None)
    _counter.tally = tally
    try:
        yield tally
    finally:
        _counter.tally = previous


def fft(x, axis=-1, inverse=False):
    """Unnormalised iterative Cooley-Tukey transform along ``axis``."""
    x = np.moveaxis(np.asarray(x, dtype=np.complex128), axis, -1)
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise ShapeError(f"FFT length must be a power of two, got {n}")
    lead = x.shape[:-1]
    y = x[..., _bit_reverse(n)]
    sign = 1.0 if inverse else -1.0
    m = 2
    while m <= n:
        half = m // 2
        blocks = y.reshape(lead + (n // m, m))
        even = blocks[..., :half]
        odd = blocks[..., half:] * _twiddles(m, sign)
        y = np.concatenate([even + odd, even - odd], axis=-1).reshape(lead + (n,))
        m *= 2
    tally = getattr(_counter, "tally", None)
    if tally is not None and n > 1:
        rows = int(np.prod(lead)) if lead else 1
        tally[0] += rows * 10 * (n // 2) * (n.bit_length() - 1)
    return np.moveaxis(y, -1, axis)


def _check_dims(h, w):
    if not (is_power_of_two(h) and is_power_of_two(w)) or w < 2:
        raise ShapeError(f"spatial dims must be powers of two with W >= 2, got {(h, w)}")


def rfft2_array(x):
    """Half-plane spectrum of a real ndarray over its last two axes."""
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-2:]
    _check_dims(h, w)
    rows = fft(x, axis=-1)[..., : w // 2 + 1]
    return fft(rows, axis=-2)


def irfft2_array(z, width):
    """Real inverse of a half-plane spectrum; ``width`` is the full W."""
    z = np.asarray(z, dtype=np.complex128)
    h, wh = z.shape[-2:]
    _check_dims(h, width)
    if wh != width // 2 + 1:
        raise ShapeError(f"half-plane width {wh} does not match W={width}")
    cols = fft(z, axis=-2, inverse=True) / h
    full = np.empty(cols.shape[:-1] + (width,), dtype=np.complex128)
    full[..., :wh] = cols
    full[..., 0] = cols[..., 0].real
    full[..., width // 2] = cols[..., width // 2].real
    full[..., wh:] = np.conj(cols[..., 1 : width // 2][..., ::-1])
    return fft(full, axis=-1, inverse=True).real / width


def _fold_weights(width):
    """Multiplicity of each half-plane column in the full spectrum."""
    c = np.full(width // 2 + 1, 2.0)
    c[0] = 1.0
    c[width // 2] = 1.0
    return c


def _pack(z):
    return np.stack([z.real, z.imag])


def _unpack(p):
    return p[0] + 1j * p[1]


@dataclass(frozen=True)
class Spectrum:
    """Half-plane complex spectrum of a real signal of size ``shape_spatial``."""

    packed: Tensor
    shape_spatial: tuple

    def __post_init__(self):
        h, w = self.shape_spatial
        _check_dims(h, w)
        if self.packed.shape[0] != 2 or self.packed.shape[-2:] != (h, w // 2 + 1):
            raise ShapeError(
                f"packed spectrum shape {self.packed.shape} inconsistent with spatial {self.shape_spatial}"
            )

    @classmethod
    def from_parts(cls, real, imag, shape_spatial):
        real, imag = as_tensor(real), as_tensor(imag)
        if real.shape != imag.shape:
            raise ShapeError(f"real/imag shapes differ: {real.shape} vs {imag.shape}")
        return cls(stack([real, imag]), tuple(shape_spatial))

    @property
    def coeffs_real(self):
        return getitem(self.packed, 0)

    @property
    def coeffs_imag(self):
        return getitem(self.packed, 1)

    @property
    def coeff_shape(self):
        return self.packed.shape[1:]

    def to_complex(self):
        return _unpack(self.packed.data)


def rfft2(x):
    """Forward real 2D FFT of ``x`` over its last two axes."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"rfft2 needs at least 2 dims, got shape {x.shape}")
    h, w = x.shape[-2:]
    _check_dims(h, w)
    packed = _pack(rfft2_array(x.data))
    weights = _fold_weights(w)

    def backward(g):
        return (h * w * irfft2_array(_unpack(g) / weights, w),)

    return Spectrum(make_op(packed, (x,), backward, "rfft2"), (h, w))


def irfft2(s):
    """Inverse real 2D FFT; ``irfft2(rfft2(x)) == x``."""
    if not isinstance(s, Spectrum):
        raise ShapeError("irfft2 expects a Spectrum")
    h, w = s.shape_spatial
    weights = _fold_weights(w)
    out = irfft2_array(s.to_complex(), w)

    def backward(g):
        return (_pack(weights * rfft2_array(g) / (h * w)),)

    return make_op(out, (s.packed,), backward, "irfft2")


def _kernel_view(coeff_shape, kshape):
    """Shape under which a kernel broadcasts against spectrum coefficients."""
    if kshape == coeff_shape:
        return kshape
    nd = len(coeff_shape)
    if kshape == coeff_shape[-2:]:
        return (1,) * (nd - 2) + kshape
    if len(kshape) == 3 and nd >= 4 and kshape[0] == coeff_shape[1] and kshape[1:] == coeff_shape[-2:]:
        # per-channel kernel: channel axis 1, any grid axes in between broadcast
        return (1, kshape[0]) + (1,) * (nd - 4) + kshape[1:]
    if len(kshape) == nd - 1 and kshape == coeff_shape[1:]:
        return (1,) + kshape
    raise ShapeError(f"kernel shape {kshape} does not broadcast against spectrum {coeff_shape}")


def spectral_multiply(s, k_real, k_imag):
    """Complex elementwise product of a spectrum with a learnable kernel."""
    k_real, k_imag = as_tensor(k_real), as_tensor(k_imag)
    if k_real.shape != k_imag.shape:
        raise ShapeError(f"kernel real/imag shapes differ: {k_real.shape} vs {k_imag.shape}")
    kshape = k_real.shape
    view = _kernel_view(s.coeff_shape, kshape)
    kpacked = stack([k_real, k_imag])
    sz = s.to_complex()
    kz = _unpack(kpacked.data).reshape(view)
    out = _pack(sz * kz)
    axes = tuple(i for i, (a, b) in enumerate(zip(view, s.coeff_shape)) if a == 1 and b != 1)

    def backward(g):
        gz = _unpack(g)
        gs = gz * np.conj(kz)
        gk = (gz * np.conj(sz)).sum(axis=axes, keepdims=True).reshape(kshape)
        return _pack(gs), _pack(gk)

    packed = make_op(out, (s.packed, kpacked), backward, "spectral_multiply")
    return Spectrum(packed, s.shape_spatial)


def parseval_energy(x):
    """``(sum x**2, sum |X|**2 / (H*W))`` with folded bins counted twice."""
    x = as_tensor(x).data
    h, w = x.shape[-2:]
    z = rfft2_array(x)
    spectral = float((_fold_weights(w) * np.abs(z) ** 2).sum() / (h * w))
    return float((x * x).sum()), spectral
