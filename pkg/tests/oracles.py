"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here imports the package under test.
"""

import itertools

import mpmath
import numpy as np


def naive_dft2(x):
    """Full 2D DFT by the defining double sum (forward, unnormalised)."""
    x = np.asarray(x, dtype=np.complex128)
    h, w = x.shape
    out = np.zeros((h, w), dtype=np.complex128)
    for u in range(h):
        for v in range(w):
            acc = 0j
            for m in range(h):
                for n in range(w):
                    acc += x[m, n] * np.exp(-2j * np.pi * (u * m / h + v * n / w))
            out[u, v] = acc
    return out


def dft_matrix(n, inverse=False):
    k = np.arange(n)
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 2j * np.pi * np.outer(k, k) / n)


def matrix_dft2(x):
    """Same transform as :func:`naive_dft2` via explicit DFT matrices (batched)."""
    x = np.asarray(x, dtype=np.complex128)
    h, w = x.shape[-2:]
    return dft_matrix(h) @ x @ dft_matrix(w).T


def naive_idft2(z):
    z = np.asarray(z, dtype=np.complex128)
    h, w = z.shape
    out = np.zeros((h, w), dtype=np.complex128)
    for m in range(h):
        for n in range(w):
            acc = 0j
            for u in range(h):
                for v in range(w):
                    acc += z[u, v] * np.exp(2j * np.pi * (u * m / h + v * n / w))
            out[m, n] = acc / (h * w)
    return out


def hermitian_full(half, width):
    """Rebuild the full spectrum from half-plane coefficients of a real signal."""
    h = half.shape[0]
    full = np.zeros((h, width), dtype=np.complex128)
    full[:, : width // 2 + 1] = half
    for u in range(h):
        for v in range(width // 2 + 1, width):
            full[u, v] = np.conj(half[(-u) % h, width - v])
    return full


def circular_conv2d(a, b):
    """Direct wrap-around convolution sum_{m,n} a[m,n] b[i-m, j-n]."""
    h, w = a.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            s = 0.0
            for m in range(h):
                for n in range(w):
                    s += a[m, n] * b[(i - m) % h, (j - n) % w]
            out[i, j] = s
    return out


def naive_conv2d(x, weight, bias, dilation=1):
    """'Same' zero-padded cross-correlation by six nested loops."""
    bsz, c_in, h, w = x.shape
    c_out, _, k, _ = weight.shape
    pad = dilation * (k - 1) // 2
    out = np.zeros((bsz, c_out, h, w))
    for b, o, i, j in itertools.product(range(bsz), range(c_out), range(h), range(w)):
        acc = bias[o]
        for c in range(c_in):
            for p in range(k):
                for q in range(k):
                    y = i + p * dilation - pad
                    z = j + q * dilation - pad
                    if 0 <= y < h and 0 <= z < w:
                        acc += weight[o, c, p, q] * x[b, c, y, z]
        out[b, o, i, j] = acc
    return out


def naive_maxpool(x, window=2):
    b, c, h, w = x.shape
    out = np.zeros((b, c, h // window, w // window))
    for idx in itertools.product(range(b), range(c), range(h // window), range(w // window)):
        n, ch, i, j = idx
        out[idx] = max(
            x[n, ch, i * window + p, j * window + q] for p in range(window) for q in range(window)
        )
    return out


def gelu_mp(x, dps=40):
    """x * Phi(x) in high precision (erf form)."""
    with mpmath.workdps(dps):
        v = mpmath.mpf(x)
        return float(v * (1 + mpmath.erf(v / mpmath.sqrt(2))) / 2)


def central_difference(f, x, eps=1e-6):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += eps
        down[i] -= eps
        g.reshape(-1)[i] = (f(up.reshape(x.shape)) - f(down.reshape(x.shape))) / (2 * eps)
    return g


def conv_param_count(c_in, c_out, k):
    return c_out * c_in * k * k + c_out


def block_param_count(c_in, width, wiring, filter_res, patch, k=3):
    """Closed-form parameter count of one GLF block."""
    n = 2 * c_in  # layer norm
    n += conv_param_count(c_in, width, k) + conv_param_count(width, width, k)
    kinds = wiring.split("+")
    for kind in kinds:
        if kind == "gfb":
            h, w = filter_res
            n += 2 * width * h * (w // 2 + 1)
        else:
            n += 2 * width * patch * (patch // 2 + 1)
    n += conv_param_count(width * len(kinds), width, 1)
    n += 4 * conv_param_count(width, width, k)
    return n


def model_param_count(in_ch, classes, size, widths, patch, wiring="gfb+lfb", multiscale=True, k=3):
    """Closed-form parameter count of the whole encoder-decoder."""
    h, w = size
    total = 0
    c = in_ch
    for i in range(4):
        total += block_param_count(c, widths[i], wiring, (h >> (i + 1), w >> (i + 1)), patch, k)
        c = widths[i]
    total += block_param_count(widths[3], widths[4], wiring, (h >> 4, w >> 4), patch, k)
    below = widths[4]
    for j in (3, 2, 1, 0):
        total += block_param_count(below + widths[j], widths[j], wiring, (h >> j, w >> j), patch, k)
        below = widths[j]
    if multiscale:
        total += sum(conv_param_count(in_ch, widths[i], k) for i in range(4))
    total += conv_param_count(widths[0], classes, 1)
    total += sum(conv_param_count(widths[j], classes, 1) for j in (1, 2, 3))
    return total
