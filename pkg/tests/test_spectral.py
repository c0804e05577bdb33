import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from glfnet.autodiff import Tensor, grad_check
from glfnet.errors import ShapeError
from glfnet.spectral import (
    Spectrum,
    count_fft_ops,
    fft,
    irfft2,
    parseval_energy,
    rfft2,
    spectral_multiply,
)
from oracles import circular_conv2d, hermitian_full, matrix_dft2, naive_dft2, naive_idft2

pow2 = st.sampled_from([1, 2, 4, 8, 16, 32])
pow2_w = st.sampled_from([2, 4, 8, 16, 32])


def half(z, w):
    return z[..., : w // 2 + 1]


def test_fft_1d_matches_dft_matrix(rng):
    for n in (1, 2, 4, 8, 64, 256):
        x = rng.normal(size=n) + 1j * rng.normal(size=n)
        k = np.arange(n)
        ref = np.exp(-2j * np.pi * np.outer(k, k) / n) @ x
        np.testing.assert_allclose(fft(x), ref, atol=1e-10)
        np.testing.assert_allclose(fft(fft(x), inverse=True) / n, x, atol=1e-12)


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ShapeError):
        fft(np.ones(6))
    with pytest.raises(ShapeError):
        rfft2(Tensor(np.ones((4, 6))))
    with pytest.raises(ShapeError):
        rfft2(Tensor(np.ones((4, 1))))


def test_constant_2x2_has_only_dc():
    s = rfft2(Tensor(np.full((2, 2), 1.5))).to_complex()
    assert s[0, 0] == pytest.approx(6.0)
    s[0, 0] = 0
    assert np.abs(s).max() == 0


def test_impulse_4x4_has_flat_spectrum():
    x = np.zeros((4, 4))
    x[0, 0] = 1.0
    np.testing.assert_allclose(rfft2(Tensor(x)).to_complex(), np.ones((4, 3)), atol=1e-15)


def test_random_4x4_matches_naive_dft(rng):
    x = rng.normal(size=(4, 4))
    np.testing.assert_allclose(rfft2(Tensor(x)).to_complex(), half(naive_dft2(x), 4), atol=1e-10)


def test_rectangular_and_batched_match_dft_matrices(rng):
    x = rng.normal(size=(2, 3, 8, 16))
    np.testing.assert_allclose(rfft2(Tensor(x)).to_complex(), half(matrix_dft2(x), 16), atol=1e-10)


def test_self_conjugate_bins_are_real(rng):
    x = rng.normal(size=(8, 8))
    z = rfft2(Tensor(x)).to_complex()
    for u in (0, 4):
        for v in (0, 4):
            assert abs(z[u, v].imag) < 1e-12


def test_dc_only_spectrum_inverts_to_constant():
    z = np.zeros((4, 5), dtype=complex)
    z[0, 0] = 4 * 8 * 0.7
    s = Spectrum.from_parts(z.real, z.imag, (4, 8))
    np.testing.assert_allclose(irfft2(s).data, np.full((4, 8), 0.7), atol=1e-14)


def test_round_trip_8x8(rng):
    x = rng.normal(size=(8, 8))
    assert np.abs(irfft2(rfft2(Tensor(x))).data - x).max() < 1e-10


def test_hermitian_spectrum_matches_naive_inverse(rng):
    y = rng.normal(size=(4, 8))
    zh = half(naive_dft2(y), 8)
    s = Spectrum.from_parts(zh.real, zh.imag, (4, 8))
    ref = naive_idft2(hermitian_full(zh, 8))
    assert np.abs(ref.imag).max() < 1e-12
    np.testing.assert_allclose(irfft2(s).data, ref.real, atol=1e-12)


def test_malformed_half_plane_raises():
    with pytest.raises(ShapeError):
        Spectrum.from_parts(np.zeros((4, 4)), np.zeros((4, 4)), (4, 8))


def test_identity_and_zero_kernels(rng):
    x = Tensor(rng.normal(size=(2, 8, 8)))
    s = rfft2(x)
    ident = spectral_multiply(s, np.ones((8, 5)), np.zeros((8, 5)))
    np.testing.assert_array_equal(ident.to_complex(), s.to_complex())
    zero = spectral_multiply(s, np.zeros((8, 5)), np.zeros((8, 5)))
    assert np.abs(zero.to_complex()).max() == 0


def test_spectral_multiply_shape_mismatch():
    s = rfft2(Tensor(np.ones((4, 4))))
    with pytest.raises(ShapeError):
        spectral_multiply(s, np.ones((4, 4)), np.ones((4, 4)))
    with pytest.raises(ShapeError):
        spectral_multiply(s, np.ones((4, 3)), np.ones((3, 3)))


@pytest.mark.parametrize("h", [2, 4, 8])
@pytest.mark.parametrize("w", [2, 4, 8])
def test_convolution_theorem(h, w, rng):
    a = rng.normal(size=(h, w))
    kern = rng.normal(size=(h, w))
    kz = rfft2(Tensor(kern)).to_complex()
    out = irfft2(spectral_multiply(rfft2(Tensor(a)), kz.real, kz.imag)).data
    assert np.abs(out - circular_conv2d(a, kern)).max() < 1e-10


def test_parseval_examples(rng):
    assert parseval_energy(np.zeros((4, 4))) == (0.0, 0.0)
    x = np.zeros((4, 4))
    x[1, 2] = 1.0
    assert parseval_energy(x) == pytest.approx((1.0, 1.0), abs=1e-14)
    sp, sf = parseval_energy(rng.normal(size=(8, 8)))
    assert abs(sp - sf) < 1e-10


@given(pow2, pow2_w, st.integers(0, 2**32 - 1))
def test_property_round_trip_and_parseval(h, w, seed):
    x = np.random.default_rng(seed).normal(size=(h, w))
    assert np.abs(irfft2(rfft2(Tensor(x))).data - x).max() < 1e-10
    sp, sf = parseval_energy(x)
    assert abs(sp - sf) < 1e-10 * max(1.0, sp)


@given(pow2, pow2_w, st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32 - 1))
def test_property_linearity(h, w, alpha, beta, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, h, w))
    lhs = rfft2(Tensor(alpha * x + beta * y)).to_complex()
    rhs = alpha * rfft2(Tensor(x)).to_complex() + beta * rfft2(Tensor(y)).to_complex()
    assert np.abs(lhs - rhs).max() < 1e-10


@pytest.mark.parametrize("shape", [(2, 2), (4, 4), (4, 8), (8, 4), (2, 8, 8)])
def test_filter_gradients(shape, rng):
    h, w = shape[-2:]
    x = rng.normal(size=shape)
    kr, ki = rng.normal(size=(2, h, w // 2 + 1))
    proj = Tensor(rng.normal(size=shape))

    def via_x(t):
        return (irfft2(spectral_multiply(rfft2(t), kr, ki)) * proj).sum()

    def via_kr(t):
        return (irfft2(spectral_multiply(rfft2(Tensor(x)), t, ki)) * proj).sum()

    def via_ki(t):
        return (irfft2(spectral_multiply(rfft2(Tensor(x)), kr, t)) * proj).sum()

    assert grad_check(via_x, x) < 1e-5
    assert grad_check(via_kr, kr) < 1e-5
    assert grad_check(via_ki, ki) < 1e-5


def test_rfft2_adjoint_gradient(rng):
    x = rng.normal(size=(4, 8))
    wr, wi = rng.normal(size=(2, 4, 5))

    def f(t):
        s = rfft2(t)
        return (s.coeffs_real * Tensor(wr) + s.coeffs_imag * Tensor(wi)).sum()

    assert grad_check(f, x) < 1e-5


def test_per_channel_kernel_broadcasts_over_batch_and_patch_grid(rng):
    x = rng.normal(size=(2, 3, 2, 2, 4, 4))
    kr, ki = rng.normal(size=(2, 3, 4, 3))
    out = spectral_multiply(rfft2(Tensor(x)), kr, ki).to_complex()
    ref = rfft2(Tensor(x)).to_complex() * (kr + 1j * ki)[None, :, None, None]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def _count(h, w):
    with count_fft_ops() as tally:
        rfft2(Tensor(np.zeros((h, w))))
    return tally[0]


@pytest.mark.parametrize("h,w", [(2, 2), (4, 4), (8, 8), (16, 16), (32, 32), (64, 64)])
def test_fft_cost_is_log_linear(h, w):
    n = h * w
    expected = 2 * math.log2(2 * n) / math.log2(n)
    for h2, w2 in ((h, 2 * w), (2 * h, w)):
        assert abs(_count(h2, w2) / _count(h, w) / expected - 1) < 0.10


def test_counter_inactive_outside_context():
    assert _count(4, 4) > 0
    with count_fft_ops() as outer:
        with count_fft_ops() as inner:
            fft(np.ones(8))
        assert inner[0] == 10 * 4 * 3 and outer[0] == 0
