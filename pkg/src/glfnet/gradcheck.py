"""Central-difference gradient checks for every primitive and composite.

Each check reduces an op to a scalar through a fixed random projection
``sum(w * op(x))`` and compares analytic and numerical gradients with
:func:`glfnet.autodiff.grad_check`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from ._tree import named_tensors, replace_tensors
from .autodiff import Tensor, grad_check
from .blocks import (
    BlockParams,
    GlobalFilterParams,
    LocalFilterParams,
    WideFocusParams,
    global_filter_branch,
    glf_block_decoder,
    glf_block_encoder,
    glf_module,
    local_filter_branch,
    wide_focus,
)
from .errors import ConfigError
from .network import ModelConfig, build_model, forward
from .nn import (
    Conv2dParams,
    avgpool2x2,
    concat_channels,
    conv2d,
    layernorm,
    log_softmax_channels,
    maxpool2d,
    softmax_channels,
    upsample2x,
)
from .spectral import Spectrum, irfft2, rfft2, spectral_multiply
from .training import TrainConfig, cross_entropy_loss, one_hot, soft_dice_loss, total_loss

PRIMITIVE_TOL = 1e-5
COMPOSITE_TOL = 1e-4
EPS = 1e-5
# The full model contains max-pooling; a 1e-5 stencil can straddle a pooling
# tie (a kink) and report a spurious error, so the network suite steps finer.
NETWORK_EPS = 1e-6


@dataclass(frozen=True)
class CheckResult:
    module: str
    name: str
    error: float
    tolerance: float

    @property
    def passed(self):
        return self.error < self.tolerance


def _proj(rng, shape):
    return Tensor(rng.normal(size=shape))


def _scalar(op, w):
    return lambda t: (op(t) * w).sum()


def _autodiff_checks(rng):
    x = rng.normal(size=(2, 3, 2, 2))
    y = rng.normal(size=(2, 3, 2, 2))
    pos = rng.uniform(0.5, 2.0, size=(2, 3, 2, 2))
    w = _proj(rng, x.shape)
    yt = Tensor(y)
    chan = Tensor(rng.normal(size=3))
    w_sum = Tensor(rng.normal(size=(3, 2)))
    w_cat = Tensor(rng.normal(size=(2, 6, 2, 2)))
    w_stack = Tensor(rng.normal(size=(2, 2, 3, 2, 2)))
    out = {
        "add": grad_check(_scalar(lambda t: t + yt, w), x, EPS),
        "add_b": grad_check(lambda t: ((Tensor(x) + t) * w).sum(), y, EPS),
        "add_channel": grad_check(lambda t: ((Tensor(x) + t) * w).sum(), chan.data, EPS),
        "sub": grad_check(lambda t: ((Tensor(x) - t) * w).sum(), y, EPS),
        "mul": grad_check(_scalar(lambda t: t * yt, w), x, EPS),
        "mul_channel": grad_check(lambda t: ((Tensor(x) * t) * w).sum(), chan.data, EPS),
        "div": grad_check(lambda t: ((Tensor(x) / t) * w).sum(), pos, EPS),
        "gelu": grad_check(_scalar(ad.gelu, w), x, EPS),
        "relu": grad_check(_scalar(ad.relu, w), x, EPS),
        "scale": grad_check(_scalar(lambda t: ad.scale(t, -1.7), w), x, EPS),
        "exp": grad_check(_scalar(ad.exp, w), x, EPS),
        "log": grad_check(_scalar(ad.log, w), pos, EPS),
        "sqrt": grad_check(_scalar(ad.sqrt, w), pos, EPS),
        "sum_axis": grad_check(lambda t: (t.sum(axis=(0, 2)) * w_sum).sum(), x, EPS),
        "mean": grad_check(lambda t: t.mean(axis=1).sum() * 3.0, x, EPS),
        "reshape": grad_check(lambda t: (t.reshape(6, 4) * Tensor(w.data.reshape(6, 4))).sum(), x, EPS),
        "transpose": grad_check(lambda t: (t.transpose(3, 1, 0, 2) * Tensor(w.data.transpose(3, 1, 0, 2))).sum(), x, EPS),
        "getitem": grad_check(lambda t: (t[:, 1:] * Tensor(w.data[:, 1:])).sum(), x, EPS),
        "concat": grad_check(lambda t: (ad.concat([t, yt], 1) * w_cat).sum(), x, EPS),
        "stack": grad_check(lambda t: (ad.stack([t, yt]) * w_stack).sum(), x, EPS),
        "chain": grad_check(lambda t: (ad.gelu(t * yt) + ad.exp(ad.scale(t, 0.3))).sum(), x, EPS),
    }
    return out


def _nn_checks(rng):
    out = {}
    for d in (1, 2, 3):
        p = Conv2dParams(Tensor(rng.normal(size=(3, 2, 3, 3))), Tensor(rng.normal(size=3)), dilation=d)
        w = _proj(rng, (2, 3, 6, 6))
        xin = rng.normal(size=(2, 2, 6, 6))
        out[f"conv2d_x_d{d}"] = grad_check(_scalar(lambda t: conv2d(t, p), w), xin, EPS)
        out[f"conv2d_w_d{d}"] = grad_check(
            lambda t: (conv2d(Tensor(xin), Conv2dParams(t, p.bias, dilation=d)) * w).sum(), p.weight.data, EPS
        )
        out[f"conv2d_b_d{d}"] = grad_check(
            lambda t: (conv2d(Tensor(xin), Conv2dParams(p.weight, t, dilation=d)) * w).sum(), p.bias.data, EPS
        )
    x = rng.normal(size=(2, 3, 4, 4))
    gamma, beta = Tensor(rng.normal(size=3)), Tensor(rng.normal(size=3))
    w4 = _proj(rng, x.shape)
    out["maxpool2d"] = grad_check(_scalar(maxpool2d, _proj(rng, (2, 3, 2, 2))), x, EPS)
    out["avgpool2x2"] = grad_check(_scalar(avgpool2x2, _proj(rng, (2, 3, 2, 2))), x, EPS)
    out["layernorm_x"] = grad_check(_scalar(lambda t: layernorm(t, gamma, beta), w4), x, EPS)
    out["layernorm_gamma"] = grad_check(lambda t: (layernorm(Tensor(x), t, beta) * w4).sum(), gamma.data, EPS)
    out["layernorm_beta"] = grad_check(lambda t: (layernorm(Tensor(x), gamma, t) * w4).sum(), beta.data, EPS)
    out["upsample2x"] = grad_check(_scalar(upsample2x, _proj(rng, (2, 3, 8, 8))), x, EPS)
    other = Tensor(rng.normal(size=(2, 1, 4, 4)))
    out["concat_channels"] = grad_check(
        _scalar(lambda t: concat_channels([t, other]), _proj(rng, (2, 4, 4, 4))), x, EPS
    )
    out["softmax_channels"] = grad_check(_scalar(softmax_channels, w4), x, EPS)
    out["log_softmax_channels"] = grad_check(_scalar(log_softmax_channels, w4), x, EPS)
    return out


def _spectral_checks(rng):
    out = {}
    for h, w in ((2, 2), (4, 4), (4, 8), (8, 8)):
        x = rng.normal(size=(2, 2, h, w))
        kr = Tensor(rng.normal(size=(2, h, w // 2 + 1)))
        ki = Tensor(rng.normal(size=(2, h, w // 2 + 1)))
        proj = _proj(rng, (2, 2, 2, h, w // 2 + 1))
        wx = _proj(rng, x.shape)
        tag = f"{h}x{w}"
        out[f"rfft2_{tag}"] = grad_check(lambda t: (rfft2(t).packed * proj).sum(), x, EPS)
        z = rng.normal(size=(2, 2, 2, h, w // 2 + 1))
        out[f"irfft2_{tag}"] = grad_check(lambda t: (irfft2(Spectrum(t, (h, w))) * wx).sum(), z, EPS)
        filt = lambda t, a=kr, b=ki: irfft2(spectral_multiply(rfft2(t), a, b))
        out[f"filter_x_{tag}"] = grad_check(_scalar(filt, wx), x, EPS)
        out[f"filter_kr_{tag}"] = grad_check(
            lambda t: (irfft2(spectral_multiply(rfft2(Tensor(x)), t, ki)) * wx).sum(), kr.data, EPS
        )
        out[f"filter_ki_{tag}"] = grad_check(
            lambda t: (irfft2(spectral_multiply(rfft2(Tensor(x)), kr, t)) * wx).sum(), ki.data, EPS
        )
    return out


def _random_block(rng, c_in, width, res, patch, wiring="gfb+lfb", pool=True):
    bp = BlockParams.init(rng, c_in, width, res, patch, wiring=wiring, pool=pool)
    # perturb norm and biases away from their neutral init so every path is exercised
    extra = {}
    for name, t in named_tensors(bp).items():
        if name.startswith("norm_") or name.endswith("bias") or ".k_" in f".{name}":
            extra[name] = ad.parameter(t.data + rng.normal(0.0, 0.3, t.shape))
    return replace_tensors(bp, extra)


def _glf_checks(rng):
    out = {}
    x8 = rng.normal(size=(1, 2, 8, 8))
    w8 = _proj(rng, x8.shape)
    g = GlobalFilterParams(Tensor(rng.normal(size=(2, 8, 5))), Tensor(rng.normal(size=(2, 8, 5))))
    lf = LocalFilterParams(Tensor(rng.normal(size=(2, 4, 3))), Tensor(rng.normal(size=(2, 4, 3))))
    out["global_filter_branch"] = grad_check(_scalar(lambda t: global_filter_branch(t, g), w8), x8, EPS)
    out["local_filter_branch"] = grad_check(_scalar(lambda t: local_filter_branch(t, lf), w8), x8, EPS)
    for wiring in ("gfb+lfb", "gfb", "lfb+lfb"):
        bp = _random_block(rng, 2, 2, (8, 8), 4, wiring=wiring)
        out[f"glf_module_{wiring}"] = grad_check(_scalar(lambda t: glf_module(t, bp), w8), x8, EPS)
    wf = WideFocusParams.init(rng, 2)
    x6 = rng.normal(size=(1, 2, 6, 6))
    out["wide_focus"] = grad_check(_scalar(lambda t: wide_focus(t, wf), _proj(rng, x6.shape)), x6, EPS)
    enc = _random_block(rng, 2, 3, (8, 8), 4)
    x16 = rng.normal(size=(1, 2, 16, 16))
    out["glf_block_encoder"] = grad_check(
        _scalar(lambda t: glf_block_encoder(t, enc), _proj(rng, (1, 3, 8, 8))), x16, EPS
    )
    dec = _random_block(rng, 4 + 2, 2, (8, 8), 4, pool=False)
    xd = rng.normal(size=(1, 4, 4, 4))
    skip = rng.normal(size=(1, 2, 8, 8))
    wd = _proj(rng, (1, 2, 8, 8))
    out["glf_block_decoder_x"] = grad_check(lambda t: (glf_block_decoder(t, Tensor(skip), dec) * wd).sum(), xd, EPS)
    out["glf_block_decoder_skip"] = grad_check(
        lambda t: (glf_block_decoder(Tensor(xd), t, dec) * wd).sum(), skip, EPS
    )
    return out


def _training_checks(rng):
    logits = rng.normal(size=(2, 3, 4, 4))
    labels = rng.integers(0, 3, size=(2, 4, 4))
    oh = one_hot(labels, 3)
    return {
        "soft_dice_loss": grad_check(lambda t: soft_dice_loss(softmax_channels(t), oh), logits, EPS),
        "cross_entropy_loss": grad_check(lambda t: cross_entropy_loss(t, labels), logits, EPS),
    }


TINY_CONFIG = ModelConfig(
    in_channels=1, num_classes=3, input_size=(32, 32), stage_widths=(2, 2, 2, 2, 2), patch_size=2
)


def _network_checks(rng, coords_per_tensor=1):
    cfg = TINY_CONFIG
    params = build_model(cfg, seed=int(rng.integers(1 << 31)))
    images = Tensor(rng.uniform(size=(1, 1, 32, 32)))
    labels = rng.integers(0, cfg.num_classes, size=(1, 32, 32))
    tc = TrainConfig()
    named = named_tensors(params)

    def loss_for(name):
        def f(t):
            logits, aux = forward(replace_tensors(params, {name: t}), cfg, images)
            return total_loss(logits, aux, labels, cfg.deep_supervision_weights, tc)[0]

        return f

    worst = 0.0
    for name, t in named.items():
        coords = rng.choice(t.size, size=min(coords_per_tensor, t.size), replace=False)
        worst = max(worst, grad_check(loss_for(name), t.data, NETWORK_EPS, coords=coords))
    input_coords = rng.choice(images.size, size=16, replace=False)

    def f_input(t):
        logits, aux = forward(params, cfg, t)
        return total_loss(logits, aux, labels, cfg.deep_supervision_weights, tc)[0]

    worst_input = grad_check(f_input, images.data, NETWORK_EPS, coords=input_coords)
    return {"full_model_params": worst, "full_model_input": worst_input}


SUITES = {
    "autodiff": (_autodiff_checks, PRIMITIVE_TOL),
    "nn": (_nn_checks, PRIMITIVE_TOL),
    "spectral": (_spectral_checks, PRIMITIVE_TOL),
    "glf": (_glf_checks, COMPOSITE_TOL),
    "training": (_training_checks, COMPOSITE_TOL),
    "network": (_network_checks, COMPOSITE_TOL),
}


def run_suite(modules=None, seed=0):
    """Run the named suites (all by default); returns a list of CheckResult."""
    modules = list(SUITES) if modules is None else list(modules)
    results = []
    for module in modules:
        if module not in SUITES:
            raise ConfigError(f"unknown gradcheck module {module!r}; choose from {sorted(SUITES)}")
        fn, tol = SUITES[module]
        rng = np.random.default_rng([seed, len(results)])
        for name, err in fn(rng).items():
            results.append(CheckResult(module, name, float(err), tol))
    return results
