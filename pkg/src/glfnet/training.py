"""Losses, Dice scoring, Adam and the training / evaluation loops."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._tree import replace_tensors
from .autodiff import Tensor, backward, mul, scale, tsum
from .errors import ConfigError, DataError, NumericsError, ShapeError
from .network import forward, predict_logits
from .nn import log_softmax_channels, softmax_channels

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 4
    learning_rate: float = 1e-3
    seed: int = 0
    dice_weight: float = 1.0
    ce_weight: float = 1.0
    dice_eps: float = 1.0
    deep_supervision_weights: tuple = None  # None -> use the model config's

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.dice_weight < 0 or self.ce_weight < 0 or self.dice_weight + self.ce_weight <= 0:
            raise ConfigError("loss weights must be >= 0 with a positive sum")
        if self.deep_supervision_weights is not None:
            dsw = tuple(float(w) for w in self.deep_supervision_weights)
            if len(dsw) != 3 or min(dsw) < 0:
                raise ConfigError("deep_supervision_weights must be 3 non-negative floats")
            object.__setattr__(self, "deep_supervision_weights", dsw)

    @classmethod
    def from_mapping(cls, mapping):
        conv = {
            "epochs": int,
            "batch_size": int,
            "learning_rate": float,
            "seed": int,
            "dice_weight": float,
            "ce_weight": float,
            "dice_eps": float,
        }
        kw = {}
        for key, fn in conv.items():
            if key in mapping:
                try:
                    kw[key] = fn(str(mapping[key]).strip())
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key}: {mapping[key]!r}") from exc
        return cls(**kw)

    def to_mapping(self):
        return {
            "epochs": str(self.epochs),
            "batch_size": str(self.batch_size),
            "learning_rate": repr(self.learning_rate),
            "seed": str(self.seed),
            "dice_weight": repr(self.dice_weight),
            "ce_weight": repr(self.ce_weight),
            "dice_eps": repr(self.dice_eps),
        }


@dataclass
class MetricsReport:
    """Per-class Dice for the foreground classes ``1..K-1`` and their mean."""

    per_class_dice: tuple
    mean_dice: float
    loss_curve: tuple = ()

    def as_row(self):
        return [*self.per_class_dice, self.mean_dice]

    def format_table(self, class_names=None):
        names = class_names or [f"class{k + 1}" for k in range(len(self.per_class_dice))]
        header = "Avg. | " + " | ".join(names)
        values = f"{100 * self.mean_dice:.2f} | " + " | ".join(f"{100 * d:.2f}" for d in self.per_class_dice)
        return header + "\n" + values


# -- metrics --------------------------------------------------------------

def dice_coefficient(pred_mask, gt_mask, class_id):
    """Hard Dice ``2|P & G| / (|P| + |G|)``; two empty sets score 1.0."""
    pred_mask = np.asarray(pred_mask)
    gt_mask = np.asarray(gt_mask)
    if pred_mask.shape != gt_mask.shape:
        raise ShapeError(f"mask shapes differ: {pred_mask.shape} vs {gt_mask.shape}")
    p = pred_mask == class_id
    g = gt_mask == class_id
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def one_hot(labels, num_classes):
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise DataError(f"labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]")
    eye = np.eye(num_classes)
    return np.moveaxis(eye[labels], -1, 1)


def downsample_labels(labels, factor, num_classes):
    """Majority vote over ``factor x factor`` blocks (ties go to the lower class)."""
    labels = np.asarray(labels)
    if factor == 1:
        return labels
    b, h, w = labels.shape
    if h % factor or w % factor:
        raise ShapeError(f"label dims {(h, w)} not divisible by {factor}")
    oh = one_hot(labels, num_classes)
    votes = oh.reshape(b, num_classes, h // factor, factor, w // factor, factor).mean(axis=(3, 5))
    return votes.argmax(axis=1)


# -- losses ---------------------------------------------------------------

def soft_dice_loss(probs, onehot_gt, eps=1.0):
    """``1 - mean_k (2 sum p*g + eps) / (sum p + sum g + eps)`` over (B, H, W)."""
    if eps <= 0:
        raise ConfigError("dice eps must be positive")
    onehot_gt = onehot_gt if isinstance(onehot_gt, Tensor) else Tensor(onehot_gt)
    if probs.shape != onehot_gt.shape:
        raise ShapeError(f"probs {probs.shape} and one-hot {onehot_gt.shape} differ")
    axes = (0, 2, 3)
    inter = tsum(mul(probs, onehot_gt), axes)
    denom = tsum(probs, axes) + Tensor(onehot_gt.data.sum(axis=axes) + eps)
    ratio = (scale(inter, 2.0) + eps) / denom
    return 1.0 - ratio.mean()


def cross_entropy_loss(logits, gt_labels):
    """Mean per-pixel negative log-likelihood of the true class."""
    k = logits.shape[1]
    oh = one_hot(gt_labels, k)
    if oh.shape != logits.shape:
        raise ShapeError(f"labels {np.shape(gt_labels)} do not match logits {logits.shape}")
    picked = tsum(mul(log_softmax_channels(logits), Tensor(oh)), 1)
    return -picked.mean()


def segmentation_loss(logits, labels, train_cfg):
    """Weighted soft-Dice + cross-entropy for one output head."""
    k = logits.shape[1]
    parts = {}
    total = None
    if train_cfg.dice_weight > 0:
        d = soft_dice_loss(softmax_channels(logits), one_hot(labels, k), train_cfg.dice_eps)
        parts["dice"] = d.item()
        total = scale(d, train_cfg.dice_weight)
    if train_cfg.ce_weight > 0:
        c = cross_entropy_loss(logits, labels)
        parts["ce"] = c.item()
        term = scale(c, train_cfg.ce_weight)
        total = term if total is None else total + term
    return total, parts


def total_loss(logits, aux, labels, weights, train_cfg):
    """Main loss plus ``sum_i w_i * loss(aux_i)`` against downsampled labels."""
    k = logits.shape[1]
    total, parts = segmentation_loss(logits, labels, train_cfg)
    breakdown = {"main": total.item(), **{f"main_{n}": v for n, v in parts.items()}}
    for i, (head, w) in enumerate(zip(aux, weights)):
        if w == 0:
            continue
        factor = labels.shape[-1] // head.shape[-1]
        aux_loss, _ = segmentation_loss(head, downsample_labels(labels, factor, k), train_cfg)
        breakdown[f"aux{i}"] = aux_loss.item()
        total = total + scale(aux_loss, w)
    breakdown["total"] = total.item()
    return total, breakdown


# -- optimiser ------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(named, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam step; returns ``{name: new Tensor}`` and mutates ``state``."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    updated = {}
    for name, param in named.items():
        g = grads.get(param.node_id)
        g = np.zeros(param.shape) if g is None else g.data
        m = state.m.get(name, np.zeros(param.shape))
        v = state.v.get(name, np.zeros(param.shape))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        updated[name] = Tensor(param.data - step, requires_grad=True)
    return updated


def train_step(params, cfg, images, labels, train_cfg, state=None):
    """Forward, backward and one Adam update on a single batch.

    Returns ``(new_params, state, breakdown)``.
    """
    state = AdamState() if state is None else state
    weights = train_cfg.deep_supervision_weights or cfg.deep_supervision_weights
    labels = np.asarray(labels)
    try:
        logits, aux = forward(params, cfg, Tensor(images))
        loss, breakdown = total_loss(logits, aux, labels, weights, train_cfg)
    except NumericsError as exc:
        raise NumericsError(f"step {state.step + 1}: forward pass failed: {exc}") from exc
    if not np.isfinite(loss.item()):
        raise NumericsError(f"step {state.step + 1}: non-finite loss {breakdown}")
    named = params.named_tensors()
    grads = backward(loss, wrt=list(named.values()))
    updated = adam_update(named, grads, state, train_cfg.learning_rate)
    return replace_tensors(params, updated), state, breakdown


# -- loops ----------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    loss: float
    report: MetricsReport


def stack_samples(samples):
    images = np.stack([s.image for s in samples]).astype(np.float64)
    masks = np.stack([s.mask for s in samples]).astype(np.int64)
    return images, masks


def fit(params, cfg, samples, train_cfg, val_samples=None, on_epoch=None):
    """Train for ``train_cfg.epochs`` epochs; returns ``(params, history)``.

    After each epoch the model is scored on ``val_samples`` (or the training
    set when none are given) and ``on_epoch(record)`` is called.
    """
    if not samples:
        raise DataError("training set is empty")
    images, masks = stack_samples(samples)
    rng = np.random.default_rng(train_cfg.seed)
    state = AdamState()
    history = []
    eval_set = val_samples if val_samples else samples
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(len(samples))
        losses = []
        for start in range(0, len(order), train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            params, state, parts = train_step(params, cfg, images[idx], masks[idx], train_cfg, state)
            losses.append(parts["total"])
        report = evaluate(model_predictor(params, cfg), eval_set, cfg.num_classes)
        report.loss_curve = tuple(losses)
        record = EpochRecord(epoch, float(np.mean(losses)), report)
        history.append(record)
        logger.info("epoch %d loss %.4f mean dice %.4f", epoch, record.loss, report.mean_dice)
        if on_epoch is not None:
            on_epoch(record)
    return params, history


def model_predictor(params, cfg, batch_size=8):
    """Callable mapping an image batch ``[N, C, H, W]`` to logits."""
    return lambda images: predict_logits(params, cfg, images, batch_size)


def evaluate(predict, samples, num_classes, batch_size=8):
    """Per-class foreground Dice averaged over samples, via argmax decoding."""
    if not samples:
        raise DataError("evaluation set is empty")
    per_sample = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        images, masks = stack_samples(chunk)
        pred = np.asarray(predict(images)).argmax(axis=1)
        for pm, gm in zip(pred, masks):
            per_sample.append([dice_coefficient(pm, gm, k) for k in range(1, num_classes)])
    per_class = np.mean(np.array(per_sample), axis=0)
    return MetricsReport(tuple(float(d) for d in per_class), float(per_class.mean()))
