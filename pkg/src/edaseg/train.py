"""Training recipe: Adam with coupled L2, poly learning rate, flip/shift augmentation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from edaseg.arch import ArchitectureSpec, preset
from edaseg.lanesynth import NUM_CLASSES, Sample
from edaseg.metrics import ConfusionMatrix
from edaseg.network import NetworkInstance, build, network_backward, network_forward, predict
from edaseg.tensor import softmax_cross_entropy

log = logging.getLogger(__name__)

IGNORE_INDEX = 0


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    arch: ArchitectureSpec | str = "tiny-eda-ddb"
    max_iter: int = 3000
    batch_size: int = 8
    base_lr: float = 5e-4
    power: float = 0.9
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    class_weighting: bool = True
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def spec(self) -> ArchitectureSpec:
        return preset(self.arch) if isinstance(self.arch, str) else self.arch


def poly_lr(it, max_iter, base_lr=5e-4, power=0.9):
    if not 0 <= it <= max_iter:
        raise ValueError(f"iteration {it} outside [0, {max_iter}]")
    return base_lr * (1 - it / max_iter) ** power


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def decays(name: str) -> bool:
    """Only convolution weights receive weight decay."""
    return name.endswith(".weight")


def adam_step(params, grads, state: AdamState, lr, config: TrainConfig):
    """In-place Adam update with L2 decay folded into the gradient."""
    b1, b2 = config.betas
    state.t += 1
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if config.weight_decay and decays(name):
            g = g + config.weight_decay * p
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + config.eps)).astype(p.dtype)
    return params, state


def shift2d(a, dy, dx, fill):
    """Translate the last two axes by (dy, dx), filling vacated cells."""
    out = np.full_like(a, fill)
    h, w = a.shape[-2:]
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[..., yd, xd] = a[..., ys, xs]
    return out


def augment_sample(sample: Sample, rng: np.random.Generator, max_shift=2) -> Sample:
    """Random horizontal flip, then an integer shift in [-2, 2] on each axis."""
    image, label = sample.image, sample.label
    if rng.random() < 0.5:
        image, label = image[..., ::-1], label[..., ::-1]
    dy, dx = (int(v) for v in rng.integers(-max_shift, max_shift + 1, size=2))
    return Sample(shift2d(image, dy, dx, 0.0), shift2d(label, dy, dx, IGNORE_INDEX), sample.seed)


def class_weights(samples, num_classes=NUM_CLASSES) -> np.ndarray:
    """``1 / ln(1.02 + p_c)`` from pixel frequencies; the ignored class gets 0."""
    if not samples:
        raise ValueError("class weights need a non-empty dataset")
    counts = np.zeros(num_classes, dtype=np.int64)
    for s in samples:
        counts += np.bincount(s.label.ravel(), minlength=num_classes)[:num_classes]
    freq = counts / counts.sum()
    w = 1.0 / np.log(1.02 + freq)
    w[IGNORE_INDEX] = 0.0
    return w


def make_batch(samples, indices, rng=None):
    chosen = [samples[i] for i in indices]
    if rng is not None:
        chosen = [augment_sample(s, rng) for s in chosen]
    x = np.stack([s.image for s in chosen]).astype(np.float32)
    y = np.stack([s.label for s in chosen]).astype(np.int64)
    return x, y


@dataclass
class TrainResult:
    net: NetworkInstance
    log: list  # (iter, lr, loss)

    def log_lines(self):
        return [f"{it}\t{lr:.9g}\t{loss:.9g}" for it, lr, loss in self.log]


def train_loop(config: TrainConfig, samples, callback=None) -> TrainResult:
    """Run the recipe on in-memory samples and return the trained network and log."""
    spec = config.spec()
    rng = np.random.default_rng(config.seed)
    net = build(spec, config.num_classes, seed=config.seed)
    weights = class_weights(samples, config.num_classes) if config.class_weighting else None
    if weights is not None:
        weights = weights.astype(np.float32)
    state = AdamState()
    order = np.empty(0, dtype=np.int64)
    cursor = 0
    history = []
    for it in range(config.max_iter):
        if cursor + config.batch_size > len(order):
            order = rng.permutation(len(samples))
            cursor = 0
            if config.batch_size > len(order):
                order = np.resize(order, config.batch_size)
        idx = order[cursor:cursor + config.batch_size]
        cursor += config.batch_size
        x, y = make_batch(samples, idx, rng)
        logits, caches = network_forward(net, x, "train", rng)
        loss, dlogits = softmax_cross_entropy(logits, y, weights, ignore_index=IGNORE_INDEX)
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss at iteration {it}")
        _, grads = network_backward(net, dlogits, caches)
        lr = poly_lr(it, config.max_iter, config.base_lr, config.power)
        adam_step(net.params, grads, state, lr, config)
        history.append((it, lr, loss))
        if callback is not None:
            callback(it, lr, loss)
        if it % 100 == 0:
            log.info("iter %d lr %.3g loss %.4f", it, lr, loss)
    return TrainResult(net, history)


def smoothed(values, window=50):
    """Trailing moving average; entry i averages values[max(0, i-window+1) : i+1]."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    i = np.arange(1, len(v) + 1)
    lo = np.maximum(0, i - window)
    return (c[i] - c[lo]) / (i - lo)


def evaluate(net: NetworkInstance, samples, batch_size=8) -> ConfusionMatrix:
    cm = ConfusionMatrix(net.num_classes, IGNORE_INDEX)
    for start in range(0, len(samples), batch_size):
        x, y = make_batch(samples, range(start, min(start + batch_size, len(samples))))
        cm.update(predict(net, x), y)
    return cm
