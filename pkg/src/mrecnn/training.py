"""Softmax cross-entropy, SGD with momentum and weight decay under a linear
learning-rate decay, and the mini-batch training loop.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .network import ArchSpec, SubNetwork, build_subnetwork
from .rng import make_generator

log = logging.getLogger(__name__)

TRACE_HEADER = "iteration,lr,loss,accuracy"


class NumericalError(FloatingPointError):
    """Raised when a non-finite loss or gradient appears during training."""

    def __init__(self, iteration: int, what: str = "loss"):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


@dataclass
class LossReport:
    loss: float
    logit_gradient: np.ndarray
    batch_accuracy: float


def argmax_rows(scores) -> np.ndarray:
    # np.argmax keeps the first maximum, i.e. ties go to the lowest class index
    return np.asarray(scores).argmax(axis=1)


def softmax_cross_entropy(logits, labels) -> LossReport:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    z = T.as_tensor(logits, 2, "logits")
    labels = np.asarray(labels)
    n, k = z.shape
    if n < 1:
        raise ValueError("need at least one sample")
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} != ({n},)")
    bad = np.flatnonzero((labels < 0) | (labels >= k))
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"label {labels[i]} of sample {i} outside 0..{k - 1}")
    labels = labels.astype(np.intp)
    z64 = z.astype(np.float64)
    shifted = z64 - z64.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted[np.arange(n), labels] - log_norm
    probs = np.exp(shifted - log_norm[:, None])
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    acc = float(np.mean(argmax_rows(z64) == labels))
    return LossReport(float(-log_p.mean()), grad.astype(T.DTYPE), acc)


@dataclass
class OptimizerState:
    base_lr: float
    total_iterations: int
    momentum: float = 0.9
    weight_decay: float = 1e-4
    iteration: int = 0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.base_lr < 0:
            raise ValueError(f"base_lr must be nonnegative, got {self.base_lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if self.total_iterations < 0:
            raise ValueError("total_iterations must be nonnegative")

    def lr_at(self, t: int) -> float:
        if self.total_iterations == 0:
            return 0.0
        return max(0.0, self.base_lr * (1.0 - t / self.total_iterations))

    @property
    def learning_rate(self) -> float:
        return self.lr_at(self.iteration)


def sgd_step(net: SubNetwork, opt: OptimizerState) -> None:
    """One momentum-SGD update in place; decay applies to weights and biases alike."""
    if not net.grads_ready:
        raise RuntimeError("sgd_step called without fresh gradients; run backward first")
    lr = opt.learning_rate
    for name, p in net.params.items():
        g = net.grads[name]
        v = opt.velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
        elif v.shape != p.shape:
            raise ValueError(f"velocity for {name} has shape {v.shape}, parameter {p.shape}")
        g = g + T.DTYPE(opt.weight_decay) * p
        v = T.DTYPE(opt.momentum) * v - T.DTYPE(lr) * g
        opt.velocity[name] = v.astype(T.DTYPE)
        net.params[name] = (p + v).astype(T.DTYPE)
    opt.iteration += 1
    net.grads_ready = False


@dataclass
class PairDataset:
    """Aligned (whole face, region) tensor pairs with integer labels."""
    faces: np.ndarray
    regions: np.ndarray
    labels: np.ndarray
    clip_ids: list[str] | None = None

    def __post_init__(self):
        self.faces = T.as_tensor(self.faces, 4, "faces")
        self.regions = T.as_tensor(self.regions, 4, "regions")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.labels)
        if self.faces.shape[0] != n or self.regions.shape[0] != n:
            raise ValueError(
                f"faces ({self.faces.shape[0]}), regions ({self.regions.shape[0]}) "
                f"and labels ({n}) disagree in length")

    def __len__(self):
        return len(self.labels)


@dataclass
class TrainConfig:
    arch: ArchSpec = field(default_factory=lambda: ArchSpec("alexnet", 32, "1/8"))
    region: str = "left_eye"
    base_lr: float = 0.0005
    total_iterations: int = 1000
    batch_size: int = 16
    momentum: float = 0.9
    weight_decay: float = 1e-4
    augment: bool = False
    crop_margin: int = 4


@dataclass
class TrainResult:
    net: SubNetwork
    opt: OptimizerState
    trace: list[tuple[int, float, float, float]]

    def trace_csv(self) -> str:
        lines = [TRACE_HEADER]
        lines += [f"{i},{lr!r},{loss!r},{acc!r}" for i, lr, loss, acc in self.trace]
        return "\n".join(lines) + "\n"


def random_crop_flip(batch: np.ndarray, rng: np.random.Generator, margin: int,
                     offsets=None, flips=None) -> np.ndarray:
    """Zero-pad by ``margin``, crop back to the original size, maybe mirror."""
    n, _, h, w = batch.shape
    if offsets is None:
        offsets = rng.integers(0, 2 * margin + 1, size=(n, 2))
    if flips is None:
        flips = rng.random(n) < 0.5
    padded = np.pad(batch, ((0, 0), (0, 0), (margin, margin), (margin, margin)))
    out = np.empty_like(batch)
    for i, ((dy, dx), flip) in enumerate(zip(offsets, flips)):
        crop = padded[i, :, dy:dy + h, dx:dx + w]
        out[i] = crop[:, :, ::-1] if flip else crop
    return out


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield order[start:start + batch_size]


def train(config: TrainConfig, dataset: PairDataset, seed: int = 0,
          net: SubNetwork | None = None, opt: OptimizerState | None = None,
          callback=None) -> TrainResult:
    """Train one sub-network; deterministic given ``(dataset, config, seed)``.

    Mini-batches come from a seeded per-epoch shuffle and the last partial
    batch of every epoch is dropped. When ``config.augment`` is set, each pair
    gets the same random crop offset and flip for both of its images.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    if config.batch_size < 1 or config.batch_size > n:
        raise ValueError(
            f"batch_size {config.batch_size} exceeds dataset size {n} (last partial batch is dropped)")
    if net is None:
        net = build_subnetwork(config.arch, config.region, seed)
    if opt is None:
        opt = OptimizerState(config.base_lr, config.total_iterations,
                             config.momentum, config.weight_decay)
    rng = make_generator(seed, 7)
    batches = _batches(n, config.batch_size, rng)
    trace = []
    while opt.iteration < opt.total_iterations:
        it = opt.iteration
        idx = next(batches)
        faces, regions = dataset.faces[idx], dataset.regions[idx]
        if config.augment:
            offsets = rng.integers(0, 2 * config.crop_margin + 1, size=(len(idx), 2))
            flips = rng.random(len(idx)) < 0.5
            faces = random_crop_flip(faces, rng, config.crop_margin, offsets, flips)
            regions = random_crop_flip(regions, rng, config.crop_margin, offsets, flips)
        # overflow surfaces as a non-finite loss, reported below
        with np.errstate(over="ignore", invalid="ignore"):
            logits = net.forward(faces, regions, train_mode=True)
            report = softmax_cross_entropy(logits, dataset.labels[idx])
            if not math.isfinite(report.loss) or not np.isfinite(logits).all():
                raise NumericalError(it)
            net.backward(report.logit_gradient)
        if not all(np.isfinite(g).all() for g in net.grads.values()):
            raise NumericalError(it, "gradient")
        lr = opt.learning_rate
        sgd_step(net, opt)
        trace.append((it, lr, report.loss, report.batch_accuracy))
        if callback is not None:
            callback(it, lr, report)
        if it % 50 == 0:
            log.debug("iter %d lr %.6g loss %.4f acc %.3f", it, lr, report.loss, report.batch_accuracy)
    return TrainResult(net, opt, trace)


def predict_scores(net: SubNetwork, faces, regions, batch_size: int = 64) -> np.ndarray:
    """Softmax scores for every pair, evaluated in inference mode."""
    faces = T.as_tensor(faces, 4, "faces")
    regions = T.as_tensor(regions, 4, "regions")
    out = [T.softmax(net.forward(faces[s:s + batch_size], regions[s:s + batch_size]))
           for s in range(0, faces.shape[0], batch_size)]
    if not out:
        return np.zeros((0, net.spec.num_classes), dtype=T.DTYPE)
    return np.concatenate(out)
