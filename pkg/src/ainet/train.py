"""Optimizers, learning-rate schedules, and the shape-bucketed training loop.

Micro-batches hold same-shape samples; gradients accumulate across them and
the optimizer steps once per nominal batch, so variable-size data trains as
if batched normally. Loss is softmax cross-entropy, averaged per sample.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass

import numpy as np

from . import data, nets, ops
from .autodiff import Parameter, backward, zero_grad
from .errors import ConfigurationError, TrainingAbort

__all__ = [
    "SgdConfig",
    "AdamConfig",
    "Sgd",
    "Adam",
    "StepAt",
    "Plateau",
    "RunMetrics",
    "make_optimizer",
    "train_epoch",
    "evaluate",
    "train_loop",
    "write_metrics_csv",
    "METRICS_FIELDS",
]


@dataclass
class SgdConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError(f"momentum must be in [0,1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigurationError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass
class AdamConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        for name, b in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0 < b < 1:
                raise ConfigurationError(f"{name} must be in (0,1), got {b}")
        if self.eps <= 0:
            raise ConfigurationError(f"eps must be > 0, got {self.eps}")


def _check_finite(p: Parameter) -> None:
    if not np.isfinite(p.grad).all():
        raise TrainingAbort(f"non-finite gradient in parameter {p.name!r}")


class Sgd:
    """Momentum SGD with coupled weight decay:
    v <- mu*v + g + wd*theta; theta <- theta - lr*v."""

    def __init__(self, params: list[Parameter], config: SgdConfig):
        self.params = params
        self.config = config
        self.lr = config.lr
        self.velocity = [np.zeros_like(p.value) for p in params]

    def step(self) -> None:
        mu, wd = self.config.momentum, self.config.weight_decay
        for p, v in zip(self.params, self.velocity):
            _check_finite(p)
            v *= mu
            v += p.grad
            if wd:
                v += wd * p.value
            p.value -= self.lr * v


class Adam:
    """Bias-corrected first/second moment update."""

    def __init__(self, params: list[Parameter], config: AdamConfig):
        self.params = params
        self.config = config
        self.lr = config.lr
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]
        self.t = 0

    def step(self) -> None:
        c = self.config
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            _check_finite(p)
            m *= c.beta1
            m += (1 - c.beta1) * p.grad
            v *= c.beta2
            v += (1 - c.beta2) * (p.grad * p.grad)
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


def make_optimizer(params: list[Parameter], config) -> Sgd | Adam:
    if isinstance(config, SgdConfig):
        return Sgd(params, config)
    if isinstance(config, AdamConfig):
        return Adam(params, config)
    raise ConfigurationError(f"unknown optimizer config {type(config).__name__}")


class StepAt:
    """Multiply lr by factor at the end of each listed epoch."""

    def __init__(self, epochs: list[int], factor: float = 0.1):
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ConfigurationError(f"epochs must be strictly increasing, got {epochs}")
        if not 0 < factor < 1:
            raise ConfigurationError(f"factor must be in (0,1), got {factor}")
        self.epochs = list(epochs)
        self.factor = factor

    def update(self, lr: float, epoch: int, metric: float | None = None) -> float:
        return lr * self.factor if epoch in self.epochs else lr


class Plateau:
    """Decay lr when the metric stops improving for `patience` epochs.

    The first observation is the baseline; improvement means strictly lower
    by at least `threshold`. After a decay the stall counter resets.
    """

    def __init__(self, patience: int = 5, factor: float = 10 ** -0.5, threshold: float = 1e-6):
        if patience < 1:
            raise ConfigurationError(f"patience must be >= 1, got {patience}")
        if not 0 < factor < 1:
            raise ConfigurationError(f"factor must be in (0,1), got {factor}")
        self.patience = patience
        self.factor = factor
        self.threshold = threshold
        self.best: float | None = None
        self.stall = 0

    def update(self, lr: float, epoch: int, metric: float) -> float:
        if self.best is None or metric <= self.best - self.threshold:
            self.best = metric
            self.stall = 0
            return lr
        self.stall += 1
        if self.stall >= self.patience:
            self.stall = 0
            return lr * self.factor
        return lr


@dataclass
class RunMetrics:
    epoch: int
    train_loss: float
    eval_loss: float
    error: float
    lr: float
    seconds: float


METRICS_FIELDS = ("epoch", "train_loss", "eval_loss", "error", "lr", "seconds")


def write_metrics_csv(path: str, rows: list[RunMetrics]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(METRICS_FIELDS)
        for r in rows:
            w.writerow(
                [r.epoch, f"{r.train_loss:.6f}", f"{r.eval_loss:.6f}", f"{r.error:.6f}",
                 f"{r.lr:.8g}", f"{r.seconds:.3f}"]
            )


def _stack(samples: list[data.Sample], idxs: list[int], rng, use_augment: bool):
    x = np.stack([samples[i].features for i in idxs])
    if use_augment and x.ndim == 4:  # mirror+shift applies to image stacks only
        x = data.augment_batch(x, rng)
    y = np.array([samples[i].label for i in idxs], dtype=np.intp)
    return x, y


def train_epoch(
    net: nets.Network,
    samples: list[data.Sample],
    buckets: list[data.ShapeBucket],
    optimizer,
    nominal_batch: int,
    rng: np.random.Generator | None = None,
    use_augment: bool = False,
) -> float:
    """One pass over the bucketed epoch; returns mean train loss per sample.

    Micro-batches are regrouped into optimizer steps of exactly
    `nominal_batch` samples (the final step takes the remainder) and each
    step's gradient is the mean over its samples.
    """
    if not buckets:
        raise ConfigurationError("empty epoch: no micro-batches")
    steps: list[list[list[int]]] = []
    cur: list[list[int]] = []
    count = 0
    for bk in buckets:
        idxs = list(bk.indices)
        while idxs:
            take = min(len(idxs), nominal_batch - count)
            cur.append(idxs[:take])
            count += take
            idxs = idxs[take:]
            if count == nominal_batch:
                steps.append(cur)
                cur, count = [], 0
    if cur:
        steps.append(cur)

    total = 0.0
    seen = 0
    micro_id = 0
    for step in steps:
        step_n = sum(len(ch) for ch in step)
        zero_grad(optimizer.params)
        for chunk in step:
            x, y = _stack(samples, chunk, rng, use_augment)
            logits = net.forward(x, training=True)
            loss_sum = ops.cross_entropy_sum(logits, y)
            if not np.isfinite(loss_sum.value):
                raise TrainingAbort(f"non-finite loss in micro-batch {micro_id}")
            backward(ops.scale(loss_sum, 1.0 / step_n))
            total += float(loss_sum.value)
            seen += len(chunk)
            micro_id += 1
        optimizer.step()
    return total / seen


def evaluate(
    net: nets.Network, samples: list[data.Sample], batch_size: int = 128
) -> dict[str, float]:
    """Deterministic eval-mode pass: mean cross-entropy and top-1 error."""
    if not samples:
        return {"loss": float("nan"), "error": float("nan")}
    buckets = data.bucket_batches(samples, batch_size)
    total = 0.0
    wrong = 0
    for bk in buckets:
        x = np.stack([samples[i].features for i in bk.indices])
        y = np.array([samples[i].label for i in bk.indices], dtype=np.intp)
        z = net.forward(x, training=False).value
        zmax = z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z - zmax).sum(axis=1)) + zmax[:, 0]
        total += float((lse - z[np.arange(len(y)), y]).sum())
        wrong += int((z.argmax(axis=1) != y).sum())
    return {"loss": total / len(samples), "error": wrong / len(samples)}


def train_loop(
    net: nets.Network,
    train_samples: list[data.Sample],
    eval_samples: list[data.Sample],
    optimizer,
    schedule,
    epochs: int,
    batch_size: int,
    seed: int,
    use_augment: bool = False,
    metrics_path: str | None = None,
    checkpoint_dir: str | None = None,
    checkpoint_every: int = 0,
    log=None,
) -> list[RunMetrics]:
    """Epoch driver: reshuffle + rebucket, train, evaluate, schedule, log.

    Checkpoints go under checkpoint_dir/epochNNN every `checkpoint_every`
    epochs (0 disables) and under checkpoint_dir/best at each new best eval
    loss. Fully deterministic for a fixed seed, data, and initialization.
    """
    rows: list[RunMetrics] = []
    best_eval = float("inf")
    for epoch in range(1, epochs + 1):
        t0 = time.monotonic()
        rng = np.random.default_rng([seed, epoch])
        buckets = data.bucket_batches(train_samples, batch_size, rng=rng)
        train_loss = train_epoch(
            net, train_samples, buckets, optimizer, batch_size, rng=rng,
            use_augment=use_augment,
        )
        ev = evaluate(net, eval_samples)
        if schedule is not None:
            optimizer.lr = schedule.update(optimizer.lr, epoch, ev["loss"])
        row = RunMetrics(
            epoch, train_loss, ev["loss"], ev["error"], optimizer.lr,
            time.monotonic() - t0,
        )
        rows.append(row)
        if metrics_path:
            write_metrics_csv(metrics_path, rows)
        if checkpoint_dir:
            extra = {"epoch": epoch, "eval_loss": ev["loss"], "error": ev["error"]}
            if checkpoint_every and epoch % checkpoint_every == 0:
                nets.save_checkpoint(net, os.path.join(checkpoint_dir, f"epoch{epoch:03d}"), extra)
            if ev["loss"] < best_eval:
                best_eval = ev["loss"]
                nets.save_checkpoint(net, os.path.join(checkpoint_dir, "best"), extra)
        if log:
            log(
                f"epoch {epoch:3d}  train {train_loss:.4f}  eval {ev['loss']:.4f}  "
                f"err {ev['error']:.3f}  lr {optimizer.lr:.5f}  {row.seconds:.1f}s"
            )
    return rows
