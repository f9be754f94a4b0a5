"""Toy-scale trainer: AdamW with warmup+cosine schedule and smoothed cross entropy.

Deliberately desk-sized: a MAC budget guards against accidentally training
full-size variants on CPU. Training is reproducible: a single seed drives
initialization, batch order, and stochastic depth, and gradient accumulation
order is fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import analysis, arch
from . import autograd as ag


class BudgetExceededError(RuntimeError):
    """Spec too large for the configured per-sample MAC budget."""


class NonFiniteLossError(FloatingPointError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    lr: float = 4e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.05
    adam_eps: float = 1e-8
    warmup_steps: int = 10
    total_steps: Optional[int] = None  # resolved by train_toy when None
    label_smoothing: float = 0.1
    drop_path_rate: float = 0.0
    mac_budget: int = 50_000_000  # per-sample forward MACs

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("betas must be in (0, 1)")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must be in [0, 1)")
        if not 0.0 <= self.drop_path_rate < 1.0:
            raise ValueError("drop_path_rate must be in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def lr_at(config: TrainConfig, step_index: int) -> float:
    """Linear warmup from zero, then cosine decay to zero at total_steps."""
    total = config.total_steps
    if total is None:
        raise ValueError("total_steps must be resolved before computing the schedule")
    if step_index < config.warmup_steps:
        return config.lr * step_index / config.warmup_steps
    span = max(total - config.warmup_steps, 1)
    t = min(step_index - config.warmup_steps, span)
    return config.lr * 0.5 * (1.0 + math.cos(math.pi * t / span))


def cross_entropy_smoothed(logits: np.ndarray, labels: np.ndarray, eps: float) -> float:
    """Smoothed cross entropy: target mass 1-eps on the true class, eps/K elsewhere."""
    value, _ = ag.CrossEntropySmoothed.forward({"labels": np.asarray(labels), "eps": eps}, np.asarray(logits))
    return float(value)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: AdamState, config: TrainConfig, step_index: int
               ) -> tuple[dict[str, np.ndarray], AdamState]:
    """One decoupled-weight-decay Adam update at the scheduled learning rate.

    step_index counts optimizer steps from 0; bias correction uses step_index+1.
    """
    lr = lr_at(config, step_index)
    t = step_index + 1
    bc1 = 1.0 - config.beta1 ** t
    bc2 = 1.0 - config.beta2 ** t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient/parameter shape mismatch for {name!r}: {g.shape} vs {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * (g * g)
        p *= np.float32(1.0 - lr * config.weight_decay)
        p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + config.adam_eps)).astype(p.dtype)
    return params, state


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float
    lr: float

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "loss": self.loss, "accuracy": self.accuracy, "lr": self.lr}


def metrics_to_jsonl(history: list[EpochMetrics]) -> str:
    import json

    return "\n".join(json.dumps(m.to_dict()) for m in history)


@dataclass
class LabeledDataset:
    inputs: np.ndarray  # (M, H, W, C) float32
    labels: np.ndarray  # (M,) int

    def __post_init__(self):
        if self.inputs.ndim != 4:
            raise ValueError("inputs must be rank 4 (M,H,W,C)")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("labels must be a vector matching the number of inputs")

    def __len__(self) -> int:
        return self.inputs.shape[0]


def make_blobs(n: int, num_classes: int, resolution: int = 32, channels: int = 3,
               noise: float = 0.3, seed: int = 0) -> LabeledDataset:
    """Linearly separable synthetic blobs: one channel signature per class."""
    rng = np.random.default_rng(seed)
    protos = rng.standard_normal((num_classes, channels)).astype(np.float32)
    protos /= np.maximum(np.linalg.norm(protos, axis=1, keepdims=True), 1e-6)
    labels = np.arange(n) % num_classes
    x = protos[labels][:, None, None, :] + noise * rng.standard_normal(
        (n, resolution, resolution, channels)).astype(np.float32)
    order = rng.permutation(n)
    return LabeledDataset(x[order].astype(np.float32), labels[order].astype(np.int64))


def make_random_labels(n: int, num_classes: int, resolution: int = 32, channels: int = 3,
                       seed: int = 0) -> LabeledDataset:
    """Pure-noise images with random labels; a memorization-capacity probe."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, resolution, resolution, channels)).astype(np.float32)
    y = rng.integers(0, num_classes, size=n).astype(np.int64)
    return LabeledDataset(x, y)


def _with_drop_path(spec: arch.ModelSpec, rate: float) -> arch.ModelSpec:
    if rate == 0.0:
        return spec
    stages = tuple(replace(s, block=replace(s.block, drop_path_rate=rate)) for s in spec.stages)
    return replace(spec, stages=stages)


@dataclass
class TrainResult:
    history: list[EpochMetrics]
    weights: arch.ModelWeights


def train_toy(spec: arch.ModelSpec, dataset: LabeledDataset, config: TrainConfig,
              on_epoch=None) -> TrainResult:
    """Train a desk-scale spec; returns per-epoch loss/accuracy/lr history
    plus the trained weights."""
    resolution = dataset.inputs.shape[1]
    macs = analysis.count_macs(spec, resolution)
    if macs > config.mac_budget:
        raise BudgetExceededError(
            f"spec needs {macs} MACs per sample at {resolution}x{resolution}, "
            f"budget is {config.mac_budget}"
        )
    spec = _with_drop_path(spec, config.drop_path_rate)
    weights = arch.init_weights(spec, config.seed)
    params = weights.arrays
    trainable = {d.name for d in arch.parameter_defs(spec) if d.trainable}

    n = len(dataset)
    steps_per_epoch = (n + config.batch_size - 1) // config.batch_size
    if config.total_steps is None:
        config = replace(config, total_steps=config.epochs * steps_per_epoch)

    rng = np.random.default_rng(config.seed)
    state = AdamState()
    history: list[EpochMetrics] = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        correct = 0
        last_lr = 0.0
        for b in range(steps_per_epoch):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            xb = dataset.inputs[idx]
            yb = dataset.labels[idx]
            tape = ag.Tape()
            runner = ag.Runner(tape)
            logits = arch.run_model(runner, spec, params, xb, "train", rng)
            loss_ref = tape.apply(ag.CrossEntropySmoothed, [logits],
                                  labels=yb, eps=config.label_smoothing)
            loss = float(loss_ref.value)
            if not np.isfinite(loss):
                raise NonFiniteLossError(step, loss)
            grads = tape.backward(loss_ref).named()
            grads = {k: v for k, v in grads.items() if k in trainable}
            last_lr = lr_at(config, step)
            adamw_step(params, grads, state, config, step)
            losses.append(loss)
            correct += int((logits.value.argmax(axis=1) == yb).sum())
            step += 1
        history.append(EpochMetrics(epoch, float(np.mean(losses)), correct / n, last_lr))
        if on_epoch is not None:
            on_epoch(history[-1])
    return TrainResult(history, arch.ModelWeights(spec, params, dict(weights.metadata)))
