"""Toy-scale training for the ranking convolution.

Plain SGD with momentum and weight decay (decay on weights, not biases),
a linear-warmup-then-multistep learning-rate policy, and the weighted-sum
loss combiner that ties the externally supplied instance-branch and
stuff-branch losses to the ranking loss.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .formats import InstancePrediction
from .ranking import ConvSpec, build_instance_tensor, conv_backward, forward, srm_loss

log = logging.getLogger(__name__)

INSTANCE_LOSS_NAMES = ("rpn_cls", "rpn_bbox", "cls", "bbox", "mask")


class DivergenceError(RuntimeError):
    """A non-finite loss or update appeared."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.02
    warmup_start_lr: float = 0.002
    warmup_iters: int = 40
    decay_points: tuple[tuple[int, float], ...] = ((1200, 0.002), (1600, 0.0002))
    total_iters: int = 2000
    momentum: float = 0.9
    weight_decay: float = 0.0001
    lambda_stuff: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.warmup_start_lr <= self.base_lr:
            raise ValueError("need 0 < warmup_start_lr <= base_lr")
        iters = [i for i, _ in self.decay_points]
        if iters != sorted(set(iters)):
            raise ValueError("decay points must be strictly increasing")

    @classmethod
    def full(cls, **overrides) -> "TrainConfig":
        """The full-length policy: warm up 0.002 -> 0.02 over the first
        2000 iterations, drop to 0.002 at 60k and 0.0002 at 80k."""
        args = dict(
            warmup_iters=2000,
            decay_points=((60000, 0.002), (80000, 0.0002)),
            total_iters=100000,
        )
        args.update(overrides)
        return cls(**args)

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """The same policy compressed ~50x for fast runs (the default)."""
        return cls(**overrides)


@dataclass(frozen=True)
class LossBreakdown:
    instance_losses: dict[str, float]
    stuff_loss: float
    srm_loss: float
    lambda_stuff: float
    total: float


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    """Learning rate for one iteration: linear warmup, then base, then the
    configured rate after each decay point."""
    if iteration < cfg.warmup_iters:
        frac = iteration / cfg.warmup_iters
        return cfg.warmup_start_lr + frac * (cfg.base_lr - cfg.warmup_start_lr)
    lr = cfg.base_lr
    for point, value in cfg.decay_points:
        if iteration >= point:
            lr = value
    return lr


def combine_losses(
    instance_losses: dict[str, float],
    stuff_loss: float,
    srm: float,
    lambda_stuff: float = 0.25,
) -> LossBreakdown:
    """Weighted total: sum of the five instance losses, lambda * stuff loss,
    plus the ranking loss."""
    if set(instance_losses) != set(INSTANCE_LOSS_NAMES):
        raise ValueError(
            f"expected instance losses {INSTANCE_LOSS_NAMES}, got {sorted(instance_losses)}"
        )
    parts = list(instance_losses.values()) + [stuff_loss, srm]
    if not all(math.isfinite(v) for v in parts):
        raise DivergenceError("non-finite loss component")
    total = sum(instance_losses.values()) + lambda_stuff * stuff_loss + srm
    return LossBreakdown(
        instance_losses=dict(instance_losses),
        stuff_loss=stuff_loss,
        srm_loss=srm,
        lambda_stuff=lambda_stuff,
        total=total,
    )


def sgd_step(
    params: list[tuple[str, np.ndarray]],
    grads: dict[str, np.ndarray],
    state: dict[str, np.ndarray],
    lr: float,
    cfg: TrainConfig,
) -> None:
    """In-place momentum update; weight decay applies to weight tensors
    (names starting with 'w'), never to biases."""
    for name, value in params:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name}")
        if name.startswith("w") and cfg.weight_decay:
            g = g + cfg.weight_decay * value
        v = state.get(name)
        if v is None:
            v = np.zeros_like(value)
        v = cfg.momentum * v + g
        state[name] = v
        value -= lr * v


@dataclass
class TrainScene:
    """One training example: predicted instances (categories already mapped
    to channel indices) and the non-overlapping channel label map, -1 where
    no thing label exists."""

    instances: list[InstancePrediction]
    label: np.ndarray  # (H, W) int, -1 = no label
    name: str = ""


def train_srm(
    scenes: list[TrainScene],
    channels: int,
    cfg: TrainConfig = TrainConfig(),
    shape: str = "sep7",
) -> tuple[ConvSpec, list[tuple[int, float, float]]]:
    """Fit the ranking convolution on a scene corpus.

    Supervision covers only conflicting pixels that carry a valid channel
    label; scenes without any such pixel contribute nothing (a warning is
    logged once per scene). Returns the trained weights and the loss curve
    as (iteration, lr, loss) rows.
    """
    rng = np.random.default_rng(cfg.seed)
    spec = ConvSpec.initialize(shape, channels, rng)

    prepared = []
    for idx, scene in enumerate(scenes):
        h, w = scene.label.shape
        tensor, conflict = build_instance_tensor(scene.instances, channels, h, w)
        supervised = conflict & (scene.label >= 0) & (scene.label < channels)
        if not supervised.any():
            log.warning(
                "scene %s has no supervised pixels; it will not affect training",
                scene.name or idx,
            )
        prepared.append((tensor, scene.label, supervised))

    state: dict[str, np.ndarray] = {}
    curve: list[tuple[int, float, float]] = []
    for it in range(cfg.total_iters):
        tensor, label, supervised = prepared[it % len(prepared)]
        lr = lr_at(it, cfg)
        if not supervised.any():
            # skipped scene: no gradient, no update (decay included)
            curve.append((it, lr, 0.0))
            continue
        score = forward(tensor, spec)
        loss, grad_logits = srm_loss(score, label, supervised)
        if not math.isfinite(loss):
            raise DivergenceError(f"loss diverged at iteration {it}", iteration=it)
        layer_grads, _ = conv_backward(tensor, spec, grad_logits)
        grads = {}
        for k, (gw, gb) in enumerate(layer_grads):
            grads[f"w{k}"] = gw
            grads[f"b{k}"] = gb
        sgd_step(spec.trainable(), grads, state, lr, cfg)
        curve.append((it, lr, loss))
    return spec, curve


def write_loss_curve(curve: list[tuple[int, float, float]], path) -> None:
    with open(path, "w") as f:
        f.write("iteration,lr,loss\n")
        for it, lr, loss in curve:
            f.write(f"{it},{lr:.10g},{loss:.10g}\n")
