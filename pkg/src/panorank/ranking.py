"""Occlusion-aware spatial ranking.

Instance predictions are rasterized into a C-channel 0/1 tensor (one
channel per thing category), pushed through a small convolution to get a
per-pixel score map, and normalized to a probability distribution over
channels. Training supervises only conflicting pixels (covered by two or
more instance masks) with cross entropy against the non-overlapping
category label; at inference each instance's ranking score is the mean of
its channel's probabilities over its own mask.

Three convolution shapes are supported: 1x1, 3x3, and a wide-receptive-
field separable pass (1x7 followed by 7x1, chained, with a single bias on
the second stage so the pair is exactly equivalent to one dense 7x7
convolution).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import _backend
from .formats import InstancePrediction

SHAPES = ("1x1", "3x3", "sep7")

_MAGIC = b"SRMW"
_VERSION = 1
_SHAPE_TAGS = {"1x1": 0, "3x3": 1, "sep7": 2}
_TAG_SHAPES = {v: k for k, v in _SHAPE_TAGS.items()}


class WeightFormatError(ValueError):
    """A weight file fails magic/version/shape validation."""


@dataclass
class ConvSpec:
    """Convolution weights for the ranking score map.

    weights/biases hold one entry per chained stage. The separable shape
    has two stages; its first-stage bias exists but is kept at zero so the
    chain stays a single linear convolution.
    """

    shape: str
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def channels(self) -> int:
        return self.weights[0].shape[0]

    @classmethod
    def kernel_dims(cls, shape: str) -> list[tuple[int, int]]:
        if shape == "1x1":
            return [(1, 1)]
        if shape == "3x3":
            return [(3, 3)]
        if shape == "sep7":
            return [(1, 7), (7, 1)]
        raise WeightFormatError(f"unknown conv shape {shape!r}")

    @classmethod
    def initialize(cls, shape: str, channels: int, rng: np.random.Generator) -> "ConvSpec":
        """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
        weights, biases = [], []
        for kh, kw in cls.kernel_dims(shape):
            bound = 1.0 / np.sqrt(channels * kh * kw)
            weights.append(rng.uniform(-bound, bound, (channels, channels, kh, kw)))
            biases.append(np.zeros(channels))
        return cls(shape=shape, weights=weights, biases=biases)

    def trainable(self) -> list[tuple[str, np.ndarray]]:
        """(name, array) pairs updated by the optimizer; the separable
        first-stage bias is excluded (pinned at zero)."""
        params = []
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            params.append((f"w{k}", w))
            if not (self.shape == "sep7" and k == 0):
                params.append((f"b{k}", b))
        return params


@dataclass
class ScoreMap:
    logits: np.ndarray  # (C, H, W)
    probs: np.ndarray  # (C, H, W), per-pixel distribution over channels


def build_instance_tensor(
    instances: list[InstancePrediction], channels: int, h: int, w: int
) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize instances into a (C, H, W) 0/1 tensor plus the conflict
    mask of pixels covered by at least two masks (any categories)."""
    tensor = np.zeros((channels, h, w))
    cover = np.zeros((h, w), dtype=np.int32)
    for inst in instances:
        if not 0 <= inst.category < channels:
            raise ValueError(
                f"instance category {inst.category} outside [0, {channels})"
            )
        if inst.mask.shape != (h, w):
            raise ValueError(f"mask shape {inst.mask.shape} != {(h, w)}")
        tensor[inst.category][inst.mask] = 1.0
        cover += inst.mask
    return tensor, cover >= 2


def channel_softmax(logits: np.ndarray) -> np.ndarray:
    """Per-pixel probability distribution over channels, max-shifted so
    extreme logits stay finite."""
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def forward(tensor: np.ndarray, spec: ConvSpec) -> ScoreMap:
    logits = _run_conv(tensor, spec)[-1]
    return ScoreMap(logits=logits, probs=channel_softmax(logits))


def _run_conv(tensor: np.ndarray, spec: ConvSpec) -> list[np.ndarray]:
    """All stage outputs (the last one is the logits)."""
    if tensor.shape[0] != spec.channels:
        raise ValueError(
            f"tensor has {tensor.shape[0]} channels, weights expect {spec.channels}"
        )
    x = np.ascontiguousarray(tensor, dtype=np.float64)
    outs = []
    for w, b in zip(spec.weights, spec.biases):
        x = _backend.conv2d_forward(
            x, np.ascontiguousarray(w), np.ascontiguousarray(b)
        )
        outs.append(x)
    return outs

def conv_backward(
    tensor: np.ndarray, spec: ConvSpec, grad_logits: np.ndarray
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Adjoints of the convolution chain.

    Returns per-stage (grad_weights, grad_bias) plus the gradient with
    respect to the input tensor.
    """
    acts = [np.ascontiguousarray(tensor, dtype=np.float64)] + _run_conv(tensor, spec)
    gy = np.ascontiguousarray(grad_logits, dtype=np.float64)
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(spec.weights)  # type: ignore[list-item]
    for k in reversed(range(len(spec.weights))):
        w = np.ascontiguousarray(spec.weights[k])
        kh, kw = w.shape[2], w.shape[3]
        gw, gb = _backend.conv2d_grad_weights(acts[k], gy, kh, kw)
        grads[k] = (gw, gb)
        gy = _backend.conv2d_grad_input(gy, w)
    return grads, gy


def srm_loss(
    score: ScoreMap, label: np.ndarray, supervised: np.ndarray
) -> tuple[float, np.ndarray]:
    """Ignore-masked cross entropy on the score map.

    label holds channel indices per pixel; only pixels with supervised
    True contribute. Returns the mean loss and its gradient with respect
    to the logits ((probs - onehot) / n on supervised pixels).
    """
    n = int(np.count_nonzero(supervised))
    grad = np.zeros_like(score.logits)
    if n == 0:
        return 0.0, grad
    ii, jj = np.nonzero(supervised)
    cls = label[ii, jj]
    if cls.min() < 0 or cls.max() >= score.logits.shape[0]:
        raise ValueError("label channel out of range on a supervised pixel")
    p = score.probs[:, ii, jj]  # (C, n)
    picked = p[cls, np.arange(len(ii))]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    grad[:, ii, jj] = p / n
    grad[cls, ii, jj] -= 1.0 / n
    return loss, grad


def instance_score(score: ScoreMap, inst: InstancePrediction) -> float:
    """Mean probability of the instance's channel over its mask."""
    area = int(np.count_nonzero(inst.mask))
    if area == 0:
        raise ValueError("instance mask is empty")
    return float(score.probs[inst.category][inst.mask].mean())


def save_weights(spec: ConvSpec, path) -> None:
    header = struct.pack(
        "<4sIBI", _MAGIC, _VERSION, _SHAPE_TAGS[spec.shape], spec.channels
    )
    blobs = [np.ascontiguousarray(a, dtype=np.float64).tobytes() for a in spec.weights]
    blobs += [np.ascontiguousarray(a, dtype=np.float64).tobytes() for a in spec.biases]
    with open(path, "wb") as f:
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_weights(path) -> ConvSpec:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 13 or data[:4] != _MAGIC:
        raise WeightFormatError("not a ranking weight file")
    magic, version, tag, channels = struct.unpack("<4sIBI", data[:13])
    if version != _VERSION:
        raise WeightFormatError(f"unsupported weight version {version}")
    if tag not in _TAG_SHAPES:
        raise WeightFormatError(f"unknown shape tag {tag}")
    shape = _TAG_SHAPES[tag]
    dims = ConvSpec.kernel_dims(shape)
    expected = 13 + 8 * sum(channels * channels * kh * kw for kh, kw in dims)
    expected += 8 * channels * len(dims)
    if len(data) != expected:
        raise WeightFormatError("weight file size does not match header")
    offset = 13
    weights, biases = [], []
    for kh, kw in dims:
        count = channels * channels * kh * kw
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        weights.append(arr.reshape(channels, channels, kh, kw).copy())
        offset += count * 8
    for _ in dims:
        arr = np.frombuffer(data, dtype="<f8", count=channels, offset=offset)
        biases.append(arr.copy())
        offset += channels * 8
    return ConvSpec(shape=shape, weights=weights, biases=biases)
