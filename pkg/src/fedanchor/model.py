"""Split network: private backbone, shared feature adapter, shared classifier head.

The architecture is fixed: dense(input -> hidden) + ReLU backbone,
dense(hidden -> embed) feature adapter, dense(embed -> classes) head.
Losses are unnormalized sums over the batch. All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ShapeMismatchError


@dataclass(frozen=True)
class NetworkShape:
    """Dimensions of the split network."""

    input_dim: int
    hidden_dim: int
    embed_dim: int
    num_classes: int

    def __post_init__(self) -> None:
        for name in ("input_dim", "hidden_dim", "embed_dim", "num_classes"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    @property
    def adapter_size(self) -> int:
        """Flattened adapter length d."""
        h, m, c = self.hidden_dim, self.embed_dim, self.num_classes
        return h * m + m + m * c + c

    @property
    def backbone_size(self) -> int:
        return self.input_dim * self.hidden_dim + self.hidden_dim


def _check_axis(name: str, expected: int, got: int) -> None:
    if expected != got:
        raise ShapeMismatchError(name, expected, got)


@dataclass
class BackboneParams:
    """Client-private feature extractor parameters."""

    weight: np.ndarray  # (input_dim, hidden_dim)
    bias: np.ndarray  # (hidden_dim,)

    def copy(self) -> "BackboneParams":
        return BackboneParams(self.weight.copy(), self.bias.copy())


@dataclass
class AdapterParams:
    """Shared parameters: feature adapter plus classifier head.

    The flat form concatenates feature_weight (row-major), feature_bias,
    head_weight (row-major), head_bias, in that order. flatten/from_flat
    round-trip exactly.
    """

    feature_weight: np.ndarray  # (hidden_dim, embed_dim)
    feature_bias: np.ndarray  # (embed_dim,)
    head_weight: np.ndarray  # (embed_dim, num_classes)
    head_bias: np.ndarray  # (num_classes,)

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [
                np.ascontiguousarray(self.feature_weight).ravel(),
                np.ascontiguousarray(self.feature_bias).ravel(),
                np.ascontiguousarray(self.head_weight).ravel(),
                np.ascontiguousarray(self.head_bias).ravel(),
            ]
        )

    @classmethod
    def from_flat(cls, vec: np.ndarray, shape: NetworkShape) -> "AdapterParams":
        h, m, c = shape.hidden_dim, shape.embed_dim, shape.num_classes
        _check_axis("adapter_size", shape.adapter_size, vec.shape[0])
        splits = np.cumsum([h * m, m, m * c])
        fw, fb, hw, hb = np.split(np.asarray(vec, dtype=np.float64), splits)
        return cls(
            feature_weight=fw.reshape(h, m).copy(),
            feature_bias=fb.copy(),
            head_weight=hw.reshape(m, c).copy(),
            head_bias=hb.copy(),
        )

    def copy(self) -> "AdapterParams":
        return AdapterParams(
            self.feature_weight.copy(),
            self.feature_bias.copy(),
            self.head_weight.copy(),
            self.head_bias.copy(),
        )


@dataclass
class LabeledBatch:
    """A batch of inputs with integer class labels."""

    inputs: np.ndarray  # (n, input_dim)
    labels: np.ndarray  # (n,) int64 in [0, num_classes)

    def __post_init__(self) -> None:
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ValueError("inputs must be a nonempty 2-d array")
        _check_axis("batch", self.inputs.shape[0], self.labels.shape[0])


@dataclass
class AnchorSet:
    """Per-class regression targets for the alignment loss.

    Classes may be absent; samples of an anchorless class contribute
    nothing to the alignment loss.
    """

    anchors: dict[int, np.ndarray] = field(default_factory=dict)

    def __contains__(self, class_id: int) -> bool:
        return class_id in self.anchors

    def __len__(self) -> int:
        return len(self.anchors)

    def get(self, class_id: int) -> np.ndarray | None:
        return self.anchors.get(class_id)

    def arrays(self, num_classes: int, embed_dim: int) -> tuple[np.ndarray, np.ndarray]:
        """Dense (mask, matrix) form for the training kernels."""
        mask = np.zeros(num_classes, dtype=np.uint8)
        mat = np.zeros((num_classes, embed_dim), dtype=np.float64)
        for c, vec in self.anchors.items():
            _check_axis("embed_dim", embed_dim, vec.shape[0])
            mask[c] = 1
            mat[c] = vec
        return mask, mat


def init_backbone(shape: NetworkShape, rng: np.random.Generator) -> BackboneParams:
    """Gaussian weights scaled by 1/sqrt(fan_in); zero biases."""
    w = rng.standard_normal((shape.input_dim, shape.hidden_dim)) / np.sqrt(shape.input_dim)
    return BackboneParams(weight=w, bias=np.zeros(shape.hidden_dim))


def init_adapter(shape: NetworkShape, rng: np.random.Generator) -> AdapterParams:
    fw = rng.standard_normal((shape.hidden_dim, shape.embed_dim)) / np.sqrt(shape.hidden_dim)
    hw = rng.standard_normal((shape.embed_dim, shape.num_classes)) / np.sqrt(shape.embed_dim)
    return AdapterParams(
        feature_weight=fw,
        feature_bias=np.zeros(shape.embed_dim),
        head_weight=hw,
        head_bias=np.zeros(shape.num_classes),
    )


def embed_batch(x: np.ndarray, backbone: BackboneParams, adapter: AdapterParams) -> np.ndarray:
    """Embeddings of a batch of inputs; the classifier head plays no part."""
    x = np.asarray(x, dtype=np.float64)
    _check_axis("input_dim", backbone.weight.shape[0], x.shape[-1])
    _check_axis("hidden_dim", backbone.weight.shape[1], adapter.feature_weight.shape[0])
    hidden = np.maximum(x @ backbone.weight + backbone.bias, 0.0)
    return hidden @ adapter.feature_weight + adapter.feature_bias


def embed(x: np.ndarray, backbone: BackboneParams, adapter: AdapterParams) -> np.ndarray:
    """Embedding of a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeMismatchError("input rank", 1, x.ndim)
    return embed_batch(x[None, :], backbone, adapter)[0]


def logits_batch(x: np.ndarray, backbone: BackboneParams, adapter: AdapterParams) -> np.ndarray:
    z = embed_batch(x, backbone, adapter)
    _check_axis("embed_dim", adapter.head_weight.shape[0], z.shape[-1])
    return z @ adapter.head_weight + adapter.head_bias


def logits(x: np.ndarray, backbone: BackboneParams, adapter: AdapterParams) -> np.ndarray:
    """Pre-softmax class scores for a single input (softmax lives in the loss)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeMismatchError("input rank", 1, x.ndim)
    return logits_batch(x[None, :], backbone, adapter)[0]


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    shift = scores.max(axis=1, keepdims=True)
    stable = scores - shift
    return stable - np.log(np.exp(stable).sum(axis=1, keepdims=True))


def loss_ce(batch: LabeledBatch, backbone: BackboneParams, adapter: AdapterParams) -> float:
    """Cross entropy summed over the batch (no division by batch size)."""
    scores = logits_batch(batch.inputs, backbone, adapter)
    if batch.labels.max(initial=-1) >= scores.shape[1] or batch.labels.min(initial=0) < 0:
        raise ValueError("labels out of class range")
    lsm = _log_softmax(scores)
    return float(-lsm[np.arange(batch.labels.shape[0]), batch.labels].sum())


def loss_proto(
    batch: LabeledBatch,
    backbone: BackboneParams,
    adapter: AdapterParams,
    anchors: AnchorSet,
) -> float:
    """Sum of squared distances from embeddings to their class anchors.

    Samples whose class has no anchor contribute zero.
    """
    if len(anchors) == 0:
        return 0.0
    z = embed_batch(batch.inputs, backbone, adapter)
    total = 0.0
    for i in range(z.shape[0]):
        a = anchors.get(int(batch.labels[i]))
        if a is not None:
            diff = z[i] - a
            total += float(diff @ diff)
    return total


def loss_total(
    batch: LabeledBatch,
    backbone: BackboneParams,
    adapter: AdapterParams,
    anchors: AnchorSet,
    lam: float,
) -> float:
    """Supervision plus lam times alignment."""
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    base = loss_ce(batch, backbone, adapter)
    if lam == 0.0:
        return base
    return base + lam * loss_proto(batch, backbone, adapter, anchors)


def grad_total(
    batch: LabeledBatch,
    backbone: BackboneParams,
    adapter: AdapterParams,
    anchors: AnchorSet,
    lam: float,
) -> tuple[BackboneParams, AdapterParams]:
    """Analytic gradients of loss_total for every parameter tensor.

    ReLU's subgradient at exactly 0 is taken as 0. Returned containers
    hold gradients, not parameters.
    """
    shape_c = adapter.head_weight.shape[1]
    shape_m = adapter.feature_weight.shape[1]
    mask, mat = anchors.arrays(shape_c, shape_m)
    gbw, gbb, gfw, gfb, ghw, ghb = _kernels.grad_batch(
        np.ascontiguousarray(batch.inputs, dtype=np.float64),
        np.ascontiguousarray(batch.labels, dtype=np.int64),
        np.ascontiguousarray(backbone.weight, dtype=np.float64),
        np.ascontiguousarray(backbone.bias, dtype=np.float64),
        np.ascontiguousarray(adapter.feature_weight, dtype=np.float64),
        np.ascontiguousarray(adapter.feature_bias, dtype=np.float64),
        np.ascontiguousarray(adapter.head_weight, dtype=np.float64),
        np.ascontiguousarray(adapter.head_bias, dtype=np.float64),
        mask,
        mat,
        float(lam),
    )
    return BackboneParams(gbw, gbb), AdapterParams(gfw, gfb, ghw, ghb)


def sgd_step(
    param: np.ndarray,
    grad: np.ndarray,
    velocity: np.ndarray,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> tuple[np.ndarray, np.ndarray]:
    """One momentum step on a single tensor: v <- mu v + (g + omega p); p <- p - eta v."""
    if param.shape != grad.shape or param.shape != velocity.shape:
        raise ShapeMismatchError("param", param.shape, grad.shape)
    flat_p, flat_v = _kernels.sgd_update(
        np.ascontiguousarray(param, dtype=np.float64).ravel(),
        np.ascontiguousarray(grad, dtype=np.float64).ravel(),
        np.ascontiguousarray(velocity, dtype=np.float64).ravel(),
        float(lr),
        float(momentum),
        float(weight_decay),
    )
    return flat_p.reshape(param.shape), flat_v.reshape(param.shape)
