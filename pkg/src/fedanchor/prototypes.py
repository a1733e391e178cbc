"""Class prototypes: client-side computation, server aggregation, anchors.

Clients summarize classes as mean embeddings. Classes covered by the
server's public data get a uniform cross-client mean of public-data
prototypes; classes missing from public data get a data-size-weighted
mean of local prototypes from the clients that hold them. The resulting
per-class anchors are the regression targets of the alignment loss.

Numerical contract: means use the same centered form as the sparse
aggregation, out = base + sum_i w_i * (v_i - base), base = first vector,
visited in a fixed order (rows in dataset order, clients ascending).
Aggregating identical vectors therefore returns that vector exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import Dataset, PublicDataset
from .errors import ProtocolViolationError, ShapeMismatchError
from .model import AdapterParams, AnchorSet, BackboneParams, embed_batch

KINDS = ("public_induced", "local", "external_reference", "global")


@dataclass
class Prototype:
    """A class-tagged vector in embedding space with its provenance."""

    class_id: int
    vector: np.ndarray  # (m,)
    kind: str
    weight: int = 0  # sample count; meaningful for kind="local"

    def __post_init__(self) -> None:
        self.vector = np.ascontiguousarray(self.vector, dtype=np.float64)
        if self.kind not in KINDS:
            raise ValueError(f"unknown prototype kind {self.kind!r}")
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("prototype vector must be finite")
        if self.kind == "local" and self.weight <= 0:
            raise ValueError("local prototypes need a positive sample count")


@dataclass(frozen=True)
class AvailabilityIndicator:
    """delta_c = 1 exactly when class c has no public samples."""

    delta: np.ndarray  # (num_classes,) uint8

    @classmethod
    def from_public(cls, public: PublicDataset, num_classes: int) -> "AvailabilityIndicator":
        delta = np.ones(num_classes, dtype=np.uint8)
        for c in public.covered_classes:
            delta[c] = 0
        return cls(delta)

    def missing(self, class_id: int) -> bool:
        return bool(self.delta[class_id])

    def covered_ids(self) -> list[int]:
        return [int(c) for c in np.flatnonzero(self.delta == 0)]

    def missing_ids(self) -> list[int]:
        return [int(c) for c in np.flatnonzero(self.delta == 1)]


@dataclass
class PrototypeBundle:
    """Server broadcast: external-reference and global prototype maps."""

    external: dict[int, np.ndarray] = field(default_factory=dict)
    global_: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        overlap = set(self.external) & set(self.global_)
        if overlap:
            raise ValueError(f"classes {sorted(overlap)} appear in both maps")


def uniform_mean(vectors: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """base + sum_i (v_i - base) / n, accumulated left to right."""
    base = vectors[0]
    acc = np.zeros_like(base)
    for v in vectors:
        acc = acc + (v - base)
    return base + acc / len(vectors)


def weighted_mean(vectors: Sequence[np.ndarray], weights: Sequence[int]) -> np.ndarray:
    """base + sum_i (w_i / total) * (v_i - base), accumulated left to right."""
    total = float(sum(weights))
    base = vectors[0]
    acc = np.zeros_like(base)
    for v, w in zip(vectors, weights):
        acc = acc + (w / total) * (v - base)
    return base + acc


def client_public_prototypes(
    public: PublicDataset,
    backbone: BackboneParams,
    adapter: AdapterParams,
) -> list[Prototype]:
    """One mean embedding per publicly covered class, ascending class id."""
    out = []
    for c in sorted(public.class_index):
        rows = public.class_index[c]
        z = embed_batch(public.inputs[rows], backbone, adapter)
        out.append(Prototype(class_id=c, vector=uniform_mean(z), kind="public_induced"))
    return out


def client_local_prototypes(
    local: Dataset,
    indicator: AvailabilityIndicator,
    backbone: BackboneParams,
    adapter: AdapterParams,
) -> list[Prototype]:
    """Mean embeddings for classes that are missing publicly but present locally."""
    out = []
    for c in sorted(local.class_index):
        if not indicator.missing(c):
            continue
        rows = local.class_index[c]
        z = embed_batch(local.inputs[rows], backbone, adapter)
        out.append(
            Prototype(class_id=c, vector=uniform_mean(z), kind="local", weight=len(rows))
        )
    return out


def _find(protos: Iterable[Prototype], class_id: int, kind: str) -> Prototype | None:
    for p in protos:
        if p.class_id == class_id and p.kind == kind:
            return p
    return None


def server_aggregate(
    received: dict[int, list[Prototype]],
    selected: Sequence[int],
    indicator: AvailabilityIndicator,
) -> PrototypeBundle:
    """Fold client prototypes into the round's broadcast bundle.

    Covered classes average uniformly over every selected client (each
    must have sent a public prototype for each covered class). Missing
    classes average over just the holders, weighted by sample counts;
    a missing class nobody holds is absent from the bundle.
    """
    order = sorted(int(k) for k in selected)
    external: dict[int, np.ndarray] = {}
    for c in indicator.covered_ids():
        vectors = []
        for k in order:
            proto = _find(received.get(k, ()), c, "public_induced")
            if proto is None:
                raise ProtocolViolationError(k, f"missing public prototype for class {c}")
            vectors.append(proto.vector)
        external[c] = uniform_mean(vectors)

    global_: dict[int, np.ndarray] = {}
    for c in indicator.missing_ids():
        vectors, weights = [], []
        for k in order:
            proto = _find(received.get(k, ()), c, "local")
            if proto is not None:
                vectors.append(proto.vector)
                weights.append(proto.weight)
        if vectors:
            global_[c] = weighted_mean(vectors, weights)
    return PrototypeBundle(external=external, global_=global_)


def build_anchors(bundle: PrototypeBundle, indicator: AvailabilityIndicator) -> AnchorSet:
    """Pick each class's anchor by availability: external if covered, global if held."""
    anchors: dict[int, np.ndarray] = {}
    for c, vec in bundle.external.items():
        if not indicator.missing(c):
            anchors[c] = vec
    for c, vec in bundle.global_.items():
        if indicator.missing(c):
            anchors[c] = vec
    return AnchorSet(anchors)


def prototype_dim(protos: Iterable[Prototype]) -> int | None:
    """Common embedding dimension, validated across a collection."""
    dim = None
    for p in protos:
        if dim is None:
            dim = p.vector.shape[0]
        elif p.vector.shape[0] != dim:
            raise ShapeMismatchError("embed_dim", dim, p.vector.shape[0])
    return dim
