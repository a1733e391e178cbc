"""Top-K sparse adapter uploads and masked, data-size-weighted aggregation.

Clients rank adapter coordinates by |local - global| and transmit the K
largest as (index, value) pairs; values are absolute parameters, not
deltas. The server averages each coordinate over exactly the clients
that sent it, weighting by training-set size, and keeps the prior global
value for coordinates nobody sent.

Numerical contract: every weighted mean here is evaluated in centered
form, out = base + sum_k w_k * (v_k - base), where base is the first
sender's value and senders are visited in list order (the orchestrator
fixes that order as ascending client id). Each term is computed as
(size / total) * (v - base). This makes a single sender, identical
senders, and untouched coordinates bit-exact, and makes the summation
order explicit enough to reproduce from any implementation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AggregationError, ShapeMismatchError


@dataclass(frozen=True)
class SelectionMask:
    """Sorted distinct coordinate indices into a flat adapter of length dim."""

    dim: int
    selected: np.ndarray  # (k,) int64, strictly increasing

    def __post_init__(self) -> None:
        sel = np.ascontiguousarray(self.selected, dtype=np.int64)
        object.__setattr__(self, "selected", sel)
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if sel.size:
            if sel[0] < 0 or sel[-1] >= self.dim:
                raise ValueError("selected indices out of range")
            if np.any(np.diff(sel) <= 0):
                raise ValueError("selected indices must be strictly increasing")

    def __len__(self) -> int:
        return int(self.selected.size)


@dataclass
class SparseAdapterUpdate:
    """Masked adapter upload: values at mask.selected plus sender data size."""

    mask: SelectionMask
    values: np.ndarray
    sender_data_size: int

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape[0] != len(self.mask):
            raise ShapeMismatchError("values", len(self.mask), self.values.shape[0])
        if self.sender_data_size < 0:
            raise ValueError("sender_data_size must be >= 0")


def update_magnitude(local: np.ndarray, global_: np.ndarray) -> np.ndarray:
    """Element-wise |local - global|; used for selection only, never averaging."""
    local = np.asarray(local, dtype=np.float64)
    global_ = np.asarray(global_, dtype=np.float64)
    if local.shape != global_.shape:
        raise ShapeMismatchError("adapter", global_.shape[0], local.shape[0])
    return np.abs(local - global_)


def topk_select(u: np.ndarray, k_budget: int) -> SelectionMask:
    """Indices of the min(k_budget, d) largest entries; ties go to the lowest index."""
    if k_budget < 0:
        raise ValueError("k_budget must be >= 0")
    u = np.asarray(u, dtype=np.float64)
    d = u.shape[0]
    k = min(int(k_budget), d)
    # stable sort of -u keeps equal magnitudes in index order
    order = np.argsort(-u, kind="stable")
    return SelectionMask(dim=d, selected=np.sort(order[:k]))


def make_sparse_update(
    local: np.ndarray,
    global_: np.ndarray,
    k_budget: int,
    data_size: int,
) -> SparseAdapterUpdate:
    """Select by magnitude, then carry the local values at the selected indices."""
    mask = topk_select(update_magnitude(local, global_), k_budget)
    return SparseAdapterUpdate(
        mask=mask,
        values=np.asarray(local, dtype=np.float64)[mask.selected].copy(),
        sender_data_size=int(data_size),
    )


def aggregate_masked(
    global_: np.ndarray,
    updates: list[SparseAdapterUpdate],
) -> np.ndarray:
    """Per-coordinate weighted mean over the senders of that coordinate.

    Coordinates in no mask keep global_ bit-identical. Raises if some
    coordinate was sent only by clients whose data sizes sum to zero.
    """
    global_ = np.asarray(global_, dtype=np.float64)
    d = global_.shape[0]
    for u in updates:
        if u.mask.dim != d:
            raise ShapeMismatchError("adapter", d, u.mask.dim)

    count = np.zeros(d, dtype=np.int64)
    total = np.zeros(d, dtype=np.float64)
    for u in updates:
        count[u.mask.selected] += 1
        total[u.mask.selected] += float(u.sender_data_size)
    bad = (count > 0) & (total == 0.0)
    if np.any(bad):
        raise AggregationError(
            f"coordinate {int(np.flatnonzero(bad)[0])} was sent only by clients "
            "with zero data size; weights undefined"
        )

    # base = first sender's value per coordinate (reverse order, overwrite wins)
    base = np.zeros(d, dtype=np.float64)
    for u in reversed(updates):
        base[u.mask.selected] = u.values
    acc = np.zeros(d, dtype=np.float64)
    for u in updates:
        sel = u.mask.selected
        weight = float(u.sender_data_size) / total[sel]
        acc[sel] += weight * (u.values - base[sel])
    return np.where(count > 0, base + acc, global_)


def uplink_cost(update: SparseAdapterUpdate) -> tuple[int, int]:
    """(value count, index count) transmitted by one sparse update."""
    k = len(update.mask)
    return k, k
