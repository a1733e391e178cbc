"""Independent oracles used across the test suite.

Everything here is deliberately written as straight-line scalar loops
(or extended precision via mpmath), separate from the library's own
vectorized code paths. Oracles re-derive the protocol-level content:
which rows, which order, which weights, which coordinates. numpy's
matrix product is the one shared arithmetic substrate; where bit
equality is asserted, both sides feed identical arrays through it.
"""

from __future__ import annotations

import mpmath
import numpy as np


def seq_mean_oracle(vectors: list[np.ndarray]) -> np.ndarray:
    """Uniform centered mean, per-coordinate scalar loop, left to right."""
    dim = len(vectors[0])
    out = np.empty(dim)
    for c in range(dim):
        base = float(vectors[0][c])
        acc = 0.0
        for v in vectors:
            acc += float(v[c]) - base
        out[c] = base + acc / len(vectors)
    return out


def weighted_mean_oracle(vectors: list[np.ndarray], weights: list[int]) -> np.ndarray:
    """Weighted centered mean, per-coordinate scalar loop, left to right."""
    total = float(sum(weights))
    dim = len(vectors[0])
    out = np.empty(dim)
    for c in range(dim):
        base = float(vectors[0][c])
        acc = 0.0
        for v, w in zip(vectors, weights):
            acc += (w / total) * (float(v[c]) - base)
        out[c] = base + acc
    return out


def topk_oracle(u: np.ndarray, k: int) -> list[int]:
    """Full-sort top-k with the lowest-index tie rule, returned ascending."""
    ranked = sorted(range(len(u)), key=lambda i: (-u[i], i))
    return sorted(ranked[: min(k, len(u))])


def masked_average_oracle(global_: np.ndarray, updates) -> np.ndarray:
    """Per-coordinate scalar re-derivation of the masked weighted average.

    ``updates`` is a list of objects with .mask.selected, .values and
    .sender_data_size, visited in list order exactly like the library.
    """
    d = len(global_)
    out = np.empty(d)
    positions = [
        {int(idx): j for j, idx in enumerate(u.mask.selected)} for u in updates
    ]
    for i in range(d):
        senders = [
            (u, pos[i]) for u, pos in zip(updates, positions) if i in pos
        ]
        if not senders:
            out[i] = global_[i]
            continue
        total = float(sum(u.sender_data_size for u, _ in senders))
        base = float(senders[0][0].values[senders[0][1]])
        acc = 0.0
        for u, j in senders:
            acc += (u.sender_data_size / total) * (float(u.values[j]) - base)
        out[i] = base + acc
    return out


def dense_fedavg_oracle(locals_: list[np.ndarray], sizes: list[int]) -> np.ndarray:
    """Data-size-weighted average of dense vectors, centered, same order."""
    d = len(locals_[0])
    out = np.empty(d)
    total = float(sum(sizes))
    for i in range(d):
        base = float(locals_[0][i])
        acc = 0.0
        for vec, size in zip(locals_, sizes):
            acc += (size / total) * (float(vec[i]) - base)
        out[i] = base + acc
    return out


def forward_oracle(x, bw, bb, fw, fb, hw, hb):
    """Straight-line per-coordinate forward pass; returns (hidden, embed, logits)."""
    din, dh = bw.shape
    dm = fw.shape[1]
    dc = hw.shape[1]
    hidden = []
    for j in range(dh):
        s = float(bb[j])
        for a in range(din):
            s += float(x[a]) * float(bw[a, j])
        hidden.append(max(s, 0.0))
    z = []
    for j in range(dm):
        s = float(fb[j])
        for k in range(dh):
            s += hidden[k] * float(fw[k, j])
        z.append(s)
    logits = []
    for c in range(dc):
        s = float(hb[c])
        for j in range(dm):
            s += z[j] * float(hw[j, c])
        logits.append(s)
    return np.array(hidden), np.array(z), np.array(logits)


def ce_oracle_mpmath(logit_rows: np.ndarray, labels: np.ndarray) -> float:
    """Cross entropy summed over rows, evaluated at 60 significant digits."""
    with mpmath.workdps(60):
        total = mpmath.mpf(0)
        for row, label in zip(logit_rows, labels):
            exps = [mpmath.e ** mpmath.mpf(float(v)) for v in row]
            denom = mpmath.fsum(exps)
            total += -mpmath.log(exps[int(label)] / denom)
        return float(total)


def fd_grad(loss_fn, arrays: list[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of loss_fn(arrays) w.r.t. every entry."""
    grads = []
    for idx, arr in enumerate(arrays):
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss_fn(arrays)
            flat[i] = keep - h
            down = loss_fn(arrays)
            flat[i] = keep
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def random_instance(rng: np.random.Generator, n=3, din=3, dh=4, dm=3, dc=4):
    """A small random model/batch instance for gradient checks."""
    return {
        "x": rng.standard_normal((n, din)),
        "y": rng.integers(0, dc, n),
        "bw": rng.standard_normal((din, dh)),
        "bb": rng.standard_normal(dh),
        "fw": rng.standard_normal((dh, dm)),
        "fb": rng.standard_normal(dm),
        "hw": rng.standard_normal((dm, dc)),
        "hb": rng.standard_normal(dc),
    }
