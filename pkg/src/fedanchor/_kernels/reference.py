"""Pure-numpy training kernels (fallback backend).

Implements the same operations as the compiled extension: a fused
forward/backward pass over one mini-batch for the fixed
dense+ReLU / dense / dense-head architecture, and the momentum SGD
update. Both backends compute the same formulas; they may differ in the
last bits because BLAS and straight C loops round sums differently.
"""
from __future__ import annotations

import numpy as np


def grad_batch(
    x: np.ndarray,
    y: np.ndarray,
    bw: np.ndarray,
    bb: np.ndarray,
    fw: np.ndarray,
    fb: np.ndarray,
    hw: np.ndarray,
    hb: np.ndarray,
    anchor_mask: np.ndarray,
    anchors: np.ndarray,
    lam: float,
):
    """Gradients of the summed batch loss (cross-entropy + lam * anchor pull).

    Returns (gbw, gbb, gfw, gfb, ghw, ghb) matching the parameter shapes.
    ReLU takes subgradient 0 at exactly 0.
    """
    n = x.shape[0]
    h = np.maximum(x @ bw + bb, 0.0)
    z = h @ fw + fb
    logits = z @ hw + hb

    shift = logits.max(axis=1, keepdims=True)
    expl = np.exp(logits - shift)
    probs = expl / expl.sum(axis=1, keepdims=True)

    dlogits = probs
    dlogits[np.arange(n), y] -= 1.0

    ghw = z.T @ dlogits
    ghb = dlogits.sum(axis=0)

    dz = dlogits @ hw.T
    if lam != 0.0:
        has_anchor = anchor_mask[y].astype(bool)
        pull = np.where(has_anchor[:, None], z - anchors[y], 0.0)
        dz = dz + (2.0 * lam) * pull

    gfw = h.T @ dz
    gfb = dz.sum(axis=0)

    dh = dz @ fw.T
    dh = np.where(h > 0.0, dh, 0.0)

    gbw = x.T @ dh
    gbb = dh.sum(axis=0)
    return gbw, gbb, gfw, gfb, ghw, ghb


def sgd_update(
    param: np.ndarray,
    grad: np.ndarray,
    velocity: np.ndarray,
    lr: float,
    momentum: float,
    weight_decay: float,
):
    """One momentum-SGD step with L2 decay folded into the buffer.

    v <- momentum * v + (grad + weight_decay * param)
    p <- p - lr * v

    Pure: returns (new_param, new_velocity).
    """
    v = momentum * velocity + (grad + weight_decay * param)
    return param - lr * v, v
