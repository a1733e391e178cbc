"""Compare the compiled training kernels against the numpy fallback.

Times grad_batch plus the six sgd_update calls of one training step, at
the default network size, across batch sizes. The two backends trade
places: the compiled loops win where per-call overhead dominates (small
batches, exactly the regime non-IID shards produce), while numpy's BLAS
matmuls win at large batches.

Run:  python3 benchmarks/bench_kernels.py [--batches 8,64,256] [--steps 300]
"""

import argparse
import time

import numpy as np

from fedanchor._kernels import reference

try:
    from fedanchor._kernels import _fastcore
except ImportError:
    _fastcore = None


def make_instance(batch, input_dim=16, hidden_dim=32, embed_dim=16, num_classes=10, seed=0):
    rng = np.random.default_rng(seed)
    return {
        "x": rng.standard_normal((batch, input_dim)),
        "y": rng.integers(0, num_classes, batch),
        "bw": rng.standard_normal((input_dim, hidden_dim)),
        "bb": rng.standard_normal(hidden_dim),
        "fw": rng.standard_normal((hidden_dim, embed_dim)),
        "fb": rng.standard_normal(embed_dim),
        "hw": rng.standard_normal((embed_dim, num_classes)),
        "hb": rng.standard_normal(num_classes),
        "mask": rng.integers(0, 2, num_classes).astype(np.uint8),
        "anchors": rng.standard_normal((num_classes, embed_dim)),
    }


def one_step(impl, inst, velocities):
    grads = impl.grad_batch(
        inst["x"], inst["y"], inst["bw"], inst["bb"], inst["fw"], inst["fb"],
        inst["hw"], inst["hb"], inst["mask"], inst["anchors"], 0.5,
    )
    names = ("bw", "bb", "fw", "fb", "hw", "hb")
    for name, grad in zip(names, grads):
        flat_p = inst[name].ravel()
        new_p, new_v = impl.sgd_update(flat_p, grad.ravel(), velocities[name], 0.01, 0.9, 1e-4)
        velocities[name] = new_v


def time_backend(impl, inst, steps):
    velocities = {name: np.zeros(inst[name].size) for name in ("bw", "bb", "fw", "fb", "hw", "hb")}
    one_step(impl, inst, velocities)  # warm up
    start = time.perf_counter()
    for _ in range(steps):
        one_step(impl, inst, velocities)
    return (time.perf_counter() - start) / steps


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batches", default="8,64,256", help="comma list of batch sizes")
    parser.add_argument("--steps", type=int, default=300)
    args = parser.parse_args()

    if _fastcore is None:
        print("compiled backend not built; timing the numpy fallback only")
    print(f"{'batch':>6} {'python us/step':>16} {'compiled us/step':>18} {'speedup':>9}")
    for batch in (int(tok) for tok in args.batches.split(",")):
        inst = make_instance(batch)
        ref_time = time_backend(reference, inst, args.steps)
        if _fastcore is None:
            print(f"{batch:>6} {ref_time * 1e6:>16.1f} {'-':>18} {'-':>9}")
            continue
        fast_time = time_backend(_fastcore, inst, args.steps)
        print(
            f"{batch:>6} {ref_time * 1e6:>16.1f} {fast_time * 1e6:>18.1f}"
            f" {ref_time / fast_time:>8.2f}x"
        )


if __name__ == "__main__":
    main()
