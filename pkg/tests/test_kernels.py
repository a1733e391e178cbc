"""Backend parity: the compiled kernels and the numpy fallback must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest

import fedanchor
from fedanchor._kernels import reference

from helpers import random_instance

fastcore = pytest.importorskip(
    "fedanchor._kernels._fastcore", reason="compiled extension not built"
)


def kernel_inputs(rng, n=6, din=3, dh=4, dm=3, dc=4, lam=0.5):
    inst = random_instance(rng, n=n, din=din, dh=dh, dm=dm, dc=dc)
    mask = rng.integers(0, 2, size=dc).astype(np.uint8)
    anchors = np.ascontiguousarray(rng.standard_normal((dc, dm)))
    args = (
        inst["x"], inst["y"], inst["bw"], inst["bb"], inst["fw"], inst["fb"],
        inst["hw"], inst["hb"], mask, anchors, lam,
    )
    return tuple(np.ascontiguousarray(a) if isinstance(a, np.ndarray) else a for a in args)


SHAPES = [
    dict(n=1, din=2, dh=1, dm=1, dc=2),
    dict(n=3, din=3, dh=4, dm=3, dc=4),
    dict(n=17, din=5, dh=8, dm=4, dc=6),
    dict(n=64, din=16, dh=32, dm=16, dc=10),
]


class TestGradParity:
    @pytest.mark.parametrize("lam", [0.0, 0.5, 1.0, 5.0])
    @pytest.mark.parametrize("case", range(len(SHAPES)))
    def test_grad_batch_agrees_across_backends(self, case, lam):
        rng = np.random.default_rng(1000 + 17 * case)
        args = kernel_inputs(rng, lam=lam, **SHAPES[case])
        got = fastcore.grad_batch(*args)
        want = reference.grad_batch(*args)
        assert len(got) == len(want) == 6
        for g, w in zip(got, want):
            # accumulation order differs, so ulp-level drift is expected
            np.testing.assert_allclose(np.asarray(g), w, rtol=1e-9, atol=1e-12)

    def test_zero_lambda_matches_all_zero_mask(self):
        rng = np.random.default_rng(2)
        args = list(kernel_inputs(rng, lam=0.7))
        args_no_anchor = list(args)
        args_no_anchor[8] = np.zeros_like(args[8])  # mask
        args_zero_lam = list(args)
        args_zero_lam[10] = 0.0
        for impl in (fastcore, reference):
            a = impl.grad_batch(*args_no_anchor)
            b = impl.grad_batch(*args_zero_lam)
            for x, y in zip(a, b):
                assert np.array_equal(np.asarray(x), np.asarray(y))

    def test_repeat_call_is_bitwise_deterministic(self):
        rng = np.random.default_rng(3)
        args = kernel_inputs(rng, n=32, din=8, dh=8, dm=4, dc=5)
        for impl in (fastcore, reference):
            first = impl.grad_batch(*args)
            second = impl.grad_batch(*args)
            for a, b in zip(first, second):
                assert np.array_equal(np.asarray(a), np.asarray(b))

    def test_inputs_left_untouched(self):
        rng = np.random.default_rng(4)
        args = kernel_inputs(rng)
        copies = [np.array(a, copy=True) if isinstance(a, np.ndarray) else a for a in args]
        fastcore.grad_batch(*args)
        reference.grad_batch(*args)
        for a, c in zip(args, copies):
            if isinstance(a, np.ndarray):
                assert np.array_equal(a, c)


class TestSgdParity:
    def test_bitwise_identical_across_backends(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(1, 200))
            p = np.ascontiguousarray(rng.standard_normal(n))
            g = np.ascontiguousarray(rng.standard_normal(n))
            v = np.ascontiguousarray(rng.standard_normal(n))
            lr, mu, wd = 0.05, 0.9, 1e-4
            cp, cv = fastcore.sgd_update(p, g, v, lr, mu, wd)
            rp, rv = reference.sgd_update(p, g, v, lr, mu, wd)
            assert np.array_equal(np.asarray(cp), rp)
            assert np.array_equal(np.asarray(cv), rv)

    def test_formula_on_scalars(self):
        p = np.array([2.0])
        g = np.array([0.5])
        v = np.array([1.0])
        new_p, new_v = fastcore.sgd_update(p, g, v, 0.1, 0.9, 0.01)
        want_v = 0.9 * 1.0 + (0.5 + 0.01 * 2.0)
        assert float(np.asarray(new_v)[0]) == want_v
        assert float(np.asarray(new_p)[0]) == 2.0 - 0.1 * want_v


class TestBackendSelection:
    def test_active_backend_is_reported(self):
        assert fedanchor.kernel_backend in ("python", "compiled")

    @pytest.mark.parametrize("choice,expected", [("python", "python"), ("compiled", "compiled")])
    def test_env_var_forces_backend(self, choice, expected):
        env = dict(os.environ, FEDANCHOR_KERNELS=choice)
        out = subprocess.run(
            [sys.executable, "-c", "import fedanchor; print(fedanchor.kernel_backend)"],
            env=env, capture_output=True, text=True, check=True,
        )
        assert out.stdout.strip() == expected

    def test_default_prefers_compiled_when_built(self):
        env = dict(os.environ)
        env.pop("FEDANCHOR_KERNELS", None)
        out = subprocess.run(
            [sys.executable, "-c", "import fedanchor; print(fedanchor.kernel_backend)"],
            env=env, capture_output=True, text=True, check=True,
        )
        assert out.stdout.strip() == "compiled"
