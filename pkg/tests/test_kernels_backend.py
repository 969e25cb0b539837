"""Backend agreement tests: the compiled conv kernels, the numpy
fallback, and the loop oracle must compute the same operator."""

import numpy as np
import pytest

from blindinv import kernels
from blindinv.rng import Pcg32

HAS_COMPILED = kernels._convkern is not None


class TestNumpyPath:
    def test_matches_loop_oracle(self):
        rng = Pcg32(0)
        for _ in range(5):
            x = rng.normal(0, 1, (2, 3, 6, 7))
            f = rng.normal(0, 1, (4, 3, 3, 5))
            ref = kernels.correlate2d_reference(x, f, 1, 2)
            got = kernels._correlate2d_numpy(x, f, 1, 2)
            np.testing.assert_allclose(got, ref, atol=1e-12)

    def test_filter_grad_matches_finite_difference_of_forward(self):
        rng = Pcg32(1)
        x = rng.normal(0, 1, (2, 1, 5, 5))
        f = rng.normal(0, 1, (2, 1, 3, 3))
        g = rng.normal(0, 1, (2, 2, 5, 5))
        analytic = kernels._filter_grad_numpy(x, g, 3, 3, 1, 1)
        h = 1e-6
        numeric = np.zeros_like(f)
        for idx in np.ndindex(f.shape):
            fp, fm = f.copy(), f.copy()
            fp[idx] += h
            fm[idx] -= h
            delta = kernels._correlate2d_numpy(x, fp, 1, 1) - kernels._correlate2d_numpy(
                x, fm, 1, 1
            )
            numeric[idx] = (delta * g).sum() / (2 * h)
        np.testing.assert_allclose(analytic, numeric, atol=1e-6)


@pytest.mark.skipif(not HAS_COMPILED, reason="compiled extension not built")
class TestCompiledPath:
    def test_correlate_agrees_with_numpy(self):
        rng = Pcg32(2)
        for anchor in [(1, 1), (0, 0), (2, 1)]:
            x = rng.normal(0, 1, (3, 2, 8, 9))
            f = rng.normal(0, 1, (4, 2, 3, 3))
            a = kernels._convkern.correlate2d(x, f, *anchor)
            b = kernels._correlate2d_numpy(x, f, *anchor)
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_filter_grad_agrees_with_numpy(self):
        rng = Pcg32(3)
        x = rng.normal(0, 1, (3, 2, 8, 9))
        g = rng.normal(0, 1, (3, 4, 8, 9))
        a = kernels._convkern.filter_grad(x, g, 5, 3, 2, 1)
        b = kernels._filter_grad_numpy(x, g, 5, 3, 2, 1)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_even_kernels_and_degenerate_sizes(self):
        rng = Pcg32(4)
        for kh, kw in [(1, 1), (2, 2), (4, 3), (7, 7)]:
            x = rng.normal(0, 1, (1, 1, 7, 7))
            f = rng.normal(0, 1, (2, 1, kh, kw))
            a = kernels._convkern.correlate2d(x, f, kh // 2, kw // 2)
            b = kernels.correlate2d_reference(x, f, kh // 2, kw // 2)
            np.testing.assert_allclose(a, b, atol=1e-12)


class TestDispatch:
    def test_backend_reports_a_known_name(self):
        assert kernels.backend() in ("compiled", "numpy")

    def test_input_grad_is_adjoint_of_correlate(self):
        # <correlate(x, f), g> == <x, input_grad(g, f)> for all x, g
        rng = Pcg32(5)
        x = rng.normal(0, 1, (2, 3, 6, 6))
        f = rng.normal(0, 1, (4, 3, 3, 3))
        g = rng.normal(0, 1, (2, 4, 6, 6))
        lhs = float((kernels.correlate2d(x, f, 1, 1) * g).sum())
        rhs = float((x * kernels.input_grad(g, f, 1, 1)).sum())
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


def test_benchmark_script_runs_quickly():
    import importlib.util
    import os
    import sys
    from unittest import mock

    path = os.path.join(
        os.path.dirname(__file__), os.pardir, "benchmarks", "bench_conv.py"
    )
    spec = importlib.util.spec_from_file_location("bench_conv", path)
    bench = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(bench)
    with mock.patch.object(sys, "argv", ["bench_conv.py", "--repeat", "0.01"]):
        assert bench.main() == 0
