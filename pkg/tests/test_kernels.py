"""Backend dispatch and cross-checks between the compiled and numpy kernels."""

import numpy as np
import pytest

import arfilt._kernels as kernels
from arfilt._kernels import _py_impl

cy_impl = pytest.importorskip(
    "arfilt._kernels._cy_impl", reason="compiled extension not built"
)

IMPLS = {"python": _py_impl, "cython": cy_impl}


def cases(seed=0, trials=60):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(trials):
        q = int(rng.integers(0, 9))
        n = int(rng.integers(0, 100))
        out.append(
            (
                rng.standard_normal(q),
                rng.standard_normal(n),
                rng.standard_normal((int(rng.integers(1, 6)), n)),
            )
        )
    return out


class TestDispatch:
    def test_compiled_backend_selected(self):
        assert kernels.BACKEND == "cython"

    def test_package_functions_come_from_active_backend(self):
        impl = IMPLS[kernels.BACKEND]
        assert kernels.causal_conv is impl.causal_conv
        assert kernels.ar_drive is impl.ar_drive
        assert kernels.ar_drive_batch is impl.ar_drive_batch

    def test_fallback_importable_alongside_extension(self):
        assert callable(_py_impl.causal_conv)


class TestCrossBackend:
    def test_causal_conv_bitwise(self):
        for f, x, _ in cases(1):
            np.testing.assert_array_equal(_py_impl.causal_conv(f, x), cy_impl.causal_conv(f, x))

    def test_ar_drive_bitwise(self):
        for h, d, _ in cases(2):
            np.testing.assert_array_equal(_py_impl.ar_drive(h, d), cy_impl.ar_drive(h, d))

    def test_ar_drive_batch_bitwise(self):
        for h, _, D in cases(3):
            np.testing.assert_array_equal(
                _py_impl.ar_drive_batch(h, D), cy_impl.ar_drive_batch(h, D)
            )

    def test_unstable_recursion_still_bitwise(self):
        # identical accumulation order keeps even exponentially growing
        # trajectories exactly equal across backends
        rng = np.random.default_rng(4)
        h = np.array([1.3, -0.7, 0.5])
        d = rng.standard_normal(300)
        a = _py_impl.ar_drive(h, d)
        b = cy_impl.ar_drive(h, d)
        assert np.max(np.abs(a)) > 1e3
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("name,impl", sorted(IMPLS.items()))
class TestContracts:
    def test_causal_conv_matches_numpy_convolve(self, name, impl):
        rng = np.random.default_rng(5)
        f = rng.standard_normal(6)
        x = rng.standard_normal(40)
        np.testing.assert_allclose(impl.causal_conv(f, x), np.convolve(f, x)[:40], rtol=1e-13)

    def test_causal_conv_identity_filter(self, name, impl):
        x = np.arange(5.0)
        np.testing.assert_array_equal(impl.causal_conv(np.array([1.0]), x), x)

    def test_causal_conv_empty_filter_or_signal(self, name, impl):
        np.testing.assert_array_equal(impl.causal_conv(np.array([]), np.ones(3)), np.zeros(3))
        assert impl.causal_conv(np.array([1.0]), np.array([])).shape == (0,)

    def test_ar_drive_matches_hand_recursion(self, name, impl):
        h = np.array([0.5, -0.25])
        d = np.array([1.0, 0.0, 2.0, -1.0])
        y = []
        for i in range(4):
            acc = d[i]
            for k in range(2):
                j = i - 1 - k
                acc += h[k] * (y[j] if j >= 0 else 0.0)
            y.append(acc)
        np.testing.assert_allclose(impl.ar_drive(h, d), y, rtol=0, atol=0)

    def test_ar_drive_empty_h_returns_drive(self, name, impl):
        d = np.array([1.0, 2.0])
        np.testing.assert_array_equal(impl.ar_drive(np.array([]), d), d)

    def test_batch_equals_stacked_singles(self, name, impl):
        rng = np.random.default_rng(6)
        h = np.array([0.4, 0.1, -0.2])
        D = rng.standard_normal((7, 30))
        stacked = np.vstack([impl.ar_drive(h, row) for row in D])
        np.testing.assert_array_equal(impl.ar_drive_batch(h, D), stacked)

    def test_batch_requires_2d(self, name, impl):
        with pytest.raises(ValueError):
            impl.ar_drive_batch(np.array([0.5]), np.ones(4))

    def test_read_only_inputs_accepted(self, name, impl):
        f = np.array([0.5, 0.2])
        x = np.arange(6.0)
        D = np.ones((2, 6))
        for arr in (f, x, D):
            arr.setflags(write=False)
        impl.causal_conv(f, x)
        impl.ar_drive(f, x)
        impl.ar_drive_batch(f, D)

    def test_integer_and_list_inputs_coerced(self, name, impl):
        out = impl.causal_conv([1, 2], [1, 0, 0])
        np.testing.assert_array_equal(out, [1.0, 2.0, 0.0])
        out = impl.ar_drive([0], [1, 1])
        np.testing.assert_array_equal(out, [1.0, 1.0])
