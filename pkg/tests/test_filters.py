import math

import numpy as np
import pytest

from arfilt.errors import (
    DegeneratePolynomialError,
    NoFeasibleGammaError,
    StabilityError,
    UnstableFilterWarning,
)
from arfilt.filters import (
    CombinedError,
    Filter,
    StabilityEstimate,
    as_filter,
    combined_error_filter,
    convolve,
    eval_transfer,
    frequency_grid,
    grid_norm_fn,
    h2_norm,
    hinf_norm,
    interp_bound_ratio,
    scale_argument,
    sufficient_length,
    tail_l1,
    unroll,
)
from oracles import conv_oracle, dense_circle_max, series_mul, transfer_oracle, unroll_oracle


def geometric(a, n):
    return Filter(a ** np.arange(n))


class TestFilterType:
    def test_coeffs_read_only(self):
        f = Filter([1.0, 2.0])
        with pytest.raises(ValueError):
            f.coeffs[0] = 5.0

    def test_immutable(self):
        f = Filter([1.0])
        with pytest.raises(AttributeError):
            f.coeffs = np.zeros(3)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Filter([1.0, np.nan])
        with pytest.raises(ValueError):
            Filter([np.inf])

    def test_empty_allowed(self):
        assert len(Filter([])) == 0

    def test_json_round_trip(self):
        f = Filter([1.5, -2.25, 1e-17])
        assert Filter.from_json(f.to_json()) == f
        assert f.to_json() == [1.5, -2.25, 1e-17]


class TestConvolve:
    def test_example(self):
        out = convolve([1.0, 2.0], [3.0, 4.0, 5.0])
        np.testing.assert_allclose(out, [3.0, 10.0, 13.0], rtol=0, atol=0)

    def test_matches_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            f = rng.standard_normal(rng.integers(0, 6))
            x = rng.standard_normal(rng.integers(0, 9))
            np.testing.assert_allclose(
                convolve(f, x), conv_oracle(f, x), rtol=0, atol=1e-12
            )

    def test_empty_cases(self):
        assert convolve([], [1.0, 2.0]).tolist() == [0.0, 0.0]
        assert convolve([1.0], []).shape == (0,)

    def test_linearity_and_shift(self):
        rng = np.random.default_rng(8)
        f = rng.standard_normal(4)
        x1 = rng.standard_normal(10)
        x2 = rng.standard_normal(10)
        lhs = convolve(f, 2.0 * x1 - 3.0 * x2)
        rhs = 2.0 * convolve(f, x1) - 3.0 * convolve(f, x2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)
        shifted = np.concatenate([[0.0], x1[:-1]])
        np.testing.assert_allclose(
            convolve(f, shifted)[1:], convolve(f, x1)[:-1], atol=1e-12
        )

    def test_rejects_non_finite_signal(self):
        with pytest.raises(ValueError):
            convolve([1.0], [1.0, np.nan])


class TestTransferAndGrid:
    def test_eval_examples(self):
        assert eval_transfer([1.0, 1.0], math.pi) == pytest.approx(0.0, abs=1e-12)
        assert eval_transfer([1.0, 1.0], 0.0) == pytest.approx(2.0)

    def test_eval_matches_oracle(self):
        rng = np.random.default_rng(9)
        f = rng.standard_normal(6)
        for omega in rng.uniform(-10, 10, size=12):
            assert eval_transfer(f, omega) == pytest.approx(
                transfer_oracle(f, omega), abs=1e-12
            )

    def test_grid_example(self):
        vals = frequency_grid([0.0, 1.0], 4).values
        np.testing.assert_allclose(vals, [1.0, -1.0j, -1.0, 1.0j], atol=1e-14)

    def test_grid_matches_direct_eval(self):
        rng = np.random.default_rng(10)
        f = rng.standard_normal(7)
        for n in (1, 2, 3, 5, 8, 64):
            grid = frequency_grid(f, n)
            omegas = 2.0 * math.pi * np.arange(n) / n
            direct = np.array([transfer_oracle(f, w) for w in omegas])
            np.testing.assert_allclose(grid.values, direct, rtol=1e-12, atol=1e-12)

    def test_grid_conjugate_symmetry(self):
        vals = frequency_grid(np.arange(5.0), 12).values
        np.testing.assert_allclose(vals[1:], np.conj(vals[1:][::-1]), atol=1e-12)

    def test_grid_rejects_bad_n(self):
        with pytest.raises(ValueError):
            frequency_grid([1.0], 0)


class TestNorms:
    def test_h2_geometric(self):
        f = geometric(0.5, 50)
        expected = math.sqrt((1 - 0.25**50) / 0.75)
        assert h2_norm(f) == pytest.approx(expected, rel=1e-14)
        assert h2_norm(f) == pytest.approx(1.1547005383792515, rel=1e-12)

    def test_hinf_geometric(self):
        # peak at z = 1: sum of coefficients
        assert hinf_norm(geometric(0.5, 50)) == pytest.approx(2.0, abs=1e-9)

    def test_hinf_from_below(self):
        f = Filter(np.random.default_rng(11).standard_normal(9))
        coarse = hinf_norm(f, n_points=64)
        fine = hinf_norm(f, n_points=1 << 15)
        assert coarse <= fine + 1e-12

    def test_parseval(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            f = Filter(rng.standard_normal(rng.integers(1, 12)))
            n = 4 * len(f)
            mean_sq = np.mean(np.abs(frequency_grid(f, n).values) ** 2)
            assert math.sqrt(mean_sq) == pytest.approx(h2_norm(f), rel=1e-10)

    def test_norm_ordering(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            f = Filter(rng.standard_normal(rng.integers(1, 10)))
            assert h2_norm(f) <= hinf_norm(f) + 1e-9

    def test_empty_filter_norms(self):
        assert h2_norm([]) == 0.0
        assert hinf_norm([]) == 0.0


class TestUnroll:
    def test_example(self):
        u = unroll([0.3, 0.1], 4)
        np.testing.assert_allclose(u.coeffs, [1.0, 0.3, 0.19, 0.087], atol=1e-15)

    def test_matches_oracle(self):
        rng = np.random.default_rng(14)
        for _ in range(10):
            h = rng.uniform(-0.4, 0.4, size=rng.integers(0, 5))
            np.testing.assert_allclose(
                unroll(h, 20).coeffs, unroll_oracle(h, 20), atol=1e-12
            )

    def test_inverse_identity(self):
        # (1 - z^{-1} H) * U = 1 on the first L coefficients
        rng = np.random.default_rng(15)
        for _ in range(10):
            q = rng.integers(1, 5)
            h = rng.standard_normal(q)
            h *= 0.9 / max(1.0, np.abs(h).sum())
            L = 30
            u = unroll(h, L).coeffs
            one_minus = np.concatenate([[1.0], -np.asarray(h)])
            prod = series_mul(one_minus.tolist(), u.tolist())[:L]
            expected = np.zeros(L)
            expected[0] = 1.0
            np.testing.assert_allclose(prod, expected, atol=1e-10)

    def test_zero_h(self):
        np.testing.assert_array_equal(unroll([], 3).coeffs, [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(unroll([0.0], 3).coeffs, [1.0, 0.0, 0.0])

    def test_unstable_warns(self):
        with pytest.warns(UnstableFilterWarning):
            unroll([2.0], 60)

    def test_bad_length(self):
        with pytest.raises(ValueError):
            unroll([0.5], 0)


class TestTailAndSufficientLength:
    def test_tail_example(self):
        f = geometric(0.5, 30)
        expected = 0.0625 - 2.0 * 0.5**30
        assert tail_l1(f, 5) == pytest.approx(expected, rel=1e-12)

    def test_tail_edges(self):
        f = Filter([1.0, -2.0, 3.0])
        assert tail_l1(f, 0) == 6.0
        assert tail_l1(f, 3) == 0.0
        assert tail_l1(f, 10) == 0.0
        with pytest.raises(ValueError):
            tail_l1(f, -1)

    def test_geometric_example(self):
        # analytic norm_fn for f(k) = 0.5^k: ||F(gamma z)||_inf = 1/(1 - 0.5/gamma)
        est = StabilityEstimate.from_rho(0.5)
        L = sufficient_length(est, lambda g: 1.0 / (1.0 - 0.5 / g), 1e-3)
        assert L >= 11
        analytic_tail = 0.5**L / 0.5  # sum_{k>=L} 0.5^k
        assert analytic_tail <= 1e-3

    def test_tail_bound_certified(self):
        for a in (0.5, 0.9, 0.99):
            est = StabilityEstimate.from_rho(a)
            for eps in (1e-2, 1e-4):
                L = sufficient_length(est, lambda g, a=a: 1.0 / (1.0 - a / g), eps)
                assert a**L / (1.0 - a) <= eps
                # stored-coefficient check on a long truncation
                f = geometric(a, L + 3000)
                assert tail_l1(f, L) <= eps

    def test_grid_norm_fn_consistency(self):
        # grid-based norm_fn agrees with the analytic one for geometric filters
        f = geometric(0.5, 400)
        fn = grid_norm_fn(f)
        for gamma in (0.6, 0.8, 0.95):
            assert fn(gamma) == pytest.approx(1.0 / (1.0 - 0.5 / gamma), rel=1e-6)

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            StabilityEstimate(rho=0.5, gamma_grid=np.array([]))

    def test_no_feasible_gamma(self):
        est = StabilityEstimate.from_rho(0.5)
        with pytest.raises(NoFeasibleGammaError):
            sufficient_length(est, lambda g: math.inf, 1e-3)

    def test_bad_epsilon(self):
        est = StabilityEstimate.from_rho(0.5)
        with pytest.raises(ValueError):
            sufficient_length(est, lambda g: 1.0, 0.0)

    def test_zero_filter_min_length(self):
        est = StabilityEstimate.from_rho(0.0)
        assert sufficient_length(est, lambda g: 0.0, 1e-6) == 1


class TestScaleArgument:
    def test_scaling(self):
        f = Filter([1.0, 0.5, 0.25])
        g = scale_argument(f, 0.5)
        np.testing.assert_allclose(g.coeffs, [1.0, 1.0, 1.0])

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            scale_argument(Filter([1.0]), 0.0)


class TestInterpBound:
    def test_constant(self):
        ratio, bound = interp_bound_ratio([3.0], 4, 64)
        assert ratio == pytest.approx(1.0)
        assert bound == pytest.approx(1.0)

    def test_trailing_zeros_ignored(self):
        r1, b1 = interp_bound_ratio([1.0, 2.0], 8, 256)
        r2, b2 = interp_bound_ratio([1.0, 2.0, 0.0, 0.0], 8, 256)
        assert (r1, b1) == (r2, b2)

    def test_random_suite(self):
        rng = np.random.default_rng(16)
        for deg in (5, 10, 20):
            n_nodes = math.ceil(4 * math.pi * deg)
            for _ in range(30):
                q = rng.standard_normal(deg + 1)
                q[-1] += np.sign(q[-1]) + 1e-3  # keep the top coefficient nonzero
                ratio, bound = interp_bound_ratio(q, n_nodes, 1 << 13)
                assert ratio <= bound
                assert bound == pytest.approx(1.0 + 4 * math.pi * deg / n_nodes)

    def test_sparse_node_regime(self):
        # below the 4*pi*deg threshold the logarithmic bound applies
        deg = 20
        _, bound = interp_bound_ratio(np.ones(deg + 1), deg + 1, 1 << 13)
        assert bound == pytest.approx((2 / math.pi) * math.log(deg + 2) + 1.0)

    def test_dense_max_oracle(self):
        rng = np.random.default_rng(17)
        q = rng.standard_normal(9)
        ratio, _ = interp_bound_ratio(q, 64, 1 << 14)
        nodes = np.abs(np.fft.fft(q, 64)).max()
        assert ratio == pytest.approx(dense_circle_max(q, 1 << 14) / nodes, rel=1e-12)

    def test_degenerate(self):
        with pytest.raises(DegeneratePolynomialError):
            interp_bound_ratio([0.0, 0.0], 4, 64)


class TestCombinedError:
    def test_pure_g_difference(self):
        res = combined_error_filter([1.5], [0.2], [1.0], [0.2], 8)
        np.testing.assert_allclose(res.filter.coeffs, [0.5] + [0.0] * 7, atol=1e-15)
        assert res.trunc_tail == 0.0

    def test_pure_h_difference(self):
        alpha = 0.3
        res = combined_error_filter([1.0], [alpha], [1.0], [0.0], 8)
        expected = np.zeros(8)
        expected[1] = alpha
        np.testing.assert_allclose(res.filter.coeffs, expected, atol=1e-15)

    def test_series_oracle(self):
        rng = np.random.default_rng(18)
        g = rng.standard_normal(3)
        gs = rng.standard_normal(3)
        h = rng.uniform(-0.2, 0.2, 2)
        hs = rng.uniform(-0.2, 0.2, 2)
        L = 40
        res = combined_error_filter(g, h, gs, hs, L)
        u = unroll_oracle(hs, L)
        prod = series_mul(series_mul((h - hs).tolist(), u), gs.tolist())
        expected = np.zeros(L)
        expected[: len(g)] += g - gs
        expected[1:] += prod[: L - 1]
        np.testing.assert_allclose(res.filter.coeffs, expected, atol=1e-12)

    def test_unstable_h_star_rejected(self):
        with pytest.raises(StabilityError):
            combined_error_filter([1.0], [0.0], [1.0], [1.5], 16)

    def test_type(self):
        res = combined_error_filter([1.0], [0.1], [1.0], [0.1], 4)
        assert isinstance(res, CombinedError)
        assert isinstance(res.filter, Filter)


def test_as_filter_idempotent():
    f = Filter([1.0, 2.0])
    assert as_filter(f) is f
    assert as_filter([1.0, 2.0]) == f
