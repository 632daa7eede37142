import numpy as np
import pytest

from arfilt.errors import ConvergenceError, StabilityError
from arfilt.lds import (
    ArReduction,
    KalmanGains,
    LdsSpec,
    fir_vs_ar_example,
    kalman_predict,
    riccati_step,
    simulate_lds,
    spectral_radius,
    steady_state_kalman,
    unroll_kalman,
)
from oracles import ar_equivalence_gap, random_stable_lds, riccati_oracle

GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0


def scalar_spec(rho, sigma_xi=1.0, sigma_eta=1.0):
    return LdsSpec(A=[[rho]], B=[[1.0]], C=[[1.0]], sigma_xi=[[sigma_xi]], sigma_eta=sigma_eta)


class TestSpectralRadius:
    def test_scalar(self):
        assert spectral_radius([[-0.3]]) == pytest.approx(0.3)

    def test_real_2x2(self):
        assert spectral_radius([[0.5, 1.0], [0.0, -0.8]]) == pytest.approx(0.8)

    def test_complex_pair_2x2(self):
        th = 0.7
        R = 0.7 * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        assert spectral_radius(R) == pytest.approx(0.7, rel=1e-12)

    def test_matches_eig_oracle(self):
        rng = np.random.default_rng(20)
        for _ in range(8):
            M = rng.standard_normal((4, 4)) * 0.5
            expected = np.abs(np.linalg.eigvals(M)).max()
            assert spectral_radius(M) == pytest.approx(expected, rel=0.05)

    def test_nilpotent(self):
        N = np.zeros((3, 3))
        N[0, 1] = 1.0
        assert spectral_radius(N) == 0.0


class TestLdsSpec:
    def test_dim_validation(self):
        with pytest.raises(ValueError):
            LdsSpec(A=[[1.0, 0.0]], B=[[1.0]], C=[[1.0]], sigma_xi=[[1.0]], sigma_eta=1.0)
        with pytest.raises(ValueError):
            LdsSpec(A=[[1.0]], B=[[1.0], [2.0]], C=[[1.0]], sigma_xi=[[1.0]], sigma_eta=1.0)
        with pytest.raises(ValueError):
            LdsSpec(A=[[1.0]], B=[[1.0]], C=[[1.0, 2.0]], sigma_xi=[[1.0]], sigma_eta=1.0)

    def test_psd_validation(self):
        with pytest.raises(ValueError):
            scalar_spec(0.5, sigma_xi=-1.0)
        with pytest.raises(ValueError):
            LdsSpec(
                A=np.eye(2) * 0.5,
                B=[[1.0], [0.0]],
                C=[[1.0, 0.0]],
                sigma_xi=[[1.0, 0.5], [0.4, 1.0]],
                sigma_eta=1.0,
            )
        with pytest.raises(ValueError):
            scalar_spec(0.5, sigma_eta=-0.1)

    def test_stability_diagnostic_not_error(self):
        spec = scalar_spec(1.7)
        assert spec.stability_radius == pytest.approx(1.7)

    def test_json_round_trip(self):
        spec = random_stable_lds(np.random.default_rng(21), 3)
        back = LdsSpec.from_json(spec.to_json())
        np.testing.assert_array_equal(back.A, spec.A)
        np.testing.assert_array_equal(back.sigma_xi, spec.sigma_xi)
        assert back.sigma_eta == spec.sigma_eta


class TestSimulate:
    def test_feedthrough_example(self):
        spec = LdsSpec(A=[[0.0]], B=[[1.0]], C=[[1.0]], sigma_xi=[[0.0]], sigma_eta=0.0)
        np.testing.assert_allclose(simulate_lds(spec, [5.0, 0.0], seed=0), [5.0, 0.0])

    def test_scalar_decay_example(self):
        spec = LdsSpec(A=[[0.5]], B=[[1.0]], C=[[1.0]], sigma_xi=[[0.0]], sigma_eta=0.0)
        y = simulate_lds(spec, [1.0, 0.0, 0.0], seed=0)
        np.testing.assert_allclose(y, [1.0, 0.5, 0.25])

    def test_zero_noise_matches_manual_recursion(self):
        rng = np.random.default_rng(22)
        A = rng.standard_normal((3, 3)) * 0.4
        B = rng.standard_normal((3, 1))
        C = rng.standard_normal((1, 3))
        spec = LdsSpec(A=A, B=B, C=C, sigma_xi=np.zeros((3, 3)), sigma_eta=0.0)
        x = rng.standard_normal(12)
        y = simulate_lds(spec, x, seed=5)
        h = np.zeros(3)
        for t in range(12):
            h = A @ h + B[:, 0] * x[t]
            assert y[t] == pytest.approx(float(C[0] @ h), abs=1e-12)

    def test_seed_determinism(self):
        spec = random_stable_lds(np.random.default_rng(23), 2)
        x = np.ones(20)
        y1 = simulate_lds(spec, x, seed=77)
        y2 = simulate_lds(spec, x, seed=77)
        y3 = simulate_lds(spec, x, seed=78)
        np.testing.assert_array_equal(y1, y2)
        assert np.any(y1 != y3)

    def test_initial_state(self):
        spec = LdsSpec(A=[[0.5]], B=[[0.0]], C=[[1.0]], sigma_xi=[[0.0]], sigma_eta=0.0)
        y = simulate_lds(spec, [0.0, 0.0], seed=0, h0=[8.0])
        np.testing.assert_allclose(y, [4.0, 2.0])

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            simulate_lds(scalar_spec(0.5), [1.0, np.inf], seed=0)


class TestRiccati:
    def test_scalar_closed_form(self):
        for rho in (0.0, 0.3, 0.8, 0.99):
            gains = steady_state_kalman(scalar_spec(rho))
            expected = (rho**2 + np.sqrt(rho**4 + 4.0)) / 2.0
            assert float(gains.sigma_h[0, 0]) == pytest.approx(expected, abs=1e-9)
            assert gains.sigma_y2 == pytest.approx(expected + 1.0, abs=1e-9)

    def test_random_walk_golden_ratio(self):
        gains = steady_state_kalman(scalar_spec(1.0))
        assert float(gains.sigma_h[0, 0]) == pytest.approx(GOLDEN, abs=1e-9)

    def test_fixed_point_residual(self):
        spec = random_stable_lds(np.random.default_rng(24), 4)
        gains = steady_state_kalman(spec, tol=1e-12)
        P2 = riccati_step(gains.sigma_h, spec.A, spec.C, spec.sigma_xi, spec.sigma_eta)
        assert np.linalg.norm(P2 - gains.sigma_h) <= 1e-11

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(25)
        for dim in (2, 3, 4):
            spec = random_stable_lds(rng, dim)
            gains = steady_state_kalman(spec)
            P_ref = riccati_oracle(spec.A, spec.C, spec.sigma_xi, spec.sigma_eta)
            np.testing.assert_allclose(gains.sigma_h, P_ref, rtol=1e-9, atol=1e-9)

    def test_convergence_error_carries_residual(self):
        with pytest.raises(ConvergenceError) as exc_info:
            steady_state_kalman(scalar_spec(0.999), max_iter=2)
        assert exc_info.value.residual is not None
        assert exc_info.value.residual > 0

    def test_zero_innovation_rejected(self):
        spec = LdsSpec(A=[[0.5]], B=[[1.0]], C=[[1.0]], sigma_xi=[[0.0]], sigma_eta=0.0)
        with pytest.raises(ConvergenceError):
            steady_state_kalman(spec)


def manual_gains(a, bx, by, c):
    return KalmanGains(
        a_kf=np.array([[a]]),
        b_x=np.array([[bx]]),
        b_y=np.array([[by]]),
        c_kf=np.array([[c]]),
        gain=np.array([[0.0]]),
        sigma_h=np.array([[1.0]]),
        sigma_y2=1.0,
    )


class TestPredict:
    def test_memoryless_example(self):
        gains = manual_gains(0.0, 2.0, 3.0, 1.0)
        x = np.array([1.0, 0.0, -1.0, 2.0])
        y = np.array([0.5, 1.0, 0.0, -0.5])
        yhat = kalman_predict(gains, x, y)
        assert yhat[0] == 0.0
        for t in range(1, 4):
            assert yhat[t] == pytest.approx(2.0 * x[t - 1] + 3.0 * y[t - 1])

    def test_length_mismatch(self):
        gains = manual_gains(0.0, 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            kalman_predict(gains, [1.0], [1.0, 2.0])


class TestUnrollKalman:
    def test_geometric_coefficients(self):
        gains = manual_gains(0.5, 1.0, 0.3, 2.0)
        red = unroll_kalman(gains, 4)
        assert isinstance(red, ArReduction)
        np.testing.assert_allclose(red.g_star.coeffs, [2.0, 1.0, 0.5, 0.25])
        np.testing.assert_allclose(red.h_star.coeffs, [0.6, 0.3, 0.15, 0.075])
        assert red.sigma2 == 1.0

    def test_unstable_rejected(self):
        with pytest.raises(StabilityError):
            unroll_kalman(manual_gains(1.1, 1.0, 1.0, 1.0), 4)

    def test_bad_length(self):
        with pytest.raises(ValueError):
            unroll_kalman(manual_gains(0.5, 1.0, 1.0, 1.0), 0)

    def test_sigma2_is_sigma_y2(self):
        spec = scalar_spec(0.8)
        gains = steady_state_kalman(spec)
        red = unroll_kalman(gains, 4)
        assert red.sigma2 == pytest.approx(gains.sigma_y2)


class TestKalmanArEquivalence:
    def test_random_systems(self):
        rng = np.random.default_rng(26)
        for i in range(5):
            spec = random_stable_lds(rng, int(rng.integers(1, 5)))
            gap, r = ar_equivalence_gap(spec, sim_seed=100 + i)
            assert gap <= 1e-6, f"system {i}: gap {gap} (r={r})"


class TestFirVsAr:
    def test_small_rho_limit(self):
        res = fir_vs_ar_example(1e-9)
        assert res.ratio == pytest.approx(1.0, abs=1e-8)
        assert res.sigma_h2 == pytest.approx(1.0, abs=1e-8)

    def test_frozen_values_at_099(self):
        res = fir_vs_ar_example(0.99)
        assert res.sigma_h2 == pytest.approx(1.6036698, abs=1e-6)
        assert res.fir_err == pytest.approx(51.251256, abs=1e-5)
        assert res.ar_err == pytest.approx(res.sigma_h2 + 1.0)
        assert res.ratio == pytest.approx(19.68, abs=0.01)

    def test_matches_riccati(self):
        for rho in (0.1, 0.5, 0.9, 0.99):
            res = fir_vs_ar_example(rho)
            gains = steady_state_kalman(scalar_spec(rho))
            assert abs(res.sigma_h2 - float(gains.sigma_h[0, 0])) <= 1e-9

    def test_ratio_monotone_in_rho(self):
        ratios = [fir_vs_ar_example(r).ratio for r in np.linspace(0.05, 0.99, 20)]
        assert all(b > a for a, b in zip(ratios, ratios[1:]))

    def test_domain(self):
        for bad in (0.0, 1.0, -0.5, 1.5):
            with pytest.raises(ValueError):
                fir_vs_ar_example(bad)
