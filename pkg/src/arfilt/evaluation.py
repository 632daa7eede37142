"""Error measurement and the scaling-law harness.

The one-step prediction error of a filter pair (g, h) against the truth
(g*, h*) on a realized trajectory is

    y_err(t+1) = ((g - g*) . x)(t) + ((h - h*) . y)(t),

and its expected energy decomposes as E[sum y_err^2] <= eps1^2 |x|^2 +
eps2^2 T.  This module measures both sides: exact frequency-domain error
norms of the combined error filter (G - G*) + z^{-1}(H - H*) Unr(H*) G*,
Monte-Carlo estimates of the energy and of the (eps1, eps2) split,
theoretical rate curves with the constant set to 1, and the experiment
that fits the log-log slope of the error against the repeat count ell.
"""

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from arfilt.errors import ConfigError
from arfilt.estimators import estimate
from arfilt.filters import (
    Filter,
    as_filter,
    combined_error_filter,
    convolve,
    default_grid_points,
    eval_transfer,
    frequency_grid,
    hinf_norm,
    unroll,
)
from arfilt.lds import LdsSpec, steady_state_kalman, unroll_kalman
from arfilt.rollouts import (
    DesignConfig,
    default_burn_in,
    generate_rollouts,
    simulate_ar,
    unrolled_tail_length,
)

TRUNC_CAP = 100_000


class ArTruth(NamedTuple):
    """Generative filter pair and noise level for evaluation runs."""

    g_star: Filter
    h_star: Filter
    sigma: float


def as_truth(system) -> ArTruth:
    if isinstance(system, ArTruth):
        return system
    g, h, sigma = system
    return ArTruth(as_filter(g), as_filter(h), float(sigma))


def kalman_benchmark_system(rho=0.8, r=4, sigma=1.0) -> ArTruth:
    """Benchmark truth: the unrolled steady-state Kalman predictor of the
    scalar system h(t+1) = rho h(t) + x(t) + xi, y = h + eta (unit noise
    covariances), truncated to length r, driven at noise level sigma."""
    spec = LdsSpec(
        A=np.array([[float(rho)]]),
        B=np.array([[1.0]]),
        C=np.array([[1.0]]),
        sigma_xi=np.array([[1.0]]),
        sigma_eta=1.0,
    )
    red = unroll_kalman(steady_state_kalman(spec), r)
    return ArTruth(red.g_star, red.h_star, float(sigma))


def _pad_diff(a: Filter, b: Filter) -> Filter:
    n = max(len(a), len(b))
    out = np.zeros(n)
    out[: len(a)] = a.coeffs
    out[: len(b)] -= b.coeffs
    return Filter(out)


def prediction_error(g, h, g_star, h_star, x, y, burn_in=0) -> np.ndarray:
    """y_err(1..T) on a realized trajectory, zero prehistory convention.

    x and y follow the rollout layout: x[i] is x(-burn_in + i) and y[i] is
    y(-burn_in + 1 + i); T = len(x) - burn_in.
    """
    g, h = as_filter(g), as_filter(h)
    g_star, h_star = as_filter(g_star), as_filter(h_star)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape[0] != y.shape[0]:
        raise ValueError("x and y must have equal length")
    burn_in = int(burn_in)
    if burn_in < 0 or burn_in >= x.shape[0]:
        raise ValueError("burn_in must lie in [0, len(x))")
    horizon = x.shape[0] - burn_in
    dg = _pad_diff(g, g_star)
    dh = _pad_diff(h, h_star)
    cx = convolve(dg, x)
    cy = convolve(dh, y)
    err = cx[burn_in : burn_in + horizon].copy()
    # (dh . y)(t-1) sits one slot earlier in the y array
    lo = burn_in - 1
    if lo >= 0:
        err += cy[lo : lo + horizon]
    else:
        err[1:] += cy[: horizon - 1]
    return err


@dataclass(frozen=True)
class ErrorNorms:
    """H-infinity and H2 error norms with truncation diagnostics."""

    hinf_err: float
    h2_err: float
    trunc_len: int
    combined_tail: float
    product_tail: float

    def __iter__(self):
        return iter((self.hinf_err, self.h2_err))


def _trunc_len(h_star, trunc_eps):
    n = unrolled_tail_length(h_star, trunc_eps)
    if n > TRUNC_CAP:
        warnings.warn(
            f"truncation length {n} exceeds cap {TRUNC_CAP}; error norms "
            "carry an uncertified tail",
            UserWarning,
        )
        n = TRUNC_CAP
    return n


def _h2_product(h, h_star, trunc_unr, trunc_eps):
    """Coefficients of (H - H*) Unr(H*) with Unr expanded to trunc_unr
    terms, plus an l1 bound on the mass lost to the certified Unr tail."""
    dh = _pad_diff(as_filter(h), as_filter(h_star))
    unr = unroll(h_star, trunc_unr)
    prod = np.convolve(dh.coeffs, unr.coeffs)
    return prod, float(np.sum(np.abs(dh.coeffs)) * trunc_eps)


def _combined_trunc(g, h, g_star, h_star, trunc_unr):
    # the finite factors extend the support past the certified Unr length
    pad = len(as_filter(g)) + len(as_filter(g_star))
    pad += len(as_filter(h)) + len(as_filter(h_star)) + 1
    return combined_error_filter(g, h, g_star, h_star, trunc_unr + pad)


def hinf_h2_errors(g, h, g_star, h_star, trunc_eps=1e-8, n_points=None) -> ErrorNorms:
    """Grid H-infinity norm of the combined error filter and the H2 norm
    of (H - H*) Unr(H*), both truncated at a certified length."""
    trunc = _trunc_len(h_star, trunc_eps)
    combined = _combined_trunc(g, h, g_star, h_star, trunc)
    f = combined.filter
    if n_points is None:
        n_points = default_grid_points(len(f))
    hinf = float(np.max(np.abs(frequency_grid(f, n_points).values))) if len(f) else 0.0
    kept, cut = _h2_product(h, h_star, trunc, trunc_eps)
    return ErrorNorms(
        hinf_err=hinf,
        h2_err=float(np.linalg.norm(kept)),
        trunc_len=trunc,
        combined_tail=combined.trunc_tail,
        product_tail=cut,
    )


def freq_response_error(g, h, g_star, h_star, omega, trunc_eps=1e-8) -> float:
    """|combined error transfer at e^{i omega}|."""
    trunc = _trunc_len(h_star, trunc_eps)
    combined = _combined_trunc(g, h, g_star, h_star, trunc)
    return float(abs(eval_transfer(combined.filter, float(omega))))


def _mc_rng_seed(seed, *path):
    base = tuple(int(s) for s in seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    return base + tuple(int(p) for p in path)


def _mc_energies(g, h, truth: ArTruth, x, n_mc, seed, design_index=0):
    """Sum of squared prediction errors per Monte-Carlo rollout."""
    energies = np.empty(n_mc)
    for m in range(n_mc):
        y = simulate_ar(
            truth.g_star, truth.h_star, truth.sigma, x,
            _mc_rng_seed(seed, design_index, m),
        )
        err = prediction_error(g, h, truth.g_star, truth.h_star, x, y)
        energies[m] = err @ err
    return energies


def mc_prediction_energy(g, h, system, x, n_mc, seed):
    """Monte-Carlo mean and standard error of sum_t y_err(t)^2."""
    truth = as_truth(system)
    n_mc = int(n_mc)
    if n_mc < 2:
        raise ValueError(f"n_mc must be >= 2, got {n_mc}")
    e = _mc_energies(g, h, truth, np.asarray(x, dtype=np.float64), n_mc, seed)
    return float(e.mean()), float(e.std(ddof=1) / math.sqrt(n_mc))


def mc_test_mse(g, h, system, x, n_mc, seed) -> float:
    """Mean squared one-step prediction residual (y - yhat), noise included."""
    truth = as_truth(system)
    n_mc = int(n_mc)
    if n_mc < 2:
        raise ValueError(f"n_mc must be >= 2, got {n_mc}")
    g, h = as_filter(g), as_filter(h)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    total = 0.0
    for m in range(n_mc):
        y = simulate_ar(truth.g_star, truth.h_star, truth.sigma, x, _mc_rng_seed(seed, 0, m))
        cx = convolve(g, x)
        cy = convolve(h, y)
        yhat = cx + np.concatenate([[0.0], cy[:-1]])
        total += float(np.mean((y - yhat) ** 2))
    return total / n_mc


def zero_input_step_variance(g, h, system, T, n_mc, seed, warmup=1):
    """Per-step variance of y_err on zero-input rollouts, skipping the
    first ``warmup`` steps (their shorter noise history biases the
    steady-state comparison).  Returns (variance, standard error)."""
    truth = as_truth(system)
    T, n_mc, warmup = int(T), int(n_mc), int(warmup)
    if n_mc < 2:
        raise ValueError(f"n_mc must be >= 2, got {n_mc}")
    if not 0 <= warmup < T:
        raise ValueError("warmup must lie in [0, T)")
    x = np.zeros(T)
    per_rollout = np.empty(n_mc)
    for m in range(n_mc):
        y = simulate_ar(truth.g_star, truth.h_star, truth.sigma, x, _mc_rng_seed(seed, 0, m))
        err = prediction_error(g, h, truth.g_star, truth.h_star, x, y)
        per_rollout[m] = np.mean(err[warmup:] ** 2)
    return float(per_rollout.mean()), float(per_rollout.std(ddof=1) / math.sqrt(n_mc))


@dataclass(frozen=True)
class EpsEstimate:
    """Fitted error-decomposition coefficients with standard errors."""

    eps1: float
    eps2: float
    eps1_sq: float
    eps2_sq: float
    eps1_sq_se: float
    eps2_sq_se: float
    per_design: tuple = ()

    def to_json(self):
        return {
            "eps1": self.eps1,
            "eps2": self.eps2,
            "eps1_sq": self.eps1_sq,
            "eps2_sq": self.eps2_sq,
            "eps1_sq_se": self.eps1_sq_se,
            "eps2_sq_se": self.eps2_sq_se,
            "per_design": list(self.per_design),
        }


def default_test_designs(T, seed, scales=(1.0, 2.0, 4.0), smooth_width=5):
    """Zero input plus scaled copies of one unit-norm smoothed noise signal."""
    T = int(T)
    rng = np.random.default_rng(_mc_rng_seed(seed, 0xD5))
    base = rng.standard_normal(T)
    kernel = np.full(int(smooth_width), 1.0 / smooth_width)
    base = convolve(Filter(kernel), base)
    base /= np.linalg.norm(base)
    return [np.zeros(T)] + [s * base for s in scales]


def empirical_eps(g, h, system, test_designs, n_mc, seed) -> EpsEstimate:
    """Monte-Carlo fit of (eps1, eps2): the zero design pins eps2^2 as
    average error energy over T, nonzero designs fit eps1^2 as the slope
    of the excess energy against |x|^2."""
    truth = as_truth(system)
    n_mc = int(n_mc)
    if n_mc < 2:
        raise ValueError(f"n_mc must be >= 2, got {n_mc}")
    designs = [np.asarray(x, dtype=np.float64).reshape(-1) for x in test_designs]
    norms_sq = [float(x @ x) for x in designs]
    zero_idx = [i for i, ns in enumerate(norms_sq) if ns == 0.0]
    drive_idx = [i for i, ns in enumerate(norms_sq) if ns > 0.0]
    if not zero_idx or len(drive_idx) < 3:
        raise ValueError("test designs must include the zero input and at least 3 driven inputs")

    rows = []
    for i, x in enumerate(designs):
        e = _mc_energies(g, h, truth, x, n_mc, seed, design_index=i)
        rows.append(
            {
                "norm_sq": norms_sq[i],
                "T": int(x.shape[0]),
                "mean_energy": float(e.mean()),
                "se": float(e.std(ddof=1) / math.sqrt(n_mc)),
            }
        )

    z = [rows[i] for i in zero_idx]
    eps2_sq = float(np.mean([r["mean_energy"] / r["T"] for r in z]))
    eps2_sq_se = float(
        np.sqrt(np.sum([(r["se"] / r["T"]) ** 2 for r in z])) / len(z)
    )

    w = np.array([rows[i]["norm_sq"] for i in drive_idx])
    excess = np.array(
        [rows[i]["mean_energy"] - eps2_sq * rows[i]["T"] for i in drive_idx]
    )
    var_excess = np.array(
        [rows[i]["se"] ** 2 + (rows[i]["T"] * eps2_sq_se) ** 2 for i in drive_idx]
    )
    denom = float(w @ w)
    slope = float(w @ excess / denom)
    slope_se = float(np.sqrt((w * w) @ var_excess) / denom)
    return EpsEstimate(
        eps1=math.sqrt(max(slope, 0.0)),
        eps2=math.sqrt(max(eps2_sq, 0.0)),
        eps1_sq=slope,
        eps2_sq=eps2_sq,
        eps1_sq_se=slope_se,
        eps2_sq_se=eps2_sq_se,
        per_design=tuple(rows),
    )


@dataclass(frozen=True)
class RateCurve:
    """Theoretical rate formulas with the unspecified constant set to 1.

    eps1_theory / eps2_theory take (c, ell, r, T, delta); eps1 and eps2 are
    their values at the config this curve was built for.
    """

    eps1_theory: Callable
    eps2_theory: Callable
    eps1: float
    eps2: float


def theoretical_rates(cfg: DesignConfig, delta, h_star, hunr_inf) -> RateCurve:
    """Rate formulas: eps1 = ln(c l r T / d)^{3/2} (1+|H*|_inf) |Unr|_inf
    / sqrt(c l T) and eps2 = ln(c l r T / d)^2 / sqrt(c l T)."""
    if not 0.0 < float(delta) < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    factor = (1.0 + hinf_norm(as_filter(h_star))) * float(hunr_inf)

    def eps1_theory(c, ell, r, T, d):
        return math.log(c * ell * r * T / d) ** 1.5 / math.sqrt(c * ell * T) * factor

    def eps2_theory(c, ell, r, T, d):
        return math.log(c * ell * r * T / d) ** 2 / math.sqrt(c * ell * T)

    args = (cfg.c_int, cfg.ell, cfg.r, cfg.T, float(delta))
    return RateCurve(
        eps1_theory=eps1_theory,
        eps2_theory=eps2_theory,
        eps1=eps1_theory(*args),
        eps2=eps2_theory(*args),
    )


@dataclass(frozen=True)
class ErrorReport:
    """All error measurements for one learned filter pair."""

    hinf_err: float
    h2_err: float
    freq_errors: dict
    eps1_hat: float
    eps2_hat: float
    mc_mse: float
    diagnostics: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "hinf_err": self.hinf_err,
            "h2_err": self.h2_err,
            "freq_errors": {repr(k): v for k, v in self.freq_errors.items()},
            "eps1_hat": self.eps1_hat,
            "eps2_hat": self.eps2_hat,
            "mc_mse": self.mc_mse,
            "diagnostics": self.diagnostics,
        }


def error_report(
    g, h, system, cfg: DesignConfig, n_mc=256, seed=0, trunc_eps=1e-8, scales=(1.0, 2.0, 4.0)
) -> ErrorReport:
    """Assemble every error measurement on one shared frequency grid.

    The grid size is a multiple of T so the design frequencies 2 pi j / T
    land exactly on grid nodes; their errors are then contained in the
    grid H-infinity maximum by construction.
    """
    truth = as_truth(system)
    trunc = _trunc_len(truth.h_star, trunc_eps)
    combined = _combined_trunc(g, h, truth.g_star, truth.h_star, trunc)
    f = combined.filter
    base = default_grid_points(max(len(f), 1))
    n_points = cfg.T * math.ceil(base / cfg.T)
    values = frequency_grid(f, n_points).values
    hinf = float(np.max(np.abs(values)))
    step = n_points // cfg.T
    freq_errors = {}
    for j in range(cfg.n_freqs):
        omega = 2.0 * math.pi * j / cfg.T
        freq_errors[omega] = float(abs(values[j * step]))

    kept, cut = _h2_product(h, truth.h_star, trunc, trunc_eps)
    h2 = float(np.linalg.norm(kept))

    designs = default_test_designs(cfg.T, seed, scales=scales)
    eps = empirical_eps(g, h, truth, designs, n_mc, seed)
    mse = mc_test_mse(g, h, truth, designs[-1], n_mc, _mc_rng_seed(seed, 0x3E57))
    return ErrorReport(
        hinf_err=hinf,
        h2_err=h2,
        freq_errors=freq_errors,
        eps1_hat=eps.eps1,
        eps2_hat=eps.eps2,
        mc_mse=mse,
        diagnostics={
            "trunc_len": trunc,
            "combined_tail": combined.trunc_tail,
            "product_tail": cut,
            "grid_points": n_points,
            "eps": eps.to_json(),
        },
    )


def thread_cap(n_tasks: int) -> int:
    """Worker count for parallel sections, capped by ARFILT_THREADS."""
    env = os.environ.get("ARFILT_THREADS")
    if env is not None:
        try:
            cap = int(env)
        except ValueError as exc:
            raise ConfigError(f"ARFILT_THREADS must be an integer, got {env!r}") from exc
        if cap < 1:
            raise ConfigError(f"ARFILT_THREADS must be >= 1, got {cap}")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(int(n_tasks), cap))


class ScalingRow(NamedTuple):
    ell: int
    median_hinf_err: float
    lo: float
    hi: float


@dataclass(frozen=True)
class ScalingResult:
    """Median error per ell with bootstrap bands and the fitted slope."""

    rows: tuple
    slope: Optional[float]
    slope_halfwidth: Optional[float]
    at_floor: bool
    errors: dict = field(default_factory=dict)

    FLOOR = 1e-10


def run_pipeline_once(truth: ArTruth, ell, seed, r=None, c=26.0, estimator_fn=None):
    """One full generate -> estimate -> hinf_err run."""
    truth = as_truth(truth)
    r = len(truth.g_star) if r is None else int(r)
    fit = estimate if estimator_fn is None else estimator_fn
    cfg = DesignConfig(
        r=r,
        c=float(c),
        ell=int(ell),
        L=default_burn_in(truth.h_star, r),
        sigma=truth.sigma,
        seed=int(seed),
    )
    rs = generate_rollouts(cfg, truth.g_star, truth.h_star)
    res = fit(rs)
    norms = hinf_h2_errors(res.g, res.h, truth.g_star, truth.h_star)
    return norms.hinf_err


def pipeline_seed(base_seed, ell, seed_index) -> int:
    """Per-run seed for one (ell, seed_index) cell of a scaling sweep."""
    return int(np.random.SeedSequence((int(base_seed), int(ell), int(seed_index))).generate_state(1)[0])


def scaling_experiment(
    system,
    ell_values,
    n_seeds,
    r=None,
    c=26.0,
    base_seed=0,
    estimator_fn=None,
    n_boot=200,
) -> ScalingResult:
    """Median hinf_err per ell over seeds, log-log slope, bootstrap bands.

    Runs parallelize across (ell, seed); reduction order is fixed by
    sorting, so the result does not depend on scheduling.
    """
    ells = sorted(int(e) for e in ell_values)
    if len(ells) < 2 or len(set(ells)) != len(ells):
        raise ValueError("need at least two distinct ell values")
    n_seeds = int(n_seeds)
    if n_seeds < 2:
        raise ValueError(f"n_seeds must be >= 2, got {n_seeds}")
    truth = as_truth(system)

    tasks = [(ell, s) for ell in ells for s in range(n_seeds)]

    def run(task):
        ell, s = task
        return run_pipeline_once(
            truth, ell, pipeline_seed(base_seed, ell, s), r=r, c=c, estimator_fn=estimator_fn
        )

    with ThreadPoolExecutor(max_workers=thread_cap(len(tasks))) as pool:
        results = dict(zip(tasks, pool.map(run, tasks)))

    errors = {task: results[task] for task in sorted(results)}
    per_ell = {ell: np.array([errors[(ell, s)] for s in range(n_seeds)]) for ell in ells}
    summary = summarize_scaling(per_ell, base_seed=base_seed, n_boot=n_boot)
    return ScalingResult(
        rows=summary.rows,
        slope=summary.slope,
        slope_halfwidth=summary.slope_halfwidth,
        at_floor=summary.at_floor,
        errors=errors,
    )


def summarize_scaling(per_ell: dict, base_seed=0, n_boot=200) -> ScalingResult:
    """Medians, bootstrap bands, and slope from raw per-ell error samples.

    Accepts ragged samples (ells with different counts), so a partially
    failed sweep can still be summarized from whatever runs completed.
    """
    ells = sorted(int(e) for e in per_ell)
    samples = {ell: np.asarray(per_ell[ell], dtype=np.float64) for ell in ells}
    if any(samples[ell].size == 0 for ell in ells):
        raise ValueError("every ell needs at least one error sample")
    medians = np.array([float(np.median(samples[ell])) for ell in ells])

    at_floor = bool(np.all(medians <= ScalingResult.FLOOR))
    boot_rng = np.random.default_rng(_mc_rng_seed(base_seed, 0xB007))
    boot_medians = np.empty((n_boot, len(ells)))
    for b in range(n_boot):
        for i, ell in enumerate(ells):
            n = samples[ell].size
            take = boot_rng.integers(0, n, size=n)
            boot_medians[b, i] = np.median(samples[ell][take])
    lows = np.percentile(boot_medians, 2.5, axis=0)
    highs = np.percentile(boot_medians, 97.5, axis=0)

    slope = None
    halfwidth = None
    if not at_floor and len(ells) >= 2:
        log_ells = np.log(np.array(ells, dtype=np.float64))
        slope = float(np.polyfit(log_ells, np.log(medians), 1)[0])
        with np.errstate(divide="ignore"):
            boot_slopes = [
                np.polyfit(log_ells, np.log(bm), 1)[0]
                for bm in boot_medians
                if np.all(bm > 0.0)
            ]
        if len(boot_slopes) >= 2:
            halfwidth = float(1.96 * np.std(boot_slopes, ddof=1))

    rows = tuple(
        ScalingRow(ell, float(medians[i]), float(lows[i]), float(highs[i]))
        for i, ell in enumerate(ells)
    )
    return ScalingResult(
        rows=rows,
        slope=slope,
        slope_halfwidth=halfwidth,
        at_floor=at_floor,
    )
