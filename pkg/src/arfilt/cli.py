"""Command-line front end: simulate, estimate, evaluate, bench, kalman-demo.

Each subcommand reads one JSON config and writes its artifacts under the
config's output_dir (or --out).  Exit codes: 0 success, 2 invalid config or
lineage mismatch, 3 numeric failure, 4 missing or corrupt files.
"""

import argparse
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from arfilt.errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    DegeneratePolynomialError,
    InsufficientHistoryError,
    NoFeasibleGammaError,
    StabilityError,
)
from arfilt.estimators import EstimationResult, estimate, fir_ls_baseline, ordinary_ls_baseline
from arfilt.evaluation import (
    error_report,
    freq_response_error,
    pipeline_seed,
    run_pipeline_once,
    summarize_scaling,
    theoretical_rates,
    thread_cap,
)
from arfilt.filters import hinf_norm, unroll
from arfilt.io import (
    DemoConfig,
    ExperimentConfig,
    load_config_file,
    load_json,
    load_rollouts,
    save_rollouts,
    write_json,
    write_long_csv,
    write_table_csv,
)
from arfilt.lds import LdsSpec, fir_vs_ar_example, steady_state_kalman
from arfilt.rollouts import generate_rollouts, required_burn_in, unrolled_tail_length

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

DENSE_GRID_POINTS = 257
RICCATI_TOL = 1e-9

_NUMERIC_ERRORS = (
    StabilityError,
    ConvergenceError,
    NoFeasibleGammaError,
    DegeneratePolynomialError,
    FloatingPointError,
    np.linalg.LinAlgError,
)


def _load_config(args) -> ExperimentConfig:
    return ExperimentConfig.from_json(load_config_file(args.config))


def _out_dir(cfg, args) -> Path:
    out = Path(args.out if args.out else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    truth = cfg.truth()
    dcfg = cfg.design(truth)
    rollout_set = generate_rollouts(dcfg, truth.g_star, truth.h_star)
    out = _out_dir(cfg, args)
    manifest = save_rollouts(rollout_set, out / "rollouts", config_hash=cfg.config_hash)
    burn = required_burn_in(truth.h_star, truth.g_star, dcfg, cfg.evaluation.delta)
    n_driven = len(rollout_set) - dcfg.n_zero
    print(f"wrote {len(rollout_set)} rollouts ({dcfg.n_zero} zero, {n_driven} driven) to {out / 'rollouts'}")
    print(f"T={dcfg.T} L={dcfg.L} (certified L>={burn.L} at delta={cfg.evaluation.delta}) K={burn.K:.6g}")
    print(f"content hash {manifest['content_hash']}")
    return EXIT_OK


def _result_payload(cfg, manifest, result) -> dict:
    return {
        "schema_version": 1,
        "config_hash": cfg.config_hash,
        "rollout_hash": manifest["content_hash"],
        "result": result.to_json(),
    }


def cmd_estimate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg, args)
    rollout_set, manifest = load_rollouts(out / "rollouts")
    if manifest.get("config_hash") != cfg.config_hash:
        raise ConfigError(
            "lineage mismatch: the rollout directory was generated from a different config"
        )
    result = estimate(rollout_set)
    write_json(out / "result.json", _result_payload(cfg, manifest, result))
    obj = result.minmax_objective
    print(f"estimator={result.estimator} minmax_objective={obj:.6g} iterations={result.solver_iters}")
    print(f"wrote {out / 'result.json'}")
    if args.baselines:
        for name, res in (
            ("ols", ordinary_ls_baseline(rollout_set)),
            ("fir", fir_ls_baseline(rollout_set, rollout_set.config.r)),
        ):
            path = out / f"result_{name}.json"
            write_json(path, _result_payload(cfg, manifest, res))
            print(f"wrote {path}")
    return EXIT_OK


def _eps_band(eps_diag, key):
    sq = eps_diag[f"{key}_sq"]
    se = eps_diag[f"{key}_sq_se"]
    lo = math.sqrt(max(sq - 1.96 * se, 0.0))
    hi = math.sqrt(max(sq + 1.96 * se, 0.0))
    return lo, hi


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg, args)
    result_data = load_json(out / "result.json")
    if result_data.get("config_hash") != cfg.config_hash:
        raise ConfigError("lineage mismatch: result.json was produced from a different config")
    truth = cfg.truth()
    dcfg = cfg.design(truth)
    if args.oracle:
        g, h = truth.g_star, truth.h_star
    else:
        fitted = EstimationResult.from_json(result_data["result"])
        g, h = fitted.g, fitted.h
    report = error_report(
        g,
        h,
        truth,
        dcfg,
        n_mc=cfg.evaluation.n_mc,
        seed=cfg.seed,
        scales=cfg.evaluation.test_scales,
    )
    eps_diag = report.diagnostics["eps"]
    eps1_lo, eps1_hi = _eps_band(eps_diag, "eps1")
    eps2_lo, eps2_hi = _eps_band(eps_diag, "eps2")
    rows = [
        ("hinf_err", 0, report.hinf_err, None, None),
        ("h2_err", 0, report.h2_err, None, None),
        ("eps1_hat", 0, report.eps1_hat, eps1_lo, eps1_hi),
        ("eps2_hat", 0, report.eps2_hat, eps2_lo, eps2_hi),
        ("mc_mse", 0, report.mc_mse, None, None),
    ]
    for omega, err in report.freq_errors.items():
        rows.append(("freq_err", omega, err, None, None))
    for omega in np.linspace(0.0, math.pi, DENSE_GRID_POINTS):
        err = freq_response_error(g, h, truth.g_star, truth.h_star, omega)
        rows.append(("dense", float(omega), err, None, None))
    write_long_csv(
        out / "report.csv",
        rows,
        {"config_hash": cfg.config_hash, "rollout_hash": result_data.get("rollout_hash", "")},
    )
    which = "oracle" if args.oracle else "learned"
    print(
        f"{which}: hinf_err={report.hinf_err:.6g} h2_err={report.h2_err:.6g} "
        f"eps1={report.eps1_hat:.6g} eps2={report.eps2_hat:.6g} mc_mse={report.mc_mse:.6g}"
    )
    print(f"wrote {out / 'report.csv'}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    if cfg.bench is None:
        raise ConfigError('bench requires a "bench" section with ell_values and n_seeds')
    out = _out_dir(cfg, args)
    truth = cfg.truth()
    dcfg = cfg.design(truth)
    ells = sorted(set(cfg.bench.ell_values))
    tasks = [(ell, s) for ell in ells for s in range(cfg.bench.n_seeds)]

    def run(task):
        ell, s = task
        try:
            err = run_pipeline_once(truth, ell, pipeline_seed(cfg.seed, ell, s), r=cfg.r, c=cfg.c)
            return ("ok", err)
        except Exception as exc:
            return ("fail", f"{type(exc).__name__}: {exc}")

    with ThreadPoolExecutor(max_workers=thread_cap(len(tasks))) as pool:
        outcomes = dict(zip(tasks, pool.map(run, tasks)))

    failures = [(task, outcomes[task][1]) for task in sorted(outcomes) if outcomes[task][0] == "fail"]
    per_ell = {
        ell: [outcomes[(ell, s)][1] for s in range(cfg.bench.n_seeds) if outcomes[(ell, s)][0] == "ok"]
        for ell in ells
    }
    per_ell = {ell: vals for ell, vals in per_ell.items() if vals}

    rows = []
    if per_ell:
        summary = summarize_scaling(per_ell, base_seed=cfg.seed)
        unr = unroll(truth.h_star, unrolled_tail_length(truth.h_star, 1e-6))
        rates = theoretical_rates(dcfg, cfg.evaluation.delta, truth.h_star, hinf_norm(unr))
        for row in summary.rows:
            rows.append(("median_hinf_err", row.ell, row.median_hinf_err, row.lo, row.hi))
        for ell in sorted(per_ell):
            rates_args = (dcfg.c_int, ell, dcfg.r, dcfg.T, cfg.evaluation.delta)
            rows.append(("theory_eps1", ell, rates.eps1_theory(*rates_args), None, None))
            rows.append(("theory_eps2", ell, rates.eps2_theory(*rates_args), None, None))
        if summary.at_floor:
            rows.append(("floor", 0, 1.0, None, None))
            print("all medians at the numeric floor; no slope fitted")
        elif summary.slope is not None:
            hw = summary.slope_halfwidth or 0.0
            rows.append(("slope", 0, summary.slope, summary.slope - hw, summary.slope + hw))
            print(f"slope={summary.slope:.4f} +- {hw:.4f} over ells {sorted(per_ell)}")
    for (ell, s), msg in failures:
        rows.append(("failed", ell, s, None, None))
        print(f"run (ell={ell}, seed_index={s}) failed: {msg}", file=sys.stderr)
    write_long_csv(out / "scaling.csv", rows, {"config_hash": cfg.config_hash})
    print(f"wrote {out / 'scaling.csv'} ({len(per_ell)} of {len(ells)} ladder points complete)")
    return EXIT_NUMERIC if failures else EXIT_OK


def cmd_kalman_demo(args) -> int:
    raw = load_config_file(args.config)
    if isinstance(raw, dict) and "system" in raw:
        cfg = ExperimentConfig.from_json(raw)
        rhos = cfg.rhos if cfg.rhos is not None else DemoConfig.rhos
    else:
        cfg = DemoConfig.from_json(raw)
        rhos = cfg.rhos
    out = _out_dir(cfg, args)
    rows = []
    print(f"{'rho':>6} {'sigma_h2':>12} {'ar_err':>12} {'fir_err':>12} {'ratio':>10}")
    for rho in rhos:
        closed = fir_vs_ar_example(rho)
        gains = steady_state_kalman(LdsSpec([[rho]], [[1.0]], [[1.0]], [[1.0]], 1.0))
        drift = max(
            abs(float(gains.sigma_h[0, 0]) - closed.sigma_h2),
            abs(gains.sigma_y2 - closed.ar_err),
        )
        if drift > RICCATI_TOL:
            raise ConvergenceError(
                f"closed form and Riccati fixed point disagree at rho={rho}: |delta|={drift:.3e}",
                residual=drift,
            )
        rows.append((rho, closed.sigma_h2, closed.ar_err, closed.fir_err, closed.ratio))
        print(
            f"{rho:>6.2f} {closed.sigma_h2:>12.6f} {closed.ar_err:>12.6f} "
            f"{closed.fir_err:>12.6f} {closed.ratio:>10.4f}"
        )
    write_table_csv(
        out / "appendix_a.csv",
        ("rho", "sigma_h2", "ar_err", "fir_err", "ratio"),
        rows,
        {"config_hash": cfg.config_hash},
    )
    print(f"wrote {out / 'appendix_a.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arfilt",
        description="Design-based rollout simulation, AR filter estimation, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the JSON experiment config")
        p.add_argument("--out", default=None, help="output directory (overrides config output_dir)")
        p.set_defaults(func=func)
        return p

    add("simulate", cmd_simulate, "generate the rollout design and write the rollout directory")
    est = add("estimate", cmd_estimate, "fit the three-stage estimator on a rollout directory")
    est.add_argument("--baselines", action="store_true", help="also fit the OLS and FIR baselines")
    ev = add("evaluate", cmd_evaluate, "measure errors of a fitted result against the true system")
    ev.add_argument("--oracle", action="store_true", help="evaluate the true filters instead of the fit")
    add("bench", cmd_bench, "run the ell-scaling sweep and fit the error slope")
    add("kalman-demo", cmd_kalman_demo, "closed-form AR-vs-FIR comparison table")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InsufficientHistoryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
