"""Estimation: per-block least squares and the min-max refinement.

Stage 1 fits h on the zero-input rollouts alone (their regressors carry no
input columns).  Stage 2 fits, for every design frequency j, a filter g
that explains the sinusoid-driven outputs with h frozen at the stage-1
solution; the x-side normal matrix has rank at most two, so the solve is a
pseudoinverse projection.  Stage 3 refines both filters jointly:

    minimize over w = [g; h] the maximum of
      (1/r) || stacked zero-rollout histories^T (h - h_ls) ||^2
      and, for each j,
      || stacked frequency-j histories^T (w - [g_ls_j; h_ls]) ||^2 .

Every block is a convex quadratic ||A_i w - y_i||^2, so the refinement is a
min of a max of quadratics.  The solver smooths the max with log-sum-exp at
a decreasing temperature (annealed from the initial objective), takes
Newton-type descent steps preconditioned by the softmax-averaged Hessian
with a backtracking line search, and finishes with plain subgradient
polish steps; the best iterate ever seen is returned, so the reported
objective never exceeds the initialization's.  Quadratics are evaluated in
a recentered form (residuals recomputed at each annealing stage) to keep
the attainable floor near machine precision when the data is exactly
consistent.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from arfilt.filters import Filter, as_filter
from arfilt.rollouts import RolloutSet, build_regressor

LS_RCOND = 1e-10
ACTIVE_TOL = 1e-12


@dataclass(frozen=True)
class _Quadratic:
    """q(w) = ||A w - y||^2 with the Gram A^T A cached."""

    A: np.ndarray
    y: np.ndarray
    G: np.ndarray

    @classmethod
    def from_factor(cls, A, y):
        A = np.ascontiguousarray(A, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.float64)
        return cls(A=A, y=y, G=A.T @ A)

    def value(self, w):
        res = self.A @ w - self.y
        return float(res @ res)


def _true_objective(quads, w):
    return max(q.value(w) for q in quads)


def _project_simplex(v):
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    cond = u - css / idx > 0
    rho = idx[cond][-1]
    theta = css[cond][-1] / rho
    return np.clip(v - theta, 0.0, None)


def _min_norm_combination(grads):
    """Shortest vector in the convex hull of the rows, by projected
    gradient on the simplex.  Its negation is the steepest descent
    direction of a max-function whose active gradients are the rows."""
    k = grads.shape[0]
    if k == 1:
        return grads[0].copy()
    lam = np.full(k, 1.0 / k)
    M = grads @ grads.T
    lips = float(np.linalg.eigvalsh(M)[-1])
    if lips <= 0.0:
        return grads[0].copy()
    step = 1.0 / lips
    for _ in range(200):
        lam_new = _project_simplex(lam - step * (M @ lam))
        if np.abs(lam_new - lam).max() <= 1e-15:
            lam = lam_new
            break
        lam = lam_new
    return lam @ grads


def _line_minimize(c, b, a):
    """Minimize the convex function max_k(c_k + b_k t + a_k t^2) over t >= 0.

    Doubles an initial bracket while the far end keeps improving, then
    ternary-searches it.  Returns (t, value); t = 0 when no profit.
    """

    def val(t):
        return float(np.max(c + t * (b + t * a)))

    f0 = val(0.0)
    t_hi = 1.0
    f_hi = val(t_hi)
    for _ in range(80):
        f2 = val(2.0 * t_hi)
        if f2 >= f_hi:
            break
        t_hi *= 2.0
        f_hi = f2
    lo, hi = 0.0, 2.0 * t_hi
    for _ in range(120):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if val(m1) <= val(m2):
            hi = m2
        else:
            lo = m1
    t = 0.5 * (lo + hi)
    ft = val(t)
    if f0 <= ft:
        return 0.0, f0
    return t, ft


def minimize_max_quadratics(
    quads,
    w0,
    anneal=(1e-1, 1e-2, 1e-3),
    rel_tol=1e-9,
    max_iter=100_000,
    polish_steps=200,
    stage_iter_cap=5_000,
    max_extra_stages=40,
):
    """Minimize max_i ||A_i w - y_i||^2.  Returns (w, info).

    info carries the final objective, iteration count, stage count, the
    smoothed-surrogate gradient norm at the solution, and a convergence
    flag (False only when the global iteration cap was hit).
    """
    w0 = np.asarray(w0, dtype=np.float64).reshape(-1)
    dim = w0.shape[0]
    f0 = _true_objective(quads, w0)
    best_w = w0.copy()
    best_f = f0
    info = {
        "init_objective": f0,
        "iterations": 0,
        "stages": 0,
        "polish_steps": 0,
        "grad_norm": 0.0,
        "converged": True,
    }
    if f0 <= 0.0 or not np.isfinite(f0):
        info["objective"] = max(f0, 0.0)
        return best_w, info

    iters = 0
    center = best_w.copy()
    # centered representation: q_i(center + u) = c_i + 2 b_i^T u + u^T G_i u
    cs = np.empty(len(quads))
    bs = np.empty((len(quads), dim))
    Gs = np.stack([q.G for q in quads])

    def recenter(point):
        for i, q in enumerate(quads):
            res = q.A @ point - q.y
            cs[i] = res @ res
            bs[i] = q.A.T @ res

    def values_at(u):
        v = cs + 2.0 * (bs @ u) + np.einsum("i,kij,j->k", u, Gs, u)
        return np.clip(v, 0.0, None)

    mus_used = []
    mu = anneal[0] * f0
    stage = 0
    while iters < max_iter:
        if stage < len(anneal):
            mu = anneal[stage] * f0
        mu = max(mu, 5e-324)
        stage += 1
        mus_used.append(mu)
        info["stages"] = stage
        f_before = best_f
        recenter(best_w)
        center = best_w.copy()
        u = np.zeros(dim)
        f_prev = best_f
        for _ in range(stage_iter_cap):
            if iters >= max_iter:
                info["converged"] = False
                break
            iters += 1
            vals = values_at(u)
            vmax = float(vals.max())
            s = np.exp((vals - vmax) / mu)
            s /= s.sum()
            half_grads = bs + np.einsum("kij,j->ki", Gs, u)
            grad = 2.0 * (s @ half_grads)
            H = 2.0 * np.einsum("k,kij->ij", s, Gs)
            lam = 1e-12 * (np.trace(H) / dim + 1.0)
            try:
                d = -np.linalg.solve(H + lam * np.eye(dim), grad)
            except np.linalg.LinAlgError:
                d = -np.linalg.pinv(H + lam * np.eye(dim)) @ grad
            if d @ grad >= 0.0:
                d = -grad
            t, f_here = _line_minimize(
                vals, 2.0 * (half_grads @ d), np.einsum("kij,i,j->k", Gs, d, d)
            )
            if f_here >= f_prev:
                # Newton direction made no line progress; one steepest try
                d = -grad
                t, f_here = _line_minimize(
                    vals, 2.0 * (half_grads @ d), np.einsum("kij,i,j->k", Gs, d, d)
                )
                if f_here >= f_prev:
                    break
            f_here = max(f_here, 0.0)
            u = u + t * d
            if f_here < best_f:
                best_f = f_here
                best_w = center + u
            if f_prev - f_here <= rel_tol * max(f_prev, 1e-300):
                break
            f_prev = f_here
        if not info["converged"]:
            break
        improved = best_f < f_before * (1.0 - 1e-6)
        if stage >= len(anneal):
            extended = stage - len(anneal)
            if not improved or extended >= max_extra_stages or best_f <= 0.0:
                break
            mu *= 1e-2

    # subgradient polish on the true objective, exact line search per step
    recenter(best_w)
    center = best_w.copy()
    u = np.zeros(dim)
    for _ in range(polish_steps):
        if iters >= max_iter:
            info["converged"] = False
            break
        iters += 1
        info["polish_steps"] += 1
        vals = values_at(u)
        fmax = float(vals.max())
        half_grads = bs + np.einsum("kij,j->ki", Gs, u)
        t = 0.0
        # steepest descent for the max: negated min-norm subgradient over
        # the active hull, widening the activity tolerance if blocked
        for tol in (ACTIVE_TOL, 1e-9 * max(fmax, 1.0), 1e-6 * max(fmax, 1.0)):
            active = vals >= fmax - tol
            d = -_min_norm_combination(2.0 * half_grads[active])
            t, f_try = _line_minimize(
                vals, 2.0 * (half_grads @ d), np.einsum("kij,i,j->k", Gs, d, d)
            )
            if t > 0.0:
                break
        if t == 0.0:
            break
        u = u + t * d
        f_try = max(f_try, 0.0)
        if f_try < best_f:
            best_f = f_try
            best_w = center + u

    # first-order stationarity of the smoothed surrogate at the solution
    recenter(best_w)
    vals = np.clip(cs, 0.0, None)
    mu = mus_used[-1] if mus_used else max(anneal[-1] * f0, 5e-324)
    vmax = float(vals.max())
    s = np.exp((vals - vmax) / mu)
    s /= s.sum()
    info["grad_norm"] = float(np.linalg.norm(2.0 * (s @ bs)))
    info["iterations"] = iters
    info["objective"] = max(float(min(best_f, _true_objective(quads, best_w))), 0.0)
    return best_w, info


def solve_h_ls(matrices, targets):
    """Minimum-norm LS fit of h on stacked zero-rollout histories.

    matrices: list of (r, T) history matrices; targets: matching y(1..T)
    vectors.  Returns (Filter, info) where info reports the residual norm,
    rank, and a degeneracy flag (all-zero system -> zero filter).
    """
    mats = list(matrices)
    tgts = list(targets)
    if not mats or len(mats) != len(tgts):
        raise ValueError("need equally many matrices and targets, at least one")
    r = mats[0].shape[0]
    A = np.vstack([M.T for M in mats])
    b = np.concatenate([np.asarray(t, dtype=np.float64).reshape(-1) for t in tgts])
    if A.shape[0] != b.shape[0]:
        raise ValueError("matrix columns and target lengths do not match")
    sol, _, rank, _ = np.linalg.lstsq(A, b, rcond=LS_RCOND)
    residual = float(np.linalg.norm(A @ sol - b))
    info = {"residual": residual, "rank": int(rank), "degenerate": bool(rank == 0)}
    return Filter(sol), info


def solve_g_ls(matrices, targets, h_ls, r):
    """Fit g at one design frequency with h frozen at h_ls.

    matrices: full (2r, T) history matrices of that frequency's cos and sin
    rollouts; targets: matching y(1..T).  Solves the rank<=2 x-side normal
    equations by pseudoinverse.  Returns (Filter, info).
    """
    h = as_filter(h_ls).coeffs
    if h.shape[0] != r:
        raise ValueError("h_ls length must equal r")
    Axx = np.zeros((r, r))
    bx = np.zeros(r)
    for M, t in zip(matrices, targets, strict=True):
        if M.shape[0] != 2 * r:
            raise ValueError("matrices must have 2r rows")
        Mx, My = M[:r], M[r:]
        resid = np.asarray(t, dtype=np.float64).reshape(-1) - My.T @ h
        Axx += Mx @ Mx.T
        bx += Mx @ resid
    g = np.linalg.pinv(Axx, rcond=LS_RCOND) @ bx
    rank = int(np.linalg.matrix_rank(Axx, tol=LS_RCOND * max(1.0, np.abs(Axx).max())))
    return Filter(g), {"rank": rank}


@dataclass(frozen=True)
class EstimationContext:
    """Precomputed solves and quadratic blocks for the min-max refinement."""

    r: int
    h_ls: Filter
    h_ls_info: dict
    g_ls: tuple
    g_ls_info: tuple
    quads: tuple
    w0: np.ndarray


def build_problem(rollout_set: RolloutSet) -> EstimationContext:
    """Assemble the estimation problem from a rollout set.

    Rollouts are consumed in canonical label order, so the result does not
    depend on the stored ordering.
    """
    cfg = rollout_set.config
    r = cfg.r
    ordered = sorted(rollout_set.rollouts, key=lambda ro: ro.label.sort_key())
    zeros = [ro for ro in ordered if ro.label.kind == "zero"]
    if not zeros:
        raise ValueError("rollout set contains no zero-input rollouts")
    zero_mats = [build_regressor(ro, r, include_x=False) for ro in zeros]
    zero_tgts = [ro.targets() for ro in zeros]
    h_ls, h_info = solve_h_ls(zero_mats, zero_tgts)

    quads = []
    A0 = np.hstack(
        [np.zeros((len(zeros) * cfg.T, r)), np.vstack([M.T for M in zero_mats])]
    ) / math.sqrt(r)
    y0 = A0 @ np.concatenate([np.zeros(r), h_ls.coeffs])
    quads.append(_Quadratic.from_factor(A0, y0))

    g_ls_list = []
    g_info_list = []
    for j in range(cfg.n_freqs):
        group = [ro for ro in ordered if ro.label.kind in ("cos", "sin") and ro.label.j == j]
        if not group:
            raise ValueError(f"no rollouts at frequency index {j}")
        mats = [build_regressor(ro, r, include_x=True) for ro in group]
        tgts = [ro.targets() for ro in group]
        g_j, info_j = solve_g_ls(mats, tgts, h_ls, r)
        g_ls_list.append(g_j)
        g_info_list.append(info_j)
        Aj = np.vstack([M.T for M in mats])
        anchor = np.concatenate([g_j.coeffs, h_ls.coeffs])
        quads.append(_Quadratic.from_factor(Aj, Aj @ anchor))

    w0 = np.concatenate(
        [np.mean([g.coeffs for g in g_ls_list], axis=0), h_ls.coeffs]
    )
    return EstimationContext(
        r=r,
        h_ls=h_ls,
        h_ls_info=h_info,
        g_ls=tuple(g_ls_list),
        g_ls_info=tuple(g_info_list),
        quads=tuple(quads),
        w0=w0,
    )


def minmax_objective(g, h, ctx: EstimationContext) -> float:
    """The refined objective at (g, h): max over the zero block and all
    frequency blocks."""
    g = as_filter(g)
    h = as_filter(h)
    if len(g) != ctx.r or len(h) != ctx.r:
        raise ValueError("g and h must have length r")
    w = np.concatenate([g.coeffs, h.coeffs])
    return _true_objective(ctx.quads, w)


@dataclass(frozen=True)
class EstimationResult:
    """Learned filter pair plus the solve diagnostics."""

    g: Filter
    h: Filter
    h_ls: Filter
    g_ls_per_freq: tuple
    minmax_objective: Optional[float]
    solver_iters: int
    estimator: str = "minmax"
    diagnostics: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "estimator": self.estimator,
            "g": self.g.to_json(),
            "h": self.h.to_json(),
            "h_ls": self.h_ls.to_json(),
            "g_ls_per_freq": {str(j): g.to_json() for j, g in enumerate(self.g_ls_per_freq)},
            "minmax_objective": self.minmax_objective,
            "solver_iters": self.solver_iters,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_json(cls, data):
        per_freq = data.get("g_ls_per_freq", {})
        ordered = [Filter.from_json(per_freq[k]) for k in sorted(per_freq, key=int)]
        return cls(
            g=Filter.from_json(data["g"]),
            h=Filter.from_json(data["h"]),
            h_ls=Filter.from_json(data["h_ls"]),
            g_ls_per_freq=tuple(ordered),
            minmax_objective=data.get("minmax_objective"),
            solver_iters=int(data.get("solver_iters", 0)),
            estimator=data.get("estimator", "minmax"),
            diagnostics=data.get("diagnostics", {}),
        )


def minmax_refine(ctx: EstimationContext) -> EstimationResult:
    """Run the min-max solver from the least-squares initialization."""
    w, info = minimize_max_quadratics(ctx.quads, ctx.w0)
    r = ctx.r
    diagnostics = {
        "init_objective": info["init_objective"],
        "grad_norm": info["grad_norm"],
        "stages": info["stages"],
        "polish_steps": info["polish_steps"],
        "converged": info["converged"],
        "h_ls": ctx.h_ls_info,
    }
    return EstimationResult(
        g=Filter(w[:r]),
        h=Filter(w[r:]),
        h_ls=ctx.h_ls,
        g_ls_per_freq=ctx.g_ls,
        minmax_objective=info["objective"],
        solver_iters=info["iterations"],
        diagnostics=diagnostics,
    )


def estimate(rollout_set: RolloutSet) -> EstimationResult:
    """Full pipeline: stage-wise least squares, then min-max refinement."""
    return minmax_refine(build_problem(rollout_set))


def ordinary_ls_baseline(rollout_set: RolloutSet) -> EstimationResult:
    """Single joint minimum-norm LS of [g; h] over every rollout."""
    cfg = rollout_set.config
    r = cfg.r
    ordered = sorted(rollout_set.rollouts, key=lambda ro: ro.label.sort_key())
    A = np.vstack([build_regressor(ro, r, include_x=True).T for ro in ordered])
    b = np.concatenate([ro.targets() for ro in ordered])
    sol, _, rank, _ = np.linalg.lstsq(A, b, rcond=LS_RCOND)
    residual = float(np.linalg.norm(A @ sol - b))
    empty = Filter(np.zeros(r))
    return EstimationResult(
        g=Filter(sol[:r]),
        h=Filter(sol[r:]),
        h_ls=empty,
        g_ls_per_freq=(),
        minmax_objective=None,
        solver_iters=0,
        estimator="ols",
        diagnostics={"residual": residual, "rank": int(rank)},
    )


def fir_ls_baseline(rollout_set: RolloutSet, r_fir) -> EstimationResult:
    """Minimum-norm LS of y(t) on x(t-1..t-r_fir) alone.

    Zero-input rollouts contribute nothing to the fit (their input columns
    vanish); they are included for uniformity.
    """
    cfg = rollout_set.config
    r_fir = int(r_fir)
    ordered = sorted(rollout_set.rollouts, key=lambda ro: ro.label.sort_key())
    A = np.vstack(
        [build_regressor(ro, r_fir, include_x=True)[:r_fir].T for ro in ordered]
    )
    b = np.concatenate([ro.targets() for ro in ordered])
    sol, _, rank, _ = np.linalg.lstsq(A, b, rcond=LS_RCOND)
    residual = float(np.linalg.norm(A @ sol - b))
    return EstimationResult(
        g=Filter(sol),
        h=Filter(np.zeros(r_fir)),
        h_ls=Filter(np.zeros(r_fir)),
        g_ls_per_freq=(),
        minmax_objective=None,
        solver_iters=0,
        estimator="fir",
        diagnostics={"residual": residual, "rank": int(rank)},
    )
