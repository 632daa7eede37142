"""Linear dynamical systems with scalar observations, their steady-state
Kalman predictor, and the reduction to an autoregressive filter pair.

System (state dim d, scalar input and observation):

    h(t) = A h(t-1) + B x(t-1) + xi(t),    xi ~ N(0, Sigma_xi)
    y(t) = C h(t) + eta(t),                eta ~ N(0, sigma_eta)

Predictor form.  With P the fixed point of the prediction Riccati map

    P <- A (P - P C^T (C P C^T + sigma_eta)^{-1} C P) A^T + Sigma_xi

and Kalman gain K = P C^T / (C P C^T + sigma_eta), the steady-state
one-step-ahead predictor is the recursion

    s(t) = (A - A K C) s(t-1) + B x(t) + A K y(t),    yhat(t+1) = C s(t),

so A_kf = A - A K C, B_x = B, B_y = A K, C_kf = C.  Unrolling the recursion
gives the AR filter pair g*(k) = C A_kf^k B_x, h*(k) = C A_kf^k B_y with
innovation variance sigma_y2 = C P C^T + sigma_eta, and the AR predictions
coincide with the Kalman ones (up to the length-r truncation tail).
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from arfilt.errors import ConvergenceError, StabilityError
from arfilt.filters import Filter


def spectral_radius(M) -> float:
    """Largest eigenvalue magnitude; closed form for d <= 2, power iteration
    (200 growth steps) otherwise.  Diagnostic accuracy, not certified."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    d = M.shape[0]
    if M.shape != (d, d):
        raise ValueError("matrix must be square")
    if d == 1:
        return abs(float(M[0, 0]))
    if d == 2:
        tr = M[0, 0] + M[1, 1]
        det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        disc = tr * tr - 4.0 * det
        if disc >= 0.0:
            s = np.sqrt(disc)
            return max(abs((tr + s) / 2.0), abs((tr - s) / 2.0))
        return float(np.sqrt(det))
    rng = np.random.default_rng(0x5EED)
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    log_growth = []
    for _ in range(200):
        w = M @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        log_growth.append(np.log(nw))
        v = w / nw
    # discard the transient, average the tail growth rates
    return float(np.exp(np.mean(log_growth[-50:])))


def _check_psd(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(M, M.T, atol=1e-9):
        raise ValueError(f"{name} must be symmetric")
    w = np.linalg.eigvalsh((M + M.T) / 2.0)
    if w.size and w.min() < -1e-9 * max(1.0, w.max()):
        raise ValueError(f"{name} must be positive semidefinite")
    return (M + M.T) / 2.0


def _psd_factor(M):
    """L with L L^T = M for PSD M (eigen-based, tolerates zero rows)."""
    w, V = np.linalg.eigh(M)
    return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class LdsSpec:
    """System matrices; B is d x 1 and C is 1 x d (scalar input/observation)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    sigma_xi: np.ndarray
    sigma_eta: float

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        d = A.shape[0]
        if A.shape != (d, d):
            raise ValueError("A must be square")
        B = np.asarray(self.B, dtype=np.float64).reshape(d, -1)
        C = np.asarray(self.C, dtype=np.float64).reshape(-1, d)
        if B.shape != (d, 1):
            raise ValueError(f"B must be {d} x 1")
        if C.shape != (1, d):
            raise ValueError(f"C must be 1 x {d}")
        sxi = _check_psd(self.sigma_xi, "sigma_xi")
        if sxi.shape != (d, d):
            raise ValueError(f"sigma_xi must be {d} x {d}")
        seta = float(np.asarray(self.sigma_eta).reshape(()))
        if not np.isfinite(seta) or seta < 0:
            raise ValueError("sigma_eta must be a finite nonnegative scalar")
        for name, arr in (("A", A), ("B", B), ("C", C)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "sigma_xi", sxi)
        object.__setattr__(self, "sigma_eta", seta)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def stability_radius(self) -> float:
        """Spectral radius of A; reported as a diagnostic, never an error."""
        return spectral_radius(self.A)

    def to_json(self):
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "sigma_xi": self.sigma_xi.tolist(),
            "sigma_eta": self.sigma_eta,
        }

    @classmethod
    def from_json(cls, data):
        return cls(
            A=data["A"],
            B=data["B"],
            C=data["C"],
            sigma_xi=data["sigma_xi"],
            sigma_eta=data["sigma_eta"],
        )


def simulate_lds(spec: LdsSpec, x, seed, h0=None) -> np.ndarray:
    """Observations y(1..n) driven by inputs x(0..n-1) from state h0 (default 0).

    Noise draws come from ``default_rng(seed)``: first the state-noise block,
    then the observation-noise block, so a fixed seed fixes the trajectory.
    Zero noise covariances give the exact deterministic response.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size and not np.all(np.isfinite(x)):
        raise ValueError("inputs must be finite")
    d = spec.dim
    n = x.shape[0]
    h = np.zeros(d) if h0 is None else np.asarray(h0, dtype=np.float64).reshape(d)
    rng = np.random.default_rng(seed)
    xi = _psd_factor(spec.sigma_xi) @ rng.standard_normal((d, n)) if n else np.zeros((d, 0))
    eta = np.sqrt(spec.sigma_eta) * rng.standard_normal(n)
    b = spec.B[:, 0]
    c = spec.C[0, :]
    y = np.zeros(n)
    for t in range(n):
        h = spec.A @ h + b * x[t] + xi[:, t]
        y[t] = c @ h + eta[t]
    return y


@dataclass(frozen=True)
class KalmanGains:
    """Steady-state predictor matrices plus the Riccati diagnostics."""

    a_kf: np.ndarray
    b_x: np.ndarray
    b_y: np.ndarray
    c_kf: np.ndarray
    gain: np.ndarray
    sigma_h: np.ndarray
    sigma_y2: float
    n_iter: int = 0
    residual: float = 0.0

    def to_json(self):
        return {
            "a_kf": self.a_kf.tolist(),
            "b_x": self.b_x.tolist(),
            "b_y": self.b_y.tolist(),
            "c_kf": self.c_kf.tolist(),
            "gain": self.gain.tolist(),
            "sigma_h": self.sigma_h.tolist(),
            "sigma_y2": self.sigma_y2,
            "n_iter": self.n_iter,
            "residual": self.residual,
        }

    @classmethod
    def from_json(cls, data):
        return cls(
            a_kf=np.asarray(data["a_kf"], dtype=np.float64),
            b_x=np.asarray(data["b_x"], dtype=np.float64),
            b_y=np.asarray(data["b_y"], dtype=np.float64),
            c_kf=np.asarray(data["c_kf"], dtype=np.float64),
            gain=np.asarray(data["gain"], dtype=np.float64),
            sigma_h=np.asarray(data["sigma_h"], dtype=np.float64),
            sigma_y2=float(data["sigma_y2"]),
            n_iter=int(data["n_iter"]),
            residual=float(data["residual"]),
        )


def riccati_step(P, A, C, sigma_xi, sigma_eta):
    """One application of the prediction Riccati map."""
    S = float((C @ P @ C.T).item() + sigma_eta)
    if S <= 0.0:
        raise ConvergenceError("innovation variance is not positive", residual=S)
    K = P @ C.T / S
    return A @ (P - K @ (C @ P)) @ A.T + sigma_xi


def steady_state_kalman(spec: LdsSpec, tol=1e-12, max_iter=10**6) -> KalmanGains:
    """Fixed point of the Riccati map from P0 = sigma_xi, then the gains.

    Raises ConvergenceError (carrying the last residual) if the Frobenius
    update norm does not fall below tol within max_iter iterations.
    """
    A, C = spec.A, spec.C
    P = spec.sigma_xi.copy()
    residual = np.inf
    for it in range(1, int(max_iter) + 1):
        P_next = riccati_step(P, A, C, spec.sigma_xi, spec.sigma_eta)
        residual = float(np.linalg.norm(P_next - P))
        P = P_next
        if residual <= tol:
            break
    else:
        raise ConvergenceError(
            f"Riccati iteration did not reach tol={tol} in {max_iter} iterations",
            residual=residual,
        )
    P = (P + P.T) / 2.0
    sigma_y2 = float((C @ P @ C.T).item() + spec.sigma_eta)
    K = P @ C.T / sigma_y2
    a_kf = A - A @ K @ C
    return KalmanGains(
        a_kf=a_kf,
        b_x=spec.B.copy(),
        b_y=A @ K,
        c_kf=C.copy(),
        gain=K,
        sigma_h=P,
        sigma_y2=sigma_y2,
        n_iter=it,
        residual=residual,
    )


def kalman_predict(gains: KalmanGains, x, y) -> np.ndarray:
    """One-step-ahead predictions from aligned data streams.

    x[i] and y[i] are the input and observation at the same time index i;
    yhat[i] is the prediction of y[i] from data strictly before i, with the
    state initialized at zero (so yhat[0] = 0).
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError("x and y must have equal length")
    d = gains.a_kf.shape[0]
    s = np.zeros(d)
    bx = gains.b_x[:, 0]
    by = gains.b_y[:, 0]
    c = gains.c_kf[0, :]
    yhat = np.zeros(x.shape[0])
    for t in range(x.shape[0]):
        yhat[t] = c @ s
        s = gains.a_kf @ s + bx * x[t] + by * y[t]
    return yhat


class ArReduction(NamedTuple):
    """Length-r AR filter pair and the innovation variance."""

    g_star: Filter
    h_star: Filter
    sigma2: float


def unroll_kalman(gains: KalmanGains, r) -> ArReduction:
    """First r coefficients of the unrolled predictor:
    g*(k) = C A_kf^k B_x and h*(k) = C A_kf^k B_y, with sigma2 = sigma_y2.
    """
    r = int(r)
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    radius = spectral_radius(gains.a_kf)
    if radius >= 1.0:
        raise StabilityError(
            f"predictor matrix has spectral radius {radius:.6g} >= 1"
        )
    c = gains.c_kf[0, :]
    vx = gains.b_x[:, 0].copy()
    vy = gains.b_y[:, 0].copy()
    g = np.zeros(r)
    h = np.zeros(r)
    for k in range(r):
        g[k] = c @ vx
        h[k] = c @ vy
        vx = gains.a_kf @ vx
        vy = gains.a_kf @ vy
    return ArReduction(Filter(g), Filter(h), float(gains.sigma_y2))


class FirVsAr(NamedTuple):
    sigma_h2: float
    ar_err: float
    fir_err: float
    ratio: float


def fir_vs_ar_example(rho) -> FirVsAr:
    """Closed forms for the scalar benchmark system (A=rho, B=C=1, unit noise).

    sigma_h2 = (rho^2 + sqrt(rho^4 + 4)) / 2 solves the scalar Riccati
    equation; the one-step AR error is sigma_h2 + 1 while any finite-window
    FIR predictor pays 1 + 1/(1 - rho^2).
    """
    rho = float(rho)
    if not (0.0 < rho < 1.0):
        raise ValueError(f"rho must be in (0, 1), got {rho}")
    sigma_h2 = (rho**2 + np.sqrt(rho**4 + 4.0)) / 2.0
    ar_err = sigma_h2 + 1.0
    fir_err = 1.0 + 1.0 / (1.0 - rho**2)
    return FirVsAr(sigma_h2, ar_err, fir_err, fir_err / ar_err)
