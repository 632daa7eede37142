"""Finite causal filters and the frequency-domain tools built on them.

A filter is a finite real impulse response f(0..len-1) acting by causal
convolution.  Its transfer function F(z) = sum_k f(k) z^{-k} is evaluated on
the unit circle; the H-infinity norm is read as sup |F(z)| over the circle
(scalar filters throughout) and computed as a uniform grid maximum, which
converges to the true value from below.

The unroll operation inverts (1 - z^{-1} H(z)): its output u satisfies
u(0) = 1 and u(t) = sum_k h(k) u(t-1-k), so that y = u * d solves the
recursion y(t) = d(t) + sum_k h(k) y(t-1-k).
"""

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple
import warnings

import numpy as np

from arfilt import _kernels
from arfilt.errors import (
    DegeneratePolynomialError,
    NoFeasibleGammaError,
    StabilityError,
    UnstableFilterWarning,
)

OVERFLOW_THRESHOLD = 1e12


class Filter:
    """Finite real impulse response.

    Coefficients are stored as a read-only float64 array; empty filters are
    allowed and act as zero.
    """

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        arr = np.array(coeffs, dtype=np.float64, copy=True).reshape(-1)
        if arr.size and not np.all(np.isfinite(arr)):
            raise ValueError("filter coefficients must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "coeffs", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Filter is immutable")

    def __len__(self):
        return self.coeffs.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Filter):
            return NotImplemented
        return self.coeffs.shape == other.coeffs.shape and bool(
            np.all(self.coeffs == other.coeffs)
        )

    def __repr__(self):
        return f"Filter({self.coeffs.tolist()!r})"

    def to_json(self):
        """JSON value: a plain array of numbers."""
        return [float(c) for c in self.coeffs]

    @classmethod
    def from_json(cls, data):
        return cls(data)


def as_filter(f) -> Filter:
    """Coerce an array-like (or Filter) to a Filter."""
    return f if isinstance(f, Filter) else Filter(f)


class FrequencyGrid(NamedTuple):
    """Transfer-function values on n equispaced unit-circle angles."""

    n_points: int
    values: np.ndarray  # complex, shape (n_points,)

    def to_json(self):
        return {
            "n_points": self.n_points,
            "re": self.values.real.tolist(),
            "im": self.values.imag.tolist(),
        }


@dataclass(frozen=True)
class StabilityEstimate:
    """Decay-rate estimate rho plus the gamma grid used for tail bounds.

    Every grid point in (rho, 1) yields a valid tail bound; the grid only
    affects how tight the minimized bound is.
    """

    rho: float
    gamma_grid: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not (0.0 <= self.rho < 1.0):
            raise ValueError(f"rho must be in [0, 1), got {self.rho}")
        grid = np.asarray(self.gamma_grid, dtype=np.float64)
        if grid.size == 0:
            raise ValueError("gamma_grid must be non-empty")
        if np.any(grid <= self.rho) or np.any(grid >= 1.0):
            raise ValueError("gamma_grid points must lie in (rho, 1)")
        object.__setattr__(self, "gamma_grid", grid)

    @classmethod
    def from_rho(cls, rho, n_points=200):
        """Default grid: log-spaced points in (rho + 1e-6, 1 - 1e-6)."""
        lo = rho + 1e-6
        hi = 1.0 - 1e-6
        if lo >= hi:
            raise ValueError(f"rho={rho} leaves no room for a gamma grid")
        return cls(rho=rho, gamma_grid=np.geomspace(lo, hi, n_points))


def convolve(f, x) -> np.ndarray:
    """Causal convolution, output truncated to len(x).

    out[t] = sum_{k=0}^{min(t, len(f)-1)} f(k) x(t-k)
    """
    f = as_filter(f)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size and not np.all(np.isfinite(x)):
        raise ValueError("convolve input must be finite")
    return _kernels.causal_conv(f.coeffs, x)


def eval_transfer(f, omega):
    """F(e^{i omega}) = sum_k f(k) e^{-i omega k}; omega scalar or array."""
    f = as_filter(f)
    om = np.asarray(omega, dtype=np.float64)
    k = np.arange(len(f))
    vals = np.exp(-1j * np.multiply.outer(om, k)) @ f.coeffs if len(f) else np.zeros(om.shape, complex)
    return complex(vals) if om.ndim == 0 else vals


def frequency_grid(f, n_points) -> FrequencyGrid:
    """Evaluate F on the n-point uniform circle grid (angles 2*pi*m/n).

    Computed by FFT of the coefficient array folded modulo n, which agrees
    with direct evaluation to rounding error.
    """
    f = as_filter(f)
    n = int(n_points)
    if n < 1:
        raise ValueError(f"n_points must be >= 1, got {n_points}")
    c = f.coeffs
    if c.shape[0] <= n:
        folded = c
    else:
        folded = np.zeros(n)
        np.add.at(folded, np.arange(c.shape[0]) % n, c)
    return FrequencyGrid(n_points=n, values=np.fft.fft(folded, n))


def h2_norm(f) -> float:
    """sqrt(sum f(k)^2); equals the average of |F|^2 over the circle (Parseval)."""
    return float(np.linalg.norm(as_filter(f).coeffs))


def default_grid_points(length: int) -> int:
    return max(4096, 64 * length)


def hinf_norm(f, n_points=None) -> float:
    """Grid maximum of |F| over the unit circle; default grid max(4096, 64*len)."""
    f = as_filter(f)
    if len(f) == 0:
        return 0.0
    n = default_grid_points(len(f)) if n_points is None else int(n_points)
    return float(np.max(np.abs(frequency_grid(f, n).values)))


def unroll(h, length) -> Filter:
    """First ``length`` coefficients of 1 / (1 - z^{-1} H(z)).

    Warns (does not raise) if the values exceed the overflow threshold,
    which usually means h is unstable.
    """
    h = as_filter(h)
    length = int(length)
    if length < 1:
        raise ValueError(f"unroll length must be >= 1, got {length}")
    delta = np.zeros(length)
    delta[0] = 1.0
    u = _kernels.ar_drive(h.coeffs, delta)
    if np.max(np.abs(u)) > OVERFLOW_THRESHOLD:
        warnings.warn(
            "unroll values exceed 1e12; h is likely unstable", UnstableFilterWarning
        )
    return Filter(u)


def tail_l1(f, start) -> float:
    """sum_{k >= start} |f(k)| over the stored coefficients."""
    f = as_filter(f)
    start = int(start)
    if start < 0:
        raise ValueError(f"tail start must be >= 0, got {start}")
    return float(np.sum(np.abs(f.coeffs[start:])))


def _scaled_coeffs(c, gamma):
    """f(k) * gamma^{-k} evaluated in log space so that a decaying f times a
    growing gamma^{-k} never overflows spuriously; genuinely unrepresentable
    products come back as +-inf."""
    out = np.zeros(c.shape[0])
    nz = np.flatnonzero(c)
    if nz.size:
        with np.errstate(over="ignore"):
            out[nz] = np.sign(c[nz]) * np.exp(
                np.log(np.abs(c[nz])) - nz * math.log(gamma)
            )
    return out


def scale_argument(f, gamma) -> Filter:
    """Filter of F(gamma z): coefficients f(k) * gamma^{-k}."""
    f = as_filter(f)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return Filter(_scaled_coeffs(f.coeffs, gamma))


def grid_norm_fn(f, n_points=None) -> Callable[[float], float]:
    """gamma -> hinf_norm of F(gamma z), for use with sufficient_length.

    Returns inf when the scaled coefficients overflow, which
    sufficient_length treats as an infeasible grid point.
    """
    f = as_filter(f)

    def norm_fn(gamma):
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        scaled = _scaled_coeffs(f.coeffs, gamma)
        if not np.all(np.isfinite(scaled)):
            return math.inf
        return hinf_norm(Filter(scaled), n_points=n_points)

    return norm_fn


def sufficient_length(est: StabilityEstimate, norm_fn, epsilon) -> int:
    """Smallest grid-certified length L with tail_l1(f, L) <= epsilon.

    For each gamma in the grid the bound L(gamma) =
    (1/(1-gamma)) * ln(norm_fn(gamma) / (epsilon * (1-gamma))) certifies the
    tail; the returned value is the ceiling of the grid minimum, floored at 1.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    best = math.inf
    for gamma in est.gamma_grid:
        val = norm_fn(float(gamma))
        if not np.isfinite(val):
            continue
        if val <= 0:
            # zero filter: any length certifies the tail
            best = min(best, 1.0)
            continue
        arg = val / (epsilon * (1.0 - gamma))
        cand = math.log(arg) / (1.0 - gamma) if arg > 1.0 else 1.0
        best = min(best, cand)
    if not np.isfinite(best):
        raise NoFeasibleGammaError(
            "norm_fn returned no finite value on the gamma grid"
        )
    return max(1, math.ceil(best))


def interp_bound_ratio(q, n_nodes, n_dense):
    """Max of |Q| on a dense circle grid vs. on n_nodes roots of unity.

    Q(z) = sum_k q(k) z^k with the degree read off ignoring trailing zeros.
    Returns (ratio, bound) where bound = 1 + 4*pi*deg/n_nodes when
    n_nodes >= 4*pi*deg and (2/pi)*ln(deg + 2) + 1 otherwise.
    """
    q = as_filter(q)
    n_nodes = int(n_nodes)
    n_dense = int(n_dense)
    nz = np.flatnonzero(q.coeffs)
    if nz.size == 0:
        raise DegeneratePolynomialError("polynomial is identically zero")
    deg = int(nz[-1])
    if n_nodes < deg + 1:
        raise ValueError(f"need n_nodes >= deg+1 = {deg + 1}, got {n_nodes}")
    if n_dense < n_nodes:
        raise ValueError("dense grid must be at least as fine as the node grid")
    coeffs = q.coeffs[: deg + 1]
    node_max = float(np.max(np.abs(np.fft.fft(coeffs, n_nodes))))
    dense_max = float(np.max(np.abs(np.fft.fft(coeffs, n_dense))))
    if node_max == 0.0:
        raise DegeneratePolynomialError("polynomial vanishes on all nodes")
    if n_nodes >= 4.0 * math.pi * deg:
        bound = 1.0 + 4.0 * math.pi * deg / n_nodes
    else:
        bound = (2.0 / math.pi) * math.log(deg + 2) + 1.0
    return dense_max / node_max, bound


class CombinedError(NamedTuple):
    """Truncated combined error filter plus the l1 mass of the cut tail."""

    filter: Filter
    trunc_tail: float


def combined_error_filter(g, h, g_star, h_star, trunc_len) -> CombinedError:
    """Coefficients of (G - G*) + z^{-1} (H - H*) * Unr(H*) * G*.

    Unr(H*) = 1 / (1 - z^{-1} H*(z)) is expanded to trunc_len terms, so the
    result is the exact series truncated at trunc_len; the l1 mass of the
    computed-but-cut coefficients is returned as a diagnostic.
    """
    g, h = as_filter(g), as_filter(h)
    g_star, h_star = as_filter(g_star), as_filter(h_star)
    trunc_len = int(trunc_len)
    if trunc_len < 1:
        raise ValueError("trunc_len must be >= 1")
    if len(h_star) and hinf_norm(h_star) >= 1.0:
        raise StabilityError("h_star must satisfy hinf_norm < 1")

    def _pad_diff(a, b):
        n = max(len(a), len(b), 1)
        out = np.zeros(n)
        out[: len(a)] += a.coeffs
        out[: len(b)] -= b.coeffs
        return out

    dg = _pad_diff(g, g_star)
    dh = _pad_diff(h, h_star)
    u = unroll(h_star, trunc_len).coeffs
    prod = np.convolve(dh, u)
    if len(g_star):
        prod = np.convolve(prod, g_star.coeffs)
    n_full = max(len(dg), prod.shape[0] + 1)
    full = np.zeros(n_full)
    full[: dg.shape[0]] += dg
    full[1 : 1 + prod.shape[0]] += prod
    tail = float(np.sum(np.abs(full[trunc_len:])))
    return CombinedError(Filter(full[:trunc_len]), tail)
