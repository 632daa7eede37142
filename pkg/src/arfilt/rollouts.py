"""Rollout designs and the data they generate.

A design runs length-T rollouts of the AR system

    y(t+1) = (g* . x)(t) + (h* . y)(t) + eta(t+1),   eta ~ N(0, sigma^2)

on the window t = -L..T (inputs given on -L..T-1, outputs produced on
-L+1..T, zero prehistory before that).  The input menu is c_int*ell*r
zero signals plus, for every frequency index j = 0..c_int*r/2 and every
repeat k = 1..ell, the pair cos(2*pi*j*t / T) and sin(2*pi*j*t / T),
where T = c_int*r and c_int is the frequency-density factor rounded up
to an even integer.

Per-rollout noise seeds are derived from the master seed with splitmix64:

    seed(label) = splitmix64(splitmix64(master) XOR code(label)),

code(label) packing (kind, j, k) into disjoint bit fields.  splitmix64 is
a bijection of 64-bit integers, so distinct labels get distinct seeds.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple
import warnings

import numpy as np

from arfilt import _kernels
from arfilt.errors import InsufficientHistoryError, StabilityError, UnstableFilterWarning
from arfilt.filters import (
    Filter,
    OVERFLOW_THRESHOLD,
    StabilityEstimate,
    as_filter,
    _scaled_coeffs,
    sufficient_length,
)

MASK64 = (1 << 64) - 1
_KIND_CODE = {"zero": 0, "cos": 1, "sin": 2}


def splitmix64(z: int) -> int:
    """One step of the splitmix64 mixer (public-domain constants)."""
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class Label(NamedTuple):
    """Rollout identity within a design; zero rollouts use j = 0."""

    kind: str
    j: int
    k: int

    def sort_key(self):
        return (self.kind != "zero", self.j, self.kind == "sin", self.k)

    def filename(self) -> str:
        if self.kind == "zero":
            return f"zero_k{self.k:05d}.csv"
        return f"{self.kind}_j{self.j:03d}_k{self.k:05d}.csv"

    def code(self) -> int:
        return (_KIND_CODE[self.kind] << 48) | (self.j << 24) | self.k


def rollout_seed(master_seed: int, label: Label) -> int:
    return splitmix64(splitmix64(master_seed & MASK64) ^ label.code())


@dataclass(frozen=True)
class DesignConfig:
    """Design parameters: filter length r, frequency density c (real, at
    least 8*pi), repeats ell, burn-in L >= r, noise level sigma, master seed."""

    r: int
    c: float
    ell: int
    L: int
    sigma: float
    seed: int

    def __post_init__(self):
        if self.r < 1:
            raise ValueError(f"r must be >= 1, got {self.r}")
        if self.c < 8.0 * math.pi - 1e-9:
            raise ValueError(f"c must be >= 8*pi ~ {8 * math.pi:.4f}, got {self.c}")
        if self.ell < 1:
            raise ValueError(f"ell must be >= 1, got {self.ell}")
        if self.L < self.r:
            raise ValueError(f"L must be >= r (got L={self.L}, r={self.r})")
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")

    @property
    def c_int(self) -> int:
        ci = math.ceil(self.c - 1e-9)
        return ci if ci % 2 == 0 else ci + 1

    @property
    def T(self) -> int:
        return self.c_int * self.r

    @property
    def n_freqs(self) -> int:
        """Frequency indices j = 0..c_int*r/2 inclusive."""
        return self.c_int * self.r // 2 + 1

    @property
    def n_zero(self) -> int:
        return self.c_int * self.ell * self.r

    @property
    def n_rollouts(self) -> int:
        return self.n_zero + 2 * self.ell * self.n_freqs

    def labels(self):
        """All labels in canonical order: zeros, then per-frequency cos/sin."""
        out = [Label("zero", 0, k) for k in range(1, self.n_zero + 1)]
        for j in range(self.n_freqs):
            out.extend(Label("cos", j, k) for k in range(1, self.ell + 1))
            out.extend(Label("sin", j, k) for k in range(1, self.ell + 1))
        return out

    def to_json(self):
        return {
            "r": self.r,
            "c": self.c,
            "ell": self.ell,
            "L": self.L,
            "sigma": self.sigma,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, data):
        return cls(
            r=int(data["r"]),
            c=float(data["c"]),
            ell=int(data["ell"]),
            L=int(data["L"]),
            sigma=float(data["sigma"]),
            seed=int(data["seed"]),
        )


def design_input(cfg: DesignConfig, label: Label) -> np.ndarray:
    """The input signal for one label, on t = -L..T-1."""
    t = np.arange(-cfg.L, cfg.T, dtype=np.float64)
    if label.kind == "zero":
        return np.zeros(t.shape[0])
    omega = 2.0 * math.pi * label.j / cfg.T
    return np.cos(omega * t) if label.kind == "cos" else np.sin(omega * t)


def design_inputs(cfg: DesignConfig):
    """(label, input) pairs for the whole design, canonical order."""
    return [(lab, design_input(cfg, lab)) for lab in cfg.labels()]


def simulate_ar(g_star, h_star, sigma, x, seed) -> np.ndarray:
    """Simulate y(t+1) = (g*.x)(t) + (h*.y)(t) + eta(t+1), zero prehistory.

    x is the input on an arbitrary window t0..t0+n-1; the output has the
    same length and lives on t0+1..t0+n.  Noise is sigma times one block of
    standard normals from default_rng(seed).  Warns if |y| exceeds 1e12.
    """
    g = as_filter(g_star)
    h = as_filter(h_star)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size and not np.all(np.isfinite(x)):
        raise ValueError("inputs must be finite")
    if not (np.isfinite(sigma) and sigma >= 0):
        raise ValueError(f"sigma must be finite and >= 0, got {sigma}")
    drive = _kernels.causal_conv(g.coeffs, x)
    if sigma > 0:
        drive = drive + sigma * np.random.default_rng(seed).standard_normal(x.shape[0])
    y = _kernels.ar_drive(h.coeffs, drive)
    if y.size and np.max(np.abs(y)) > OVERFLOW_THRESHOLD:
        warnings.warn(
            "simulated outputs exceed 1e12; h_star is likely unstable",
            UnstableFilterWarning,
        )
    return y


@dataclass(frozen=True)
class Rollout:
    """One trajectory: x on t = -L..T-1 and y on t = -L+1..T."""

    label: Label
    x: np.ndarray
    y: np.ndarray
    noise_seed: int
    burn_in: int
    horizon: int

    def __post_init__(self):
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("x and y must have equal length")
        if self.x.shape[0] != self.burn_in + self.horizon:
            raise ValueError("len(x) must equal burn_in + horizon")

    def targets(self) -> np.ndarray:
        """y(1..T), the regression targets."""
        return self.y[self.burn_in : self.burn_in + self.horizon]


@dataclass(frozen=True)
class RolloutSet:
    """All rollouts of one design run, canonical order, plus the truth used."""

    config: DesignConfig
    g_star: Filter
    h_star: Filter
    rollouts: tuple

    def __len__(self):
        return len(self.rollouts)

    def zeros(self):
        return [r for r in self.rollouts if r.label.kind == "zero"]

    def freq(self, j, kind):
        return [r for r in self.rollouts if r.label.kind == kind and r.label.j == j]


def generate_rollouts(cfg: DesignConfig, g_star, h_star) -> RolloutSet:
    """Run the whole design.  The recursion is driven in one batch; results
    are bitwise identical to per-rollout simulate_ar calls with the derived
    seeds (the batch kernel runs the same per-row operations)."""
    g = as_filter(g_star)
    h = as_filter(h_star)
    labels = cfg.labels()
    n = len(labels)
    m = cfg.L + cfg.T
    xs = np.zeros((n, m))
    drives = np.empty((n, m))
    seeds = [rollout_seed(cfg.seed, lab) for lab in labels]
    conv_cache = {}
    for i, lab in enumerate(labels):
        if lab.kind == "zero":
            base = 0.0
        else:
            key = (lab.kind, lab.j)
            if key not in conv_cache:
                x = design_input(cfg, lab)
                conv_cache[key] = (x, _kernels.causal_conv(g.coeffs, x))
            x, base = conv_cache[key]
            xs[i] = x
        if cfg.sigma > 0:
            noise = cfg.sigma * np.random.default_rng(seeds[i]).standard_normal(m)
            drives[i] = base + noise
        else:
            drives[i] = base
    ys = _kernels.ar_drive_batch(h.coeffs, drives)
    if ys.size and np.max(np.abs(ys)) > OVERFLOW_THRESHOLD:
        warnings.warn(
            "simulated outputs exceed 1e12; h_star is likely unstable",
            UnstableFilterWarning,
        )
    rollouts = tuple(
        Rollout(
            label=lab,
            x=xs[i],
            y=ys[i],
            noise_seed=seeds[i],
            burn_in=cfg.L,
            horizon=cfg.T,
        )
        for i, lab in enumerate(labels)
    )
    return RolloutSet(config=cfg, g_star=g, h_star=h, rollouts=rollouts)


def build_regressor(rollout: Rollout, r, include_x) -> np.ndarray:
    """History matrix with one column per t = 1..T.

    Column t is [x(t-1), .., x(t-r), y(t-1), .., y(t-r)] when include_x,
    else just the y block.  Requires burn-in >= r so every column is full.
    """
    r = int(r)
    L, T = rollout.burn_in, rollout.horizon
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    if L < r:
        raise InsufficientHistoryError(
            f"burn-in {L} < r = {r}: regression histories would be incomplete"
        )
    wy = np.lib.stride_tricks.sliding_window_view(rollout.y, r)
    my = wy[L - r : L - r + T, ::-1].T
    if not include_x:
        return np.ascontiguousarray(my)
    wx = np.lib.stride_tricks.sliding_window_view(rollout.x, r)
    mx = wx[L - r + 1 : L - r + 1 + T, ::-1].T
    return np.ascontiguousarray(np.vstack([mx, my]))


def gram(matrices, dim=None) -> np.ndarray:
    """Sum of M M^T over the list, symmetrized; empty lists need dim."""
    mats = list(matrices)
    if not mats:
        if dim is None:
            raise ValueError("dim is required for an empty matrix list")
        return np.zeros((int(dim), int(dim)))
    d = mats[0].shape[0]
    out = np.zeros((d, d))
    for M in mats:
        if M.shape[0] != d:
            raise ValueError("all matrices must share their row dimension")
        out += M @ M.T
    return (out + out.T) / 2.0


def unrolled_stability_radius(h_star) -> float:
    """Largest pole magnitude of 1 / (1 - z^{-1} H(z)): max root of
    lambda^r = sum_k h(k) lambda^{r-1-k}.  Zero for an all-zero h."""
    h = as_filter(h_star)
    c = h.coeffs
    if c.size == 0 or not np.any(c):
        return 0.0
    poly = np.concatenate([[1.0], -c])
    return float(np.max(np.abs(np.roots(poly))))


def _unrolled_norm_fns(h_star, g_star=None, n_points=4096):
    """gamma -> grid sup of |Unr(H*)(gamma z)| (and times |G*(gamma z)|).

    Exact rational evaluation: Unr(H*) = 1/(1 - z^{-1} H*(z)), so the scaled
    norm is 1/min over the grid of |1 - (gamma z)^{-1} H*(gamma z)|.
    """
    h = as_filter(h_star)
    shifted = np.concatenate([[0.0], h.coeffs])
    g = None if g_star is None else as_filter(g_star)

    def norm_fn(gamma):
        sc = _scaled_coeffs(shifted, gamma)
        if not np.all(np.isfinite(sc)):
            return math.inf
        denom = np.abs(1.0 - np.fft.fft(sc, n_points))
        if g is None:
            dmin = denom.min()
            return math.inf if dmin <= 0 else 1.0 / dmin
        gsc = _scaled_coeffs(g.coeffs, gamma)
        if not np.all(np.isfinite(gsc)):
            return math.inf
        numer = np.abs(np.fft.fft(gsc, n_points))
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.where(denom > 0, numer / denom, math.inf)
        return float(np.max(vals))

    return norm_fn


def _unrolled_estimate(h_star) -> StabilityEstimate:
    rho = unrolled_stability_radius(h_star)
    if rho >= 1.0 - 2e-6:
        raise StabilityError(
            f"unrolled filter has stability radius {rho:.8f}, too close to 1"
        )
    return StabilityEstimate.from_rho(rho)


class BurnIn(NamedTuple):
    L: int
    K: float


def required_burn_in(h_star, g_star, cfg: DesignConfig, delta) -> BurnIn:
    """Burn-in certified by the tail bounds at confidence delta.

    K = (1 + sum_{t=0}^{T-2} |h*(t)|)^2; the zero-input term needs the
    unrolled-filter tail below delta/(4 K T sqrt(c ell r)) and the driven
    term needs the (unrolled * g*) tail below delta/(4 K sqrt(c ell r T)).
    For an all-zero h* the unrolled filter is exactly [1] and the first
    term collapses to 1.
    """
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    h = as_filter(h_star)
    g = as_filter(g_star)
    T = cfg.T
    K = float((1.0 + np.sum(np.abs(h.coeffs[: T - 1]))) ** 2)
    clr = cfg.c_int * cfg.ell * cfg.r
    eps_h = delta / (4.0 * K * T * math.sqrt(clr))
    eps_hg = delta / (4.0 * K * math.sqrt(clr * T))
    degenerate_h = len(h) == 0 or not np.any(h.coeffs)
    if degenerate_h and (len(g) == 0 or not np.any(g.coeffs)):
        return BurnIn(max(1, cfg.r), K)
    est = _unrolled_estimate(h)
    L_h = 1 if degenerate_h else sufficient_length(est, _unrolled_norm_fns(h), eps_h)
    L_hg = sufficient_length(est, _unrolled_norm_fns(h, g), eps_hg)
    return BurnIn(max(L_h, L_hg, cfg.r), K)


def unrolled_tail_length(h_star, epsilon) -> int:
    """Certified length L with l1 tail of Unr(H*) beyond L at most epsilon.

    An all-zero h* unrolls to exactly [1], so any length works; returns 1.
    """
    h = as_filter(h_star)
    if len(h) == 0 or not np.any(h.coeffs):
        return 1
    return sufficient_length(_unrolled_estimate(h), _unrolled_norm_fns(h), epsilon)


def default_burn_in(h_star, r) -> int:
    """max(r, sufficient length of the unrolled filter at 1e-6)."""
    return max(int(r), unrolled_tail_length(h_star, 1e-6))
