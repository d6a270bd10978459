"""Observables of the steady state: reduced states, number statistics, Wigner functions."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .fock import TruncationConfig


def _check_joint(rho: np.ndarray, trunc: TruncationConfig) -> np.ndarray:
    rho = np.asarray(rho)
    d = trunc.hilbert_dim
    if rho.shape != (d, d):
        raise ValueError(f"density matrix has shape {rho.shape}, expected ({d}, {d})")
    return rho.reshape(trunc.n_cavity, trunc.n_mech, trunc.n_cavity, trunc.n_mech)


def partial_trace_mech(rho: np.ndarray, trunc: TruncationConfig) -> np.ndarray:
    """Reduced mechanical state (cavity traced out)."""
    return np.einsum("iaib->ab", _check_joint(rho, trunc))


def partial_trace_cavity(rho: np.ndarray, trunc: TruncationConfig) -> np.ndarray:
    """Reduced cavity state (mechanics traced out)."""
    return np.einsum("aibi->ab", _check_joint(rho, trunc))


def expect(op, rho: np.ndarray) -> complex:
    op = op.todense() if hasattr(op, "todense") else np.asarray(op)
    return complex(np.einsum("ij,ji->", op, rho))


@dataclass(frozen=True)
class PhononDistribution:
    """Number distribution of one mode; ``fano`` is NaN when the mean is zero."""

    probs: np.ndarray
    mean: float
    variance: float
    fano: float

    @classmethod
    def from_probs(cls, probs, neg_tol: float = 1e-12) -> "PhononDistribution":
        p = np.asarray(probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probabilities must be a nonempty 1-D array")
        if p.min() < -neg_tol:
            raise ValueError(
                f"probability {p.min():.3e} below -{neg_tol:g}: the state is not physical"
            )
        p = np.clip(p, 0.0, None)
        n = np.arange(p.size)
        total = p.sum()
        if total <= 0:
            raise ValueError("distribution has no weight")
        mean = float(n @ p / total)
        var = float(((n - mean) ** 2) @ p / total)
        return cls(p, mean, var, var / mean if mean > 0 else math.nan)

    @classmethod
    def from_density_matrix(cls, rho: np.ndarray, neg_tol: float = 1e-12) -> "PhononDistribution":
        return cls.from_probs(np.real(np.diag(rho)), neg_tol)


def fano(d: PhononDistribution) -> float:
    if not d.mean > 0:
        raise ValueError("Fano factor undefined for zero mean occupation")
    return d.variance / d.mean


# ------------------------------------------------------------------ Wigner


@njit(cache=True)
def _wigner_point(rho, alpha):
    """``W`` at one phase-space point from normalized Laguerre recurrences.

    With ``x = 4|alpha|^2`` and ``k = n - m`` the matrix element of the
    displaced parity is ``(-1)^m (2 alpha)^k sqrt(m!/n!) L_m^k(x) e^{-x/2} / pi``.
    For each ``k`` the scaled polynomials ``l_m = sqrt(m!/(m+k)!) L_m^k(x)``
    follow a three-term recurrence in ``m`` that is forward stable (the
    polynomial is the dominant solution).  Values are carried as
    ``stored * exp(logscale)`` so nothing leaves double range at large ``n``.
    """
    dim = rho.shape[0]
    big = 1e150
    logbig = math.log(big)
    r = abs(alpha)
    x = 4.0 * r * r
    phase = alpha / r if r > 0 else 1.0 + 0j
    log2r = math.log(2.0 * r) if r > 0 else -np.inf
    acc = 0.0
    ph = 1.0 + 0j
    for k in range(dim):
        if k > 0:
            ph *= phase
        if r == 0 and k > 0:
            break
        # log of (2r)^k / sqrt(k!) * e^{-x/2} / pi, with 0 * log(0) = 0
        logbase = -0.5 * math.lgamma(k + 1.0) - 0.5 * x - math.log(np.pi)
        if k > 0:
            logbase += k * log2r
        lprev = 0.0
        lcur = 1.0  # l_0 * sqrt(k!)
        scale = logbase
        fac = math.exp(scale)
        sign = 1.0
        part = 0.0 + 0j
        for m in range(dim - k):
            if m > 0:
                lnew = ((2 * m + k - 1 - x) * lcur - math.sqrt((m - 1.0) * (m - 1.0 + k)) * lprev) / math.sqrt(
                    m * (m + k + 0.0)
                )
                lprev = lcur
                lcur = lnew
                sign = -sign
                if abs(lcur) > big:
                    lcur /= big
                    lprev /= big
                    scale += logbig
                    fac = math.exp(scale)
            if fac != 0.0:
                part += rho[m, m + k] * (sign * lcur * fac)
        if k == 0:
            acc += part.real
        else:
            acc += 2.0 * (part * ph).real
    return acc


@njit(cache=True)
def _wigner_grid(rho, xs, ps):
    out = np.empty((xs.size, ps.size))
    for i in range(xs.size):
        for j in range(ps.size):
            out[i, j] = _wigner_point(rho, (xs[i] + 1j * ps[j]) / math.sqrt(2.0))
    return out


@dataclass(frozen=True)
class WignerGrid:
    """``values[i, j] = W(x_axis[i], p_axis[j])``, quadratures in zero-point units."""

    x_axis: np.ndarray
    p_axis: np.ndarray
    values: np.ndarray
    negative_fraction: float = field(default=math.nan)
    coarse: bool = False

    @property
    def cell_area(self) -> float:
        return float(_spacing(self.x_axis) * _spacing(self.p_axis))

    @property
    def integral(self) -> float:
        return float(self.values.sum() * self.cell_area)


def _spacing(axis: np.ndarray) -> float:
    return float(axis[1] - axis[0]) if axis.size > 1 else 1.0


def _as_state(rho) -> np.ndarray:
    rho = np.ascontiguousarray(rho, dtype=np.complex128)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("rho must be a square matrix")
    return rho


def wigner_at(rho: np.ndarray, x: float, p: float) -> float:
    """``W(x, p)`` at a single phase-space point (no normalization check)."""
    return float(_wigner_point(_as_state(rho), complex(x, p) / math.sqrt(2.0)))


def wigner(rho: np.ndarray, x_axis, p_axis) -> WignerGrid:
    """Wigner function of a single-mode density matrix on a regular grid.

    Normalized so that ``integral W dx dp = Tr rho`` with ``x = (b + b^+)/sqrt(2)``;
    the vacuum gives ``exp(-x^2 - p^2) / pi``.  A grid whose Riemann sum misses
    the trace by more than 1e-2 is flagged ``coarse`` and a warning is issued.
    """
    rho = _as_state(rho)
    xs = np.asarray(x_axis, dtype=float)
    ps = np.asarray(p_axis, dtype=float)
    vals = _wigner_grid(rho, xs, ps)
    grid = WignerGrid(xs, ps, vals)
    coarse = bool(abs(grid.integral - np.trace(rho).real) > 1e-2)
    if coarse:
        warnings.warn(
            f"Wigner grid too coarse: integral {grid.integral:.4f} vs trace {np.trace(rho).real:.4f}",
            RuntimeWarning,
            stacklevel=2,
        )
    return WignerGrid(xs, ps, vals, negativity(grid), coarse)


def default_axis(mean_n: float, points: int = 201) -> np.ndarray:
    """Symmetric axis covering ``+-(2 sqrt(2 <n>) + 5)``."""
    half = 2.0 * math.sqrt(2.0 * max(mean_n, 0.0)) + 5.0
    return np.linspace(-half, half, points)


def negativity(w: WignerGrid) -> float:
    """Share of the absolute Wigner volume that is negative."""
    v = w.values
    total = np.abs(v).sum()
    if total == 0:
        return 0.0
    return float(np.abs(np.minimum(v, 0.0)).sum() / total)


# ------------------------------------------------------------ limit cycles


@dataclass(frozen=True)
class LimitCycle:
    start: int
    stop: int
    weight: float
    mean: float
    variance: float
    fitted: np.ndarray

    @property
    def fano(self) -> float:
        return self.variance / self.mean if self.mean > 0 else math.nan


def poisson_probs(mean: float, size: int) -> np.ndarray:
    n = np.arange(size)
    if mean == 0:
        return (n == 0).astype(float)
    lgam = np.array([math.lgamma(k + 1.0) for k in range(size)])
    return np.exp(n * math.log(mean) - mean - lgam)


def smoothed(probs: np.ndarray, window: int = 3) -> np.ndarray:
    """Centred moving average; edge points average their available neighbours."""
    if window < 1 or window % 2 == 0:
        raise ValueError("smoothing window must be a positive odd integer")
    p = np.asarray(probs, dtype=float)
    k = np.ones(window)
    return np.convolve(p, k, mode="same") / np.convolve(np.ones_like(p), k, mode="same")


def segment_boundaries(probs: np.ndarray, floor: float = 1e-8, window: int = 3) -> list[int]:
    """Strict interior local minima of the smoothed distribution.

    Minima whose smoothed value is below ``floor * max`` sit in numerically
    empty tails and are ignored.
    """
    s = smoothed(probs, window)
    cut = floor * s.max()
    inner = np.arange(1, s.size - 1)
    is_min = (s[inner] < s[inner - 1]) & (s[inner] < s[inner + 1]) & (s[inner] >= cut)
    return inner[is_min].tolist()


def fit_limit_cycles(d: PhononDistribution, floor: float = 1e-8, window: int = 3) -> list[LimitCycle]:
    """Split ``P(n)`` at local minima and fit each piece with a scaled Poisson law.

    Each fitted curve is a coherent-state number distribution with the
    segment's conditional mean, multiplied by the segment's probability, and
    is evaluated over the full Fock range.
    """
    p = d.probs
    if not p.sum() > 0:
        raise ValueError("degenerate all-zero distribution")
    edges = [0, *segment_boundaries(p, floor, window), p.size]
    n = np.arange(p.size)
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        seg = p[lo:hi]
        weight = float(seg.sum())
        if weight <= 0:
            continue
        mean = float(n[lo:hi] @ seg / weight)
        var = float(((n[lo:hi] - mean) ** 2) @ seg / weight)
        out.append(LimitCycle(lo, hi, weight, mean, var, weight * poisson_probs(mean, p.size)))
    return out


# -------------------------------------------------------------------- CSV


def write_wigner_csv(path, w: WignerGrid) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["x", "p", "W"])
        for i, x in enumerate(w.x_axis):
            for j, pv in enumerate(w.p_axis):
                out.writerow([repr(float(x)), repr(float(pv)), repr(float(w.values[i, j]))])


def write_distribution_csv(path, d: PhononDistribution, cycles: list[LimitCycle] = ()) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["n", "P", *[f"cycle{k}_fit" for k in range(len(cycles))]])
        for k, pk in enumerate(d.probs):
            out.writerow([k, repr(float(pk)), *[repr(float(c.fitted[k])) for c in cycles]])
