"""Fatigue-limit lognormal S-N model.

log10 N ~ Normal(log_mean_life(s), tau) with log_mean_life(s) = A1 + A2 log10(s - A3) above the
fatigue limit A3 and infinite life at or below it.  All functions broadcast
over ``n`` and ``s``.  Infinite-life entries are handled through an explicit
mask so no inf/NaN arithmetic reaches the likelihoods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

LN10 = math.log(10.0)
_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class SNParams:
    A1: float
    A2: float
    A3: float
    q: float
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.A3 < 0:
            raise ValueError(f"fatigue limit A3 must be non-negative, got {self.A3}")
        if not self.A2 < 0:
            raise ValueError(f"slope A2 must be negative, got {self.A2}")
        if not 0 < self.q <= 1:
            raise ValueError(f"q must lie in (0, 1], got {self.q}")

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, f.name) for f in fields(self))


def equivalent_stress(S_max, R, q):
    """Walker-type equivalent stress S_max * (1 - R)**q."""
    S_max = np.asarray(S_max, dtype=float)
    R = np.asarray(R, dtype=float)
    if np.any(R >= 1):
        raise ValueError("stress ratio R must be < 1")
    if np.any(S_max <= 0):
        raise ValueError("S_max must be positive")
    out = S_max * (1.0 - R) ** q
    return out if out.ndim else float(out)


def finite_life(s, p: SNParams):
    """Mask of stresses above the fatigue limit."""
    return np.asarray(s, dtype=float) > p.A3


def log_mean_life(s, p: SNParams):
    """Mean log10 life; ``inf`` where ``s <= A3`` (cracks never initiate)."""
    s = np.asarray(s, dtype=float)
    fin = s > p.A3
    out = np.full(s.shape, np.inf)
    out[fin] = p.A1 + p.A2 * np.log10(s[fin] - p.A3)
    return out if out.ndim else float(out)


def _standardized(n, s, p: SNParams):
    """Broadcast n, s and return (z, finite mask); z is 0 where life is infinite."""
    n, s = np.broadcast_arrays(np.asarray(n, dtype=float), np.asarray(s, dtype=float))
    if np.any(n <= 0):
        raise ValueError("cycle count n must be positive")
    fin = s > p.A3
    z = np.zeros(n.shape)
    z[fin] = (np.log10(n[fin]) - p.A1 - p.A2 * np.log10(s[fin] - p.A3)) / p.tau
    return n, z, fin


def _out(x):
    return x if x.ndim else float(x)


def cdf(n, s, p: SNParams):
    n, z, fin = _standardized(n, s, p)
    return _out(np.where(fin, ndtr(z), 0.0))


def log_sf(n, s, p: SNParams):
    """log(1 - F_SN), via log Phi(-z) so deep tails stay accurate."""
    n, z, fin = _standardized(n, s, p)
    return _out(np.where(fin, log_ndtr(-z), 0.0))


def sf(n, s, p: SNParams):
    return _out(np.exp(np.asarray(log_sf(n, s, p))))


def log_pdf(n, s, p: SNParams):
    """log f_SN; ``-inf`` where life is infinite."""
    n, z, fin = _standardized(n, s, p)
    lp = -0.5 * z ** 2 - _LOG_SQRT_2PI - math.log(p.tau) - np.log(n * LN10)
    return _out(np.where(fin, lp, -np.inf))


def pdf(n, s, p: SNParams):
    return _out(np.exp(np.asarray(log_pdf(n, s, p))))


def hazard(n, s, p: SNParams):
    """f_SN / (1 - F_SN), evaluated in log space."""
    n, z, fin = _standardized(n, s, p)
    lh = -0.5 * z ** 2 - _LOG_SQRT_2PI - math.log(p.tau) - np.log(n * LN10) - log_ndtr(-z)
    return _out(np.where(fin, np.exp(lh), 0.0))


def quantile(u, s, p: SNParams):
    """Cycles n with F_SN(n; s) = u."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("probability must lie in (0, 1)")
    if np.any(np.asarray(s) <= p.A3):
        raise ValueError("infinite life: stress at or below the fatigue limit")
    return _out(10.0 ** (np.asarray(log_mean_life(s, p)) + p.tau * ndtri(u)))


def censored_log_likelihood(n, s, failed, p: SNParams) -> float:
    """Sum of log f for failures and log(1 - F) for run-outs at stresses s."""
    failed = np.asarray(failed, dtype=bool)
    lf = np.asarray(log_pdf(n, s, p))
    ls = np.asarray(log_sf(n, s, p))
    return float(np.sum(np.where(failed, lf, ls)))


def log_sf_and_hazard(n, s, p: SNParams):
    """(log(1 - F_SN), h_SN) from a single standardization."""
    n, z, fin = _standardized(n, s, p)
    lsf = log_ndtr(-z)
    lh = -0.5 * z ** 2 - _LOG_SQRT_2PI - math.log(p.tau) - np.log(n * LN10) - lsf
    return np.where(fin, lsf, 0.0), np.where(fin, np.exp(lh), 0.0)
