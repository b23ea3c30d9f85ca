"""Exchangeable-pair bound terms, distances to the standard normal and rate fits.

Conditional moments of ``Delta = W - W'`` are computed exactly given the full
spin configuration: averaging over the uniform index ``I`` and the vMF
resample of site ``I`` only needs the first two vMF moments.  Conditioning on
the configuration rather than on ``W`` upper-bounds the ``W``-conditioned L1
terms (Jensen); :func:`binned_ratio_term` gives the ``W``-binned estimate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numba as nb
import numpy as np
from scipy import special

from .errors import EstimationError
from .special_functions import ratio_nb

MIN_SAMPLES = 1000


@nb.njit(cache=True)
def cond_moments_nb(spins, S, norm2, beta, b, n):
    """Return ``(E(Delta | sigma), E(Delta^2 | sigma))`` for one configuration."""
    N = spins.shape[1]
    nu = 0.5 * N - 1.0
    acc1 = 0.0
    acc2 = 0.0
    for i in range(n):
        sdot = 0.0
        for j in range(N):
            sdot += spins[i, j] * S[j]
        dot = sdot - 1.0  # <sigma_i, sigma^(i)>
        rho2 = norm2 - 2.0 * sdot + 1.0  # |sigma^(i)|^2
        if rho2 <= 0.0:
            # sigma^(i) = 0: resample is uniform, both moments of <sigma', 0> vanish
            acc2 += dot * dot
            acc1 += dot
            continue
        rho = math.sqrt(rho2)
        bi = beta * rho / n
        fi = ratio_nb(bi, nu)
        acc1 += dot - fi * rho
        acc2 += dot * dot - 2.0 * fi * rho * dot + rho2 * (1.0 - (N - 1) * fi / bi)
    c1 = 2.0 * beta * beta / (b * b * n**1.5)
    c2 = 4.0 * beta**4 / (b**4 * n**3.0)
    return c1 * acc1 / n, c2 * acc2 / n


def cond_mean_delta(config, params, derived) -> float:
    """``E(W - W' | sigma)`` averaged exactly over the random index and the resample."""
    m1, _ = cond_moments_nb(config.spins, config.total_spin, config.total_norm2,
                            float(params.beta), float(derived.b), config.n)
    return m1


def cond_second_moment_delta(config, params, derived) -> float:
    """``E((W - W')^2 | sigma)``, exact given the configuration."""
    _, m2 = cond_moments_nb(config.spins, config.total_spin, config.total_norm2,
                            float(params.beta), float(derived.b), config.n)
    return m2


@dataclass
class SteinTerms:
    """Bound terms for ``W/B`` estimated from stationary pair records."""

    n: int
    samples_used: int
    ratio_term: float
    third_moment_term: float
    remainder_term: float
    wasserstein_bound: float
    kolmogorov_bound: float
    ratio_term_binned: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def stein_terms(w, delta, cond_mean, cond_second, params, derived,
                binned: bool = False, bins: int = 100) -> SteinTerms:
    """Estimate the exchangeable-pair bound terms for the normalized statistic.

    ``w``, ``delta``, ``cond_mean`` and ``cond_second`` are per-record arrays
    (one realized pair draw and the closed-form conditional moments per
    stationary record).
    """
    w = np.asarray(w, dtype=float)
    delta = np.asarray(delta, dtype=float)
    cm = np.asarray(cond_mean, dtype=float)
    cs = np.asarray(cond_second, dtype=float)
    m = w.size
    if m < MIN_SAMPLES:
        raise EstimationError(f"stein_terms needs at least {MIN_SAMPLES} samples, got {m}")
    lam, B2 = derived.lam, derived.B2
    B = math.sqrt(B2)
    ratio = float(np.mean(np.abs(1.0 - cs / (2.0 * lam * B2))))
    third = float(np.mean(np.abs(delta / B) ** 3) / (2.0 * lam))
    remainder = float(np.mean(np.abs(cm / (lam * B) - w / B)))
    a = derived.delta_cap / B
    wass = math.sqrt(2.0 / math.pi) * ratio + third + 2.0 * remainder
    kol = ratio + (float(np.mean(np.abs(w / B))) + 1.0) * a + remainder
    return SteinTerms(
        n=params.n,
        samples_used=int(m),
        ratio_term=ratio,
        third_moment_term=third,
        remainder_term=remainder,
        wasserstein_bound=wass,
        kolmogorov_bound=kol,
        ratio_term_binned=binned_ratio_term(w, cs, lam, B2, bins) if binned else None,
    )


def binned_ratio_term(w, cond_second, lam: float, B2: float, bins: int = 100) -> float:
    """``E|1 - E(Delta^2 | W) / (2 lambda B^2)|`` with ``E(. | W)`` estimated by equal-count W bins."""
    w = np.asarray(w, dtype=float)
    cs = np.asarray(cond_second, dtype=float)
    order = np.argsort(w, kind="stable")
    groups = np.array_split(order, bins)
    total = 0.0
    for g in groups:
        if g.size:
            total += g.size * abs(1.0 - cs[g].mean() / (2.0 * lam * B2))
    return total / w.size


def normal_cdf(z):
    """Standard normal distribution function (erfc-based, full double precision)."""
    return special.ndtr(z)


def empirical_kolmogorov(sample) -> float:
    """Kolmogorov distance between the empirical law of ``sample`` and N(0, 1)."""
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    m = x.size
    if m == 0:
        raise EstimationError("sample must be nonempty")
    phi = normal_cdf(x)
    i = np.arange(1, m + 1)
    return float(max(np.max(i / m - phi), np.max(phi - (i - 1) / m)))


def _int_cdf(x):
    # antiderivative of Phi with G(-inf) = 0
    return x * special.ndtr(x) + np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _int_sf(x):
    # int_x^inf (1 - Phi)
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi) - x * special.ndtr(-x)


def empirical_wasserstein(sample) -> float:
    """``int |F_m - Phi| dx`` computed exactly piece by piece.

    Between consecutive order statistics the empirical CDF is a constant
    ``c``; the integral of ``|c - Phi|`` there splits at ``Phi^{-1}(c)`` and
    is evaluated with the antiderivative ``x Phi(x) + phi(x)``.
    """
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    m = x.size
    if m == 0:
        raise EstimationError("sample must be nonempty")
    total = float(_int_cdf(x[0]) + _int_sf(x[-1]))
    if m == 1:
        return total
    a, b = x[:-1], x[1:]
    c = np.arange(1, m) / m
    xs = special.ndtri(c)
    G = _int_cdf
    # Phi - c changes sign at xs
    lo = np.clip(xs, a, b)
    below = c * (lo - a) - (G(lo) - G(a))  # c > Phi on [a, lo]
    above = (G(b) - G(lo)) - c * (b - lo)  # Phi > c on [lo, b]
    pieces = np.maximum(below, 0.0) + np.maximum(above, 0.0)
    return total + float(np.sum(pieces))


@dataclass
class RateFit:
    slope: float
    intercept: float
    residual: float
    n_used: list = field(default_factory=list)


def rate_fit(n_values, distances) -> RateFit:
    """Least-squares fit of ``log d`` against ``log n``.

    Non-positive distances are dropped with a warning; fewer than four usable
    points is an error.  ``residual`` is the largest absolute log residual.
    """
    n_arr = np.asarray(n_values, dtype=float)
    d = np.asarray(distances, dtype=float)
    if np.unique(n_arr).size != n_arr.size:
        raise EstimationError("n values must be distinct")
    keep = np.isfinite(d) & (d > 0.0)
    if not keep.all():
        warnings.warn(f"dropping {int((~keep).sum())} non-positive distances from the rate fit",
                      stacklevel=2)
    if keep.sum() < 4:
        raise EstimationError("rate fit needs at least 4 usable (n, d) points")
    lx, ly = np.log(n_arr[keep]), np.log(d[keep])
    A = np.column_stack([lx, np.ones_like(lx)])
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * lx + intercept)
    return RateFit(float(slope), float(intercept), float(np.max(np.abs(resid))),
                   [int(v) for v in n_arr[keep]])


@dataclass
class RateTable:
    """Rows of per-``n`` distances and bound terms plus the log-log fit."""

    rows: list[dict]
    fit: RateFit | None = None

    @classmethod
    def build(cls, rows: list[dict], key: str) -> "RateTable":
        table = cls(rows=sorted(rows, key=lambda r: r["n"]))
        vals = [r.get(key, np.nan) for r in table.rows]
        if sum(np.isfinite(v) and v > 0 for v in vals) >= 4:
            table.fit = rate_fit([r["n"] for r in table.rows], vals)
        return table
