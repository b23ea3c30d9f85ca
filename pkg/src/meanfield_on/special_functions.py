"""Modified Bessel ratio ``f(x) = I_{N/2}(x) / I_{N/2-1}(x)`` and its derivatives.

The ratio is evaluated with a Gauss continued fraction (modified Lentz
algorithm), so the individual Bessel functions are never formed and nothing
overflows at large ``x``.  Derivatives come from the Riccati identity

    f'(x) = 1 - (N - 1) f(x) / x - f(x)**2

and its analytic derivative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .errors import BesselOverflowError, DomainError, NumericalError

#: Largest argument accepted by :func:`bessel_ratio`.  The continued fraction
#: needs roughly ``6 * sqrt(x)`` terms; above this bound the iteration cap is
#: no longer a safe margin.
MAX_ARGUMENT = 1.0e7

_CF_TOL = 1.0e-16
_CF_MAX_ITER = 100_000
_SERIES_CUTOFF = 1.0e-4
_TINY = 1.0e-300

#: Slack tolerance used by :func:`verify_lemma_bounds`.
BOUND_SLACK_TOL = 1.0e-12


@nb.njit(cache=True)
def _ratio_series(x, nu):
    q = 0.25 * x * x
    num = 1.0 + q / (nu + 2.0) + q * q / (2.0 * (nu + 2.0) * (nu + 3.0))
    den = 1.0 + q / (nu + 1.0) + q * q / (2.0 * (nu + 1.0) * (nu + 2.0))
    return 0.5 * x / (nu + 1.0) * num / den


@nb.njit(cache=True)
def _ratio_cf(x, nu):
    # I_{nu+1}/I_nu = 1/(2(nu+1)/x + 1/(2(nu+2)/x + ...)), modified Lentz.
    f = _TINY
    c = f
    d = 0.0
    for k in range(1, _CF_MAX_ITER):
        b = 2.0 * (nu + k) / x
        d = b + d
        if d == 0.0:
            d = _TINY
        c = b + 1.0 / c
        if c == 0.0:
            c = _TINY
        d = 1.0 / d
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < _CF_TOL:
            return f
    return np.nan


@nb.njit(cache=True)
def ratio_nb(x, nu):
    """Scalar kernel for use inside other jitted code (no argument checks)."""
    if x < _SERIES_CUTOFF:
        return _ratio_series(x, nu)
    return _ratio_cf(x, nu)


@nb.njit(cache=True)
def _ratio_array(x, nu):
    out = np.empty(x.size)
    flat = x.ravel()
    for i in range(flat.size):
        out[i] = ratio_nb(flat[i], nu)
    return out.reshape(x.shape)


def _order(N: int) -> float:
    if int(N) != N or N < 2:
        raise DomainError(f"N must be an integer >= 2, got {N!r}")
    return 0.5 * N - 1.0


def _check_x(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError("bessel ratio requires finite x > 0")
    if np.any(arr > MAX_ARGUMENT):
        raise BesselOverflowError(
            f"x > {MAX_ARGUMENT:g} is beyond the continued-fraction range"
        )
    return arr


def _scalar_or_array(values: np.ndarray, like):
    return float(values) if np.ndim(like) == 0 else values


def bessel_ratio(x, N: int):
    """Return ``I_{N/2}(x) / I_{N/2-1}(x)`` for ``x > 0``.

    Accepts a scalar or an array; the result has the same shape.  Values lie
    in ``(0, 1)`` and increase with ``x``.
    """
    nu = _order(N)
    arr = _check_x(x)
    out = _ratio_array(np.atleast_1d(arr).astype(float), nu).reshape(arr.shape)
    if np.any(~np.isfinite(out)):
        raise NumericalError("continued fraction for the Bessel ratio did not converge")
    return _scalar_or_array(out, x)


def _derivs(x: np.ndarray, N: int):
    f = np.asarray(bessel_ratio(x, N), dtype=float)
    fp = 1.0 - (N - 1) * f / x - f * f
    fpp = -fp * ((N - 1) / x + 2.0 * f) + (N - 1) * f / (x * x)
    return f, fp, fpp


def bessel_ratio_deriv(x, N: int):
    """``f'(x) = 1 - (N-1) f(x)/x - f(x)^2``; lies in ``(0, 1/(N-1))``."""
    arr = _check_x(x)
    _, fp, _ = _derivs(arr, N)
    return _scalar_or_array(fp, x)


def g_second_deriv(x, N: int):
    """Second derivative of ``g(x) = x f(x)``, i.e. ``2 f'(x) + x f''(x)``."""
    arr = _check_x(x)
    _, fp, fpp = _derivs(arr, N)
    return _scalar_or_array(2.0 * fp + arr * fpp, x)


def ratio_over_x_deriv(x, N: int):
    """Derivative of ``f(x)/x``, computed as ``(f'(x) - f(x)/x) / x``."""
    arr = _check_x(x)
    f, fp, _ = _derivs(arr, N)
    return _scalar_or_array((fp - f / arr) / arr, x)


def inverse_bessel_ratio(y: float, N: int) -> float:
    """Solve ``f(k) = y`` for ``k >= 0`` given ``0 <= y < 1``."""
    if not 0.0 <= y < 1.0:
        raise DomainError(f"ratio value must lie in [0, 1), got {y!r}")
    if y == 0.0:
        return 0.0
    # f(k) ~ k/N near 0 and 1 - (N-1)/(2k) for large k
    k = N * y / (1.0 - y) if y < 0.5 else 0.5 * (N - 1) / (1.0 - y)
    lo, hi = 0.0, max(2.0 * k, 1.0)
    while bessel_ratio(hi, N) < y:
        lo, hi = hi, 2.0 * hi
        if hi > MAX_ARGUMENT:
            raise BesselOverflowError("inverse ratio beyond supported range")
    k = min(max(k, lo), hi)
    for _ in range(200):
        fk = bessel_ratio(k, N)
        if fk < y:
            lo = k
        else:
            hi = k
        fp = bessel_ratio_deriv(k, N)
        step = (fk - y) / fp if fp > 0 else 0.0
        k_new = k - step
        if not lo < k_new < hi:
            k_new = 0.5 * (lo + hi)
        if abs(k_new - k) <= 1e-15 * max(1.0, k):
            return k_new
        k = k_new
    raise NumericalError("inverse Bessel ratio did not converge")


@dataclass(frozen=True)
class RatioEval:
    """All ratio quantities at a single point."""

    x: float
    N: int
    f: float
    f_prime: float
    g_second: float
    ratio_over_x_prime: float

    def __post_init__(self):
        checks = [
            0.0 < self.f < 1.0,
            0.0 < self.f_prime < 1.0 / (self.N - 1),
            abs(self.g_second) < 6.0,
            -5.0 / (self.N - 1) < self.ratio_over_x_prime < 0.0,
        ]
        if not all(checks):
            raise NumericalError(f"ratio invariants violated at x={self.x}, N={self.N}")


def evaluate_ratio(x: float, N: int) -> RatioEval:
    f, fp, fpp = _derivs(_check_x(float(x)), N)
    return RatioEval(
        x=float(x),
        N=int(N),
        f=float(f),
        f_prime=float(fp),
        g_second=float(2.0 * fp + x * fpp),
        ratio_over_x_prime=float((fp - f / x) / x),
    )


#: Names of the checked inequalities, in report order.
LEMMA_INEQUALITIES = (
    "fprime_bounds",  # 0 < f' < 1/(N-1)
    "g_second_bound",  # |(x f)''| < 6
    "ratio_over_x_prime_bounds",  # -5/(N-1) < (f/x)' < 0
    "amos",  # 0 < f' < f/x
    "nasell",  # (1/x)(1 - N f/x) > -4/(N-1)
)


@dataclass
class BoundReport:
    N: int
    grid_size: int
    min_slack: dict[str, float]
    worst_x: dict[str, float]
    tol: float = BOUND_SLACK_TOL
    passed: dict[str, bool] = field(init=False)

    def __post_init__(self):
        self.passed = {k: v > -self.tol for k, v in self.min_slack.items()}

    @property
    def pass_(self) -> bool:
        return all(self.passed.values())

    def as_dict(self) -> dict:
        return {
            "N": self.N,
            "grid_size": self.grid_size,
            "pass": self.pass_,
            "min_slack": self.min_slack,
            "worst_x": self.worst_x,
            "passed": self.passed,
        }


def verify_lemma_bounds(N: int, grid) -> BoundReport:
    """Evaluate the five ratio inequalities on ``grid`` and report worst slacks.

    A slack is the signed distance to the violated side of an inequality, so
    it is positive when the inequality holds.
    """
    x = np.asarray(grid, dtype=float).ravel()
    if x.size == 0:
        raise DomainError("grid must be nonempty")
    f, fp, fpp = _derivs(_check_x(x), N)
    g2 = 2.0 * fp + x * fpp
    fx = f / x
    rxp = (fp - fx) / x
    inv = 1.0 / (N - 1)
    slacks = {
        "fprime_bounds": np.minimum(fp, inv - fp),
        "g_second_bound": 6.0 - np.abs(g2),
        "ratio_over_x_prime_bounds": np.minimum(-rxp, rxp + 5.0 * inv),
        "amos": np.minimum(fp, fx - fp),
        "nasell": (1.0 - N * fx) / x + 4.0 * inv,
    }
    min_slack = {}
    worst_x = {}
    for name in LEMMA_INEQUALITIES:
        s = slacks[name]
        i = int(np.argmin(s))
        min_slack[name] = float(s[i])
        worst_x[name] = float(x[i])
    return BoundReport(N=int(N), grid_size=int(x.size), min_slack=min_slack, worst_x=worst_x)


def surface_area(N: int) -> float:
    """Lebesgue measure of the unit sphere in ``R^N``: ``2 pi^{N/2} / Gamma(N/2)``."""
    return 2.0 * math.pi ** (0.5 * N) / math.gamma(0.5 * N)
