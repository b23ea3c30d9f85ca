"""Model parameters and the constants derived from them.

The fixed point ``b`` solves ``x = beta * f(x)``; from it follow the limiting
variance ``B^2`` of ``W_n``, the pair contraction rate ``lambda`` and the
deterministic cap on ``|W_n - W_n'|``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConsistencyError, NumericalError, ParameterError
from .special_functions import bessel_ratio, bessel_ratio_deriv

#: beta in (N, N + NEAR_CRITICAL_WINDOW] triggers a warning
NEAR_CRITICAL_WINDOW = 0.1

_MAX_ITER = 200


@dataclass(frozen=True)
class ModelParams:
    N: int
    beta: float
    n: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ParameterError(f"N must be an integer >= 2, got {self.N!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ParameterError(f"n must be a positive integer, got {self.n!r}")
        if not self.beta > self.N:
            raise ParameterError(
                f"beta={self.beta} <= N={self.N}: no positive fixed point (supercritical beta > N required)"
            )

    @property
    def near_critical(self) -> bool:
        return self.beta <= self.N + NEAR_CRITICAL_WINDOW


@dataclass(frozen=True)
class DerivedConstants:
    b: float
    f_b: float
    f_prime_b: float
    B2: float
    lam: float
    delta_cap: float

    @property
    def B(self) -> float:
        return math.sqrt(self.B2)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


def solve_b(N: int, beta: float) -> float:
    """Unique positive root of ``x - beta * f(x)`` for ``beta > N``.

    Brackets by doubling/halving from ``x = 1`` and refines with safeguarded
    Newton steps (bisection whenever Newton leaves the bracket).
    """
    if not beta > N:
        raise ParameterError(f"beta={beta} <= N={N}: no positive fixed point")

    def h(x):
        return x - beta * bessel_ratio(x, N)

    lo = hi = 1.0
    if h(1.0) > 0.0:
        while h(lo) > 0.0:
            lo *= 0.5
            if lo < 1e-300:
                raise NumericalError("could not bracket the fixed point from below")
    else:
        while h(hi) <= 0.0:
            hi *= 2.0
            if hi > 1e300:
                raise NumericalError("could not bracket the fixed point from above")
        lo = hi / 2.0 if hi > 1.0 else lo
    x = 0.5 * (lo + hi)
    for _ in range(_MAX_ITER):
        hx = h(x)
        if abs(hx) <= 1e-13 * max(1.0, x):
            return x
        if hx < 0.0:
            lo = x
        else:
            hi = x
        dh = 1.0 - beta * bessel_ratio_deriv(x, N)
        x_new = x - hx / dh if dh != 0.0 else 0.5 * (lo + hi)
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if x_new == x:
            return x
        x = x_new
    raise NumericalError("fixed point iteration did not converge in 200 steps")


def variance_B2(N: int, beta: float, b: float) -> float:
    """Limiting variance of ``W_n``.

    Evaluates the bracket form and cross-checks it against the equivalent
    ``4 beta^2 f'(b) / ((1 - beta f'(b)) b^2)``.
    """
    fb = bessel_ratio(b, N)
    fpb = bessel_ratio_deriv(b, N)
    denom = (1.0 - beta * fpb) * b * b
    bracket = 1.0 - (N - 1) * fb / b - fb * fb
    B2 = 4.0 * beta**2 / denom * bracket
    alt = 4.0 * beta**2 * fpb / denom
    if not (np.isfinite(B2) and B2 > 0.0):
        raise ConsistencyError(f"B^2={B2} is not positive; b={b} is not a valid fixed point")
    if abs(B2 - alt) > 1e-10 * abs(alt):
        raise ConsistencyError(f"B^2 bracket form {B2} disagrees with f'(b) form {alt}")
    return float(B2)


def pair_lambda(params: ModelParams, derived: DerivedConstants) -> float:
    lam = (1.0 - params.beta * derived.f_prime_b) / params.n
    if not 0.0 < lam < 1.0:
        raise ConsistencyError(f"pair contraction rate {lam} outside (0, 1)")
    return lam


def derive_constants(params: ModelParams) -> DerivedConstants:
    """Solve for ``b`` and evaluate every constant needed downstream."""
    N, beta, n = params.N, params.beta, params.n
    if params.near_critical:
        warnings.warn(
            f"beta={beta} is within {NEAR_CRITICAL_WINDOW} of the critical value {N}; "
            "rate constants blow up here",
            stacklevel=2,
        )
    b = solve_b(N, beta)
    fb = bessel_ratio(b, N)
    fpb = bessel_ratio_deriv(b, N)
    if not 0.0 < 1.0 - beta * fpb < 1.0:
        raise ConsistencyError(f"1 - beta f'(b) = {1.0 - beta * fpb} outside (0, 1)")
    B2 = variance_B2(N, beta, b)
    provisional = DerivedConstants(b=b, f_b=fb, f_prime_b=fpb, B2=B2, lam=np.nan, delta_cap=np.nan)
    lam = pair_lambda(params, provisional)
    cap = 4.0 * beta**2 / (b * b * math.sqrt(n))
    return DerivedConstants(b=b, f_b=fb, f_prime_b=fpb, B2=B2, lam=lam, delta_cap=cap)


def hamiltonian_from_norm2(total_norm2: float, n: int) -> float:
    return -total_norm2 / (2.0 * n)


def w_from_norm2(total_norm2, n: int, beta: float, b: float):
    """``sqrt(n) * (beta^2 |S|^2 / (n^2 b^2) - 1)``; vectorizes over ``total_norm2``."""
    return math.sqrt(n) * (beta**2 * np.asarray(total_norm2) / (n * n * b * b) - 1.0)


def hamiltonian(config) -> float:
    """Energy ``-|S_n|^2 / (2n)`` of a :class:`~meanfield_on.dynamics.SpinConfiguration`."""
    return hamiltonian_from_norm2(config.total_norm2, config.n)


def w_statistic(config, params: ModelParams, derived: DerivedConstants) -> float:
    return float(w_from_norm2(config.total_norm2, config.n, params.beta, derived.b))
