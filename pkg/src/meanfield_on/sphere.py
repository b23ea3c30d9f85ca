"""Uniform and von Mises-Fisher sampling on the unit sphere ``S^{N-1}``.

The vMF sampler is Wood's (1994) rejection scheme for the component along
the mean direction, combined with a uniform direction in the tangent space.
All samplers take an explicit ``numpy.random.Generator``; the jitted kernels
accept the same generator object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy import integrate, special

from .errors import DomainError
from .special_functions import bessel_ratio, surface_area

#: below this concentration the vMF law is sampled as uniform
SMALL_KAPPA = 1.0e-8


@nb.njit(cache=True, inline="always")
def uniform_into(out, rng):
    """Fill ``out`` (length N) with a uniform point on the sphere."""
    N = out.shape[0]
    while True:
        s = 0.0
        for j in range(N):
            z = rng.standard_normal()
            out[j] = z
            s += z * z
        if s > 0.0:
            break
    s = math.sqrt(s)
    for j in range(N):
        out[j] /= s


@nb.njit(cache=True, inline="always")
def wood_radial(kappa, N, rng):
    """Draw ``w = <x, mu>`` for ``x ~ vMF(mu, kappa)`` on ``S^{N-1}``."""
    d1 = N - 1.0
    b = d1 / (math.sqrt(4.0 * kappa * kappa + d1 * d1) + 2.0 * kappa)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + d1 * math.log(1.0 - x0 * x0)
    a = 0.5 * d1
    while True:
        # Beta(1, 1) is uniform; skip the gamma-ratio construction for N = 3
        z = rng.random() if N == 3 else rng.beta(a, a)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.random()
        if kappa * w + d1 * math.log(1.0 - x0 * w) - c >= math.log(u):
            return w


@nb.njit(cache=True, inline="always")
def vmf_into(out, mu, kappa, rng):
    """Fill ``out`` with a draw from vMF(``mu``, ``kappa``); ``mu`` must be unit."""
    N = out.shape[0]
    if kappa < SMALL_KAPPA:
        uniform_into(out, rng)
        return
    w = wood_radial(kappa, N, rng)
    while True:
        dot = 0.0
        for j in range(N):
            z = rng.standard_normal()
            out[j] = z
            dot += z * mu[j]
        s = 0.0
        for j in range(N):
            out[j] -= dot * mu[j]
            s += out[j] * out[j]
        if s > 1e-24:
            break
    scale = math.sqrt(max(0.0, 1.0 - w * w)) / math.sqrt(s)
    for j in range(N):
        out[j] = w * mu[j] + scale * out[j]


@nb.njit(cache=True)
def _uniform_many(m, N, rng):
    out = np.empty((m, N))
    for i in range(m):
        uniform_into(out[i], rng)
    return out


@nb.njit(cache=True)
def _vmf_many(m, mu, kappa, rng):
    out = np.empty((m, mu.shape[0]))
    for i in range(m):
        vmf_into(out[i], mu, kappa, rng)
    return out


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    nrm = np.linalg.norm(v)
    if nrm == 0.0 or abs(nrm - 1.0) > 1e-12:
        raise DomainError("direction must be a unit vector")
    return v


@dataclass(frozen=True)
class VmfLaw:
    """vMF law on ``S^{N-1}`` with density proportional to ``exp(kappa <x, direction>)``."""

    direction: np.ndarray
    kappa: float

    def __post_init__(self):
        object.__setattr__(self, "direction", _unit(self.direction))
        if not self.kappa >= 0.0:
            raise DomainError(f"kappa must be >= 0, got {self.kappa}")

    @property
    def N(self) -> int:
        return self.direction.shape[0]


def sample_uniform_sphere(N: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Uniform point(s) on ``S^{N-1}`` via normalized Gaussian vectors."""
    if N < 2:
        raise DomainError("N must be >= 2")
    out = _uniform_many(1 if size is None else int(size), int(N), rng)
    return out[0] if size is None else out


def sample_vmf(law: VmfLaw, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    out = _vmf_many(1 if size is None else int(size), law.direction, float(law.kappa), rng)
    return out[0] if size is None else out


def vmf_moments(law: VmfLaw) -> tuple[np.ndarray, np.ndarray]:
    """Exact mean vector and second-moment matrix ``E[x x^T]`` of a vMF law.

    Along the mean direction the second moment is ``1 - (N-1) f(k)/k``; every
    orthogonal direction gets ``f(k)/k``.
    """
    N, r, k = law.N, law.direction, law.kappa
    eye = np.eye(N)
    if k == 0.0:
        return np.zeros(N), eye / N
    f = bessel_ratio(k, N)
    proj = np.outer(r, r)
    radial = 1.0 - (N - 1) * f / k
    return f * r, (f / k) * (eye - proj) + radial * proj


def radial_second_moment(kappa: float, N: int) -> float:
    """``E<x, mu>^2`` under vMF(mu, kappa), i.e. ``1 - (N-1) f(kappa)/kappa``."""
    if kappa == 0.0:
        return 1.0 / N
    return 1.0 - (N - 1) * bessel_ratio(kappa, N) / kappa


def radial_moment_quadrature(kappa: float, N: int, epsabs: float = 1e-10) -> float:
    """``E<x, mu>^2`` by 1-D quadrature over the polar angle.

    Independent of the Bessel machinery: the vMF law pushed to the polar angle
    ``phi`` has density proportional to ``sin^{N-2}(phi) exp(kappa cos phi)``.
    The ``A_{N-1}/A_N`` surface factors are kept explicitly even though they
    cancel in the ratio.
    """
    fac = surface_area(N - 1) / surface_area(N)
    # scale out exp(kappa) so large kappa does not overflow
    num, _ = integrate.quad(
        lambda p: np.cos(p) ** 2 * np.sin(p) ** (N - 2) * np.exp(kappa * (np.cos(p) - 1.0)),
        0.0, math.pi, epsabs=epsabs, epsrel=1e-13, limit=200,
    )
    den, _ = integrate.quad(
        lambda p: np.sin(p) ** (N - 2) * np.exp(kappa * (np.cos(p) - 1.0)),
        0.0, math.pi, epsabs=epsabs, epsrel=1e-13, limit=200,
    )
    return (fac * num) / (fac * den)


def angular_integral_closed_form(kappa: float, N: int) -> float:
    """``int_0^pi exp(k cos t) sin^{N-2} t dt`` via the standard Bessel integral.

    Uses ``I_nu(z) = (z/2)^nu / (sqrt(pi) Gamma(nu + 1/2)) int_0^pi e^{z cos t} sin^{2 nu} t dt``
    with ``nu = N/2 - 1``.
    """
    nu = 0.5 * N - 1.0
    return math.sqrt(math.pi) * math.gamma(nu + 0.5) * special.iv(nu, kappa) / (0.5 * kappa) ** nu
