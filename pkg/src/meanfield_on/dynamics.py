"""Heat-bath dynamics for the mean-field O(N) model and the exchangeable pair.

Given all other spins, site ``i`` is vMF with direction ``sigma^(i)/|sigma^(i)|``
and concentration ``beta |sigma^(i)| / n`` where ``sigma^(i) = S - sigma_i``.
The equilibration chain uses systematic scan; the pair step picks a uniform
random index and never mutates the chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .errors import ConsistencyError, DomainError, ParameterError
from .model import DerivedConstants, ModelParams, w_from_norm2
from .sphere import uniform_into, vmf_into
from .stein import cond_moments_nb

#: site updates between full recomputations of the cached total spin
REFRESH_EVERY = 10_000
_CAP_RTOL = 1e-12

RECORD_COLUMNS = ("sweep", "abs_S", "W", "W_prime", "delta", "cond_mean", "cond_second", "index")


class SpinConfiguration:
    """``n`` unit vectors in ``R^N`` with a cached total spin."""

    def __init__(self, spins):
        spins = np.ascontiguousarray(spins, dtype=float)
        if spins.ndim != 2 or spins.shape[1] < 2:
            raise DomainError("spins must be an (n, N) array with N >= 2")
        if np.max(np.abs(np.linalg.norm(spins, axis=1) - 1.0)) > 1e-12:
            raise DomainError("every spin must be a unit vector")
        self.spins = spins
        self.total_spin = np.empty(spins.shape[1])
        self.updates = 0
        self.refresh()

    @classmethod
    def ordered(cls, n: int, N: int) -> "SpinConfiguration":
        spins = np.zeros((n, N))
        spins[:, 0] = 1.0
        return cls(spins)

    @classmethod
    def uniform(cls, n: int, N: int, rng: np.random.Generator) -> "SpinConfiguration":
        from .sphere import sample_uniform_sphere

        return cls(sample_uniform_sphere(N, rng, size=n))

    @property
    def n(self) -> int:
        return self.spins.shape[0]

    @property
    def N(self) -> int:
        return self.spins.shape[1]

    @property
    def total_norm2(self) -> float:
        return float(self.total_spin @ self.total_spin)

    def refresh(self) -> None:
        self.total_spin[:] = self.spins.sum(axis=0)

    def copy(self) -> "SpinConfiguration":
        c = SpinConfiguration.__new__(SpinConfiguration)
        c.spins = self.spins.copy()
        c.total_spin = self.total_spin.copy()
        c.updates = self.updates
        return c

    def drift(self) -> float:
        """Largest per-coordinate gap between the cache and a fresh sum."""
        return float(np.max(np.abs(self.total_spin - self.spins.sum(axis=0))))


@dataclass(frozen=True)
class PairSample:
    w: float
    w_prime: float
    delta: float
    index: int
    cond_mean: float
    cond_second: float
    #: the resampled spin at site ``index`` (only kept by single pair steps)
    new_spin: np.ndarray | None = None


@nb.njit(cache=True, inline="always")
def _cavity(spins, S, i, mu):
    # mu <- sigma^(i) = S - sigma_i; returns |sigma^(i)|
    N = spins.shape[1]
    rho2 = 0.0
    for j in range(N):
        mu[j] = S[j] - spins[i, j]
        rho2 += mu[j] * mu[j]
    return math.sqrt(rho2)


@nb.njit(cache=True, inline="always")
def _heat_bath(spins, S, i, beta, n, rng, mu, new):
    N = spins.shape[1]
    rho = _cavity(spins, S, i, mu)
    if rho > 0.0:
        for j in range(N):
            mu[j] /= rho
        vmf_into(new, mu, beta * rho / n, rng)
    else:
        uniform_into(new, rng)
    for j in range(N):
        S[j] += new[j] - spins[i, j]
        spins[i, j] = new[j]


@nb.njit(cache=True)
def _refresh(spins, S):
    N = spins.shape[1]
    for j in range(N):
        S[j] = 0.0
    for i in range(spins.shape[0]):
        for j in range(N):
            S[j] += spins[i, j]


@nb.njit(cache=True, inline="always")
def _norm2(v):
    s = 0.0
    for j in range(v.shape[0]):
        s += v[j] * v[j]
    return s


@nb.njit(cache=True, inline="always")
def _pair(spins, S, beta, b, n, rng, mu, new):
    """One exchangeable-pair draw; returns (I, W, W', delta)."""
    N = spins.shape[1]
    I = rng.integers(0, n)
    rho = _cavity(spins, S, I, mu)
    if rho > 0.0:
        for j in range(N):
            mu[j] /= rho
        vmf_into(new, mu, beta * rho / n, rng)
    else:
        uniform_into(new, rng)
    c = math.sqrt(n) * beta * beta / (n * n * b * b)
    norm2 = _norm2(S)
    norm2p = 0.0
    for j in range(N):
        v = S[j] - spins[I, j] + new[j]
        norm2p += v * v
    w = c * norm2 - math.sqrt(n)
    wp = c * norm2p - math.sqrt(n)
    return I, w, wp, w - wp


@nb.njit(cache=True)
def _pair_deltas(spins, S, beta, b, n, m, rng):
    N = spins.shape[1]
    mu = np.empty(N)
    new = np.empty(N)
    out = np.empty(m)
    for k in range(m):
        _, _, _, d = _pair(spins, S, beta, b, n, rng, mu, new)
        out[k] = d
    return out


@nb.njit(cache=True)
def _run_chain(spins, S, beta, b, n, sweeps, burn_in, thin, updates, rng):
    N = spins.shape[1]
    mu = np.empty(N)
    new = np.empty(N)
    n_rec = sweeps // thin
    rec = np.empty((n_rec, 8))
    k = 0
    for sweep in range(burn_in + sweeps):
        for i in range(n):
            _heat_bath(spins, S, i, beta, n, rng, mu, new)
            updates += 1
            if updates % 10000 == 0:
                _refresh(spins, S)
        prod = sweep - burn_in + 1
        if prod >= 1 and prod % thin == 0:
            I, w, wp, d = _pair(spins, S, beta, b, n, rng, mu, new)
            norm2 = _norm2(S)
            m1, m2 = cond_moments_nb(spins, S, norm2, beta, b, n)
            rec[k, 0] = prod
            rec[k, 1] = math.sqrt(norm2)
            rec[k, 2] = w
            rec[k, 3] = wp
            rec[k, 4] = d
            rec[k, 5] = m1
            rec[k, 6] = m2
            rec[k, 7] = I
            k += 1
    return rec, updates


def _check_site(config: SpinConfiguration, i: int) -> None:
    if not 0 <= i < config.n:
        raise DomainError(f"site index {i} outside [0, {config.n})")


def heat_bath_step(config: SpinConfiguration, i: int, params: ModelParams,
                   derived: DerivedConstants, rng: np.random.Generator) -> SpinConfiguration:
    """Resample site ``i`` (0-based) from its conditional law, in place.

    ``derived`` is accepted for signature symmetry with the other steps; the
    conditional law only depends on ``beta`` and ``n``.
    """
    _check_site(config, i)
    mu = np.empty(config.N)
    new = np.empty(config.N)
    _heat_bath(config.spins, config.total_spin, int(i), float(params.beta), config.n, rng, mu, new)
    config.updates += 1
    if config.updates % REFRESH_EVERY == 0:
        config.refresh()
    return config


def exchangeable_pair_step(config: SpinConfiguration, params: ModelParams,
                           derived: DerivedConstants, rng: np.random.Generator) -> PairSample:
    """Draw ``(W, W')`` from the current configuration without mutating it."""
    mu = np.empty(config.N)
    new = np.empty(config.N)
    I, w, wp, d = _pair(config.spins, config.total_spin, float(params.beta),
                        float(derived.b), config.n, rng, mu, new)
    check_delta_cap(d, derived)
    m1, m2 = cond_moments_nb(config.spins, config.total_spin, config.total_norm2,
                             float(params.beta), float(derived.b), config.n)
    return PairSample(w=w, w_prime=wp, delta=d, index=int(I), cond_mean=m1, cond_second=m2,
                      new_spin=new.copy())


def sample_pair_deltas(config: SpinConfiguration, params: ModelParams, derived: DerivedConstants,
                       rng: np.random.Generator, m: int) -> np.ndarray:
    """``m`` independent pair draws (fresh index and resample each) at a frozen configuration."""
    d = _pair_deltas(config.spins, config.total_spin, float(params.beta),
                     float(derived.b), config.n, int(m), rng)
    check_delta_cap(d, derived)
    return d


def check_delta_cap(delta, derived: DerivedConstants) -> None:
    worst = float(np.max(np.abs(delta)))
    if worst > derived.delta_cap * (1.0 + _CAP_RTOL):
        raise ConsistencyError(f"|Delta| = {worst} exceeds the cap {derived.delta_cap}")


@dataclass
class ChainRun:
    """Record columns of one chain (see :data:`RECORD_COLUMNS`)."""

    records: np.ndarray
    config: SpinConfiguration
    chain_id: int = 0

    def __len__(self) -> int:
        return self.records.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.records[:, RECORD_COLUMNS.index(name)]

    @property
    def W(self) -> np.ndarray:
        return self.column("W")

    def pair_samples(self):
        for row in self.records:
            yield PairSample(w=row[2], w_prime=row[3], delta=row[4], index=int(row[7]),
                             cond_mean=row[5], cond_second=row[6])


def run_chain(params: ModelParams, derived: DerivedConstants, sweeps: int, burn_in: int,
              thin: int, rng: np.random.Generator, init: str = "ordered",
              config: SpinConfiguration | None = None, chain_id: int = 0) -> ChainRun:
    """Run ``burn_in + sweeps`` systematic-scan sweeps, recording every ``thin``-th production sweep.

    Each record carries ``|S|``, ``W``, one exchangeable-pair draw and the
    closed-form conditional moments of ``Delta`` at that configuration.
    """
    if burn_in < 0 or thin < 1 or sweeps < 0:
        raise ParameterError("need sweeps >= 0, burn_in >= 0 and thin >= 1")
    if config is None:
        if init == "ordered":
            config = SpinConfiguration.ordered(params.n, params.N)
        elif init == "uniform":
            config = SpinConfiguration.uniform(params.n, params.N, rng)
        else:
            raise ParameterError(f"unknown init {init!r}; use 'ordered' or 'uniform'")
    elif config.n != params.n or config.N != params.N:
        raise ParameterError("configuration shape does not match the model parameters")
    rec, updates = _run_chain(config.spins, config.total_spin, float(params.beta),
                              float(derived.b), params.n, int(sweeps), int(burn_in),
                              int(thin), int(config.updates), rng)
    config.updates = int(updates)
    if len(rec):
        check_delta_cap(rec[:, 4], derived)
    return ChainRun(records=rec, config=config, chain_id=chain_id)


def w_values(norm2, params: ModelParams, derived: DerivedConstants):
    return w_from_norm2(norm2, params.n, params.beta, derived.b)
