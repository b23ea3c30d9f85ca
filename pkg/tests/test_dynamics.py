import math

import numpy as np
import pytest
from scipy import special, stats

from meanfield_on.dynamics import (
    RECORD_COLUMNS,
    REFRESH_EVERY,
    SpinConfiguration,
    check_delta_cap,
    exchangeable_pair_step,
    heat_bath_step,
    run_chain,
    sample_pair_deltas,
)
from meanfield_on.errors import ConsistencyError, DomainError, ParameterError
from meanfield_on.model import ModelParams, derive_constants, w_from_norm2
from meanfield_on.special_functions import bessel_ratio
from meanfield_on.sphere import sample_uniform_sphere


def setup(N=3, beta=5.0, n=100):
    p = ModelParams(N, beta, n)
    return p, derive_constants(p)


class TestSpinConfiguration:
    def test_rejects_non_unit(self):
        with pytest.raises(DomainError):
            SpinConfiguration(np.ones((3, 3)))

    def test_rejects_bad_shape(self):
        with pytest.raises(DomainError):
            SpinConfiguration(np.ones(3))

    def test_ordered(self):
        c = SpinConfiguration.ordered(10, 4)
        assert c.n == 10 and c.N == 4
        assert c.total_norm2 == pytest.approx(100.0)

    def test_copy_is_independent(self, rng):
        p, d = setup(n=20)
        c = SpinConfiguration.uniform(20, 3, rng)
        c2 = c.copy()
        heat_bath_step(c2, 0, p, d, rng)
        assert not np.array_equal(c.spins, c2.spins)
        assert c.updates == 0 and c2.updates == 1

    def test_cache_drift_bounded(self, rng):
        p, d = setup(n=50)
        run = run_chain(p, d, sweeps=3 * REFRESH_EVERY // 50 + 7, burn_in=0, thin=10, rng=rng)
        c = run.config
        assert c.drift() <= 1e-8
        assert 0 <= math.sqrt(c.total_norm2) <= c.n


class TestHeatBath:
    def test_radial_moment_matches_conditional(self, rng):
        p, d = setup(n=10)
        c = SpinConfiguration(sample_uniform_sphere(3, rng, size=10))
        i = 4
        cav = c.total_spin - c.spins[i]
        rho = np.linalg.norm(cav)
        bi = p.beta * rho / p.n
        saved_spin, saved_S = c.spins[i].copy(), c.total_spin.copy()
        t = np.empty(50_000)
        for k in range(t.size):
            heat_bath_step(c, i, p, d, rng)
            t[k] = c.spins[i] @ cav / rho
            c.spins[i], c.total_spin[:] = saved_spin, saved_S
        se = t.std(ddof=1) / math.sqrt(t.size)
        assert abs(t.mean() - bessel_ratio(bi, 3)) <= 4 * se

    def test_single_site_is_uniform(self, rng):
        p, d = setup(n=1)
        c = SpinConfiguration.ordered(1, 3)
        xs = np.empty((20_000, 3))
        for k in range(xs.shape[0]):
            heat_bath_step(c, 0, p, d, rng)
            xs[k] = c.spins[0]
        se = 1 / math.sqrt(3 * xs.shape[0])
        assert np.all(np.abs(xs.mean(axis=0)) <= 4 * se)

    def test_index_checked(self, rng):
        p, d = setup(n=5)
        with pytest.raises(DomainError):
            heat_bath_step(SpinConfiguration.ordered(5, 3), 5, p, d, rng)

    def test_detailed_balance_two_site_xy(self, rng):
        # N=2, n=2: Gibbs density on angles is proportional to exp(beta (1 + cos(a - b)) / 2)
        beta, M = 3.0, 128
        th = 2 * np.pi * np.arange(M) / M
        pi = np.exp(beta * (1 + np.cos(th[:, None] - th[None, :])) / 2)
        pi /= pi.sum()
        kappa = beta * 1.0 / 2  # |sigma^(i)| = 1
        q = np.exp(kappa * np.cos(th[:, None] - th[None, :])) / (2 * np.pi * special.i0(kappa))
        # the vMF conditional equals the Gibbs conditional
        cond = pi / pi.sum(axis=0, keepdims=True) * M / (2 * np.pi)
        assert np.max(np.abs(q - cond)) / q.max() <= 1e-3
        # random-scan moves change one angle; flux pi(x) K(x, y) must be symmetric.
        # site 0 moves (a, c) -> (a2, c): F[a, a2, c] = pi[a, c] P[a2, c] / 2
        P = q * 2 * np.pi / M
        F0 = 0.5 * pi[:, None, :] * P[None, :, :]
        F1 = 0.5 * pi.T[:, None, :] * P[None, :, :]  # site 1, by the a <-> b symmetry
        for F in (F0, F1):
            resid = np.abs(F - F.transpose(1, 0, 2))
            assert resid.max() / F.max() <= 1e-3
        # and the sampler draws from it
        p, d = ModelParams(2, beta, 2), derive_constants(ModelParams(2, beta, 2))
        c = SpinConfiguration(np.array([[1.0, 0.0], [math.cos(1.0), math.sin(1.0)]]))
        saved = c.spins.copy(), c.total_spin.copy()
        ang = np.empty(40_000)
        for k in range(ang.size):
            heat_bath_step(c, 0, p, d, rng)
            ang[k] = math.atan2(c.spins[0, 1], c.spins[0, 0]) - 1.0
            c.spins[:], c.total_spin[:] = saved
        assert stats.kstest(np.mod(ang + np.pi, 2 * np.pi) - np.pi,
                            stats.vonmises(kappa).cdf).pvalue > 0.01


class TestPairStep:
    def test_does_not_mutate(self, rng):
        p, d = setup(n=30)
        c = SpinConfiguration.uniform(30, 3, rng)
        before = c.spins.copy(), c.total_spin.copy()
        exchangeable_pair_step(c, p, d, rng)
        assert np.array_equal(c.spins, before[0]) and np.array_equal(c.total_spin, before[1])

    def test_w_prime_from_updated_total(self, rng):
        p, d = setup(n=30)
        c = SpinConfiguration.uniform(30, 3, rng)
        s = exchangeable_pair_step(c, p, d, rng)
        Sp = c.total_spin - c.spins[s.index] + s.new_spin
        assert s.w_prime == pytest.approx(float(w_from_norm2(Sp @ Sp, 30, 5.0, d.b)), abs=1e-12)
        assert s.w == pytest.approx(float(w_from_norm2(c.total_norm2, 30, 5.0, d.b)), abs=1e-12)
        # if the resample returned the old spin, W' would equal W
        S_same = c.total_spin - c.spins[s.index] + c.spins[s.index]
        assert float(w_from_norm2(S_same @ S_same, 30, 5.0, d.b)) == pytest.approx(s.w, abs=1e-12)

    def test_cap_never_exceeded(self, rng):
        p, d = setup(n=100)
        run = run_chain(p, d, sweeps=1, burn_in=200, thin=1, rng=rng)
        deltas = sample_pair_deltas(run.config, p, d, rng, 1_000_000)
        assert np.max(np.abs(deltas)) <= d.delta_cap
        assert d.delta_cap == pytest.approx(0.75915, abs=1e-4)

    def test_cap_check_raises(self):
        _, d = setup(n=100)
        with pytest.raises(ConsistencyError):
            check_delta_cap(np.array([d.delta_cap * 1.001]), d)

    def test_antisymmetric_functionals(self, rng):
        p, d = setup(n=64)
        run = run_chain(p, d, sweeps=40_000, burn_in=500, thin=1, rng=rng)
        w, wp = run.column("W"), run.column("W_prime")
        f = lambda x, y: (x - y) * (x + y) ** 3  # noqa: E731
        np.testing.assert_allclose(f(w, wp) + f(wp, w), 0.0, atol=1e-9)
        g = w**2 * wp - wp**2 * w
        # batch means guard against autocorrelation in the stationary records
        batches = g.reshape(40, -1).mean(axis=1)
        se = batches.std(ddof=1) / math.sqrt(batches.size)
        assert abs(g.mean()) <= 4 * se


class TestRunChain:
    def test_record_count(self, rng):
        p, d = setup(n=16)
        run = run_chain(p, d, sweeps=123, burn_in=0, thin=1, rng=rng)
        assert len(run) == 123 and run.records.shape[1] == len(RECORD_COLUMNS)
        np.testing.assert_array_equal(run.column("sweep"), np.arange(1, 124))
        assert len(run_chain(p, d, sweeps=100, burn_in=5, thin=7, rng=rng)) == 14

    def test_deterministic(self):
        p, d = setup(n=32)
        runs = [run_chain(p, d, 200, 20, 1, np.random.Generator(np.random.Philox(np.random.SeedSequence(9))))
                for _ in range(2)]
        assert np.array_equal(runs[0].records, runs[1].records)

    def test_concentrates_at_fixed_point(self, rng):
        p, d = setup(n=1024)
        run = run_chain(p, d, sweeps=1000, burn_in=100, thin=10, rng=rng)
        assert abs(np.mean(5.0 * run.column("abs_S") / 1024) - d.b) <= 0.05

    def test_uniform_init(self, rng):
        p, d = setup(n=16)
        run = run_chain(p, d, sweeps=10, burn_in=0, thin=1, rng=rng, init="uniform")
        assert len(run) == 10

    @pytest.mark.parametrize("kw", [{"thin": 0}, {"burn_in": -1}, {"init": "hot"}])
    def test_bad_arguments(self, rng, kw):
        p, d = setup(n=8)
        args = dict(sweeps=5, burn_in=0, thin=1, rng=rng)
        args.update(kw)
        with pytest.raises(ParameterError):
            run_chain(p, d, **args)

    def test_pair_samples_view(self, rng):
        p, d = setup(n=8)
        run = run_chain(p, d, sweeps=5, burn_in=0, thin=1, rng=rng)
        samples = list(run.pair_samples())
        assert len(samples) == 5
        assert samples[0].delta == pytest.approx(samples[0].w - samples[0].w_prime)
