import csv
import math
import warnings

import numpy as np
import pytest

from meanfield_on.dynamics import run_chain
from meanfield_on.errors import DomainError
from meanfield_on.model import ModelParams, derive_constants
from meanfield_on.oracle import (
    IS_MAX_N,
    MAX_N,
    exact_kolmogorov_to_normal,
    gibbs_radial_law,
    importance_sampling_check,
    log_radial_density_product,
    r_of_w,
    radial_density_product,
    tilt_gibbs,
    uniform_char_fn,
    w_of_r,
)
from meanfield_on.sphere import sample_uniform_sphere


def j0_series(t, terms=40):
    return sum((-(t * t) / 4) ** k / math.factorial(k) ** 2 for k in range(terms))


class TestCharacteristicFunction:
    @pytest.mark.parametrize("N", [2, 3, 5, 10])
    def test_origin(self, N):
        assert uniform_char_fn(0.0, N) == 1.0

    @pytest.mark.parametrize("t", [0.5, 1.0, 3.14159])
    def test_heisenberg_sinc(self, t):
        assert uniform_char_fn(t, 3) == pytest.approx(math.sin(t) / t, abs=1e-12)

    def test_xy_bessel_zero(self):
        assert uniform_char_fn(2.404826, 2) == pytest.approx(j0_series(2.404826), abs=1e-12)
        assert abs(uniform_char_fn(2.404826, 2)) < 1e-6

    @pytest.mark.parametrize("N", [2, 3, 7])
    def test_series_branch_continuity(self, N):
        lo, hi = uniform_char_fn(np.array([1e-4 * (1 - 1e-9), 1e-4 * (1 + 1e-9)]), N)
        # a few ulps: the Bessel branch carries product roundoff at the switch
        assert lo == pytest.approx(hi, abs=5e-15)

    def test_matches_direct_average(self, rng):
        # E cos(t <u, e>) for uniform u
        u = sample_uniform_sphere(4, rng, size=400_000)
        emp = np.cos(2.0 * u[:, 0])
        se = emp.std() / math.sqrt(emp.size)
        assert abs(emp.mean() - uniform_char_fn(2.0, 4)) <= 4 * se

    def test_negative(self):
        with pytest.raises(DomainError):
            uniform_char_fn(-1.0, 3)


@pytest.fixture(scope="module")
def law_2_3():
    return radial_density_product(2, 3)


@pytest.fixture(scope="module")
def law_12_3():
    return radial_density_product(12, 3, keep_beta=(0.0, 5.0))


class TestProductLaw:
    def test_two_heisenberg_spins(self, law_2_3):
        assert np.max(np.abs(law_2_3.density - law_2_3.grid / 2)) <= 1e-8
        assert law_2_3.raw_mass == pytest.approx(1.0, abs=1e-8)
        assert law_2_3.trapezoid_mass() == pytest.approx(1.0, abs=1e-8)
        assert law_2_3.cdf_at(2.0) == pytest.approx(1.0, abs=1e-8)
        assert law_2_3.cdf_at(1.0) == pytest.approx(0.25, abs=1e-8)

    @pytest.mark.parametrize("h", [1e-1, 1e-3, 1e-6, 1e-9, 1e-12])
    def test_two_xy_spins_near_edge(self, h):
        r = 2.0 - h
        h = 2.0 - r  # the gap actually represented in floating point
        exact = 2 / (math.pi * math.sqrt(h * (4 - h)))
        assert math.exp(log_radial_density_product(r, 2, 2)) == pytest.approx(exact, rel=1e-9)

    @pytest.mark.slow
    def test_two_xy_spins_singular_edge(self):
        with pytest.warns(UserWarning, match="singularity"):
            law = radial_density_product(2, 2)
        # the graded grid stops 2^-31 short of the edge; Gauss-Legendre on the
        # last panel misses a sliver of the inverse square root mass
        assert law.raw_mass == pytest.approx(1.0, abs=1e-6)
        exact = 2 / (math.pi * np.sqrt(4 - law.grid**2))
        np.testing.assert_allclose(law.density * law.raw_mass, exact, rtol=1e-8)
        # P(|S| <= 1) = 1 - (2/pi) arccos(1/2) = 1/3
        assert law.cdf_at(1.0) == pytest.approx(1 / 3, abs=1e-6)

    def test_exact_moments(self, law_12_3):
        n, N = 12, 3
        assert law_12_3.raw_mass == pytest.approx(1.0, abs=1e-8)
        assert law_12_3.expect(lambda r: r**2) == pytest.approx(n, rel=1e-10)
        assert law_12_3.expect(lambda r: r**4) == pytest.approx(n * n + 2 * n * (n - 1) / N, rel=1e-10)

    @pytest.mark.slow
    def test_moments_against_direct_simulation(self, law_12_3, rng):
        draws = []
        for _ in range(10):
            u = sample_uniform_sphere(3, rng, size=12 * 1_000_000).reshape(-1, 12, 3)
            S = u.sum(axis=1)
            draws.append(np.einsum("ij,ij->i", S, S))
        r2 = np.concatenate(draws)
        for k in (1, 2):
            x = r2**k
            se = x.std(ddof=1) / math.sqrt(x.size)
            assert abs(x.mean() - law_12_3.expect(lambda r: r ** (2 * k))) <= 4 * se

    @pytest.mark.parametrize("n,N", [(3, 3), (5, 4), (7, 2), (20, 6)])
    def test_mass_and_second_moment(self, n, N):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            law = radial_density_product(n, N)
        assert law.raw_mass == pytest.approx(1.0, abs=1e-8)
        assert np.all(law.density >= 0)
        assert np.all(np.diff(law.cdf) >= -1e-15)
        assert law.expect(lambda r: r**2) == pytest.approx(n, rel=1e-8)

    def test_point_evaluation_outside_support(self):
        assert log_radial_density_product(5.0, 4, 3) == -math.inf
        assert log_radial_density_product(0.0, 4, 3) == -math.inf

    def test_limits(self):
        with pytest.raises(DomainError):
            radial_density_product(1, 3)
        with pytest.raises(DomainError):
            radial_density_product(MAX_N + 1, 3)

    def test_csv(self, law_2_3, tmp_path):
        path = tmp_path / "law.csv"
        law_2_3.to_csv(path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["r", "density", "cdf"]
        assert len(rows) == law_2_3.grid.size + 1
        r, dens, cdf = map(float, rows[5])
        assert dens == pytest.approx(r / 2, abs=1e-8)
        assert cdf == pytest.approx(r * r / 4, abs=1e-8)


class TestTilt:
    def test_zero_tilt_is_identity(self, law_12_3):
        same = tilt_gibbs(law_12_3, 0.0)
        np.testing.assert_allclose(same.density, law_12_3.density, rtol=1e-12)

    def test_mean_near_fixed_point(self, law_12_3):
        d = derive_constants(ModelParams(3, 5.0, 12))
        g = tilt_gibbs(law_12_3, 5.0, 12)
        assert abs(g.expect(lambda r: 5.0 * r / 12) - d.b) <= 0.6
        assert g.mass == pytest.approx(1.0, abs=1e-8)

    def test_stochastically_larger(self, law_12_3):
        g = tilt_gibbs(law_12_3, 5.0)
        r = np.linspace(0, 12, 401)
        assert np.all(g.cdf_at(r) <= law_12_3.cdf_at(r) + 1e-12)

    def test_rejects_wrong_n_or_retilt(self, law_12_3):
        with pytest.raises(DomainError):
            tilt_gibbs(law_12_3, 5.0, 13)
        with pytest.raises(DomainError):
            tilt_gibbs(tilt_gibbs(law_12_3, 5.0), 1.0)


class TestKolmogorov:
    def test_grid_invariance(self):
        d = derive_constants(ModelParams(3, 5.0, 16))
        res = exact_kolmogorov_to_normal(16, 3, 5.0, d)
        assert 0 <= res.distance <= 1
        assert abs(res.distance - res.distance_z_grid) <= 1e-9

    def test_change_of_variables_roundtrip(self):
        d = derive_constants(ModelParams(3, 5.0, 50))
        r = np.linspace(1, 49, 7)
        np.testing.assert_allclose(r_of_w(w_of_r(r, 50, 5.0, d.b, d.B), 50, 5.0, d.b, d.B), r)

    def test_rejects_subcritical(self):
        d = derive_constants(ModelParams(3, 5.0, 16))
        with pytest.raises(DomainError):
            exact_kolmogorov_to_normal(16, 3, 3.0, d)

    @pytest.mark.slow
    def test_matches_simulation(self):
        n = 64
        p = ModelParams(3, 5.0, n)
        d = derive_constants(p)
        law = gibbs_radial_law(n, 3, 5.0)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(77)))
        run = run_chain(p, d, sweeps=100_000, burn_in=1_000, thin=1, rng=rng)
        r = np.sort(run.column("abs_S"))
        ecdf = np.arange(1, r.size + 1) / r.size
        F = law.cdf_at(r)
        assert max(np.max(np.abs(ecdf - F)), np.max(np.abs(ecdf - 1 / r.size - F))) <= 0.01


class TestImportanceSampling:
    def test_small_system(self, rng):
        n = 8
        d = derive_constants(ModelParams(3, 5.0, n))
        law = gibbs_radial_law(n, 3, 5.0)
        ic = importance_sampling_check(n, 3, 5.0, d, 100_000, rng)
        assert abs(ic.mean_beta_r_over_n - law.expect(lambda r: 5.0 * r / n)) <= 4 * ic.mean_se
        p0 = float(law.cdf_at(n * d.b / 5.0))
        assert abs(ic.p_w_le_0 - p0) <= 4 * ic.p_se
        assert ic.ess > 10_000

    def test_size_cap(self, rng):
        d = derive_constants(ModelParams(3, 5.0, IS_MAX_N + 1))
        with pytest.raises(DomainError):
            importance_sampling_check(IS_MAX_N + 1, 3, 5.0, d, 10, rng)
