"""Exact law of ``|S_n|`` (product and Gibbs measures) by radial Fourier inversion.

The radial density of ``|S_n|`` under the product of uniform laws is

    p_n(r) = A_N (2 pi)^{-N/2} r^{N/2} int_0^inf t^{N/2} J_{N/2-1}(r t) psi_N(t)^n dt

with ``psi_N`` the radial characteristic function of the uniform law.  Taken
along the real axis this integral cancels catastrophically wherever ``p_n`` is
exponentially small, which is exactly where the Gibbs tilt
``exp(beta r^2 / 2n)`` puts its mass.  We therefore write
``J = Re H^(1)`` and move the contour to ``Im t = kappa`` with ``kappa`` the
saddle point ``n f(kappa) = r``.  The exponential factor
``M(kappa)^n exp(-r kappa)`` then comes out analytically and the remaining
integral is O(1) and non-cancelling.  For small ``n`` the integrand decays
only algebraically; its tail is split into Hankel-function frequency
components, each integrated along a ray on which it decays exponentially.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre
from scipy import integrate, optimize, special

from .errors import DomainError, NumericalError
from .special_functions import bessel_ratio, inverse_bessel_ratio, surface_area
from .sphere import VmfLaw, sample_uniform_sphere, sample_vmf
from .stein import normal_cdf

KAPPA_MIN = 0.25
#: contour heights above this gain nothing and strain the Hankel scaling
KAPPA_MAX = 1.0e5
TAIL_RTOL = 1e-13
RAY_MAX_N = 64
MASS_TOL = 1e-8
CLIP_TOL = 1e-9
PRUNE_NATS = 50.0
#: default ceiling on n for the exact law (cost grows with n)
MAX_N = 512
#: beyond this n the tilting weights degenerate
IS_MAX_N = 24
_QUAD_RTOL = 1e-12
#: rays stop where exp(-|omega| s) falls below e^-45
_RAY_CUTOFF = 45.0


def uniform_char_fn(t, N: int):
    """Radial characteristic function ``Gamma(N/2) (2/t)^{N/2-1} J_{N/2-1}(t)`` of the uniform law."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("t must be >= 0")
    nu = 0.5 * N - 1.0
    small = t < 1e-4
    ts = np.where(small, 1.0, t)
    big = special.gamma(0.5 * N) * (2.0 / ts) ** nu * special.jv(nu, ts)
    q = 0.25 * t * t
    series = 1.0 - q / (nu + 1.0) + q * q / (2.0 * (nu + 1.0) * (nu + 2.0))
    out = np.where(small, series, big)
    return float(out) if out.ndim == 0 else out


def _log_mgf(kappa: float, N: int) -> float:
    # log E exp(kappa <x, e>) under the uniform law = log(Gamma(N/2) (2/k)^nu I_nu(k))
    nu = 0.5 * N - 1.0
    if kappa == 0.0:
        return 0.0
    return math.lgamma(0.5 * N) + nu * math.log(2.0 / kappa) + math.log(special.ive(nu, kappa)) + kappa


def _saddle_kappa(r: float, n: int, N: int) -> float:
    # any contour height is valid; the saddle point just makes the integrand O(1)
    y = r / n
    if y >= 1.0:
        raise DomainError("r must be < n")
    if y >= bessel_ratio(KAPPA_MAX, N):
        return KAPPA_MAX
    return inverse_bessel_ratio(y, N)


def _log_prefactor(r: float, N: int) -> float:
    return math.log(surface_area(N)) - 0.5 * N * math.log(2.0 * math.pi) + 0.5 * N * math.log(r)


def _ray_tail(r, n, N, kappa, U, log_fac):
    """Sum of the Hankel-component tails beyond ``Re t = U``, each on its decaying ray."""
    nu = 0.5 * N - 1.0
    t0 = U + 1j * kappa
    lg = math.lgamma(0.5 * N)
    decay = (n - 1) * (nu + 0.5)
    total = 0.0 + 0.0j
    for k in range(n + 1):
        omega = r + k - (n - k)
        lc = math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1) - n * math.log(2.0)
        if omega == 0.0:
            if decay <= 1.0:
                raise NumericalError(f"radial density is singular at r={r} for n={n}, N={N}")
            direction = 1.0 + 0j
        else:
            direction = 1j if omega > 0 else -1j

        def term(s, k=k, lc=lc, omega=omega, direction=direction):
            t = t0 + direction * s
            val = (lc + n * (lg + nu * np.log(2.0 / t)) + (nu + 1.0) * np.log(t)
                   + np.log(special.hankel1e(nu, r * t)) + k * np.log(special.hankel1e(nu, t))
                   + (n - k) * np.log(special.hankel2e(nu, t)) + 1j * omega * t - log_fac)
            return np.exp(val) * direction

        if direction == 1.0:
            v, _ = integrate.quad(term, 0.0, np.inf, complex_func=True, limit=1000,
                                  epsabs=0.0, epsrel=_QUAD_RTOL)
        else:
            # on the ray the component decays algebraically out to s ~ 1/|omega|
            # and exponentially after; s = e^y - 1 makes that a smooth finite range
            Y = math.log1p(_RAY_CUTOFF / abs(omega))
            v, _ = integrate.quad(lambda y: term(math.expm1(y)) * math.exp(y), 0.0, Y,
                                  complex_func=True, limit=1000, epsabs=0.0, epsrel=_QUAD_RTOL)
        total += v
    return total


def log_radial_density_product(r: float, n: int, N: int) -> float:
    """Log of the radial density of ``|S_n|`` under the product of uniform laws."""
    # quadpack's roundoff notices fire on the oscillatory pieces at 1e-12
    # relative tolerance; accuracy is policed by the mass and sign checks
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return _log_density(r, n, N)


def _log_density(r: float, n: int, N: int) -> float:
    if not 0.0 < r < n:
        return -math.inf
    nu = 0.5 * N - 1.0
    kappa = max(_saddle_kappa(r, n, N), KAPPA_MIN)
    log_fac = n * _log_mgf(kappa, N) - r * kappa
    norm = special.ive(nu, kappa)

    def g(u):
        t = u + 1j * kappa
        ps = (kappa / t) ** nu * special.jve(nu, t) / norm
        return t ** (nu + 1.0) * special.hankel1e(nu, r * t) * np.exp(1j * r * u) * ps**n

    decay = (n - 1) * (nu + 0.5)
    width = 1.0 / math.sqrt(max(n * float(_proj_var(kappa, N)), 1e-300))
    U = max(40.0, 15.0 * width)
    for _ in range(8):
        main = _chunked_quad(g, U)
        tail_bound = abs(g(U)) * U / (decay - 1.0) if decay > 1.0 else math.inf
        if tail_bound <= TAIL_RTOL * abs(main.real):
            value = main.real
            break
        if n <= RAY_MAX_N:
            value = (main + _ray_tail(r, n, N, kappa, U, log_fac)).real
            break
        U *= 2.0
    else:
        raise NumericalError(f"radial inversion tail did not converge (r={r}, n={n}, N={N})")
    if not value > 0.0:
        # inversion noise where the density is zero to working precision
        return -math.inf
    return _log_prefactor(r, N) + log_fac + math.log(value)


def _chunked_quad(g, U, width=4.0, max_pieces=64):
    # one adaptive quad over [0, U] occasionally misjudges the oscillatory
    # integrand; short pieces are each resolved reliably.  Long ranges only
    # occur for large contour heights, where the residual oscillation is slow
    pieces = min(int(math.ceil(U / width)), max_pieces)
    edges = np.linspace(0.0, U, pieces + 1)
    total = 0.0 + 0.0j
    for a, b in zip(edges[:-1], edges[1:]):
        # later pieces only need accuracy relative to the running total
        v, _ = integrate.quad(g, a, b, complex_func=True, limit=200,
                              epsabs=1e-2 * _QUAD_RTOL * abs(total), epsrel=_QUAD_RTOL)
        total += v
    return total


def _proj_var(kappa, N):
    # variance of <x, e> under vMF(e, kappa) = f'(kappa), or 1/N at kappa = 0
    if kappa == 0.0:
        return 1.0 / N
    f = bessel_ratio(kappa, N)
    return 1.0 - (N - 1) * f / kappa - f * f


def _saddle_exponent(r, n, N):
    # leading-order log density used only to decide which panels can be skipped
    if not 0.0 < r < n:
        return -math.inf
    k = _saddle_kappa(r, n, N)
    return n * _log_mgf(k, N) - r * k + (N - 1) * math.log(r)


@dataclass
class RadialLaw:
    """Radial law of ``|S_n|`` stored on Gauss-Legendre panels over ``[0, n]``.

    ``density`` and ``cdf`` are given at the nodes ``grid``; :meth:`cdf_at`
    evaluates the CDF anywhere by integrating the per-panel polynomial
    interpolant of the density exactly.
    """

    n: int
    N: int
    beta: float
    edges: np.ndarray
    order: int
    log_density: np.ndarray
    grid: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)
    density: np.ndarray = field(init=False)
    cdf: np.ndarray = field(init=False)
    #: total mass before renormalization (the inversion's own mass for beta = 0)
    raw_mass: float = field(init=False)
    mass: float = field(init=False)

    def __post_init__(self):
        x, w = legendre.leggauss(self.order)
        a, b = self.edges[:-1, None], self.edges[1:, None]
        half = 0.5 * (b - a)
        self.grid = (a + half * (x + 1.0)).ravel()
        self.weights = (half * w).ravel()
        self._x = x
        self._normalize()

    def _normalize(self):
        ld = self.log_density
        top = np.max(ld)
        dens = np.exp(ld - top)
        self.raw_mass = float(np.sum(dens * self.weights)) * math.exp(top)
        self.log_density = ld - math.log(self.raw_mass)
        self.density = np.exp(self.log_density)
        self.mass = float(np.sum(self.density * self.weights))
        q = self.order
        # integral of the interpolant over each panel and cumulative offsets
        coef = legendre.legfit(self._x, self.density.reshape(-1, q).T, q - 1)  # (q, panels)
        self._coef = coef
        self._icoef = legendre.legint(coef, lbnd=-1.0)
        panel_mass = np.sum(self.density.reshape(-1, q) * self.weights.reshape(-1, q), axis=1)
        self._offset = np.concatenate([[0.0], np.cumsum(panel_mass)])
        self.cdf = self.cdf_at(self.grid)

    def cdf_at(self, r):
        r = np.asarray(r, dtype=float)
        rr = np.clip(r, self.edges[0], self.edges[-1])
        j = np.clip(np.searchsorted(self.edges, rr, side="right") - 1, 0, len(self.edges) - 2)
        a, b = self.edges[j], self.edges[j + 1]
        x = 2.0 * (rr - a) / (b - a) - 1.0
        q = self._icoef.shape[0] - 1
        inner = np.sum(legendre.legvander(x, q) * np.moveaxis(self._icoef[:, j], 0, -1), axis=-1)
        vals = self._offset[j] + 0.5 * (b - a) * inner
        vals = np.clip(vals, 0.0, 1.0)
        # legvander promotes scalars to length-one arrays
        return float(vals.reshape(-1)[0]) if r.ndim == 0 else vals.reshape(r.shape)

    def density_at(self, r):
        r = np.asarray(r, dtype=float)
        j = np.clip(np.searchsorted(self.edges, r, side="right") - 1, 0, len(self.edges) - 2)
        a, b = self.edges[j], self.edges[j + 1]
        x = 2.0 * (r - a) / (b - a) - 1.0
        out = np.sum(legendre.legvander(x, self.order - 1) * np.moveaxis(self._coef[:, j], 0, -1), axis=-1)
        return float(out.reshape(-1)[0]) if r.ndim == 0 else out.reshape(r.shape)

    def expect(self, fn) -> float:
        return float(np.sum(fn(self.grid) * self.density * self.weights))

    def trapezoid_mass(self, points: int = 200_001) -> float:
        """Mass by the trapezoid rule on a uniform grid (uses the interpolant)."""
        r = np.linspace(self.edges[0], self.edges[-1], points)
        return float(integrate.trapezoid(self.density_at(r), r))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("r,density,cdf\n")
            for r, d, c in zip(self.grid, self.density, self.cdf):
                fh.write(f"{r:.12g},{d:.12g},{c:.12g}\n")


def _default_edges(n: int, N: int, per_unit: int | None) -> np.ndarray:
    # integer breakpoints: the product density is only piecewise smooth at r = n - 2k
    if per_unit is None:
        per_unit = max(1, int(math.ceil(24 / n)))
    edges = np.linspace(0.0, float(n), n * per_unit + 1)
    if n == 2 and N == 2:
        warnings.warn("n=2, N=2: density has an integrable singularity at r=2; grading the grid",
                      stacklevel=3)
        tail = 2.0 - 2.0 ** -np.arange(1, 32, 2)
        edges = np.unique(np.concatenate([edges[edges < 1.5], [1.5], tail, [2.0]]))
    return edges


def radial_density_product(n: int, N: int, grid=None, order: int = 12,
                           keep_beta=(0.0,), prune_nats: float = PRUNE_NATS,
                           max_n: int = MAX_N, workers: int = 1) -> RadialLaw:
    """Radial law of ``|S_n|`` under the product measure (``beta = 0``).

    ``grid`` gives panel edges (defaults to integer breakpoints, subdivided
    for small ``n``).  Panels whose leading-order log weight lies more than
    ``prune_nats`` below the maximum for every tilt in ``keep_beta`` are set
    to zero density without evaluating the inversion integral.  Nodes are
    independent; ``workers > 1`` evaluates them in a process pool.
    """
    if n < 2:
        raise DomainError("n must be >= 2")
    if n > max_n:
        raise DomainError(f"n={n} exceeds the oracle limit {max_n}; pass max_n to override")
    if N < 2:
        raise DomainError("N must be >= 2")
    edges = np.asarray(grid, dtype=float) if grid is not None else _default_edges(n, N, None)
    law_x, _ = legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = (a + 0.5 * (b - a) * (law_x + 1.0)).ravel()

    mids = 0.5 * (edges[:-1] + edges[1:])
    lead = np.array([_saddle_exponent(m, n, N) for m in mids])
    keep = np.zeros(mids.size, dtype=bool)
    for beta in keep_beta:
        tilted = lead + beta * mids**2 / (2.0 * n)
        keep |= tilted >= np.max(tilted) - prune_nats
    keep_nodes = np.repeat(keep, order)

    log_d = np.full(nodes.size, -math.inf)
    idx = np.flatnonzero(keep_nodes)
    args = [(float(nodes[i]), n, N) for i in idx]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            vals = list(pool.map(_node_task, args, chunksize=16))
    else:
        vals = [_node_task(a) for a in args]
    log_d[idx] = vals
    law = RadialLaw(n=n, N=N, beta=0.0, edges=edges, order=order, log_density=log_d)
    _check_law(law)
    return law


def _node_task(args):
    return log_radial_density_product(*args)


def _check_law(law: RadialLaw) -> None:
    err = abs(law.raw_mass - 1.0)
    if err > 1e-6:
        raise NumericalError(f"inverted density has mass {law.raw_mass}, off by {err:.2e}")
    if err > MASS_TOL:
        warnings.warn(f"inverted density mass off by {err:.2e}; renormalized", stacklevel=3)
    neg = law.density < 0.0
    if np.any(neg):
        if np.min(law.density) < -CLIP_TOL * np.max(law.density):
            raise NumericalError("inverted density has a significant negative undershoot")
        law.log_density[neg] = -math.inf
        law._normalize()


def tilt_gibbs(law: RadialLaw, beta: float, n: int | None = None) -> RadialLaw:
    """Reweight a product-measure radial law by ``exp(beta r^2 / (2n))`` and renormalize."""
    n = law.n if n is None else n
    if n != law.n:
        raise DomainError("n does not match the radial law")
    if law.beta != 0.0:
        raise DomainError("tilt_gibbs expects a product-measure (beta = 0) law")
    ld = law.log_density + beta * law.grid**2 / (2.0 * n)
    return RadialLaw(n=law.n, N=law.N, beta=float(beta), edges=law.edges, order=law.order,
                     log_density=ld)


def gibbs_radial_law(n: int, N: int, beta: float, order: int = 12, **kwargs) -> RadialLaw:
    """Exact radial law of ``|S_n|`` under the Gibbs measure."""
    base = radial_density_product(n, N, order=order, keep_beta=(0.0, beta), **kwargs)
    return tilt_gibbs(base, beta)


def w_of_r(r, n: int, beta: float, b: float, B: float):
    """Normalized statistic ``W_n / B`` as a function of ``r = |S_n|``."""
    return math.sqrt(n) * (beta**2 * np.asarray(r) ** 2 / (n * n * b * b) - 1.0) / B


def r_of_w(z, n: int, beta: float, b: float, B: float):
    inner = 1.0 + np.asarray(z) * B / math.sqrt(n)
    return n * b / beta * np.sqrt(np.clip(inner, 0.0, None))


@dataclass
class KolmogorovResult:
    distance: float
    distance_z_grid: float
    argmax_r: float
    refinements: int


def _refine_sup(fun, lo, hi, cells, start=32, tol=1e-6, max_iter=8):
    """Sup of ``|fun|`` on ``[lo, hi]``: dense sampling, doubled until stable, then polished."""
    best, prev, m, it = 0.0, -1.0, start, 0
    arg = lo
    while it < max_iter:
        x = np.concatenate([np.linspace(a, b, m, endpoint=False) for a, b in zip(cells[:-1], cells[1:])]
                           + [[hi]])
        vals = np.abs(fun(x))
        i = int(np.argmax(vals))
        best, arg = float(vals[i]), float(x[i])
        if abs(best - prev) < tol:
            break
        prev, m, it = best, 2 * m, it + 1
    h = (hi - lo) / (len(cells) - 1) / m
    a, b = max(lo, arg - 2 * h), min(hi, arg + 2 * h)
    res = optimize.minimize_scalar(lambda v: -abs(float(fun(np.array([v]))[0])), bounds=(a, b),
                                   method="bounded", options={"xatol": 1e-12})
    if -res.fun > best:
        best, arg = float(-res.fun), float(res.x)
    return best, arg, it


def exact_kolmogorov_to_normal(n: int, N: int, beta: float, derived, law: RadialLaw | None = None,
                               order: int = 12, **kwargs) -> KolmogorovResult:
    """``sup_z |P(W_n/B <= z) - Phi(z)|`` under the exact Gibbs law.

    The supremum is computed twice, once on an ``r`` grid and once on a
    ``z`` grid, which must agree since the map ``r -> z`` is monotone.
    """
    if not beta > N:
        raise DomainError("beta must exceed N")
    if law is None:
        law = gibbs_radial_law(n, N, beta, order=order, **kwargs)
    b, B = derived.b, derived.B

    def gap_r(r):
        return law.cdf_at(r) - normal_cdf(w_of_r(r, n, beta, b, B))

    # restrict the search to where either CDF moves
    support = law.grid[law.density > 1e-300]
    lo_r = max(0.0, float(support.min()) - 1.0)
    hi_r = min(float(n), float(support.max()) + 1.0)
    cells = law.edges[(law.edges >= lo_r) & (law.edges <= hi_r)]
    cells = np.unique(np.concatenate([[lo_r], cells, [hi_r]]))
    d_r, arg_r, it = _refine_sup(gap_r, lo_r, hi_r, cells)

    def gap_z(z):
        return law.cdf_at(r_of_w(z, n, beta, b, B)) - normal_cdf(z)

    z_lo, z_hi = float(w_of_r(lo_r, n, beta, b, B)), float(w_of_r(hi_r, n, beta, b, B))
    zc = np.unique(w_of_r(cells, n, beta, b, B))
    d_z, _, _ = _refine_sup(gap_z, z_lo, z_hi, zc)
    # outside [lo_r, hi_r] the gap is Phi's tail mass only
    tails = max(normal_cdf(z_lo), 1.0 - normal_cdf(z_hi))
    return KolmogorovResult(distance=max(d_r, tails), distance_z_grid=max(d_z, tails),
                            argmax_r=arg_r, refinements=it)


@dataclass
class ImportanceCheck:
    mean_beta_r_over_n: float
    mean_se: float
    p_w_le_0: float
    p_se: float
    ess: float


def importance_sampling_check(n: int, N: int, beta: float, derived, m: int,
                              rng: np.random.Generator, kappa0: float | None = None,
                              alpha: float = 0.9, chunk: int = 100_000) -> ImportanceCheck:
    """Self-normalized importance sampling of the Gibbs law of ``|S_n|``.

    Proposal: a defensive mixture that draws ``n`` iid vMF(``e_1``,
    ``kappa0``) spins (``kappa0 = b`` by default) with probability ``alpha``
    and ``n`` uniform spins otherwise.  Averaged over directions, the vMF
    component's law of ``r = |S_n|`` has density ``M(kappa0 r) / M(kappa0)^n``
    relative to the product measure, with ``M`` the moment generating function
    of the uniform law.  The uniform component keeps the weights
    ``exp(beta r^2 / 2n) / q(r)`` bounded at small ``r``.  Standard errors use
    the delta method for ratio estimators.
    """
    if n > IS_MAX_N:
        raise DomainError(f"importance sampling degenerates beyond n={IS_MAX_N}")
    k0 = float(derived.b if kappa0 is None else kappa0)
    law = VmfLaw(np.eye(N)[0], k0)
    log_mn = n * _log_mgf(k0, N)
    logw, h1, h2 = [], [], []
    left = m
    while left > 0:
        k = min(chunk, left)
        tilted = rng.random(k) < alpha
        spins = np.empty((k, n, N))
        kt = int(tilted.sum())
        spins[tilted] = sample_vmf(law, rng, size=kt * n).reshape(kt, n, N)
        spins[~tilted] = sample_uniform_sphere(N, rng, size=(k - kt) * n).reshape(k - kt, n, N)
        S = spins.sum(axis=1)
        r = np.sqrt(np.einsum("ij,ij->i", S, S))
        lm = np.array([_log_mgf(k0 * x, N) for x in r])
        log_q = np.logaddexp(math.log(alpha) + lm - log_mn, math.log1p(-alpha))
        logw.append(beta * r * r / (2.0 * n) - log_q)
        h1.append(beta * r / n)
        h2.append((w_of_r(r, n, beta, derived.b, derived.B) <= 0.0).astype(float))
        left -= k
    lw = np.concatenate(logw)
    w = np.exp(lw - lw.max())
    w /= w.sum()
    out = []
    for h in (np.concatenate(h1), np.concatenate(h2)):
        mu = float(np.sum(w * h))
        se = float(math.sqrt(np.sum(w**2 * (h - mu) ** 2)))
        out += [mu, se]
    return ImportanceCheck(out[0], out[1], out[2], out[3], ess=float(1.0 / np.sum(w**2)))
