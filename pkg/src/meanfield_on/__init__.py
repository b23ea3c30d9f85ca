"""Mean-field O(N) spin model: Gibbs sampling, exchangeable pairs and normal-approximation rates."""

__version__ = "0.1.0"

from .dynamics import (
    ChainRun,
    PairSample,
    SpinConfiguration,
    exchangeable_pair_step,
    heat_bath_step,
    run_chain,
    sample_pair_deltas,
)
from .errors import (
    BesselOverflowError,
    ConfigError,
    ConsistencyError,
    DomainError,
    EstimationError,
    NumericalError,
    ParameterError,
)
from .model import DerivedConstants, ModelParams, derive_constants, solve_b, variance_B2
from .oracle import (
    RadialLaw,
    exact_kolmogorov_to_normal,
    gibbs_radial_law,
    importance_sampling_check,
    radial_density_product,
    tilt_gibbs,
    uniform_char_fn,
)
from .special_functions import (
    bessel_ratio,
    bessel_ratio_deriv,
    g_second_deriv,
    inverse_bessel_ratio,
    ratio_over_x_deriv,
    verify_lemma_bounds,
)
from .sphere import VmfLaw, sample_uniform_sphere, sample_vmf, vmf_moments
from .stein import (
    RateFit,
    RateTable,
    SteinTerms,
    cond_mean_delta,
    cond_second_moment_delta,
    empirical_kolmogorov,
    empirical_wasserstein,
    rate_fit,
    stein_terms,
)
