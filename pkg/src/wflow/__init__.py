"""Stochastic gradient flows on the space of probability measures, realized
at desk scale through diffeomorphism pushforwards of a Gaussian base."""

from .basis import VectorFieldBasis, build_warped_trig_basis, gram_check, weights
from .diffeo import Diffeo, certify_Dn, d_D, d_D2, diffeo_from_json
from .dynamics import (SGFConfig, martingale_diagnostics, run_deterministic_flow,
                       run_sgf)
from .energy import (EnergyIntegrand, W_direct, W_pushforward, check_C2,
                     entropy_preset, estimate_ZF, make_preset,
                     porous_media_preset, vq_preset, zero_integrand)
from .gradient import (CylinderFunction, GammaWeight, H_F, diff_fd,
                       mollified_gradient, pairing, square_field)
from .measures import (GaussianSpec, PushforwardMeasure, approximate_target,
                       expectation_LamF, pushforward, sample, wasserstein2)
from .pme import coefficients_from_forms, heat_coefficients, make_pme_grid, solve
from .reference import (ReferenceMeasure, integrate, make_gaussian_reference,
                        make_gaussian_mixture_reference, validate_reference)

__version__ = "0.1.0"
