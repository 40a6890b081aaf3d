import math

import numpy as np
import pytest

from wflow.basis import build_warped_trig_basis, weights
from wflow.diffeo import Diffeo
from wflow.energy import entropy_preset, zero_integrand
from wflow.measures import (GaussianSpec, PushforwardMeasure, SamplingError,
                            approximate_target, density_lipschitz_bound,
                            expectation_LamF, measure_acceptance, pushforward,
                            sample, sample_coefficients, wasserstein2)
from wflow.reference import make_gaussian_reference


def _random_measure(ref, basis, w, seed, n=4):
    spec = GaussianSpec(basis, w, conditioning="Dn", n=n)
    c = sample_coefficients(spec, np.random.default_rng(seed), 1)[0]
    return PushforwardMeasure(ref, Diffeo(basis, c))


def test_sigma_zero_beyond_truncation(basis8, w8):
    spec = GaussianSpec(basis8, w8, K=5)
    s = spec.sigma()
    assert np.all(s[:5] > 0)
    assert np.all(s[5:] == 0)


def test_conditioned_acceptance_rate_frozen(basis8, w8):
    spec = GaussianSpec(basis8, w8, conditioning="Dn", n=4)
    rate = measure_acceptance(spec, np.random.default_rng(7), proposals=10**4)
    assert rate == pytest.approx(0.8372, abs=2e-2)


def test_rejection_budget_error(basis8, w8):
    spec = GaussianSpec(basis8, w8, conditioning="Dn", n=1, max_rejections=100)
    with pytest.raises(SamplingError):
        sample_coefficients(spec, np.random.default_rng(0), 10)


def test_sampled_maps_are_members(basis8, w8):
    from wflow.diffeo import certify_Dn
    spec = GaussianSpec(basis8, w8, conditioning="Dn", n=4)
    rng = np.random.default_rng(1)
    for _ in range(20):
        phi = sample(spec, rng)
        assert certify_Dn(phi, 4).member


def test_pushforward_density_normalized(ref, basis8, w8):
    mu = _random_measure(ref, basis8, w8, seed=2)
    assert mu.normalization() == pytest.approx(1.0, abs=1e-7)


def test_density_gradient_matches_finite_differences(ref, basis8, w8):
    mu = _random_measure(ref, basis8, w8, seed=3)
    x = np.linspace(-3, 3, 200)[:, None]
    y = mu.phi.eval(x)
    h = 1e-5
    fd = (mu.density(y + h) - mu.density(y - h)) / (2 * h)
    an = mu.grad_density_at_image(x)[:, 0]
    assert np.max(np.abs(fd - an) / (1 + np.abs(an))) < 1e-8


def test_density_at_image_consistent_with_inversion(ref, basis8, w8):
    mu = _random_measure(ref, basis8, w8, seed=4)
    x = np.linspace(-2, 2, 50)[:, None]
    y = mu.phi.eval(x)
    assert np.allclose(mu.density(y), mu.density_at_image(x), rtol=1e-10)


def test_expectation_change_of_variables(ref, basis8, w8):
    mu = _random_measure(ref, basis8, w8, seed=5)
    # mean of mu equals int phi(x) rho_lambda dx
    mean = mu.expectation(lambda y: y[:, 0])
    from wflow.reference import integrate
    direct = integrate(ref, lambda x: mu.phi.eval(x)[:, 0], weighting="lambda")
    assert mean == pytest.approx(direct, rel=1e-12)


def test_wasserstein2_shift_is_exact(ref):
    basis = build_warped_trig_basis(ref, 2, include_constant=True)
    c = np.zeros(basis.K_max)
    c[-1] = 0.5
    mu = pushforward(ref, Diffeo(basis, c))
    ident = pushforward(ref, Diffeo(basis, np.zeros(basis.K_max)))
    assert wasserstein2(mu, ident) == pytest.approx(0.5, abs=1e-12)


def test_wasserstein2_scale_matches_closed_form(ref):
    nu_ref = make_gaussian_reference(1, 1.44)
    # W2(N(0,1), N(0, sigma^2)) = |sigma - 1| for centered Gaussians
    assert wasserstein2(ref, nu_ref) == pytest.approx(0.2, abs=1e-4)


def test_lipschitz_bound_dominates_grid_estimate(ref, basis8, w8):
    c4 = density_lipschitz_bound(ref, 4)
    for seed in range(10):
        mu = _random_measure(ref, basis8, w8, seed=100 + seed)
        assert mu.density_lipschitz_grid() <= c4


def test_expectation_LamF_zero_energy_reduces_to_mean(basis8, w8):
    spec = GaussianSpec(basis8, w8, conditioning="Dn", n=3)
    u = lambda mu: mu.expectation(lambda y: np.tanh(y[:, 0]))
    est = expectation_LamF(spec, zero_integrand(), u, 200,
                           np.random.default_rng(8))
    # with F = 0 every weight is 1: the ESS equals the sample count
    assert est.ess == pytest.approx(200.0, rel=1e-12)
    assert abs(est.estimate) < 5 * max(est.std_error, 1e-3)


def test_approximate_target_self_is_exact(ref, basis16):
    ident_mu = pushforward(ref, Diffeo(basis16, np.zeros(basis16.K_max)))
    res = approximate_target(ident_mu, ref, basis16)
    assert res.w2 < 1e-10
    assert res.theta == 1.0


def test_approximate_target_shift(ref):
    basis = build_warped_trig_basis(ref, 8, include_constant=True)
    c = np.zeros(basis.K_max)
    c[-1] = 0.5
    target = pushforward(ref, Diffeo(basis, c))
    res = approximate_target(target, ref, basis)
    assert res.w2 < 1e-10


def test_quantile_pushes_forward(ref, basis8, w8):
    mu = _random_measure(ref, basis8, w8, seed=6)
    u = np.linspace(0.05, 0.95, 19)
    assert np.allclose(mu.quantile(u),
                       mu.phi.eval(ref.quantile(u)[:, None])[:, 0],
                       rtol=1e-12)
