import dataclasses
import math

import numpy as np
import pytest

from wflow.reference import (IntegrationError, integrate, make_gaussian_reference,
                             make_gaussian_mixture_reference, make_grid,
                             validate_reference)


def test_density_at_origin(ref):
    assert ref.density(np.zeros((1, 1)))[0] == pytest.approx(
        1.0 / math.sqrt(2 * math.pi), rel=1e-14)


def test_grad_density_matches_closed_form(ref):
    x = np.array([[1.0], [-0.3], [2.7]])
    expected = -x[:, 0] * ref.density(x)
    assert np.allclose(ref.grad_density(x)[:, 0], expected, rtol=1e-13)


def test_normalization_within_tail(ref):
    total = integrate(ref, lambda x: np.ones(x.shape[0]), ref.grid,
                      weighting="lambda")
    assert 1.0 - ref.tail_cutoff <= total <= 1.0 + 1e-12


def test_second_moment(ref):
    m2 = integrate(ref, lambda x: x[:, 0] ** 2, ref.grid, weighting="lambda")
    assert m2 == pytest.approx(1.0, abs=1e-6)


def test_log_density_mean_is_negative_differential_entropy(ref):
    # E[ln rho] = -(1/2) ln(2 pi) - 1/2 for the standard normal
    val = integrate(ref, lambda x: ref.log_density(x), ref.grid,
                    weighting="lambda")
    assert val == pytest.approx(-0.5 * math.log(2 * math.pi) - 0.5, abs=1e-9)


def test_non_finite_integrand_rejected(ref):
    def bad(x):
        out = np.ones(x.shape[0])
        out[0] = np.inf
        return out
    with pytest.raises(IntegrationError):
        integrate(ref, bad, ref.grid)


def test_grid_refinement_stable(ref):
    fine = ref.grid.refine()
    a = integrate(ref, lambda x: np.ones(x.shape[0]), ref.grid,
                  weighting="lambda")
    b = integrate(ref, lambda x: np.ones(x.shape[0]), fine,
                  weighting="lambda")
    assert abs(a - b) < 1e-8


def test_weights_sum_to_volume(ref):
    vol = float(np.prod(ref.grid.window[:, 1] - ref.grid.window[:, 0]))
    assert np.sum(ref.grid.weights) == pytest.approx(vol, rel=1e-12)


def test_quantile_cdf_roundtrip(ref):
    u = np.linspace(1e-4, 1 - 1e-4, 1000)
    assert np.max(np.abs(ref.cdf(ref.quantile(u)) - u)) < 1e-10


def test_validate_reference_passes(ref):
    report = validate_reference(ref)
    assert report.passed


def test_validate_reference_flags_zero_density(ref):
    bad = dataclasses.replace(
        ref, density=lambda x: np.abs(np.atleast_2d(x)[:, 0]) * ref.density(x))
    report = validate_reference(bad)
    assert not report.passed


def test_sampler_ks_statistic(ref):
    n = 20000
    xs = ref.sampler(n, np.random.default_rng(5))[:, 0]
    u = np.sort(ref.cdf(xs))
    grid = (np.arange(n) + 1) / n
    ks = max(np.max(np.abs(u - grid)), np.max(np.abs(u - grid + 1.0 / n)))
    assert ks <= 1.63 / math.sqrt(n)      # 1% KS critical value


def test_mixture_density_integrates_to_one():
    mix = make_gaussian_mixture_reference([0.3, 0.7], [-1.0, 2.0], [0.8, 1.2])
    total = integrate(mix, lambda x: np.ones(x.shape[0]), mix.grid,
                      weighting="lambda")
    assert total == pytest.approx(1.0, abs=1e-7)


def test_dim_2_smoke():
    ref2 = make_gaussian_reference(2, 1.0)
    total = integrate(ref2, lambda x: np.ones(x.shape[0]), ref2.grid,
                      weighting="lambda")
    assert total == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        make_gaussian_reference(3, 1.0)
    with pytest.raises(ValueError):
        make_gaussian_reference(1, -1.0)
