import math

import numpy as np
import pytest

from wflow.basis import build_warped_trig_basis, gram_check, gram_matrix, weights
from wflow.reference import make_gaussian_reference


def test_first_lipschitz_certificate(basis8):
    # 2 pi sqrt(2) sup rho = sqrt(4 pi) for the standard normal
    assert basis8.lip[0] == pytest.approx(math.sqrt(4 * math.pi), rel=1e-12)


def test_gram_identity(basis16):
    off, norm_dev = gram_check(basis16)
    assert off < 1e-6
    assert norm_dev < 1e-6


def test_certified_bounds_dominate_sampled_values(basis8, ref):
    x = np.linspace(*ref.grid.window[0], 100000)
    for k in range(1, basis8.K_max + 1):
        g = basis8.jacobian(k, x[:, None])[:, 0, 0]
        h = basis8.hessian(k, x[:, None])[:, 0, 0, 0]
        v = basis8.eval(k, x[:, None])[:, 0]
        assert np.max(np.abs(g)) <= basis8.lip[k - 1] * (1 + 1e-12)
        assert np.max(np.abs(h)) <= basis8.hess[k - 1] * (1 + 1e-12)
        assert np.max(np.abs(v)) <= basis8.sup[k - 1] * (1 + 1e-12)


def test_jacobian_matches_finite_differences(basis8):
    x = np.linspace(-2.5, 2.5, 64)
    h = 1e-6
    for k in (1, 2, 7):
        fd = (basis8.eval(k, (x + h)[:, None]) -
              basis8.eval(k, (x - h)[:, None]))[:, 0] / (2 * h)
        an = basis8.jacobian(k, x[:, None])[:, 0, 0]
        assert np.allclose(fd, an, atol=1e-6)


def test_weight_formulas(basis8):
    w = weights(basis8, "gradient-only")
    k = np.arange(1, basis8.K_max + 1)
    expected = np.maximum(2.0**k * basis8.lip**2, 1.0)
    assert np.array_equal(w.a, expected)
    assert np.array_equal(w.b, w.a * 2.0**k)
    assert np.all(w.a >= 1.0)
    assert np.sum(w.a / w.b) <= 2.0


def test_weight_variant_includes_hessian(basis8):
    g = weights(basis8, "gradient-only")
    gh = weights(basis8, "gradient-and-hessian")
    k = np.arange(1, basis8.K_max + 1)
    expected = np.maximum(2.0**k * np.maximum(basis8.lip, basis8.hess) ** 2, 1.0)
    assert np.array_equal(gh.a, expected)
    assert np.all(gh.a >= g.a)
    with pytest.raises(ValueError):
        weights(basis8, "no-such-variant")


def test_constant_field_appended(ref):
    basis = build_warped_trig_basis(ref, 4, include_constant=True)
    assert basis.K_max == 5
    x = np.linspace(-3, 3, 11)[:, None]
    assert np.allclose(basis.eval(5, x), 1.0)
    assert np.allclose(basis.jacobian(5, x), 0.0)
    G = gram_matrix(basis)
    assert np.max(np.abs(G - np.eye(5))) < 1e-6


def test_dim_2_gram_smoke():
    ref2 = make_gaussian_reference(2, 1.0)
    basis2 = build_warped_trig_basis(ref2, 4)
    off, norm_dev = gram_check(basis2)
    assert off < 1e-6
    assert norm_dev < 1e-6
