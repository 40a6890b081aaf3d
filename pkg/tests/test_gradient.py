import numpy as np
import pytest

from wflow.diffeo import BasisField, Diffeo
from wflow.energy import entropy_preset, porous_media_preset
from wflow.gradient import (CylinderFunction, GammaWeight, H_F, StepSizeError,
                            diff_fd, gamma_from_integrand, mollified_gradient,
                            moment_observable, pairing, square_field)
from wflow.measures import GaussianSpec, PushforwardMeasure, sample_coefficients


def _random_measure(ref, basis, w, seed, n=3):
    spec = GaussianSpec(basis, w, conditioning="Dn", n=n)
    c = sample_coefficients(spec, np.random.default_rng(seed), 1)[0]
    return PushforwardMeasure(ref, Diffeo(basis, c))


def _direction(basis, seed):
    rng = np.random.default_rng(seed)
    dc = rng.standard_normal(min(8, basis.K_max))
    dc = np.pad(dc / np.linalg.norm(dc), (0, basis.K_max - dc.size))
    return BasisField(basis, dc)


def test_entropy_gradient_of_base_is_score(ref, basis8):
    # for F = s ln s - s at mu = N(0,1): H_F = grad rho / rho = -x
    mu = PushforwardMeasure(ref, Diffeo(basis8, np.zeros(basis8.K_max)))
    field = H_F(entropy_preset(), mu)
    y = np.linspace(-3, 3, 41)[:, None]
    assert np.allclose(field(y)[:, 0], -y[:, 0], atol=1e-9)


def test_gradient_identity_spot_checks(ref, basis8, w8):
    F = entropy_preset()
    for seed in range(5):
        mu = _random_measure(ref, basis8, w8, seed=seed)
        direction = _direction(basis8, 50 + seed)
        fd = diff_fd(F, mu, direction, eps=1e-4)
        pr = pairing(F, mu, direction)
        assert abs(fd - pr) <= 1e-3 * (1 + abs(pr))


def test_step_size_guard(ref, basis8, w8):
    mu = _random_measure(ref, basis8, w8, seed=1)
    direction = _direction(basis8, 2)
    with pytest.raises(StepSizeError):
        diff_fd(entropy_preset(), mu, direction,
                eps=1.0 / direction.lip_bound)

    class Bare:
        def eval(self, x):
            return np.atleast_2d(x)
    with pytest.raises(StepSizeError):
        diff_fd(entropy_preset(), mu, Bare(), eps=1e-4)


def test_gamma_clamp_sandwich():
    gam = GammaWeight(raw=lambda x, s: s, c=4.0)
    s = np.array([1e-9, 0.5, 1.0, 100.0])
    vals = gam(np.zeros((4, 1)), s)
    assert np.all(vals >= 0.25 - 1e-15)
    assert np.all(vals <= 4.0 + 1e-15)
    assert gam.clamp_events > 0


def test_pairing_linear_in_gamma(ref, basis8, w8):
    mu = _random_measure(ref, basis8, w8, seed=3)
    direction = _direction(basis8, 4)
    F = porous_media_preset()
    g1 = GammaWeight(raw=lambda x, s: np.ones_like(s), c=10.0)
    g2 = GammaWeight(raw=lambda x, s: 2.0 * np.ones_like(s), c=10.0)
    p1 = pairing(F, mu, direction, gamma=g1)
    p2 = pairing(F, mu, direction, gamma=g2)
    assert p2 == pytest.approx(2.0 * p1, rel=1e-12)


def test_square_field_product_rule(ref, basis8, w8):
    mu = _random_measure(ref, basis8, w8, seed=5)
    h1 = (np.tanh, lambda y: 1.0 / np.cosh(y) ** 2)
    h2 = (np.cos, lambda y: -np.sin(y))
    h3 = (np.sin, lambda y: np.cos(y))
    u = moment_observable(*h1, name="u")
    v = moment_observable(*h2, name="v")
    w_obs = moment_observable(*h3, name="w")
    uv = CylinderFunction(
        g=lambda m: float(m[0] * m[1]),
        grad_g=lambda m: np.array([m[1], m[0]]),
        h=[h1[0], h2[0]], grad_h=[h1[1], h2[1]], name="uv")
    lhs = square_field(uv, w_obs, mu)
    rhs = (u.value(mu) * square_field(v, w_obs, mu)
           + v.value(mu) * square_field(u, w_obs, mu))
    assert lhs == pytest.approx(rhs, abs=1e-8)


def test_square_field_symmetric_nonnegative(ref, basis8, w8):
    mu = _random_measure(ref, basis8, w8, seed=6)
    u = moment_observable(np.tanh, lambda y: 1.0 / np.cosh(y) ** 2)
    v = moment_observable(np.cos, lambda y: -np.sin(y))
    assert square_field(u, v, mu) == pytest.approx(square_field(v, u, mu),
                                                   rel=1e-12)
    assert square_field(u, u, mu) >= 0.0


def test_mollified_gradient_converges(ref, basis8):
    F = entropy_preset()
    mu = PushforwardMeasure(ref, Diffeo(basis8, np.zeros(basis8.K_max)))
    exact = H_F(F, mu)
    y = ref.grid.nodes
    dens_w = ref.grid.weights * ref.density(y)
    errs = []
    for m in (4, 16):
        approx = mollified_gradient(F, mu, m)
        diff = (approx(y) - exact(y))[:, 0]
        errs.append(float(np.sqrt(np.sum(dens_w * diff**2))))
    assert errs[1] < errs[0]
    assert errs[1] < 1e-2


def test_richardson_improves_fd(ref, basis8, w8):
    mu = _random_measure(ref, basis8, w8, seed=7)
    direction = _direction(basis8, 8)
    F = entropy_preset()
    pr = pairing(F, mu, direction)
    plain = diff_fd(F, mu, direction, eps=1e-2)
    rich = diff_fd(F, mu, direction, eps=1e-2, richardson=True)
    assert abs(rich - pr) <= abs(plain - pr) + 1e-12
