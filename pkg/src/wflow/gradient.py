"""Intrinsic derivatives of energy functionals on measure space.

Three routes to the same object: the finite-difference directional
derivative along pushforward perturbations mu o (id + eps dir)^-1, the
closed-form field H_F(x, mu) = grad1_d2F(x, rho_mu) + d2d2F(x, rho_mu)
grad rho_mu, and a mollified convolution oracle. Their pairwise agreement
is the library's central consistency check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .diffeo import ComposedMap, PerturbedIdentity
from .energy import S_FLOOR, EnergyIntegrand, W_pushforward
from .measures import PushforwardMeasure


class StepSizeError(ValueError):
    """Probe step too large for the certified-invertibility margin."""


@dataclass
class CylinderFunction:
    """u(mu) = g(mu(h_1), ..., mu(h_m)) with Du(mu)(x) = sum_i d_i g * grad h_i."""

    g: Callable[[np.ndarray], float]
    grad_g: Callable[[np.ndarray], np.ndarray]
    h: Sequence[Callable[[np.ndarray], np.ndarray]]
    grad_h: Sequence[Callable[[np.ndarray], np.ndarray]]
    name: str = "u"

    def moments(self, mu: PushforwardMeasure) -> np.ndarray:
        return np.array([mu.expectation(hi) for hi in self.h])

    def value(self, mu: PushforwardMeasure) -> float:
        return float(self.g(self.moments(mu)))

    def Du(self, mu: PushforwardMeasure) -> Callable[[np.ndarray], np.ndarray]:
        w = np.asarray(self.grad_g(self.moments(mu)), dtype=float)
        return self.Du_given_moments(w)

    def Du_given_moments(self, grad_g_vals: np.ndarray):
        def field_fn(x: np.ndarray) -> np.ndarray:
            x = np.atleast_2d(np.asarray(x, dtype=float))
            out = np.zeros_like(x)
            for wi, dhi in zip(grad_g_vals, self.grad_h):
                if wi != 0.0:
                    out += wi * np.atleast_2d(dhi(x))
            return out
        return field_fn


def moment_observable(h: Callable, grad_h: Callable, name: str = "u") -> CylinderFunction:
    """The linear cylinder function u(mu) = mu(h)."""
    return CylinderFunction(g=lambda v: float(v[0]),
                            grad_g=lambda v: np.array([1.0]),
                            h=[h], grad_h=[grad_h], name=name)


@dataclass
class GammaWeight:
    """Mobility weight gamma(x, rho_mu(x)) clamped into [1/c, c]."""

    raw: Callable[[np.ndarray, np.ndarray], np.ndarray]
    c: float = 1.0
    clamp_events: int = field(default=0, compare=False)

    def __call__(self, x: np.ndarray, s: np.ndarray) -> np.ndarray:
        vals = np.asarray(self.raw(x, s), dtype=float)
        clipped = np.clip(vals, 1.0 / self.c, self.c)
        self.clamp_events += int(np.sum(clipped != vals))
        return clipped


def identity_gamma() -> GammaWeight:
    return GammaWeight(raw=lambda x, s: np.ones_like(s), c=1.0)


def gamma_from_integrand(F: EnergyIntegrand, c: float = 4.0) -> GammaWeight:
    """gamma(x, mu) = b(rho_mu(x)) for the porous-media preset, else 1."""
    if F.gamma is None:
        return identity_gamma()
    return GammaWeight(raw=F.gamma, c=c)


@dataclass
class GradientField:
    """Vector field x -> R^d attached to a specific measure."""

    field_fn: Callable[[np.ndarray], np.ndarray]
    provenance: str
    mu: PushforwardMeasure

    def __call__(self, y: np.ndarray) -> np.ndarray:
        return self.field_fn(y)

    def l2_mu_norm(self) -> float:
        val = self.mu.expectation(
            lambda y: np.sum(np.atleast_2d(self.field_fn(y)) ** 2, axis=1))
        return math.sqrt(max(val, 0.0))


# -- finite-difference directional derivative --------------------------------

def diff_fd(F: EnergyIntegrand, mu: PushforwardMeasure, direction,
            eps: float = 1e-4, richardson: bool = False,
            unbounded_probe: bool = False) -> float:
    """Central difference of eps -> W_F(mu o (id + eps dir)^-1) at 0.

    The perturbed measure is the pushforward of the base under
    (id + eps dir) o phi, evaluated without inversion.
    """
    lip = getattr(direction, "lip_bound", None)
    if lip is None and not unbounded_probe:
        raise StepSizeError(
            "direction carries no Lipschitz certificate; pass "
            "unbounded_probe=True to probe anyway")
    if lip is not None and eps * lip >= 0.5:
        raise StepSizeError(
            f"step eps = {eps} times Lip(dir) = {lip:.3g} leaves the "
            "certified-invertibility margin; reduce eps")

    def W_at(e: float) -> float:
        pert = ComposedMap(PerturbedIdentity(direction, e), mu.phi)
        return W_pushforward(F, mu.ref, pert)

    def central(e: float) -> float:
        return (W_at(e) - W_at(-e)) / (2 * e)

    if not richardson:
        return central(eps)
    d1, d2 = central(eps), central(eps / 2)
    return (4 * d2 - d1) / 3


# -- closed-form gradient -----------------------------------------------------

def H_F_at_image(F: EnergyIntegrand, mu: PushforwardMeasure,
                 x: np.ndarray) -> np.ndarray:
    """H_F(phi(x), mu) from preimages x; no inversion."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = mu.phi.eval(x)
    s = mu.density_at_image(x)
    gs = mu.grad_density_at_image(x)
    live = s >= S_FLOOR
    out = np.asarray(F.grad1_d2F(y, s), dtype=float).copy()
    out += F.d2d2F(y, s)[:, None] * gs
    out[~live] = 0.0
    return out


def H_F(F: EnergyIntegrand, mu: PushforwardMeasure) -> GradientField:
    def field_fn(y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return H_F_at_image(F, mu, mu.phi.invert(y))
    return GradientField(field_fn=field_fn, provenance="closed-form", mu=mu)


def pairing(F: EnergyIntegrand, mu: PushforwardMeasure, direction,
            gamma: GammaWeight | None = None) -> float:
    """mu(gamma <H_F, dir>) by quadrature over base-measure preimages."""
    grid = mu.ref.grid
    x = grid.nodes
    y = mu.phi.eval(x)
    H = H_F_at_image(F, mu, x)
    dirv = np.atleast_2d(direction.eval(y))
    inner = np.sum(H * dirv, axis=1)
    if gamma is not None:
        inner = inner * gamma(y, mu.density_at_image(x))
    return float(np.sum(grid.weights * mu.ref.density(x) * inner))


# -- mollified oracle ---------------------------------------------------------

def _bump(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    inside = np.abs(z) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - z[inside] ** 2))
    return out


_BUMP_Z = np.linspace(-1.0, 1.0, 20001)
_BUMP_NORM = float(np.trapezoid(_bump(_BUMP_Z), _BUMP_Z))


def mollified_gradient(F: EnergyIntegrand, mu: PushforwardMeasure, m: int,
                       n_fine: int = 2**15) -> GradientField:
    """Du_m(x) = int [grad1_d2F(., rho_m) + d2d2F(., rho_m) rho_m'](y)
    tau_m(y - x) dy with rho_m = tau_m * mu (d = 1).

    Both convolutions are trapezoid sums on a fine uniform grid; the bump
    tau is C-infinity with support [-1, 1], so the quadrature converges
    faster than any power of the spacing.
    """
    if mu.dim != 1:
        raise ValueError("mollified oracle implemented for d = 1")
    if m < 1:
        raise ValueError("m must be a positive integer")
    win = mu.ref.grid.window[0]
    pad = 2.0 / m
    y = np.linspace(win[0] - pad, win[1] + pad, n_fine)
    h = y[1] - y[0]
    rho = _density_on_line(mu, y)

    half = max(int(math.ceil(1.0 / (m * h))), 2)
    z = np.arange(-half, half + 1) * h
    ker = _bump(m * z) * m / _BUMP_NORM
    ker = ker / (np.sum(ker) * h)          # exact discrete unit mass
    dker = _bump_prime(m * z) * m**2 / _BUMP_NORM

    rho_m = np.convolve(rho, ker, mode="same") * h
    drho_m = np.convolve(rho, dker, mode="same") * h

    live = rho_m >= S_FLOOR
    s = np.where(live, rho_m, 1.0)
    G = (np.asarray(F.grad1_d2F(y[:, None], s), dtype=float)[:, 0]
         + F.d2d2F(y[:, None], s) * drho_m)
    G[~live] = 0.0
    Du = np.convolve(G, ker, mode="same") * h
    spline = CubicSpline(y, Du)

    def field_fn(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return spline(x[:, 0])[:, None]

    return GradientField(field_fn=field_fn, provenance=f"mollified(m={m})",
                         mu=mu)


def _bump_prime(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    inside = np.abs(z) < 1.0
    zi = z[inside]
    out[inside] = np.exp(-1.0 / (1.0 - zi**2)) * (-2 * zi / (1.0 - zi**2) ** 2)
    return out


def _density_on_line(mu: PushforwardMeasure, y: np.ndarray) -> np.ndarray:
    """rho_mu on a 1-d grid, zero outside the image of the window."""
    lo, hi = mu.phi.eval(mu.ref.grid.window[0][:, None])[:, 0]
    inside = (y > lo) & (y < hi)
    out = np.zeros_like(y)
    if np.any(inside):
        out[inside] = mu.density(y[inside, None])
    return out


# -- square field -------------------------------------------------------------

def square_field(u: CylinderFunction, v: CylinderFunction,
                 mu: PushforwardMeasure,
                 gamma: GammaWeight | None = None) -> float:
    """Gamma(u, v)(mu) = mu(gamma <Du(mu), Dv(mu)>)."""
    grid = mu.ref.grid
    x = grid.nodes
    y = mu.phi.eval(x)
    Du = np.atleast_2d(u.Du(mu)(y))
    Dv = np.atleast_2d(v.Du(mu)(y))
    inner = np.sum(Du * Dv, axis=1)
    if gamma is not None:
        inner = inner * gamma(y, mu.density_at_image(x))
    return float(np.sum(grid.weights * mu.ref.density(x) * inner))
