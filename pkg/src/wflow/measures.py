"""Gaussian measures on map space and their pushforwards to P_2(R^d).

The coefficient Gaussian puts N(0, 1/b_k) on each basis coefficient; the
map is phi = id + sum c_k phi_k. Conditioning to the certified sets D^(n)
is by rejection, so the conditioned law is exact. Pushforward densities
follow the change-of-variables rule rho_mu = (rho_lambda / det grad phi)
o phi^-1 with the matching closed-form gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

from .basis import GaussWeights, VectorFieldBasis
from .diffeo import Diffeo, certify_Dn, certify_Dn_batch
from .energy import EnergyIntegrand, EstimationError, W_pushforward
from .reference import ReferenceMeasure, make_grid

DEFAULT_MAX_REJECTIONS = 10**6
_REJECTION_BATCH = 4096


class SamplingError(RuntimeError):
    pass


@dataclass
class GaussianSpec:
    """Law of phi = id + sum_{k<=K} c_k phi_k, c_k ~ N(0, 1/b_k), optionally
    conditioned to D1 (kappa < 1) or D^(n)."""

    basis: VectorFieldBasis
    weights: GaussWeights
    K: int | None = None
    conditioning: str = "none"          # "none" | "D1" | "Dn"
    n: int | None = None
    max_rejections: int = DEFAULT_MAX_REJECTIONS
    proposals: int = field(default=0, compare=False)
    accepts: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.K is None:
            self.K = self.basis.K_max
        if not 0 <= self.K <= self.basis.K_max:
            raise ValueError(f"K must lie in [0, {self.basis.K_max}]")
        if self.conditioning not in ("none", "D1", "Dn"):
            raise ValueError(f"unknown conditioning {self.conditioning!r}")
        if self.conditioning == "Dn" and not (self.n and self.n >= 1):
            raise ValueError("Dn conditioning requires n >= 1")
        self._origin_values = np.stack(
            [self.basis.eval(k, np.zeros((1, self.basis.dim)))[0]
             for k in range(1, self.basis.K_max + 1)])

    @property
    def acceptance_rate(self) -> float:
        return self.accepts / self.proposals if self.proposals else math.nan

    def sigma(self) -> np.ndarray:
        """Coefficient standard deviations, zero beyond the truncation level."""
        s = np.zeros(self.basis.K_max)
        s[:self.K] = 1.0 / np.sqrt(self.weights.b[:self.K])
        return s

    def accepted_mask(self, coeffs: np.ndarray) -> np.ndarray:
        """Vectorized conditioning indicator for coefficient rows (M, K_max)."""
        coeffs = np.atleast_2d(coeffs)
        if self.conditioning == "none":
            return np.ones(coeffs.shape[0], dtype=bool)
        if self.conditioning == "D1":
            return (np.abs(coeffs) @ self.basis.lip) < 1.0
        return certify_Dn_batch(coeffs, self.basis, self.n,
                                origin_values=self._origin_values)


def sample_coefficients(spec: GaussianSpec, rng: np.random.Generator,
                        count: int = 1) -> np.ndarray:
    """(count, K_max) conditioned coefficient draws by rejection."""
    sigma = spec.sigma()
    out = np.empty((count, spec.basis.K_max))
    got = 0
    tried = 0
    while got < count:
        m = min(_REJECTION_BATCH, max(4 * (count - got), 64))
        props = rng.standard_normal((m, spec.basis.K_max)) * sigma
        tried += m
        ok = spec.accepted_mask(props)
        take = props[ok][:count - got]
        out[got:got + take.shape[0]] = take
        got += take.shape[0]
        spec.proposals += m
        spec.accepts += int(np.sum(ok))
        if tried > spec.max_rejections and got < count:
            raise SamplingError(
                f"rejection budget exhausted: {got}/{count} accepted in "
                f"{tried} proposals (rate {got / tried:.3g})")
    return out


def sample(spec: GaussianSpec, rng: np.random.Generator) -> Diffeo:
    coeffs = sample_coefficients(spec, rng, 1)[0]
    return Diffeo(spec.basis, coeffs)


def measure_acceptance(spec: GaussianSpec, rng: np.random.Generator,
                       proposals: int = 10**4) -> float:
    """Monte Carlo acceptance rate of the conditioning event."""
    sigma = spec.sigma()
    props = rng.standard_normal((proposals, spec.basis.K_max)) * sigma
    return float(np.mean(spec.accepted_mask(props)))


class PushforwardMeasure:
    """mu = lambda o phi^-1 with closed-form density and density gradient."""

    def __init__(self, ref: ReferenceMeasure, phi: Diffeo):
        self.ref = ref
        self.phi = phi
        self.dim = ref.dim

    # evaluation at image points y = phi(x) given preimages x; these avoid
    # any inversion and are the hot-path entry points
    def density_at_image(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.ref.density(x) / self.phi.det_jacobian(x)

    def grad_density_at_image(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        rho = self.ref.density(x)
        grho = self.ref.grad_density(x)
        det = self.phi.det_jacobian(x)
        gdet = self.phi.grad_det_jacobian(x)
        if self.dim == 1:
            J = self.phi.jacobian(x)[:, 0, 0]
            val = grho[:, 0] / J**2 - rho * gdet[:, 0] / J**3
            return val[:, None]
        Jinv = np.linalg.inv(self.phi.jacobian(x))
        vec = grho / det[:, None] - rho[:, None] * gdet / det[:, None] ** 2
        return np.einsum("nab,nb->na", np.transpose(Jinv, (0, 2, 1)), vec)

    def density(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return self.density_at_image(self.phi.invert(y))

    def grad_density(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return self.grad_density_at_image(self.phi.invert(y))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.ref.sampler is None:
            raise SamplingError("base measure has no sampler")
        return self.phi.eval(self.ref.sampler(n, rng))

    def expectation(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        """mu(f) = int f(phi(x)) d lambda(x), by quadrature."""
        grid = self.ref.grid
        vals = np.asarray(f(self.phi.eval(grid.nodes)), dtype=float)
        return float(np.sum(grid.weights * self.ref.density(grid.nodes) * vals))

    def normalization(self) -> float:
        """int rho_mu dx over the image of the window."""
        grid = self.ref.grid
        det = self.phi.det_jacobian(grid.nodes)
        return float(np.sum(grid.weights * self.density_at_image(grid.nodes) * det))

    def quantile(self, u: np.ndarray) -> np.ndarray:
        """d = 1 only: quantile_mu = phi o quantile_lambda (phi monotone)."""
        if self.dim != 1 or self.ref.quantile is None:
            raise ValueError("quantile requires a 1-d base with quantile")
        q = np.asarray(self.ref.quantile(u), dtype=float)
        return self.phi.eval(q[:, None])[:, 0]

    def density_lipschitz_grid(self, n_points: int = 2000) -> float:
        """Max |grad rho_mu| over the image of a uniform window grid."""
        win = self.ref.grid.window
        grid = make_grid(win, n_points) if self.dim == 1 else self.ref.grid
        g = self.grad_density_at_image(grid.nodes)
        return float(np.max(np.linalg.norm(np.atleast_2d(g), axis=1)))


def pushforward(ref: ReferenceMeasure, phi: Diffeo) -> PushforwardMeasure:
    return PushforwardMeasure(ref, phi)


def density_lipschitz_bound(ref: ReferenceMeasure, n: int) -> float:
    """Certified Lipschitz constant of rho_mu over phi in D^(n), d = 1.

    From the density-gradient formula: |rho_mu'| <= sup|rho'| * n^2
    + sup rho * n * n^3, using 1/phi' <= n and |phi''| <= n on D^(n).
    """
    if ref.dim != 1:
        raise ValueError("closed-form bound implemented for d = 1 only")
    return ref.sup_grad_density * n**2 + ref.sup_density * n**4


# -- Wasserstein distance ----------------------------------------------------

def wasserstein2(mu, nu, n_quantile: int = 2**13, n_samples: int = 512,
                 rng: np.random.Generator | None = None) -> float:
    """W_2 distance. d = 1: exact L^2 distance of quantile functions on a
    uniform grid in (0,1). Otherwise: empirical distance of n_samples-point
    clouds via exact assignment."""
    dim1 = getattr(mu, "dim", None) == 1 and getattr(nu, "dim", None) == 1
    if dim1 and _quantile_fn(mu) and _quantile_fn(nu):
        u = (np.arange(n_quantile) + 0.5) / n_quantile
        q1 = np.asarray(_quantile_fn(mu)(u), dtype=float).ravel()
        q2 = np.asarray(_quantile_fn(nu)(u), dtype=float).ravel()
        return float(np.sqrt(np.mean((q1 - q2) ** 2)))
    rng = rng or np.random.default_rng(0)
    xs = _draw(mu, n_samples, rng)
    ys = _draw(nu, n_samples, rng)
    cost = np.sum((xs[:, None, :] - ys[None, :, :]) ** 2, axis=2)
    r, c = linear_sum_assignment(cost)
    return float(np.sqrt(cost[r, c].mean()))


def _quantile_fn(m):
    q = getattr(m, "quantile", None)
    return q if callable(q) else None


def _draw(m, n: int, rng: np.random.Generator) -> np.ndarray:
    if hasattr(m, "sample"):
        return np.atleast_2d(m.sample(n, rng))
    if getattr(m, "sampler", None) is not None:
        return np.atleast_2d(m.sampler(n, rng))
    raise SamplingError("measure admits neither sampling nor quantiles")


# -- Gibbs expectations by importance sampling -------------------------------

@dataclass
class ISEstimate:
    estimate: float
    std_error: float
    ess: float
    n: int


def expectation_LamF(spec: GaussianSpec, F: EnergyIntegrand,
                     u: Callable[[PushforwardMeasure], float], N: int,
                     rng: np.random.Generator) -> ISEstimate:
    """Self-normalized importance estimate of the Gibbs expectation of u
    under the reweighted law with density prop. to exp(-W_F)."""
    ref = spec.basis.ref
    coeffs = sample_coefficients(spec, rng, N)
    vals = np.empty(N)
    logw = np.empty(N)
    for i in range(N):
        phi = Diffeo(spec.basis, coeffs[i])
        logw[i] = -W_pushforward(F, ref, phi)
        vals[i] = u(PushforwardMeasure(ref, phi))
    if not np.all(np.isfinite(logw)):
        raise EstimationError("non-finite Gibbs log-weight")
    w = np.exp(logw - np.max(logw))
    sw = float(np.sum(w))
    if sw <= 0:
        raise EstimationError("all Gibbs weights vanished")
    est = float(np.sum(w * vals) / sw)
    # delta-method variance of the self-normalized ratio
    se = float(np.sqrt(np.sum(w**2 * (vals - est) ** 2)) / sw)
    ess = float(sw**2 / np.sum(w**2))
    return ISEstimate(estimate=est, std_error=se, ess=ess, n=N)


# -- transport-based approximation of target measures -----------------------

class ApproximationError(RuntimeError):
    pass


@dataclass
class ApproximationResult:
    phi: Diffeo
    w2: float
    theta: float
    kappa_raw: float
    certificate: object


def approximate_target(target, ref: ReferenceMeasure,
                       basis: VectorFieldBasis, m: int | None = None,
                       n: int = 100) -> ApproximationResult:
    """Build phi with pushforward of the base close to the target (d = 1).

    Constructs the monotone transport T = quantile_target o cdf_lambda,
    optionally mollifies T - id at bandwidth 1/m, projects onto the basis
    span, then blends toward the identity just enough to restore the
    contraction certificate with margin 1/n.
    """
    if ref.dim != 1:
        raise ApproximationError("transport construction implemented for d = 1")
    qt = _quantile_fn(target)
    if qt is None:
        raise ApproximationError("target must provide a quantile function")
    grid = ref.grid
    x = grid.nodes[:, 0]
    u = np.clip(ref.cdf(x), 1e-12, 1.0 - 1e-12)
    psi_vals = np.asarray(qt(u), dtype=float).ravel() - x
    if m is not None and m > 0:
        from scipy.ndimage import gaussian_filter1d
        h = x[1] - x[0]
        psi_vals = gaussian_filter1d(psi_vals, sigma=(1.0 / m) / h,
                                     mode="nearest")

    # L^2(lambda) projection: basis is orthonormal so c_k = <psi, phi_k>
    dens_w = ref.density(grid.nodes) * grid.weights
    mat = basis.value_matrix_1d(x, 0)
    coeffs = mat @ (dens_w * psi_vals)

    kappa = float(np.sum(np.abs(coeffs) * basis.lip))
    margin = 1.0 - 1.0 / n
    theta = 1.0 if kappa <= margin else margin / kappa
    phi = Diffeo(basis, theta * coeffs)
    cert = certify_Dn(phi, n)
    mu = PushforwardMeasure(ref, phi)
    w2 = wasserstein2(mu, target)
    return ApproximationResult(phi=phi, w2=w2, theta=theta,
                               kappa_raw=kappa, certificate=cert)
