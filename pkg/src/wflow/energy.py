"""Energy functionals W_F(mu) = integral of F(x, rho_mu(x)) dx.

Presets cover the entropy functional, the (V, q) family
F(x,s) = s V(x) + int_0^s int_1^t q(r)/r dr dt, and the porous-media
family with V = Phi, q = beta'/b. All presets carry closed-form partials
d2F, grad1_d2F and d2d2F needed by the gradient module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

# Below this density the integrand is evaluated as its s -> 0 limit (0 for
# every preset, by the s(1+|x|+|ln s|) growth bound).
S_FLOOR = 1e-300


class EnergyEvaluationError(ValueError):
    pass


class EstimationError(RuntimeError):
    pass


@dataclass
class EnergyIntegrand:
    """F with its partial derivatives; x has shape (N, d), s shape (N,)."""

    F: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d2F: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad1_d2F: Callable[[np.ndarray, np.ndarray], np.ndarray]   # (N, d)
    d2d2F: Callable[[np.ndarray, np.ndarray], np.ndarray]
    description: str
    growth_c: float | None = None
    gamma: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    params: dict = field(default_factory=dict)


def _safe(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=float)
    low = s < S_FLOOR
    return np.where(low, 1.0, s), low


class _QProfile:
    """Double integral Q(s) = int_0^s int_1^t q(r)/r dr dt with cached spline."""

    def __init__(self, q: Callable[[np.ndarray], np.ndarray], s_max: float = 64.0):
        self.q = q
        self._build(s_max)

    def _build(self, s_max: float):
        self.s_max = s_max
        # log grid resolves the ln-type singularity of g(t) near 0
        t = np.concatenate([[0.0], np.geomspace(1e-14, s_max, 4000)])
        mid = 0.5 * (t[1:] + t[:-1])
        # g(t) = int_1^t q(r)/r dr, cumulative trapezoid anchored at t = 1
        grid = np.geomspace(1e-14, s_max, 8000)
        integ = self.q(grid) / grid
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (integ[1:] + integ[:-1]) * np.diff(grid))])
        anchor = np.interp(1.0, grid, cum)
        g_vals = cum - anchor
        self._g = CubicSpline(grid, g_vals)
        # G(s) = int_0^s g(t) dt; g ~ q(0) ln t near 0, integrable
        gm = self._g(mid)
        G = np.concatenate([[0.0], np.cumsum(gm * np.diff(t))])
        self._G = CubicSpline(t, G)

    def ensure(self, s_max: float):
        if s_max > self.s_max:
            self._build(2.0 * s_max)

    def Q(self, s: np.ndarray) -> np.ndarray:
        self.ensure(float(np.max(s)) if s.size else 1.0)
        return self._G(s)

    def dQ(self, s: np.ndarray) -> np.ndarray:
        self.ensure(float(np.max(s)) if s.size else 1.0)
        return self._g(s)


def make_vq_integrand(V: Callable, grad_V: Callable,
                      q: Callable | float, description: str,
                      params: dict | None = None,
                      gamma: Callable | None = None) -> EnergyIntegrand:
    """(V, q) family; q may be a constant (closed forms) or a callable."""
    params = params or {}
    if callable(q):
        prof = _QProfile(q)

        def F(x, s):
            ss, low = _safe(s)
            val = s * V(x) + prof.Q(ss)
            return np.where(low, 0.0, val)

        def d2F(x, s):
            ss, low = _safe(s)
            return np.where(low, 0.0, V(x) + prof.dQ(ss))

        def d2d2F(x, s):
            ss, low = _safe(s)
            return np.where(low, 0.0, q(ss) / ss)
    else:
        q0 = float(q)

        def F(x, s):
            ss, low = _safe(s)
            val = s * V(x) + q0 * (s * np.log(ss) - s)
            return np.where(low, 0.0, val)

        def d2F(x, s):
            ss, low = _safe(s)
            return np.where(low, 0.0, V(x) + q0 * np.log(ss))

        def d2d2F(x, s):
            ss, low = _safe(s)
            return np.where(low, 0.0, q0 / ss)

    def grad1_d2F(x, s):
        return grad_V(x)

    return EnergyIntegrand(F=F, d2F=d2F, grad1_d2F=grad1_d2F, d2d2F=d2d2F,
                           description=description, params=params, gamma=gamma)


def entropy_preset() -> EnergyIntegrand:
    """V = 0, q = 1: F(x,s) = s ln s - s, the entropy functional."""
    zero = lambda x: np.zeros(np.atleast_2d(x).shape[0])
    gradzero = lambda x: np.zeros_like(np.atleast_2d(x))
    out = make_vq_integrand(zero, gradzero, 1.0, "entropy")
    out.growth_c = 1.0
    return out


# -- named analytic forms for CLI parameter tables -------------------------

def _potential_form(spec: dict) -> tuple[Callable, Callable, float]:
    """Returns (V, grad V, linear-growth constant sup V/(1+|x|) on R)."""
    form = spec.get("form", "zero")
    if form == "zero":
        return (lambda x: np.zeros(np.atleast_2d(x).shape[0]),
                lambda x: np.zeros_like(np.atleast_2d(x)), 0.0)
    if form == "soft-linear":
        # a * sqrt(1 + |x|^2): Lipschitz with bounded gradient, growth |x|
        a = float(spec.get("coeff", 1.0))

        def V(x):
            x = np.atleast_2d(x)
            return a * np.sqrt(1.0 + np.sum(x * x, axis=1))

        def gV(x):
            x = np.atleast_2d(x)
            return a * x / np.sqrt(1.0 + np.sum(x * x, axis=1))[:, None]

        return V, gV, abs(a)
    if form == "quadratic":
        # omega * |x|^2 / 2; gradient bounded only on compact windows
        w = float(spec.get("coeff", 1.0))

        def V(x):
            x = np.atleast_2d(x)
            return 0.5 * w * np.sum(x * x, axis=1)

        def gV(x):
            return w * np.atleast_2d(x)

        return V, gV, math.inf
    raise ValueError(f"unknown potential form {form!r}")


def _scalar_form(spec: dict) -> tuple[Callable, float, float]:
    """Positive bounded scalar function of density level r; returns (f, lo, hi)."""
    form = spec.get("form", "constant")
    if form == "constant":
        v = float(spec.get("value", 1.0))
        return (lambda r: np.full_like(np.asarray(r, dtype=float), v)), v, v
    if form == "rational-bump":
        # base + amp / (1 + r^2), bounded in [base, base + amp]
        base = float(spec.get("base", 1.0))
        amp = float(spec.get("amp", 0.5))
        return (lambda r: base + amp / (1.0 + np.asarray(r, dtype=float) ** 2),
                base, base + amp)
    raise ValueError(f"unknown scalar form {form!r}")


def _beta_prime_form(spec: dict) -> tuple[Callable, float, float]:
    form = spec.get("form", "linear")
    if form == "linear":
        slope = float(spec.get("slope", 1.0))
        return (lambda r: np.full_like(np.asarray(r, dtype=float), slope)), slope, slope
    if form == "linear-plus-tanh":
        # beta(r) = r + eps tanh(r): beta(0) = 0, beta' in [1, 1 + eps]
        eps = float(spec.get("eps", 0.5))
        return (lambda r: 1.0 + eps / np.cosh(np.asarray(r, dtype=float)) ** 2,
                1.0, 1.0 + eps)
    raise ValueError(f"unknown beta form {form!r}")


def vq_preset(potential: dict | None = None, q: dict | None = None) -> EnergyIntegrand:
    potential = potential or {"form": "soft-linear", "coeff": 0.5}
    qspec = q or {"form": "constant", "value": 1.0}
    V, gV, cV = _potential_form(potential)
    qf, qlo, qhi = _scalar_form(qspec)
    if qspec.get("form", "constant") == "constant":
        qarg: Callable | float = qlo
    else:
        qarg = qf
    out = make_vq_integrand(V, gV, qarg, "vq",
                            params={"potential": potential, "q": qspec})
    out.growth_c = max(cV, qhi) if math.isfinite(cV) else math.inf
    return out


def porous_media_preset(Phi: dict | None = None, beta: dict | None = None,
                        b: dict | None = None) -> EnergyIntegrand:
    """F per the porous-media Lyapunov function: V = Phi, q = beta'/b.

    The gamma weight of the associated gradient flow, gamma(x, mu) =
    b(rho_mu(x)), is attached for use by the dynamics module.
    """
    Phi = Phi or {"form": "quadratic", "coeff": 1.0}
    beta = beta or {"form": "linear-plus-tanh", "eps": 0.5}
    b = b or {"form": "rational-bump", "base": 1.0, "amp": 0.5}
    V, gV, cV = _potential_form(Phi)
    bp, bp_lo, bp_hi = _beta_prime_form(beta)
    bf, b_lo, b_hi = _scalar_form(b)
    constant_q = (beta.get("form", "linear") == "linear"
                  and b.get("form", "constant") == "constant")
    if constant_q:
        qarg: Callable | float = bp_lo / b_lo
    else:
        qarg = lambda r: bp(r) / bf(r)

    def gamma(x, s):
        return bf(s)

    out = make_vq_integrand(V, gV, qarg, "porous-media",
                            params={"Phi": Phi, "beta": beta, "b": b},
                            gamma=gamma)
    out.growth_c = max(cV, bp_hi / b_lo) if math.isfinite(cV) else math.inf
    return out


def zero_integrand() -> EnergyIntegrand:
    """F = 0: the Gibbs law degenerates to the plain Gaussian measure."""
    zero_s = lambda x, s: np.zeros_like(np.asarray(s, dtype=float))

    def zero_v(x, s):
        return np.zeros_like(np.atleast_2d(x))

    return EnergyIntegrand(F=zero_s, d2F=zero_s, grad1_d2F=zero_v,
                           d2d2F=zero_s, description="zero", growth_c=0.0)


PRESETS = {
    "zero": zero_integrand,
    "entropy": entropy_preset,
    "vq": vq_preset,
    "porous-media": porous_media_preset,
}


def make_preset(name: str, **params) -> EnergyIntegrand:
    if name not in PRESETS:
        raise ValueError(f"unknown energy preset {name!r}; "
                         f"choose from {sorted(PRESETS)}")
    return PRESETS[name](**params)


# -- evaluation -------------------------------------------------------------

def W_direct(F: EnergyIntegrand, mu, grid=None) -> float:
    """Lebesgue quadrature of F(x, rho_mu(x)) over the window."""
    grid = grid or mu.ref.grid
    dens = mu.density(grid.nodes)
    vals = F.F(grid.nodes, dens)
    active = dens >= S_FLOOR
    if not np.all(np.isfinite(vals[active])):
        raise EnergyEvaluationError("non-finite energy integrand off the floor region")
    return float(np.sum(grid.weights * vals))


def W_pushforward(F: EnergyIntegrand, ref, phi, grid=None) -> float:
    """Change-of-variables evaluation: no inversion of phi required.

    W_F(lambda o phi^-1) = int F(phi(x), rho_lambda(x)/det grad phi(x))
    * det grad phi(x) dx.
    """
    grid = grid or ref.grid
    x = grid.nodes
    det = phi.det_jacobian(x)
    if np.any(det <= 0):
        raise EnergyEvaluationError("nonpositive determinant in pushforward energy")
    y = phi.eval(x)
    s = ref.density(x) / det
    vals = F.F(y, s) * det
    if not np.all(np.isfinite(vals[s >= S_FLOOR])):
        raise EnergyEvaluationError("non-finite energy integrand off the floor region")
    return float(np.sum(grid.weights * vals))


@dataclass
class C2Report:
    alpha: float
    integral: float
    doubled_window_integral: float
    finite: bool

    def summary(self) -> str:
        verdict = "finite" if self.finite else "DIVERGENT"
        return (f"C2 probe (alpha={self.alpha}): integral {self.integral:.6g}, "
                f"doubled-window {self.doubled_window_integral:.6g} -> {verdict} "
                "(necessary-condition probe: grid max is a lower bound of the sup)")


def check_C2(F: EnergyIntegrand, ref, alpha: float,
             n_sub: int = 24) -> C2Report:
    """Integrability probe of F-bar_alpha(x) = sup |F(y, t rho(x))| over the
    (C2) window |y| <= alpha(1 + |x|), t in [1/alpha, alpha]."""
    if alpha <= 1.0:
        raise ValueError("alpha must exceed 1")

    def barF_integral(grid):
        x = grid.nodes
        rho = ref.density(x)
        r = np.linalg.norm(np.atleast_2d(x), axis=1)
        ts = np.geomspace(1.0 / alpha, alpha, n_sub)
        best = np.zeros(x.shape[0])
        # maximize |F(y, t rho(x))| over y on a radial subgrid and t
        for frac in np.linspace(-1.0, 1.0, n_sub):
            y = np.zeros_like(np.atleast_2d(x))
            y[:, 0] = frac * alpha * (1.0 + r)
            for t in ts:
                best = np.maximum(best, np.abs(F.F(y, t * rho)))
        return float(np.sum(grid.weights * best))

    base = barF_integral(ref.grid)
    from .reference import make_grid
    win = ref.grid.window
    center = win.mean(axis=1, keepdims=True)
    wide = center + 2.0 * (win - center)
    doubled = barF_integral(make_grid(wide, ref.grid.nodes_per_axis))
    # a genuinely integrable F-bar changes little when the window doubles
    finite = math.isfinite(base) and (doubled - base) <= 0.01 * (1.0 + abs(base))
    return C2Report(alpha=alpha, integral=base,
                    doubled_window_integral=doubled, finite=finite)


@dataclass
class ZFEstimate:
    value: float
    std_error: float
    ess: float
    n: int
    c2_fit: float
    c2_max_violation: float


def estimate_ZF(spec, F: EnergyIntegrand, N: int, rng) -> ZFEstimate:
    """Monte Carlo estimate of Z_F over the conditioned Gaussian, with the
    measurable-norm growth diagnostic max(-W_F - c2 (1 + |phi|_{D,2}))."""
    from .measures import sample

    phis = [sample(spec, rng) for _ in range(N)]
    W = np.array([W_pushforward(F, spec.basis.ref, phi) for phi in phis])
    if not np.all(np.isfinite(W)):
        raise EstimationError("non-finite W_F on sampled maps")
    w = np.exp(-W)
    if not np.any(w > 0):
        raise EstimationError("all Gibbs weights vanished")
    val = float(np.mean(w))
    se = float(np.std(w, ddof=1) / math.sqrt(N))
    ess = float(np.sum(w) ** 2 / np.sum(w**2))

    norms = np.array([_d2_norm(spec.basis.ref, phi) for phi in phis])
    scale = 1.0 + norms
    c2 = float(np.max(np.maximum(-W, 0.0) / scale))
    viol = float(np.max(-W - c2 * scale))
    return ZFEstimate(value=val, std_error=se, ess=ess, n=N,
                      c2_fit=c2, c2_max_violation=viol)


def _d2_norm(ref, phi) -> float:
    """|phi|_{D,2} = (int |phi|^2 + |grad phi|^2 d lambda)^(1/2)."""
    grid = ref.grid
    x = grid.nodes
    vals = phi.eval(x)
    J = phi.jacobian(x)
    dens = ref.density(x)
    total = np.sum(grid.weights * dens
                   * (np.sum(np.atleast_2d(vals) ** 2, axis=1)
                      + np.sum(J**2, axis=(1, 2))))
    return math.sqrt(float(total))
