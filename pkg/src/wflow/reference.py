"""Base measures on R^d with analytic density data and quadrature support.

Ships Gaussian and Gaussian-mixture presets only (d = 1, 2). All integrals
in the library are evaluated on tensor-product trapezoid grids over a box
carrying all but ``tail_cutoff`` of the mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

DEFAULT_TAIL_CUTOFF = 1e-8
DEFAULT_NODES_1D = 2048
DEFAULT_NODES_2D = 256
# Extra half-width beyond the tail quantile; keeps pushforward mass of
# near-identity diffeos inside the window.
WINDOW_MARGIN = 2.0


class IntegrationError(ValueError):
    """Non-finite integrand value at a quadrature node."""


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor-product trapezoid rule on an axis-aligned box."""

    nodes: np.ndarray        # (N, d)
    weights: np.ndarray      # (N,) Lebesgue weights
    window: np.ndarray       # (d, 2) box bounds
    nodes_per_axis: int

    @property
    def dim(self) -> int:
        return self.window.shape[0]

    @property
    def volume(self) -> float:
        return float(np.prod(self.window[:, 1] - self.window[:, 0]))

    def refine(self) -> "QuadratureGrid":
        """Same window at doubled resolution."""
        return make_grid(self.window, 2 * self.nodes_per_axis)


def make_grid(window: np.ndarray, nodes_per_axis: int) -> QuadratureGrid:
    window = np.atleast_2d(np.asarray(window, dtype=float))
    d = window.shape[0]
    axes = [np.linspace(lo, hi, nodes_per_axis) for lo, hi in window]
    waxes = []
    for lo, hi in window:
        h = (hi - lo) / (nodes_per_axis - 1)
        w = np.full(nodes_per_axis, h)
        w[0] = w[-1] = h / 2
        waxes.append(w)
    if d == 1:
        nodes = axes[0][:, None]
        weights = waxes[0]
    elif d == 2:
        X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")
        nodes = np.column_stack([X.ravel(), Y.ravel()])
        weights = np.outer(waxes[0], waxes[1]).ravel()
    else:
        raise ValueError(f"unsupported dimension {d}")
    return QuadratureGrid(nodes=nodes, weights=weights, window=window,
                          nodes_per_axis=nodes_per_axis)


@dataclass(frozen=True)
class ReferenceMeasure:
    """Absolutely continuous base measure with closed-form analytic data.

    ``cdf``/``quantile`` are only populated in d = 1. ``sup_density`` and
    ``sup_grad_density`` are certified (analytic) upper bounds used by the
    basis construction.
    """

    dim: int
    density: Callable[[np.ndarray], np.ndarray]
    grad_density: Callable[[np.ndarray], np.ndarray]
    log_density: Callable[[np.ndarray], np.ndarray]
    cdf: Callable[[np.ndarray], np.ndarray] | None
    quantile: Callable[[np.ndarray], np.ndarray] | None
    tail_cutoff: float
    sup_density: float
    sup_grad_density: float
    grid: QuadratureGrid = field(repr=False)
    description: str = ""
    sampler: Callable[[int, np.random.Generator], np.ndarray] | None = None

    def density_1d(self, x: np.ndarray) -> np.ndarray:
        """Density evaluated on raw 1-d abscissas (d = 1 only)."""
        return self.density(np.asarray(x, dtype=float)[:, None])


def _gauss_window(means: Sequence[float], sigmas: Sequence[float],
                  tail_cutoff: float) -> tuple[float, float]:
    z = stats.norm.ppf(1.0 - tail_cutoff / 2.0)
    lo = min(m - s * (z + WINDOW_MARGIN) for m, s in zip(means, sigmas))
    hi = max(m + s * (z + WINDOW_MARGIN) for m, s in zip(means, sigmas))
    return lo, hi


def make_gaussian_reference(dim: int, variance: float,
                            tail_cutoff: float = DEFAULT_TAIL_CUTOFF,
                            nodes_per_axis: int | None = None) -> ReferenceMeasure:
    """Centered isotropic Gaussian N(0, variance * I) on R^dim."""
    if variance <= 0:
        raise ValueError(f"variance must be positive, got {variance}")
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    sigma = math.sqrt(variance)
    lo, hi = _gauss_window([0.0], [sigma], tail_cutoff)
    window = np.array([[lo, hi]] * dim)
    if nodes_per_axis is None:
        nodes_per_axis = DEFAULT_NODES_1D if dim == 1 else DEFAULT_NODES_2D
    grid = make_grid(window, nodes_per_axis)

    norm_const = (2 * math.pi * variance) ** (-dim / 2.0)

    def log_density(x):
        x = np.atleast_2d(x)
        return math.log(norm_const) - np.sum(x * x, axis=1) / (2 * variance)

    def density(x):
        return np.exp(log_density(x))

    def grad_density(x):
        x = np.atleast_2d(x)
        return -x / variance * density(x)[:, None]

    if dim == 1:
        rv = stats.norm(scale=sigma)
        cdf = lambda x: rv.cdf(np.asarray(x, dtype=float))
        quantile = lambda p: rv.ppf(np.asarray(p, dtype=float))
    else:
        cdf = quantile = None

    return ReferenceMeasure(
        dim=dim, density=density, grad_density=grad_density,
        log_density=log_density, cdf=cdf, quantile=quantile,
        tail_cutoff=tail_cutoff,
        sup_density=norm_const,
        sup_grad_density=dim * math.exp(-0.5) / sigma * norm_const,
        grid=grid,
        description=f"gauss(dim={dim}, variance={variance})",
        sampler=lambda n, rng: rng.normal(scale=sigma, size=(n, dim)),
    )


def make_gaussian_mixture_reference(weights: Sequence[float],
                                    means: Sequence[float],
                                    variances: Sequence[float],
                                    tail_cutoff: float = DEFAULT_TAIL_CUTOFF,
                                    nodes_per_axis: int = DEFAULT_NODES_1D,
                                    ) -> ReferenceMeasure:
    """1-d Gaussian mixture; quantile obtained by monotone bisection."""
    w = np.asarray(weights, dtype=float)
    m = np.asarray(means, dtype=float)
    v = np.asarray(variances, dtype=float)
    if np.any(w <= 0) or np.any(v <= 0):
        raise ValueError("mixture weights and variances must be positive")
    w = w / w.sum()
    s = np.sqrt(v)
    lo, hi = _gauss_window(m, s, tail_cutoff)
    grid = make_grid(np.array([[lo, hi]]), nodes_per_axis)

    def density(x):
        x1 = np.atleast_2d(x)[:, 0]
        out = np.zeros_like(x1)
        for wi, mi, si in zip(w, m, s):
            out += wi * np.exp(-((x1 - mi) ** 2) / (2 * si**2)) / (si * math.sqrt(2 * math.pi))
        return out

    def grad_density(x):
        x1 = np.atleast_2d(x)[:, 0]
        out = np.zeros_like(x1)
        for wi, mi, si in zip(w, m, s):
            out += wi * (-(x1 - mi) / si**2) * np.exp(-((x1 - mi) ** 2) / (2 * si**2)) / (si * math.sqrt(2 * math.pi))
        return out[:, None]

    def log_density(x):
        return np.log(density(x))

    def cdf(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x, dtype=float)
        for wi, mi, si in zip(w, m, s):
            out += wi * stats.norm.cdf(x, loc=mi, scale=si)
        return out

    def quantile(p):
        p = np.asarray(p, dtype=float)
        lo_a = np.full(p.shape, lo - 10.0)
        hi_a = np.full(p.shape, hi + 10.0)
        for _ in range(200):
            mid = 0.5 * (lo_a + hi_a)
            below = cdf(mid) < p
            lo_a = np.where(below, mid, lo_a)
            hi_a = np.where(below, hi_a, mid)
        return 0.5 * (lo_a + hi_a)

    sup_d = float(np.sum(w / (s * math.sqrt(2 * math.pi))))
    sup_gd = float(np.sum(w * math.exp(-0.5) / s**2 / math.sqrt(2 * math.pi)))
    return ReferenceMeasure(
        dim=1, density=density, grad_density=grad_density,
        log_density=log_density, cdf=cdf, quantile=quantile,
        tail_cutoff=tail_cutoff, sup_density=sup_d, sup_grad_density=sup_gd,
        grid=grid,
        description=f"gauss-mixture(weights={list(w)}, means={list(m)}, variances={list(v)})",
        sampler=_mixture_sampler(w, m, s),
    )


def _mixture_sampler(w: np.ndarray, m: np.ndarray, s: np.ndarray):
    def sampler(n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(len(w), size=n, p=w)
        return (m[comp] + s[comp] * rng.standard_normal(n))[:, None]
    return sampler


def integrate(ref: ReferenceMeasure, f: Callable[[np.ndarray], np.ndarray],
              grid: QuadratureGrid | None = None,
              weighting: str = "lambda") -> float:
    """Quadrature of f over the window.

    ``weighting="lambda"`` integrates against the measure, ``"lebesgue"``
    against dx.
    """
    grid = grid or ref.grid
    vals = np.asarray(f(grid.nodes), dtype=float)
    if not np.all(np.isfinite(vals)):
        bad = grid.nodes[~np.isfinite(vals)][0]
        raise IntegrationError(f"non-finite integrand at node {bad}")
    if weighting == "lambda":
        vals = vals * ref.density(grid.nodes)
    elif weighting != "lebesgue":
        raise ValueError(f"unknown weighting {weighting!r}")
    return float(np.sum(grid.weights * vals))


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            lines.append(f"[{status}] {c.name}: {c.value:.6g} {c.detail}")
        return "\n".join(lines)


def validate_reference(ref: ReferenceMeasure) -> ValidationReport:
    """Numerical checks of the standing assumptions on the base measure."""
    checks = []
    grid = ref.grid
    dens = ref.density(grid.nodes)

    checks.append(CheckResult(
        "positivity", bool(np.all(dens > 0)), float(dens.min()),
        "min density on window"))

    mass = float(np.sum(grid.weights * dens))
    checks.append(CheckResult(
        "mass", 1.0 - ref.tail_cutoff <= mass <= 1.0 + ref.tail_cutoff, mass,
        f"target [{1 - ref.tail_cutoff}, 1]"))

    # Lipschitz continuity of the density: finite difference quotients bounded.
    if ref.dim == 1:
        x = grid.nodes[:, 0]
        quot = np.abs(np.diff(dens)) / np.diff(x)
        checks.append(CheckResult(
            "density_lipschitz", bool(np.all(np.isfinite(quot))),
            float(quot.max()), "max difference quotient"))

    second_moment = integrate(ref, lambda x: np.sum(np.atleast_2d(x) ** 2, axis=1))
    checks.append(CheckResult(
        "second_moment_finite", math.isfinite(second_moment), second_moment, ""))

    abs_log = integrate(ref, lambda x: np.abs(ref.log_density(x)))
    checks.append(CheckResult(
        "abs_log_density_integrable", math.isfinite(abs_log), abs_log, ""))

    def score_sq(x):
        d = ref.density(x)
        g = np.linalg.norm(np.atleast_2d(ref.grad_density(x)), axis=1)
        return (np.abs(ref.log_density(x)) + g / d) ** 2

    reg = integrate(ref, score_sq)
    checks.append(CheckResult(
        "log_plus_score_sq_integrable", math.isfinite(reg), reg, ""))

    # Grid refinability: doubling resolution barely moves the mass.
    fine = grid.refine()
    mass_fine = float(np.sum(fine.weights * ref.density(fine.nodes)))
    checks.append(CheckResult(
        "grid_refinable", abs(mass_fine - mass) < 1e-8, abs(mass_fine - mass),
        "mass shift under refinement"))

    return ValidationReport(checks)
