"""Finite-volume solver for d rho/dt = (beta(rho)_x + Phi'(x) b(rho) rho)_x.

Independent 1-d oracle for the deterministic gradient flow: explicit
conservative scheme, central differencing for the diffusive flux,
donor-cell upwinding for the drift flux, zero-flux boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .energy import EnergyIntegrand, _beta_prime_form, _potential_form, _scalar_form

CFL_SAFETY = 0.4
MASS_TOL = 1e-10


class StepError(RuntimeError):
    pass


@dataclass
class PMECoefficients:
    beta: Callable[[np.ndarray], np.ndarray]
    beta_prime: Callable[[np.ndarray], np.ndarray]
    b: Callable[[np.ndarray], np.ndarray]
    grad_Phi: Callable[[np.ndarray], np.ndarray]
    sup_beta_prime: float
    description: str = ""


def heat_coefficients() -> PMECoefficients:
    """beta = id, b = 1, Phi = 0: the plain heat equation."""
    one = lambda r: np.ones_like(np.asarray(r, dtype=float))
    ident = lambda r: np.asarray(r, dtype=float)
    zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))
    return PMECoefficients(beta=ident, beta_prime=one, b=one, grad_Phi=zero,
                           sup_beta_prime=1.0, description="heat")


def coefficients_from_forms(Phi: dict | None = None, beta: dict | None = None,
                            b: dict | None = None) -> PMECoefficients:
    """Same named analytic forms as the porous-media energy preset."""
    Phi = Phi or {"form": "zero"}
    beta = beta or {"form": "linear", "slope": 1.0}
    b = b or {"form": "constant", "value": 1.0}
    _, gPhi, _ = _potential_form(Phi)
    bp, bp_lo, bp_hi = _beta_prime_form(beta)
    bf, _, _ = _scalar_form(b)

    bform = beta.get("form", "linear")
    if bform == "linear":
        slope = float(beta.get("slope", 1.0))
        beta_val = lambda r: slope * np.asarray(r, dtype=float)
    elif bform == "linear-plus-tanh":
        eps = float(beta.get("eps", 0.5))
        beta_val = lambda r: np.asarray(r, dtype=float) + eps * np.tanh(r)
    else:
        raise ValueError(f"unknown beta form {bform!r}")

    def grad_Phi(x):
        return gPhi(np.asarray(x, dtype=float)[:, None])[:, 0]

    return PMECoefficients(beta=beta_val, beta_prime=bp, b=bf,
                           grad_Phi=grad_Phi, sup_beta_prime=bp_hi,
                           description=f"Phi={Phi} beta={beta} b={b}")


@dataclass
class PMEGrid:
    x: np.ndarray            # cell centers (nx,)
    dx: float
    rho: np.ndarray          # cell averages (nx,)
    dt_cfl: float

    @property
    def mass(self) -> float:
        return float(np.sum(self.rho) * self.dx)

    def variance(self) -> float:
        m = float(np.sum(self.rho * self.x) * self.dx) / self.mass
        return float(np.sum(self.rho * (self.x - m) ** 2) * self.dx) / self.mass

    def quantile(self, u: np.ndarray) -> np.ndarray:
        """Inverse of the piecewise-linear CDF, for Wasserstein distances."""
        cdf = np.concatenate([[0.0], np.cumsum(self.rho) * self.dx])
        cdf = cdf / cdf[-1]
        edges = np.concatenate([[self.x[0] - self.dx / 2],
                                self.x + self.dx / 2])
        return np.interp(np.asarray(u, dtype=float), cdf, edges)

    @property
    def dim(self) -> int:
        return 1


def make_pme_grid(window: Sequence[float], nx: int,
                  rho0: Callable[[np.ndarray], np.ndarray],
                  coeffs: PMECoefficients) -> PMEGrid:
    lo, hi = float(window[0]), float(window[1])
    dx = (hi - lo) / nx
    x = lo + (np.arange(nx) + 0.5) * dx
    rho = np.maximum(np.asarray(rho0(x), dtype=float), 0.0)
    rho = rho / (np.sum(rho) * dx)
    v = np.abs(coeffs.grad_Phi(x))
    adv = float(np.max(v * coeffs.b(rho))) if np.any(v) else 0.0
    dt_diff = dx**2 / (2.0 * coeffs.sup_beta_prime)
    dt_adv = dx / adv if adv > 0 else math.inf
    return PMEGrid(x=x, dx=dx, rho=rho,
                   dt_cfl=CFL_SAFETY * min(dt_diff, dt_adv))


def step(grid: PMEGrid, coeffs: PMECoefficients, dt: float) -> PMEGrid:
    """One conservative explicit update with zero-flux boundaries."""
    if dt > grid.dt_cfl * (1.0 + 1e-12):
        raise StepError(f"dt = {dt:.3g} exceeds CFL bound {grid.dt_cfl:.3g}")
    rho, dx, x = grid.rho, grid.dx, grid.x
    # interior face flux J = beta(rho)_x + v * b(rho) rho, donor-cell upwind
    diff = (coeffs.beta(rho[1:]) - coeffs.beta(rho[:-1])) / dx
    v = coeffs.grad_Phi(0.5 * (x[1:] + x[:-1]))
    m = coeffs.b(rho) * rho
    drift = np.where(v > 0, v * m[1:], v * m[:-1])
    J = np.concatenate([[0.0], diff + drift, [0.0]])
    new_rho = rho + dt / dx * (J[1:] - J[:-1])
    if np.any(new_rho < 0):
        worst = float(new_rho.min())
        if worst < -1e-13:
            raise StepError(f"positivity lost: min rho = {worst:.3g}")
        new_rho = np.maximum(new_rho, 0.0)
    out = replace(grid, rho=new_rho)
    if abs(out.mass - grid.mass) > MASS_TOL:
        raise StepError(f"mass drift {abs(out.mass - grid.mass):.3g} per step")
    return out


@dataclass
class PMESolution:
    times: np.ndarray
    snapshots: list        # PMEGrid at each recorded time
    energies: np.ndarray | None


def solve(grid: PMEGrid, coeffs: PMECoefficients, T: float,
          t_record: Sequence[float] | None = None,
          F: EnergyIntegrand | None = None) -> PMESolution:
    """March to the horizon, recording snapshots and optionally W_F(rho_t)."""
    if t_record is None:
        t_record = np.linspace(0.0, T, 11)
    t_record = np.asarray(sorted(t_record), dtype=float)
    snaps = []
    energies = [] if F is not None else None
    t = 0.0
    idx = 0
    while idx < len(t_record) and t_record[idx] <= t + 1e-15:
        snaps.append(grid)
        if F is not None:
            energies.append(_energy(grid, F))
        idx += 1
    while t < T - 1e-15 and idx < len(t_record):
        target = t_record[idx]
        dt = min(grid.dt_cfl, target - t)
        grid = step(grid, coeffs, dt)
        t += dt
        if t >= target - 1e-12:
            snaps.append(grid)
            if F is not None:
                energies.append(_energy(grid, F))
            idx += 1
    return PMESolution(times=t_record[:len(snaps)], snapshots=snaps,
                       energies=np.asarray(energies) if F is not None else None)


def _energy(grid: PMEGrid, F: EnergyIntegrand) -> float:
    return float(np.sum(F.F(grid.x[:, None], grid.rho)) * grid.dx)
