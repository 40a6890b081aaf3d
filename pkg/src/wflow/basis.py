"""Orthonormal bases of bounded C^2 vector fields in L^2(lambda).

The fields are CDF-warped trigonometric: composing the Fourier basis on
[0,1] with the base CDF transfers exact orthonormality to L^2(lambda)
while keeping closed-form derivatives and certified sup-norm bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .reference import ReferenceMeasure

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class GaussWeights:
    """Coefficient weights a_k = (2^k * bound_k^2) v 1 and b_k = a_k * 2^k."""

    a: np.ndarray
    b: np.ndarray
    variant: str


class VectorFieldBasis:
    """Indexed family of vector fields with certified derivative bounds.

    Attributes:
        K_max: number of fields.
        dim: ambient dimension.
        lip: upper bounds on sup |grad phi_k| (operator norm).
        hess: upper bounds on sup |grad^2 phi_k|.
        sup: upper bounds on sup |phi_k|.
    """

    def __init__(self, ref: "ReferenceMeasure", K_max: int,
                 include_constant: bool = False):
        if ref.dim not in (1, 2):
            raise ValueError(f"unsupported dimension {ref.dim}")
        if K_max < 0:
            raise ValueError("K_max must be nonnegative")
        self.ref = ref
        self.dim = ref.dim
        self.include_constant = include_constant
        if ref.dim == 1:
            n_extra = 1 if include_constant else 0
        else:
            n_extra = 2 if include_constant else 0
        self.K_max = K_max + n_extra
        self._K_spec = K_max

        if ref.dim == 2:
            self._modes_2d = _enumerate_modes_2d(K_max)

        self.lip = np.array([self._lip_bound(k) for k in range(1, self.K_max + 1)])
        self.hess = np.array([self._hess_bound(k) for k in range(1, self.K_max + 1)])
        self.sup = np.array([self._sup_bound(k) for k in range(1, self.K_max + 1)])

    # -- 1-d scalar profile s_k(x) and derivatives ------------------------
    # k = 1..K_spec: warped trig; k > K_spec: constant 1.

    def _trig_index(self, k: int) -> tuple[int, bool]:
        """(frequency j, is_sin) for spec index k in 1..K_spec."""
        j = (k + 1) // 2
        return j, k % 2 == 1

    def _profile_1d(self, k: int, x: np.ndarray, order: int) -> np.ndarray:
        if k > self._K_spec:
            if order == 0:
                return np.ones_like(x)
            return np.zeros_like(x)
        j, is_sin = self._trig_index(k)
        w = 2 * math.pi * j
        T = self.ref.cdf(x)
        rho = self.ref.density_1d(x)
        if order == 0:
            return SQRT2 * (np.sin(w * T) if is_sin else np.cos(w * T))
        drho = self.ref.grad_density(x[:, None])[:, 0]
        if is_sin:
            v0 = np.sin(w * T)
            v1 = np.cos(w * T)
            v2 = -np.sin(w * T)
        else:
            v0 = np.cos(w * T)
            v1 = -np.sin(w * T)
            v2 = -np.cos(w * T)
        if order == 1:
            return SQRT2 * w * rho * v1
        if order == 2:
            return SQRT2 * (w**2 * rho**2 * v2 + w * drho * v1)
        raise ValueError(order)

    # -- certified bounds --------------------------------------------------

    def _lip_bound(self, k: int) -> float:
        if self.dim == 1:
            if k > self._K_spec:
                return 0.0
            j, _ = self._trig_index(k)
            return SQRT2 * 2 * math.pi * j * self.ref.sup_density
        comp, a, b = self._modes_2d_entry(k)
        if a == 0 and b == 0:
            return 0.0
        la = self._axis_lip(a) * self._axis_sup(b)
        lb = self._axis_sup(a) * self._axis_lip(b)
        return math.hypot(la, lb)

    def _hess_bound(self, k: int) -> float:
        if self.dim == 1:
            if k > self._K_spec:
                return 0.0
            j, _ = self._trig_index(k)
            w = 2 * math.pi * j
            return SQRT2 * (w**2 * self.ref.sup_density**2
                            + w * self.ref.sup_grad_density)
        comp, a, b = self._modes_2d_entry(k)
        if a == 0 and b == 0:
            return 0.0
        terms = [self._axis_hess(a) * self._axis_sup(b),
                 2 * self._axis_lip(a) * self._axis_lip(b),
                 self._axis_sup(a) * self._axis_hess(b)]
        return float(sum(terms))

    def _sup_bound(self, k: int) -> float:
        if self.dim == 1:
            return 1.0 if k > self._K_spec else SQRT2
        comp, a, b = self._modes_2d_entry(k)
        return self._axis_sup(a) * self._axis_sup(b)

    # per-axis scalar bounds for the d=2 tensor construction
    def _axis_sup(self, a: int) -> float:
        return 1.0 if a == 0 else SQRT2

    def _axis_lip(self, a: int) -> float:
        if a == 0:
            return 0.0
        j = (a + 1) // 2
        return SQRT2 * 2 * math.pi * j * self._marginal_sup_density()

    def _axis_hess(self, a: int) -> float:
        if a == 0:
            return 0.0
        j = (a + 1) // 2
        w = 2 * math.pi * j
        sd = self._marginal_sup_density()
        return SQRT2 * (w**2 * sd**2 + w * self._marginal_sup_grad())

    def _marginal_sup_density(self) -> float:
        # isotropic Gaussian: marginal sup density = (2 pi var)^(-1/2)
        return self.ref.sup_density ** (1.0 / self.dim) if self.dim == 2 else self.ref.sup_density

    def _marginal_sup_grad(self) -> float:
        return self.ref.sup_grad_density / self.dim if self.dim == 2 else self.ref.sup_grad_density

    def _modes_2d_entry(self, k: int):
        if k > self._K_spec:
            return (k - self._K_spec - 1, 0, 0)
        return self._modes_2d[k - 1]

    # -- evaluation --------------------------------------------------------

    def value_matrix_1d(self, x: np.ndarray, order: int = 0) -> np.ndarray:
        """(K_max, N) matrix of profile values/derivatives at 1-d abscissas."""
        assert self.dim == 1
        x = np.asarray(x, dtype=float)
        return np.stack([self._profile_1d(k, x, order)
                         for k in range(1, self.K_max + 1)])

    def eval(self, k: int, x: np.ndarray) -> np.ndarray:
        """phi_k at points x of shape (N, d); returns (N, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.dim == 1:
            return self._profile_1d(k, x[:, 0], 0)[:, None]
        comp, a, b = self._modes_2d_entry(k)
        out = np.zeros_like(x)
        out[:, comp] = (self._marginal_profile(a, x[:, 0], 0)
                        * self._marginal_profile(b, x[:, 1], 0))
        return out

    def jacobian(self, k: int, x: np.ndarray) -> np.ndarray:
        """grad phi_k at points x; returns (N, d, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, d = x.shape
        out = np.zeros((n, d, d))
        if d == 1:
            out[:, 0, 0] = self._profile_1d(k, x[:, 0], 1)
            return out
        comp, a, b = self._modes_2d_entry(k)
        fa0 = self._marginal_profile(a, x[:, 0], 0)
        fb0 = self._marginal_profile(b, x[:, 1], 0)
        out[:, comp, 0] = self._marginal_profile(a, x[:, 0], 1) * fb0
        out[:, comp, 1] = fa0 * self._marginal_profile(b, x[:, 1], 1)
        return out

    def hessian(self, k: int, x: np.ndarray) -> np.ndarray:
        """grad^2 phi_k at points x; returns (N, d, d, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, d = x.shape
        out = np.zeros((n, d, d, d))
        if d == 1:
            out[:, 0, 0, 0] = self._profile_1d(k, x[:, 0], 2)
            return out
        comp, a, b = self._modes_2d_entry(k)
        fa = [self._marginal_profile(a, x[:, 0], o) for o in range(3)]
        fb = [self._marginal_profile(b, x[:, 1], o) for o in range(3)]
        out[:, comp, 0, 0] = fa[2] * fb[0]
        out[:, comp, 0, 1] = fa[1] * fb[1]
        out[:, comp, 1, 0] = fa[1] * fb[1]
        out[:, comp, 1, 1] = fa[0] * fb[2]
        return out

    def _marginal_profile(self, a: int, x1: np.ndarray, order: int) -> np.ndarray:
        """1-d scalar profile along one axis of an isotropic Gaussian."""
        from scipy import stats
        if a == 0:
            return np.ones_like(x1) if order == 0 else np.zeros_like(x1)
        j = (a + 1) // 2
        is_sin = a % 2 == 1
        w = 2 * math.pi * j
        var = 1.0 / (2 * math.pi * self._marginal_sup_density() ** 2)
        sigma = math.sqrt(var)
        T = stats.norm.cdf(x1, scale=sigma)
        rho = stats.norm.pdf(x1, scale=sigma)
        drho = -x1 / var * rho
        if is_sin:
            v0, v1, v2 = np.sin(w * T), np.cos(w * T), -np.sin(w * T)
        else:
            v0, v1, v2 = np.cos(w * T), -np.sin(w * T), -np.cos(w * T)
        if order == 0:
            return SQRT2 * v0
        if order == 1:
            return SQRT2 * w * rho * v1
        return SQRT2 * (w**2 * rho**2 * v2 + w * drho * v1)


def _enumerate_modes_2d(K: int) -> list[tuple[int, int, int]]:
    """(component, axis-0 scalar index, axis-1 scalar index), (0,0) excluded."""
    modes = []
    budget = 0
    while len(modes) < K:
        budget += 1
        for total in (budget,):
            for a in range(total + 1):
                b = total - a
                for comp in (0, 1):
                    if (a, b) != (0, 0):
                        modes.append((comp, a, b))
    return modes[:K]


def build_warped_trig_basis(ref: "ReferenceMeasure", K_max: int,
                            include_constant: bool = False) -> VectorFieldBasis:
    """CDF-warped trigonometric basis of L^2(lambda -> R^d).

    In d = 1: phi_{2j-1} = sqrt(2) sin(2 pi j T), phi_{2j} = sqrt(2) cos(2 pi j T)
    with T the CDF of the base measure. ``include_constant`` appends the
    constant field(s) after index K_max; they complete the warped Fourier
    system so that translations become representable.
    """
    if ref.dim == 1 and ref.cdf is None:
        raise ValueError("1-d basis requires a base measure with CDF")
    return VectorFieldBasis(ref, K_max, include_constant=include_constant)


def weights(basis: VectorFieldBasis, variant: str = "gradient-only") -> GaussWeights:
    """Gaussian coefficient weights of the basis.

    ``gradient-only``: a_k = (2^k L_k^2) v 1; ``gradient-and-hessian``:
    a_k = (2^k (L_k^2 v M_k^2)) v 1. Always b_k = a_k 2^k, so the partial
    sums of a_k / b_k are bounded by 1.
    """
    k = np.arange(1, basis.K_max + 1)
    if variant == "gradient-only":
        bound_sq = basis.lip**2
    elif variant == "gradient-and-hessian":
        bound_sq = np.maximum(basis.lip**2, basis.hess**2)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    a = np.maximum(2.0**k * bound_sq, 1.0)
    b = a * 2.0**k
    return GaussWeights(a=a, b=b, variant=variant)


def gram_matrix(basis: VectorFieldBasis, K: int | None = None) -> np.ndarray:
    """L^2(lambda) Gram matrix of the first K fields, by quadrature."""
    K = K or basis.K_max
    ref = basis.ref
    grid = ref.grid
    dens_w = ref.density(grid.nodes) * grid.weights
    vals = np.stack([np.atleast_2d(basis.eval(k, grid.nodes))
                     for k in range(1, K + 1)])      # (K, N, d)
    if vals.ndim == 2:
        vals = vals[:, :, None]
    weighted = vals * dens_w[None, :, None]
    return np.einsum("knd,jnd->kj", weighted, vals)


def gram_check(basis: VectorFieldBasis, K: int | None = None) -> tuple[float, float]:
    """(max off-diagonal magnitude, max norm deviation) for the first K fields."""
    G = gram_matrix(basis, K)
    off = G - np.diag(np.diag(G))
    max_off = float(np.abs(off).max()) if G.shape[0] > 1 else 0.0
    max_norm_dev = float(np.abs(np.diag(G) - 1.0).max())
    return max_off, max_norm_dev
