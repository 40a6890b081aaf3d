"""Near-identity diffeomorphisms phi = id + sum_k c_k phi_k.

Invertibility is certified by the contraction criterion
kappa = sum |c_k| L_k < 1, which gives |grad(phi^-1)| <= 1/(1 - kappa).
Sup-norm certificates are analytic triangle-inequality bounds; grid
maximization is used for the (measured) metrics d_D and d_D2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .basis import VectorFieldBasis

INVERT_TOL = 1e-12
INVERT_MAX_ITERS = 200


class CertificationError(ValueError):
    """Map left the certified invertible class."""


class InversionError(RuntimeError):
    """Contraction/Newton iteration failed to converge."""


class BasisField:
    """Vector field sum_k c_k phi_k in the span of a basis."""

    def __init__(self, basis: VectorFieldBasis, coeffs: np.ndarray):
        self.basis = basis
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs.shape != (basis.K_max,):
            raise ValueError(
                f"expected {basis.K_max} coefficients, got {self.coeffs.shape}")
        self.lip_bound = float(np.sum(np.abs(self.coeffs) * basis.lip))
        self.hess_bound = float(np.sum(np.abs(self.coeffs) * basis.hess))
        self.sup_bound = float(np.sum(np.abs(self.coeffs) * basis.sup))

    def eval(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.basis.dim == 1:
            mat = self.basis.value_matrix_1d(x[:, 0], 0)
            return (self.coeffs @ mat)[:, None]
        out = np.zeros_like(x)
        for k in range(1, self.basis.K_max + 1):
            c = self.coeffs[k - 1]
            if c != 0.0:
                out += c * self.basis.eval(k, x)
        return out

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, d = x.shape
        if d == 1:
            mat = self.basis.value_matrix_1d(x[:, 0], 1)
            return (self.coeffs @ mat)[:, None, None]
        out = np.zeros((n, d, d))
        for k in range(1, self.basis.K_max + 1):
            c = self.coeffs[k - 1]
            if c != 0.0:
                out += c * self.basis.jacobian(k, x)
        return out

    def hessian(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, d = x.shape
        if d == 1:
            mat = self.basis.value_matrix_1d(x[:, 0], 2)
            return (self.coeffs @ mat)[:, None, None, None]
        out = np.zeros((n, d, d, d))
        for k in range(1, self.basis.K_max + 1):
            c = self.coeffs[k - 1]
            if c != 0.0:
                out += c * self.basis.hessian(k, x)
        return out


class CoordinateField:
    """The unbounded probe direction dir(x) = x."""

    def eval(self, x: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(x, dtype=float)).copy()

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, d = x.shape
        return np.broadcast_to(np.eye(d), (n, d, d)).copy()


@dataclass(frozen=True)
class DnCertificate:
    """Membership certificate for the localization set D^(n)."""

    n: int
    grad_sup: float
    hess_sup: float
    grad_inv_sup: float
    origin_displacement: float
    d_D2_to_zero: float
    member: bool


class Diffeo:
    """phi = id + psi with psi in the basis span and kappa = Lip(psi) < 1."""

    def __init__(self, basis: VectorFieldBasis, coeffs: np.ndarray,
                 require_contraction: bool = True):
        self.basis = basis
        self.psi = BasisField(basis, coeffs)
        self.coeffs = self.psi.coeffs
        self.kappa = self.psi.lip_bound
        if require_contraction and not self.kappa < 1.0:
            raise CertificationError(
                f"contraction certificate kappa = {self.kappa:.6g} >= 1")
        self.grad_sup = 1.0 + self.kappa
        self.hess_sup = self.psi.hess_bound
        self.grad_inv_sup = 1.0 / (1.0 - self.kappa) if self.kappa < 1.0 else math.inf
        self.dim = basis.dim

    # -- evaluation ---------------------------------------------------------

    def eval(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x + self.psi.eval(x)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, d = x.shape
        return np.broadcast_to(np.eye(d), (n, d, d)) + self.psi.jacobian(x)

    def hessian(self, x: np.ndarray) -> np.ndarray:
        return self.psi.hessian(x)

    def det_jacobian(self, x: np.ndarray) -> np.ndarray:
        J = self.jacobian(x)
        det = np.linalg.det(J) if self.dim > 1 else J[:, 0, 0]
        if np.any(det <= 0):
            raise CertificationError("nonpositive Jacobian determinant")
        return det

    def grad_det_jacobian(self, x: np.ndarray) -> np.ndarray:
        """Jacobi's formula: d_i det = det * tr(J^-1 d_i J)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.dim == 1:
            return self.psi.hessian(x)[:, 0, 0, :]
        J = self.jacobian(x)
        det = np.linalg.det(J)
        Jinv = np.linalg.inv(J)
        H = self.hessian(x)                      # (n, d, d, d), H[:, a, b, i] = d_i (J_ab)
        trace = np.einsum("nba,nabi->ni", Jinv, H)
        return det[:, None] * trace

    # -- inversion ------------------------------------------------------------

    def invert(self, y: np.ndarray) -> np.ndarray:
        """Solve phi(x) = y by contraction iteration with Newton polish."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if not self.kappa < 1.0:
            raise CertificationError("cannot invert: kappa >= 1")
        x = y.copy()
        for _ in range(INVERT_MAX_ITERS):
            resid = self.eval(x) - y
            if np.max(np.abs(resid)) < 1e-9:
                break
            x = y - self.psi.eval(x)
        # Newton polish to the target tolerance.
        for _ in range(8):
            resid = self.eval(x) - y
            err = np.max(np.abs(resid))
            if err < INVERT_TOL:
                return x
            J = self.jacobian(x)
            if self.dim == 1:
                x = x - resid / J[:, 0, 0][:, None]
            else:
                x = x - np.linalg.solve(J, resid[..., None])[..., 0]
        resid = self.eval(x) - y
        if np.max(np.abs(resid)) < INVERT_TOL:
            return x
        raise InversionError(
            f"inversion stalled at residual {np.max(np.abs(resid)):.3g} "
            f"(kappa certificate {self.kappa:.4g} violated numerically?)")

    # -- serialization ----------------------------------------------------------

    def to_json(self) -> str:
        payload = {
            "basis_id": basis_id(self.basis),
            "coeffs": [float.hex(float(c)) for c in self.coeffs],
            "kappa": float.hex(self.kappa),
            "bounds": {
                "grad_sup": self.grad_sup,
                "hess_sup": self.hess_sup,
                "grad_inv_sup": self.grad_inv_sup,
            },
        }
        return json.dumps(payload)


def basis_id(basis: VectorFieldBasis) -> str:
    return (f"warped-trig(dim={basis.dim},K={basis.K_max},"
            f"const={basis.include_constant},ref={basis.ref.description})")


def diffeo_from_json(payload: str, basis: VectorFieldBasis) -> Diffeo:
    data = json.loads(payload)
    if data["basis_id"] != basis_id(basis):
        raise ValueError(
            f"basis mismatch: {data['basis_id']} vs {basis_id(basis)}")
    coeffs = np.array([float.fromhex(c) for c in data["coeffs"]])
    return Diffeo(basis, coeffs)


class ComposedMap:
    """Evaluation-level composition outer(inner); never re-expanded in the basis."""

    def __init__(self, outer, inner):
        self.outer = outer
        self.inner = inner

    def eval(self, x: np.ndarray) -> np.ndarray:
        return self.outer.eval(self.inner.eval(x))

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        y = self.inner.eval(x)
        return np.einsum("nab,nbc->nac", self.outer.jacobian(y),
                         self.inner.jacobian(x))

    def det_jacobian(self, x: np.ndarray) -> np.ndarray:
        J = self.jacobian(x)
        return np.linalg.det(J) if J.shape[-1] > 1 else J[:, 0, 0]


class PerturbedIdentity:
    """id + eps * dir for a direction field with eval/jacobian."""

    def __init__(self, direction, eps: float):
        self.direction = direction
        self.eps = eps

    def eval(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x + self.eps * self.direction.eval(x)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, d = x.shape
        return (np.broadcast_to(np.eye(d), (n, d, d))
                + self.eps * self.direction.jacobian(x))

    def det_jacobian(self, x: np.ndarray) -> np.ndarray:
        J = self.jacobian(x)
        return np.linalg.det(J) if J.shape[-1] > 1 else J[:, 0, 0]


def compose(phi1: Diffeo, phi2) -> ComposedMap:
    """phi1 after phi2, as a pointwise closure."""
    return ComposedMap(phi1, phi2)


def _grid_points(basis: VectorFieldBasis) -> np.ndarray:
    return basis.ref.grid.nodes


def _op_norms(J: np.ndarray) -> np.ndarray:
    if J.shape[-1] == 1:
        return np.abs(J[:, 0, 0])
    return np.linalg.norm(J, ord=2, axis=(1, 2))


def d_D(phi1: Diffeo, phi2: Diffeo) -> float:
    """|phi1 - phi2|(0) + sup |grad(phi1 - phi2)|, measured on the grid."""
    diff = BasisField(phi1.basis, phi1.coeffs - phi2.coeffs)
    zero = np.zeros((1, phi1.dim))
    at0 = float(np.linalg.norm(diff.eval(zero)))
    grad = float(np.max(_op_norms(diff.jacobian(_grid_points(phi1.basis)))))
    return at0 + grad


def d_D2(phi1: Diffeo, phi2: Diffeo) -> float:
    """d_D plus sup |grad^2(phi1 - phi2)|, measured on the grid."""
    diff = BasisField(phi1.basis, phi1.coeffs - phi2.coeffs)
    H = diff.hessian(_grid_points(phi1.basis))
    n, d = H.shape[0], H.shape[1]
    h = float(np.max(np.linalg.norm(H.reshape(n, d * d, d), ord=2, axis=(1, 2)))) \
        if d > 1 else float(np.max(np.abs(H)))
    return d_D(phi1, phi2) + h


def certify_Dn(phi: Diffeo, n: int) -> DnCertificate:
    """Conservative D^(n) membership via analytic bounds.

    member iff |grad phi^-1| + d_D2(phi, 0) < n with
    d_D2(phi, 0) = |phi(0)| + |grad phi| + |grad^2 phi| (certified bounds,
    except |phi(0)| which is exact).
    """
    zero = np.zeros((1, phi.dim))
    origin = float(np.linalg.norm(phi.eval(zero)))
    dd2 = origin + phi.grad_sup + phi.hess_sup
    return DnCertificate(
        n=n, grad_sup=phi.grad_sup, hess_sup=phi.hess_sup,
        grad_inv_sup=phi.grad_inv_sup, origin_displacement=origin,
        d_D2_to_zero=dd2, member=bool(phi.grad_inv_sup + dd2 < n))


def certify_Dn_batch(coeffs: np.ndarray, basis: VectorFieldBasis, n: int,
                     origin_values: np.ndarray | None = None) -> np.ndarray:
    """Vectorized D^(n) membership for coefficient rows (M, K)."""
    coeffs = np.atleast_2d(coeffs)
    abs_c = np.abs(coeffs)
    kappa = abs_c @ basis.lip
    hess = abs_c @ basis.hess
    if origin_values is None:
        zero = np.zeros((1, basis.dim))
        origin_values = np.stack(
            [basis.eval(k, zero)[0] for k in range(1, basis.K_max + 1)])
    origin = np.linalg.norm(coeffs @ origin_values, axis=1)
    ok = kappa < 1.0
    grad_inv = np.where(ok, 1.0 / np.where(ok, 1.0 - kappa, 1.0), np.inf)
    total = grad_inv + origin + (1.0 + kappa) + hess
    return ok & (total < n)
