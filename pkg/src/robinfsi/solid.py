"""Finite-strain compressible Neo-Hookean solid on bilinear quads.

Plane strain, total Lagrangian assembly, backward-Euler (BDF1) time stepping
with Newton iterations on the end-of-step displacement.

Strain energy per unit reference volume::

    W(F) = mu/2 (tr(F^T F) - 2) - mu ln J + lam/2 (ln J)^2

which gives the Cauchy stress sigma = mu/J (B - I) + lam/J ln(J) I.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from ._sparse import SparseAssembler, element_pairs
from .errors import ElementInversionError, InvalidArgument, NonConvergenceError
from .geometry import QuadMesh, gauss_rule, shape_q4


@dataclass(frozen=True)
class NeoHookeanMaterial:
    youngs_modulus: float
    poisson_ratio: float
    density: float

    def __post_init__(self):
        if not self.youngs_modulus > 0:
            raise InvalidArgument("Young's modulus must be positive")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise InvalidArgument("Poisson ratio must lie in (-1, 0.5)")
        if not self.density > 0:
            raise InvalidArgument("density must be positive")

    @property
    def lam(self):
        E, nu = self.youngs_modulus, self.poisson_ratio
        return E * nu / ((1 + nu) * (1 - 2 * nu))

    @property
    def mu(self):
        return self.youngs_modulus / (2 * (1 + self.poisson_ratio))


@dataclass(frozen=True)
class SolidState:
    d: np.ndarray
    v: np.ndarray
    a: np.ndarray
    t: float = 0.0
    newton_iterations: int = 0

    @classmethod
    def zeros(cls, n_dofs, t=0.0):
        z = np.zeros(n_dofs)
        return cls(z, z.copy(), z.copy(), t)


def _check_det(J):
    bad = ~(J > 0)
    if bad.any():
        e = int(np.argwhere(bad)[0][0])
        raise ElementInversionError(e, float(np.min(J[e])))


def cauchy_stress(F, material: NeoHookeanMaterial, element=None):
    """Cauchy stress for one or a batch (..., 2, 2) of deformation gradients."""
    F = np.asarray(F, dtype=float)
    J = np.linalg.det(F)
    if np.any(~(J > 0)):
        raise ElementInversionError(-1 if element is None else element, float(np.min(J)))
    B = F @ np.swapaxes(F, -1, -2)
    I = np.eye(2)
    Jx = J[..., None, None]
    return material.mu / Jx * (B - I) + material.lam / Jx * np.log(Jx) * I


def _det_minus_one(H):
    return H[..., 0, 0] + H[..., 1, 1] + H[..., 0, 0] * H[..., 1, 1] - H[..., 0, 1] * H[..., 1, 0]


def first_piola_and_tangent(F, material, H=None):
    """P(F) and dP/dF for a batch of deformation gradients (..., 2, 2).

    Pass the displacement gradient ``H = F - I`` when available: the stress is
    then formed without the cancellation in ``F - F^-T`` that would otherwise
    put a floor of about eps*mu under Newton residuals of stiff solids.
    """
    lam, mu = material.lam, material.mu
    if H is None:
        H = F - np.eye(2)
    Finv = np.linalg.inv(F)
    FinvT = np.swapaxes(Finv, -1, -2)
    lnJ = np.log1p(_det_minus_one(H))[..., None, None]
    # F - F^-T = H + F^-T H^T
    P = mu * (H + FinvT @ np.swapaxes(H, -1, -2)) + lam * lnJ * FinvT
    I = np.eye(2)
    # A[iJkL] = mu d_ik d_JL + (mu - lam lnJ) Finv_Li Finv_Jk + lam Finv_Ji Finv_Lk
    A = (
        mu * np.einsum("ik,JL->iJkL", I, I)
        + (mu - lam * lnJ)[..., None, None] * np.einsum("...Li,...Jk->...iJkL", Finv, Finv)
        + lam * np.einsum("...Ji,...Lk->...iJkL", Finv, Finv)
    )
    return P, A


def strain_energy_density(F, material):
    lam, mu = material.lam, material.mu
    J = np.linalg.det(F)
    lnJ = np.log(J)
    trC = np.einsum("...ij,...ij->...", F, F)
    return 0.5 * mu * (trC - 2.0) - mu * lnJ + 0.5 * lam * lnJ**2


class SolidSystem:
    """Mesh + material + clamped DOFs with cached reference geometry.

    Treat as immutable once built.
    """

    def __init__(self, mesh: QuadMesh, material: NeoHookeanMaterial, dirichlet_dofs=(), quad_order=2):
        self.mesh = mesh
        self.material = material
        self.n_dofs = mesh.n_dofs
        dd = np.unique(np.asarray(dirichlet_dofs, dtype=int))
        self.dirichlet_dofs = dd
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[dd] = False
        self.free_dofs = np.nonzero(mask)[0]

        rule = gauss_rule(quad_order, "quad")
        N, dN = shape_q4(rule.points)  # (Q,4), (Q,4,2)
        X = mesh.nodes[mesh.elements]  # (E,4,2)
        Jac = np.einsum("eai,qaj->eqij", X, dN)
        detJ = np.linalg.det(Jac)
        _check_det(detJ)
        self._N = N
        self._dNdX = np.einsum("qaj,eqji->eqai", dN, np.linalg.inv(Jac))  # (E,Q,4,2)
        self._wdet = detJ * rule.weights[None, :]  # (E,Q)

        conn = mesh.elements
        self._edofs = np.stack([2 * conn, 2 * conn + 1], axis=-1).reshape(len(conn), 8)
        rows, cols = element_pairs(self._edofs)
        self._asm = SparseAssembler(rows, cols, (self.n_dofs, self.n_dofs))
        self.mass = assemble_mass(self)

    @classmethod
    def clamped(cls, mesh, material, boundaries=("bottom",), quad_order=2):
        nodes = np.unique(np.concatenate([mesh.nodes_on(b) for b in boundaries]))
        dofs = np.concatenate([2 * nodes, 2 * nodes + 1])
        return cls(mesh, material, dofs, quad_order)

    def assemble(self, ke):
        return self._asm.assemble(ke)

    def displacement_gradients(self, d):
        ue = np.asarray(d).reshape(-1, 2)[self.mesh.elements]  # (E,4,2)
        return np.einsum("eai,eqaJ->eqiJ", ue, self._dNdX)

    def deformation_gradients(self, d):
        return np.eye(2) + self.displacement_gradients(d)

    def scatter(self, fe):
        return np.bincount(self._edofs.ravel(), weights=fe.ravel(), minlength=self.n_dofs)

    def strain_energy(self, d):
        F = self.deformation_gradients(d)
        _check_det(np.linalg.det(F))
        return float(np.sum(strain_energy_density(F, self.material) * self._wdet))

    def kinetic_energy(self, v):
        return 0.5 * float(v @ (self.mass @ v))

    def linear_momentum(self, v):
        p = self.mass @ v
        return np.array([p[0::2].sum(), p[1::2].sum()])


def assemble_mass(system: SolidSystem):
    """Consistent mass matrix, integral of rho N^T N over the reference domain."""
    rho = system.material.density
    m = rho * np.einsum("qa,qb,eq->eab", system._N, system._N, system._wdet)  # (E,4,4)
    ke = np.zeros((len(m), 4, 2, 4, 2))
    ke[:, :, 0, :, 0] = m
    ke[:, :, 1, :, 1] = m
    return system.assemble(ke.reshape(len(m), 8, 8))


def assemble_internal_force_and_tangent(system: SolidSystem, d, tangent=True):
    H = system.displacement_gradients(d)
    F = np.eye(2) + H
    _check_det(1.0 + _det_minus_one(H))
    P, A = first_piola_and_tangent(F, system.material, H)
    w = system._wdet
    dN = system._dNdX
    fe = np.einsum("eqiJ,eqaJ,eq->eai", P, dN, w).reshape(-1, 8)
    fint = system.scatter(fe)
    if not tangent:
        return fint, None
    ke = np.einsum("eqaJ,eqiJkL,eqbL,eq->eaibk", dN, A, dN, w, optimize=True).reshape(-1, 8, 8)
    return fint, system.assemble(ke)


def solve_solid_step(system: SolidSystem, state_n: SolidState, f_ext, m_fs=None, dt=0.02,
                     newton_tol=1e-8, newton_max=25) -> SolidState:
    """Advance one BDF1 step: M a + [M_fs v] + F_int(d) = F_ext.

    Newton on d_{n+1}; clamped DOFs stay at zero. Convergence when the free-DOF
    residual norm falls below ``newton_tol`` times the first residual, with an
    absolute floor of 1e-12.
    """
    if not dt > 0:
        raise InvalidArgument("time step must be positive")
    f_ext = np.asarray(f_ext, dtype=float)
    if f_ext.shape != (system.n_dofs,):
        raise InvalidArgument(f"force vector has shape {f_ext.shape}, expected ({system.n_dofs},)")
    free = system.free_dofs
    M = system.mass
    d_n, v_n = state_n.d, state_n.v

    d = d_n + dt * v_n
    d[system.dirichlet_dofs] = 0.0
    history = []
    r0 = None
    for it in range(newton_max + 1):
        v = (d - d_n) / dt
        a = (v - v_n) / dt
        fint, K = assemble_internal_force_and_tangent(system, d)
        R = M @ a + fint - f_ext
        if m_fs is not None:
            R = R + m_fs @ v
        res = float(np.linalg.norm(R[free]))
        history.append(res)
        if r0 is None:
            r0 = res
        if res <= max(newton_tol * r0, 1e-12):
            return SolidState(d, v, a, state_n.t + dt, it)
        if it == newton_max:
            break
        Jm = M / dt**2 + K
        if m_fs is not None:
            Jm = Jm + m_fs / dt
        Jff = Jm[free][:, free].tocsc()
        d[free] -= spla.spsolve(Jff, R[free])
    raise NonConvergenceError(f"Newton did not converge in {newton_max} iterations "
                              f"(residual {history[-1]:.3e})", history)
