"""Interface force vectors and interface mass matrix of the Robin condition
on the solid, sigma^s n^s = -sigma^f n^f - gamma_N1 (v^s - v^f).

All integrals run over the interface in the configuration given by the
solid displacement passed to :class:`InterfaceOperator`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgument
from .geometry import InterfaceMesh


class Treatment(str, enum.Enum):
    EXPLICIT = "explicit"  # solid velocity lagged inside the penalty term
    IMPLICIT = "implicit"  # penalty acts as damping on the solid unknown

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        v = str(value).strip().lower()
        aliases = {"1": "explicit", "alg1": "explicit", "algorithm1": "explicit",
                   "2": "implicit", "alg2": "implicit", "algorithm2": "implicit"}
        try:
            return cls(aliases.get(v, v))
        except ValueError:
            raise InvalidArgument(f"unknown treatment {value!r}") from None


@dataclass(frozen=True)
class CouplingConfig:
    gamma_n1: float = 100.0
    gamma_n2: int = -1
    beta: float = 0.1
    k_max: int = 2
    dt: float = 0.02
    treatment: Treatment = Treatment.EXPLICIT
    early_exit_tol: float | None = None  # None: always run k_max iterations
    blowup_threshold: float = 1e3  # |d|_inf above this aborts the run

    def __post_init__(self):
        object.__setattr__(self, "treatment", Treatment.parse(self.treatment))
        if not self.gamma_n1 >= 0:
            raise InvalidArgument("gamma_n1 must be >= 0")
        if self.gamma_n2 not in (-1, 1):
            raise InvalidArgument("gamma_n2 must be -1 or +1")
        if not 0 < self.beta <= 1:
            raise InvalidArgument("beta must lie in (0, 1]")
        if int(self.k_max) != self.k_max or self.k_max < 1:
            raise InvalidArgument("k_max must be a positive integer")
        if not self.dt > 0:
            raise InvalidArgument("dt must be positive")


class InterfaceOperator:
    """Quadrature on the wetted solid boundary at one solid configuration.

    Provides sampling of nodal solid fields at the interface points and the
    integral of N_s^T (samples) back onto solid DOFs.
    """

    def __init__(self, interface: InterfaceMesh, d=None, n_dofs=None):
        self.interface = interface
        self.d = d
        self.n_dofs = n_dofs if n_dofs is not None else 2 * len(interface.ref_points)
        self.points, self.weights, self.normals, self._N = interface.quadrature(d)
        q = interface.quadrature_order
        S = interface.n_segments
        self.n_samples = S * q
        # DOF index of each (sample, local node, component) contribution
        nid = np.broadcast_to(interface.node_ids[:, None, :], (S, q, 2)).reshape(-1, 2)
        self._nid = nid
        self._Nw = (np.broadcast_to(self._N, (S, q, 2)).reshape(-1, 2)) * self.weights[:, None]
        self._dofs = np.stack([2 * nid, 2 * nid + 1], axis=-1)  # (n, 2 nodes, 2 comps)

    @property
    def fluid_normals(self):
        return -self.normals

    def _check(self, samples):
        samples = np.asarray(samples, dtype=float)
        if samples.shape != (self.n_samples, 2):
            raise InvalidArgument(f"samples have shape {samples.shape}, interface layout is ({self.n_samples}, 2)")
        return samples

    def sample(self, nodal):
        S, q = self.interface.n_segments, self.interface.quadrature_order
        x = np.asarray(nodal, dtype=float).reshape(-1, 2)[self.interface.node_ids]  # (S,2,2)
        return np.einsum("qa,sai->sqi", self._N, x).reshape(S * q, 2)

    def integrate(self, samples):
        """Integral of N_s^T s over the interface, as a solid DOF vector."""
        s = self._check(samples)
        contrib = self._Nw[:, :, None] * s[:, None, :]  # (n, node, comp)
        return np.bincount(self._dofs.ravel(), weights=contrib.ravel(), minlength=self.n_dofs)

    def mass(self, gamma):
        """gamma * integral of N_s^T N_s over the interface (both components)."""
        m = gamma * np.einsum("na,nb->nab", self._Nw, np.broadcast_to(
            self._N, (self.interface.n_segments, self.interface.quadrature_order, 2)).reshape(-1, 2))
        rows, cols, vals = [], [], []
        for c in (0, 1):
            dof = 2 * self._nid + c
            rows.append(np.repeat(dof[:, :, None], 2, axis=2).ravel())
            cols.append(np.repeat(dof[:, None, :], 2, axis=1).ravel())
            vals.append(m.ravel())
        return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.n_dofs, self.n_dofs)).tocsr()


def _operator(interface, d=None):
    if isinstance(interface, InterfaceMesh):
        return InterfaceOperator(interface, d)
    return interface


def assemble_f_ext1(interface, exchange):
    """-(integral of N_s^T [sigma^f n^f]): fluid traction load on the solid."""
    op = _operator(interface)
    return -op.integrate(exchange.traction)


def assemble_f_ext2(interface, v_s_samples, v_f_samples, gamma_n1):
    """-gamma_N1 (integral of N_s^T [v^s - v^f]): velocity-mismatch penalty load."""
    op = _operator(interface)
    vs = op._check(v_s_samples)
    vf = op._check(v_f_samples)
    return -gamma_n1 * op.integrate(vs - vf)


def assemble_interface_mass(interface, gamma_n1):
    if gamma_n1 < 0:
        raise InvalidArgument("gamma_n1 must be >= 0")
    return _operator(interface).mass(gamma_n1)


def robin_traction(exchange, v_s_samples, gamma_n1):
    """Pointwise solid traction -sigma^f n^f - gamma_N1 (v^s - v^f)."""
    tr = np.asarray(exchange.traction, dtype=float)
    vf = np.asarray(exchange.fluid_velocity, dtype=float)
    vs = np.asarray(v_s_samples, dtype=float)
    if not (tr.shape == vf.shape == vs.shape):
        raise InvalidArgument("traction and velocity samples must share one layout")
    return -tr - gamma_n1 * (vs - vf)
