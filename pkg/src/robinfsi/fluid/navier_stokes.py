"""Equal-order Q1/Q1 incompressible Navier-Stokes on a fixed Cartesian grid.

BDF1 in time, Picard linearization of the convection term, SUPG/PSPG
stabilization, pseudo-stress sigma = mu grad(v) - p I. The solid overlaps
the grid: cells it covers are integrated with a reduced ghost weight, cells it
cuts with a composite sub-cell rule that drops the covered part, and the
interface velocity is imposed with Nitsche terms on the solid boundary.

Global unknown ordering: [u (n_nodes), v (n_nodes), p (n_nodes)].
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .._sparse import SparseAssembler, element_pairs
from ..errors import InvalidArgument, NonConvergenceError, SolverError
from ..geometry import QuadMesh, build_structured_quad_mesh, extract_interface, gauss_rule, points_in_polygon, shape_q4
from .common import FluidProperties, FluidState, InterfaceExchange


class FluidGrid:
    """Uniform rectangular grid with fast point location."""

    def __init__(self, nx, ny, origin=(0.0, 0.0), extent=(1.0, 1.0)):
        self.mesh: QuadMesh = build_structured_quad_mesh(nx, ny, origin, extent)
        self.nx, self.ny = int(nx), int(ny)
        self.origin = np.array(origin, dtype=float)
        self.extent = np.array(extent, dtype=float)
        self.h = self.extent / np.array([self.nx, self.ny])
        self.n_nodes = self.mesh.n_nodes
        self.diameter = float(np.hypot(*self.h))

    @property
    def nodes(self):
        return self.mesh.nodes

    @property
    def elements(self):
        return self.mesh.elements

    def locate(self, points):
        """Element index and local coordinates of each point (clamped to the grid)."""
        rel = (np.asarray(points, dtype=float) - self.origin) / self.h
        ij = np.floor(rel).astype(int)
        ij[:, 0] = np.clip(ij[:, 0], 0, self.nx - 1)
        ij[:, 1] = np.clip(ij[:, 1], 0, self.ny - 1)
        xi = np.clip(2.0 * (rel - ij) - 1.0, -1.0, 1.0)
        return ij[:, 1] * self.nx + ij[:, 0], xi

    def basis(self, points, side=None):
        """Shape values (n,4), physical gradients (n,4,2) and element ids.

        ``side`` (n,2) offsets the element search by a small step so that
        points on an element edge pick the element on that side.
        """
        points = np.asarray(points, dtype=float)
        probe = points if side is None else points + 1e-6 * self.h * np.asarray(side)
        elem, _ = self.locate(probe)
        corner = self.nodes[self.elements[elem, 0]]
        xi = np.clip(2.0 * (points - corner) / self.h - 1.0, -1.0, 1.0)
        N, dN = shape_q4(xi)
        return N, dN * (2.0 / self.h), elem

    def interpolate(self, nodal, points, side=None):
        N, _, elem = self.basis(points, side)
        vals = np.asarray(nodal)[self.elements[elem]]
        return np.einsum("na,na...->n...", N, vals)

    def gradient(self, nodal, points, side=None):
        """grad of a nodal field at points; vector fields give (n, i, j) = d f_i / d x_j."""
        _, G, elem = self.basis(points, side)
        vals = np.asarray(nodal)[self.elements[elem]]
        if vals.ndim == 2:
            return np.einsum("naj,na->nj", G, vals)
        return np.einsum("naj,nai->nij", G, vals)


def stabilization_tau(speed, h, dt, nu):
    """Elementwise SUPG/PSPG parameter ((2/dt)^2 + (2|v|/h)^2 + (4 nu/h^2)^2)^(-1/2)."""
    inv_dt = 0.0 if np.isinf(dt) else 2.0 / dt
    return 1.0 / np.sqrt(inv_dt**2 + (2.0 * speed / h) ** 2 + (4.0 * nu / h**2) ** 2)


@dataclass
class NitscheBoundary:
    """Quadrature data of a weakly imposed velocity constraint.

    ``normals`` are fluid outward normals n^f; ``values`` the prescribed
    velocity at each point.
    """

    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    values: np.ndarray
    gamma: float


@dataclass
class BoundarySpec:
    """Outer boundary conditions of the fluid box.

    velocity: side name -> f(points (n,2), t) -> (n,2) prescribed velocity.
    slip: sides with zero normal velocity only.
    outlet: traction-free sides.
    weak: impose ``velocity`` sides with Nitsche terms (penalty ``gamma_wall``)
    instead of strongly.
    """

    velocity: dict = field(default_factory=dict)
    slip: tuple = ()
    outlet: tuple = ()
    weak: bool = False
    gamma_wall: float = 100.0

    @classmethod
    def channel(cls, inlet: Callable, top="wall", weak=False, gamma_wall=100.0):
        """Inlet on the left, traction-free outlet on the right, bottom wall and
        either a top wall or a top symmetry line (``top="slip"``)."""
        zero = lambda x, t: np.zeros_like(x)
        velocity = {"left": lambda x, t: np.column_stack([inlet(x[:, 1], t), np.zeros(len(x))]),
                    "bottom": zero}
        slip = ()
        if top == "wall":
            velocity["top"] = zero
        else:
            slip = ("top",)
        return cls(velocity, slip, ("right",), weak, gamma_wall)


class _Assembly:
    """Cached element geometry and sparsity of one grid."""

    def __init__(self, grid: FluidGrid):
        self.grid = grid
        rule = gauss_rule(2, "quad")
        N, dN = shape_q4(rule.points)
        self.N = N  # (Q,4)
        self.G = dN * (2.0 / grid.h)  # (Q,4,2)
        self.w = rule.weights * np.prod(grid.h) / 4.0  # (Q,)
        n = grid.n_nodes
        conn = grid.elements
        self.edofs = np.concatenate([conn, conn + n, conn + 2 * n], axis=1)  # (E,12)
        rows, cols = element_pairs(self.edofs)
        self.asm = SparseAssembler(rows, cols, (3 * n, 3 * n))
        # constant element matrices
        self.M = np.einsum("q,qa,qb->ab", self.w, N, N)
        self.L = np.einsum("q,qai,qbi->ab", self.w, self.G, self.G)

        self.lumped = np.bincount(conn.ravel(), weights=np.tile(self.M.sum(axis=1), len(conn)),
                                  minlength=n)
        # composite rule for cut cells: SUB x SUB sub-cells with 2x2 Gauss each
        g = rule.points  # (4,2) on [-1,1]^2
        c = -1.0 + (2.0 * np.arange(SUB) + 1.0) / SUB
        centers = np.stack(np.meshgrid(c, c, indexing="ij"), axis=-1).reshape(-1, 2)
        xi = (centers[:, None, :] + g[None] / SUB).reshape(-1, 2)
        Nc, dNc = shape_q4(xi)
        self.Nc = Nc
        self.Gc = dNc * (2.0 / grid.h)
        self.wc = np.tile(rule.weights, SUB * SUB) / SUB**2 * np.prod(grid.h) / 4.0
        self.xi_c = xi
        self._faces()

    def _faces(self):
        """Interior faces as element pairs (minus side, plus side) with the
        normal derivative of both elements' shape functions at 2 face points."""
        nx, ny = self.grid.nx, self.grid.ny
        e = np.arange(nx * ny).reshape(ny, nx)
        g = gauss_rule(2, "segment")
        s, w = g.points[:, 0], g.weights
        one = np.ones_like(s)
        _, dL = shape_q4(np.column_stack([one, s]))  # minus element at xi = +1
        _, dR = shape_q4(np.column_stack([-one, s]))
        _, dB = shape_q4(np.column_stack([s, one]))  # minus element at eta = +1
        _, dT = shape_q4(np.column_stack([s, -one]))
        hx, hy = self.grid.h
        jump_v = np.concatenate([-dL[:, :, 0], dR[:, :, 0]], axis=1) * (2.0 / hx)  # (2, 8)
        jump_h = np.concatenate([-dB[:, :, 1], dT[:, :, 1]], axis=1) * (2.0 / hy)
        self.face_pairs = np.concatenate([
            np.column_stack([e[:, :-1].ravel(), e[:, 1:].ravel()]),
            np.column_stack([e[:-1, :].ravel(), e[1:, :].ravel()])])
        n_v = ny * (nx - 1)
        # (faces, 8, 8) per unit coefficient: sum_q w_q h_face j_q j_q^T
        Kv = np.einsum("q,qa,qb->ab", 0.5 * hy * w, jump_v, jump_v)
        Kh = np.einsum("q,qa,qb->ab", 0.5 * hx * w, jump_h, jump_h)
        self.face_vertical = np.arange(len(self.face_pairs)) < n_v
        self.face_K = (Kv, Kh)
        self.face_h = np.where(self.face_vertical, hx, hy)

    def scatter(self, fe):
        return np.bincount(self.edofs.ravel(), weights=fe.ravel(), minlength=3 * self.grid.n_nodes)

    def recovered_gradient(self, v, cell_weight=None):
        """Nodal gradient (n,2,2) of a nodal vector field by lumped L2 projection.

        ``cell_weight`` (E,) weights each cell's contribution, so cells under
        the solid do not leak into the gradient at nearby fluid nodes.
        """
        conn = self.grid.elements
        ve = np.asarray(v)[conn]  # (E,4,2)
        grad_q = np.einsum("qbj,ebi->eqij", self.G, ve)
        wg = np.einsum("q,qa,eqij->eaij", self.w, self.N, grad_q)
        lumped = self.lumped
        if cell_weight is not None:
            wg = wg * cell_weight[:, None, None, None]
            lumped = np.bincount(conn.ravel(), weights=(cell_weight[:, None] * self.M.sum(axis=1)).ravel(),
                                 minlength=self.grid.n_nodes)
        n = self.grid.n_nodes
        g = np.stack([np.bincount(conn.ravel(), weights=wg[..., i, j].ravel(), minlength=n)
                      for i in range(2) for j in range(2)], axis=-1) / lumped[:, None]
        return g.reshape(n, 2, 2)


SUB = 4  # sub-cells per direction in cut cells
GHOST_WEIGHT = 0.1  # relative weight of the fictitious fluid equations inside the solid


@dataclass
class FluidFraction:
    """Quadrature weights of the fluid region.

    ``element_weight`` (E,) scales the standard rule of uncut cells (1 in the
    fluid, GHOST_WEIGHT under the solid); ``cut`` lists cut cells whose
    composite-rule points carry ``cut_weight`` (n_cut, SUB*SUB*4).
    """

    element_weight: np.ndarray
    cut: np.ndarray
    cut_weight: np.ndarray

    def cell_weight(self, grid):
        """Fluid share of every cell (1 fluid, GHOST_WEIGHT covered, fraction when cut)."""
        w = self.element_weight.copy()
        if len(self.cut):
            w[self.cut] = self.cut_weight.sum(axis=1) / np.prod(grid.h)
        return w

    @classmethod
    def full(cls, grid):
        return cls(np.ones(len(grid.elements)), np.zeros(0, dtype=int), np.zeros((0, 4 * SUB * SUB)))


def fluid_fraction(grid, polygons, ghost=GHOST_WEIGHT) -> FluidFraction:
    """Classify cells against the solid polygons (union of closed loops)."""
    A = _assembly(grid)
    E = len(grid.elements)
    weight = np.ones(E)
    if not polygons:
        return FluidFraction.full(grid)
    lo = np.min([p.min(axis=0) for p in polygons], axis=0)
    hi = np.max([p.max(axis=0) for p in polygons], axis=0)
    corner = grid.nodes[grid.elements[:, 0]]  # lower-left
    near = np.nonzero(np.all(corner <= hi, axis=1) & np.all(corner + grid.h >= lo, axis=1))[0]
    if len(near) == 0:
        return FluidFraction.full(grid)
    pts = corner[near, None, :] + 0.5 * (A.xi_c[None] + 1.0) * grid.h  # (n, Qc, 2)
    flat = pts.reshape(-1, 2)
    inside = np.zeros(len(flat), dtype=bool)
    for poly in polygons:
        inside ^= points_in_polygon(flat, poly)
    inside = inside.reshape(len(near), -1)
    n_in = inside.sum(axis=1)
    full_in = n_in == inside.shape[1]
    weight[near[full_in]] = ghost
    cut_mask = (n_in > 0) & ~full_in
    cut = near[cut_mask]
    cut_weight = np.where(inside[cut_mask], ghost, 1.0) * A.wc[None]
    return FluidFraction(weight, cut, cut_weight)


def _assembly(grid):
    a = getattr(grid, "_assembly", None)
    if a is None:
        a = grid._assembly = _Assembly(grid)
    return a


GHOST_PENALTY = 0.1  # scale of the face gradient-jump penalty around cut cells


def _ghost_penalty(grid, fraction: FluidFraction, speed, tau, rho, mu, inv_dt):
    """Penalize jumps of the normal derivative of velocity and pressure across
    faces touching a cut cell, so that slivers with little fluid borrow
    control from their neighbours instead of going unconstrained.

    Velocity scale mu h + rho |a| h^2 + rho h^3/dt, pressure scale tau h / rho,
    i.e. the face counterparts of the viscous, convective, inertial and PSPG
    terms of the bulk operator.
    """
    A = _assembly(grid)
    state = np.zeros(len(grid.elements), dtype=int)  # 0 fluid, 1 cut, 2 covered
    state[fraction.element_weight < 1.0] = 2
    state[fraction.cut] = 1
    sl, sr = state[A.face_pairs[:, 0]], state[A.face_pairs[:, 1]]
    sel = np.nonzero(((sl == 1) | (sr == 1)) & (sl != 2) & (sr != 2))[0]
    if len(sel) == 0:
        return sp.csr_matrix((3 * grid.n_nodes,) * 2)
    pairs = A.face_pairs[sel]
    h = A.face_h[sel]
    a = 0.5 * (speed[pairs[:, 0]] + speed[pairs[:, 1]])
    tf = 0.5 * (tau[pairs[:, 0]] + tau[pairs[:, 1]])
    cu = GHOST_PENALTY * (mu * h + rho * a * h**2 + rho * inv_dt * h**3)
    cp = GHOST_PENALTY * tf * h / rho
    Kf = np.where(A.face_vertical[sel][:, None, None], A.face_K[0][None], A.face_K[1][None])  # (F,8,8)
    nodes = np.concatenate([grid.elements[pairs[:, 0]], grid.elements[pairs[:, 1]]], axis=1)  # (F,8)
    n = grid.n_nodes
    rows, cols, vals = [], [], []
    for off, c in ((0, cu), (n, cu), (2 * n, cp)):
        r, cc = element_pairs(nodes + off)
        rows.append(r.ravel())
        cols.append(cc.ravel())
        vals.append((c[:, None, None] * Kf).ravel())
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(3 * n, 3 * n))


def _nitsche_blocks(grid, bnd: NitscheBoundary, mu, gamma_n2):
    """Element-sized blocks (n,12,12), rhs (n,12) and element ids for one boundary."""
    n = len(bnd.weights)
    K = np.zeros((n, 12, 12))
    f = np.zeros((n, 12))
    if n == 0:
        return K, f, np.zeros(0, dtype=int)
    N, G, elem = grid.basis(bnd.points, side=-bnd.normals)
    w = bnd.weights
    nrm = bnd.normals
    g = bnd.values
    Gn = np.einsum("naj,nj->na", G, nrm)
    NN = np.einsum("na,nb->nab", N, N)
    vel_block = (bnd.gamma * NN - mu * np.einsum("na,nb->nab", N, Gn)
                 - gamma_n2 * mu * np.einsum("na,nb->nab", Gn, N)) * w[:, None, None]
    U, V, P = slice(0, 4), slice(4, 8), slice(8, 12)
    K[:, U, U] = vel_block
    K[:, V, V] = vel_block
    K[:, U, P] = NN * (w * nrm[:, 0])[:, None, None]
    K[:, V, P] = NN * (w * nrm[:, 1])[:, None, None]
    K[:, P, U] = gamma_n2 * NN * (w * nrm[:, 0])[:, None, None]
    K[:, P, V] = gamma_n2 * NN * (w * nrm[:, 1])[:, None, None]
    rhs_vel = (bnd.gamma * N - gamma_n2 * mu * Gn) * w[:, None]
    f[:, U] = rhs_vel * g[:, 0:1]
    f[:, V] = rhs_vel * g[:, 1:2]
    f[:, P] = gamma_n2 * N * (w * np.einsum("ni,ni->n", nrm, g))[:, None]
    return K, f, elem


def _side_boundary(grid, names, bc, t):
    """Nitsche data for weakly imposed outer sides."""
    from ..nitsche import InterfaceOperator

    iface = extract_interface(grid.mesh, list(names))
    op = InterfaceOperator(iface)
    pts = op.points
    vals = np.zeros_like(pts)
    seg_nodes = np.repeat(iface.node_ids, iface.quadrature_order, axis=0)
    for name in names:
        on = np.zeros(grid.n_nodes, dtype=bool)
        on[grid.mesh.nodes_on(name)] = True
        m = on[seg_nodes[:, 0]] & on[seg_nodes[:, 1]]
        vals[m] = bc.velocity[name](pts[m], t)
    # extract_interface normals point out of the meshed region = out of the fluid
    return NitscheBoundary(pts, op.weights, op.normals, vals, bc.gamma_wall)


def _dirichlet(grid, bc: BoundarySpec, t):
    """Strongly constrained DOFs and values; full velocity data wins at corners."""
    n = grid.n_nodes
    dofs, vals = [], []
    for name in bc.slip:
        nodes = grid.mesh.nodes_on(name)
        comp = 1 if name in ("top", "bottom") else 0
        dofs.append(nodes + comp * n)
        vals.append(np.zeros(len(nodes)))
    if not bc.weak:
        for name, fn in bc.velocity.items():
            nodes = grid.mesh.nodes_on(name)
            v = np.asarray(fn(grid.nodes[nodes], t), dtype=float).reshape(-1, 2)
            dofs += [nodes, nodes + n]
            vals += [v[:, 0], v[:, 1]]
    if not bc.outlet:
        dofs.append(np.array([2 * n]))
        vals.append(np.zeros(1))
    if not dofs:
        return np.zeros(0, dtype=int), np.zeros(0)
    dofs = np.concatenate(dofs)
    vals = np.concatenate(vals)
    _, last = np.unique(dofs[::-1], return_index=True)
    keep = len(dofs) - 1 - last
    return dofs[keep], vals[keep]


def _element_system(N, G, W, a_e, vn_e, tau, visc_q, rho, mu, inv_dt, body):
    """Element matrices (E,12,12) and vectors (E,12) for quadrature weights W (E,Q)."""
    Q = len(N)
    a_q = N @ a_e  # (E,Q,2)
    s = np.einsum("eqi,qai->eqa", a_q, G)  # a . grad N_a
    WN = W[..., None] * N[None]  # (E,Q,4)
    WNt = np.swapaxes(WN, 1, 2)
    M = WNt @ N
    L = (W @ np.einsum("qai,qbi->qab", G, G).reshape(Q, 16)).reshape(-1, 4, 4)
    Dx = WNt @ G[:, :, 0]  # int N_a dN_b/dx
    Dy = WNt @ G[:, :, 1]
    conv = rho * (WNt @ s)
    # SUPG: tau (a.grad w) . (rho/dt v + rho a.grad v)
    base = rho * inv_dt * N[None] + rho * s  # (E,Q,4) operator on v at q
    tw = tau[:, None] * W
    tws = tw[..., None] * s
    twst = np.swapaxes(tws, 1, 2)
    supg = twst @ base
    Kvel = rho * inv_dt * M + mu * L + conv + supg
    supg_px = twst @ G[:, :, 0]
    supg_py = twst @ G[:, :, 1]
    twb = (tw / rho)[..., None] * base
    pspg_x = G[:, :, 0].T @ twb
    pspg_y = G[:, :, 1].T @ twb

    E = len(W)
    Ke = np.empty((E, 12, 12))
    U, V, P = slice(0, 4), slice(4, 8), slice(8, 12)
    Ke[:, U, U] = Kvel
    Ke[:, U, V] = 0.0
    Ke[:, V, U] = 0.0
    Ke[:, V, V] = Kvel
    Ke[:, U, P] = -np.swapaxes(Dx, 1, 2) + supg_px
    Ke[:, V, P] = -np.swapaxes(Dy, 1, 2) + supg_py
    Ke[:, P, U] = Dx + pspg_x
    Ke[:, P, V] = Dy + pspg_y
    Ke[:, P, P] = (tau / rho)[:, None, None] * L

    # right-hand side: rho/dt v_n and body force, with their SUPG/PSPG parts
    src = rho * inv_dt * (N @ vn_e) + body  # (E,Q,2)
    stab_src = src if visc_q is None else src + visc_q
    fe = np.empty((E, 12))
    fe[:, 0:8] = np.swapaxes(WNt @ src + twst @ stab_src, 1, 2).reshape(E, 8)
    twsrc = (tw / rho)[..., None] * stab_src
    fe[:, P] = twsrc[..., 0] @ G[:, :, 0] + twsrc[..., 1] @ G[:, :, 1]
    return Ke, fe


def assemble_ns_system(grid: FluidGrid, props: FluidProperties, state_n: FluidState, advection,
                       boundaries=(), gamma_n2=-1, dt=0.02, bc: Optional[BoundarySpec] = None, t=0.0,
                       recovered_gradient=None, fraction: Optional[FluidFraction] = None):
    """Linear system of one Picard iterate of a BDF1 step.

    ``advection`` is the nodal convecting velocity (n_nodes, 2);
    ``boundaries`` a sequence of :class:`NitscheBoundary` (immersed interface
    and, when ``bc.weak``, the outer walls). ``recovered_gradient`` (n,2,2) is
    a lagged nodal velocity gradient whose divergence gives the viscous term
    of the SUPG/PSPG residual. ``fraction`` removes the solid-covered part of
    the grid. Returns (A, b) with strong Dirichlet rows already applied.
    """
    if gamma_n2 not in (-1, 1):
        raise InvalidArgument("gamma_n2 must be -1 or +1")
    if not dt > 0:
        raise InvalidArgument("dt must be positive")
    bc = bc or BoundarySpec()
    A = _assembly(grid)
    fraction = fraction or FluidFraction.full(grid)
    rho, mu = props.density, props.viscosity
    nu = mu / rho
    inv_dt = 0.0 if np.isinf(dt) else 1.0 / dt
    conn = grid.elements
    body = np.asarray(props.body_force, dtype=float)

    a_e = np.asarray(advection)[conn]  # (E,4,2)
    vn_e = np.asarray(state_n.v)[conn]
    speed = np.linalg.norm(a_e.mean(axis=1), axis=1)
    tau = stabilization_tau(speed, grid.diameter, dt, nu)  # (E,)
    visc = None
    if recovered_gradient is not None:
        visc = mu * np.einsum("qaj,eaij->eqi", A.G, recovered_gradient[conn])
    W = fraction.element_weight[:, None] * A.w[None, :]
    Ke, fe = _element_system(A.N, A.G, W, a_e, vn_e, tau, visc, rho, mu, inv_dt, body)
    ghost = np.nonzero(fraction.element_weight < 1.0)[0]
    if len(ghost):
        # covered cells only carry a weak linear extension of the fluid fields
        g = fraction.element_weight[ghost][:, None, None]
        vel = rho * inv_dt * A.M + mu * A.L
        Ke[ghost] = 0.0
        Ke[ghost, 0:4, 0:4] = g * vel
        Ke[ghost, 4:8, 4:8] = g * vel
        Ke[ghost, 8:12, 8:12] = g * (tau[ghost] / rho)[:, None, None] * A.L
        fe[ghost] = 0.0
        fe[ghost, 0:4] = g[:, :, 0] * rho * inv_dt * (vn_e[ghost, :, 0] @ A.M)
        fe[ghost, 4:8] = g[:, :, 0] * rho * inv_dt * (vn_e[ghost, :, 1] @ A.M)
    cut = fraction.cut
    if len(cut):
        visc_c = None
        if recovered_gradient is not None:
            visc_c = mu * np.einsum("qaj,eaij->eqi", A.Gc, recovered_gradient[conn[cut]])
        Ke[cut], fe[cut] = _element_system(A.Nc, A.Gc, fraction.cut_weight, a_e[cut], vn_e[cut], tau[cut],
                                           visc_c, rho, mu, inv_dt, body)

    K = A.asm.assemble(Ke)
    b = A.scatter(fe)
    if len(cut):
        K = K + _ghost_penalty(grid, fraction, speed, tau, rho, mu, inv_dt)

    bnds = list(boundaries)
    if bc.weak and bc.velocity:
        bnds.append(_side_boundary(grid, tuple(bc.velocity), bc, t))
    for bnd in bnds:
        Kb, fb, elem = _nitsche_blocks(grid, bnd, mu, gamma_n2)
        if len(elem) == 0:
            continue
        dofs = A.edofs[elem]
        r, c = element_pairs(dofs)
        K = K + sp.csr_matrix((Kb.ravel(), (r.ravel(), c.ravel())), shape=K.shape)
        b = b + np.bincount(dofs.ravel(), weights=fb.ravel(), minlength=len(b))

    ddofs, dvals = _dirichlet(grid, bc, t)
    if len(ddofs):
        mask = np.zeros(K.shape[0])
        mask[ddofs] = 1.0
        K = sp.diags(1.0 - mask) @ K + sp.diags(mask)
        b = b.copy()
        b[ddofs] = dvals
    return K.tocsc(), b


ANDERSON_DEPTH = 3


def _anderson(xs, fs, x, f, depth):
    """Next Picard iterate from Anderson mixing of the last ``depth`` steps."""
    xs.append(x)
    fs.append(f)
    if len(xs) > depth + 1:
        del xs[0], fs[0]
    if len(xs) == 1 or depth == 0:
        return x + f
    dF = np.diff(np.array(fs), axis=0).T  # (n, m)
    dX = np.diff(np.array(xs), axis=0).T
    coef, *_ = np.linalg.lstsq(dF, f, rcond=None)
    return x + f - (dX + dF) @ coef


def ns_step(grid: FluidGrid, props: FluidProperties, state_n: FluidState, boundaries=(), gamma_n2=-1,
            dt=0.02, bc: Optional[BoundarySpec] = None, t=None, picard_tol=1e-6, picard_max=15,
            guess=None, convection=True, fraction: Optional[FluidFraction] = None) -> FluidState:
    """Advance the fluid one BDF1 step with Picard iterations on convection."""
    t = state_n.t + dt if t is None else t
    n = grid.n_nodes
    a = np.asarray(state_n.v if guess is None else guess, dtype=float)
    history = []
    asm = _assembly(grid)
    cw = None if fraction is None else fraction.cell_weight(grid)
    xs, fs = [], []  # Anderson history: iterates and their fixed-point residuals
    for it in range(1, picard_max + 1):
        adv = a if convection else np.zeros_like(a)
        K, b = assemble_ns_system(grid, props, state_n, adv, boundaries, gamma_n2, dt, bc, t,
                                  asm.recovered_gradient(a, cw), fraction)
        try:
            x = spla.spsolve(K, b, permc_spec="MMD_ATA")
        except RuntimeError as exc:
            raise SolverError(f"fluid linear solve failed: {exc}") from exc
        if not np.all(np.isfinite(x)):
            raise SolverError("fluid linear solve produced non-finite values")
        v = np.column_stack([x[:n], x[n:2 * n]])
        change = np.linalg.norm(v - a) / max(np.linalg.norm(v), 1e-14)
        history.append(change)
        if change <= picard_tol:
            return FluidState(v, x[2 * n:].copy(), t, it)
        a = _anderson(xs, fs, a.ravel(), (v - a).ravel(), ANDERSON_DEPTH).reshape(-1, 2)
    raise NonConvergenceError(f"Picard iteration stalled after {picard_max} iterations "
                              f"(relative change {history[-1]:.2e})", history)


def interface_traction(grid: FluidGrid, props: FluidProperties, state: FluidState, points, fluid_normals,
                       mode="extrapolated"):
    """Pseudo-stress traction sigma^f n^f at interface points.

    "local" evaluates the one-sided element field at each point;
    "extrapolated" evaluates at half and one-and-a-half cells into the fluid
    and extrapolates linearly back to the interface, which removes the O(h)
    error of the piecewise-constant Q1 gradient.
    """
    nf = np.asarray(fluid_normals, dtype=float)
    into_fluid = -nf

    def traction_at(pts):
        Gv = grid.gradient(state.v, pts, side=into_fluid)  # (n,i,j)
        p = grid.interpolate(state.p, pts, side=into_fluid)
        return props.viscosity * np.einsum("nij,nj->ni", Gv, nf) - p[:, None] * nf

    points = np.asarray(points, dtype=float)
    if mode == "local":
        return traction_at(points)
    if mode != "extrapolated":
        raise InvalidArgument(f"unknown traction mode {mode!r}")
    hn = np.abs(into_fluid) @ grid.h
    t1 = traction_at(points + 0.5 * hn[:, None] * into_fluid)
    t2 = traction_at(points + 1.5 * hn[:, None] * into_fluid)
    return 1.5 * t1 - 0.5 * t2


class NavierStokesFluid:
    """Fluid sub-problem for the coupling driver.

    The last converged velocity is kept as the Picard starting guess for the
    next call; it only affects the iteration count, not the converged field
    beyond the Picard tolerance.
    """

    def __init__(self, grid: FluidGrid, props: FluidProperties, bc: BoundarySpec, gamma_n1=100.0, gamma_n2=-1,
                 picard_tol=1e-6, picard_max=15, traction_mode="extrapolated", convection=True):
        self.grid = grid
        self.props = props
        self.bc = bc
        self.gamma_n1 = gamma_n1
        self.gamma_n2 = gamma_n2
        self.picard_tol = picard_tol
        self.picard_max = picard_max
        self.traction_mode = traction_mode
        self.convection = convection
        self._guess = None

    def initial_state(self):
        self._guess = None
        n = self.grid.n_nodes
        return FluidState(np.zeros((n, 2)), np.zeros(n), 0.0)

    def interface_boundary(self, op, v_s):
        return NitscheBoundary(op.points, op.weights, -op.normals, np.asarray(v_s, dtype=float), self.gamma_n1)

    def step(self, state_n, op, v_s, a_s, t, dt):
        bnd = [] if op is None else [self.interface_boundary(op, v_s)]
        frac = None if op is None else fluid_fraction(self.grid, op.interface.polygons(op.d))
        guess = self._guess if self._guess is not None and self._guess[0] == t else None
        state = ns_step(self.grid, self.props, state_n, bnd, self.gamma_n2, dt, self.bc, t,
                        self.picard_tol, self.picard_max, None if guess is None else guess[1],
                        self.convection, frac)
        self._guess = (t, state.v)
        if op is None:
            return state, None
        tr = interface_traction(self.grid, self.props, state, op.points, -op.normals, self.traction_mode)
        vf = self.grid.interpolate(state.v, op.points)
        return state, InterfaceExchange(tr, vf)
