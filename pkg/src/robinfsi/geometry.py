"""Structured quadrilateral meshes, Gauss rules and interface extraction.

The reference element is the bi-unit square with counterclockwise local node
numbering::

    3 ---- 2
    |      |
    0 ---- 1
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Union

import numpy as np

from .errors import InvalidArgument, TopologyError

# local node coordinates of the reference quad
QUAD_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
# local edges in counterclockwise order
QUAD_EDGES = ((0, 1), (1, 2), (2, 3), (3, 0))


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.weights)


@lru_cache(maxsize=None)
def _gauss_rule(order, element_kind):
    if order not in (1, 2, 3):
        raise InvalidArgument(f"unsupported Gauss order {order}; expected 1, 2 or 3")
    x, w = np.polynomial.legendre.leggauss(order)
    if element_kind == "segment":
        pts, wts = x.reshape(-1, 1), w
    elif element_kind == "quad":
        xi, eta = np.meshgrid(x, x, indexing="xy")
        pts = np.column_stack([xi.ravel(), eta.ravel()])
        wts = np.outer(w, w).ravel()
    else:
        raise InvalidArgument(f"unknown element kind {element_kind!r}")
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts)


def gauss_rule(order: int, element_kind: str = "quad") -> QuadratureRule:
    """Tensor-product Gauss-Legendre rule on [-1, 1] or [-1, 1]^2.

    Exact for polynomials of degree ``2*order - 1`` in each direction.
    """
    return _gauss_rule(int(order), element_kind)


def shape_q4(xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear shape functions and their reference gradients.

    ``xi`` has shape (..., 2); returns N (..., 4) and dN/dxi (..., 4, 2).
    """
    xi = np.asarray(xi, dtype=float)
    s = xi[..., 0, None]
    t = xi[..., 1, None]
    cs = QUAD_CORNERS[:, 0]
    ct = QUAD_CORNERS[:, 1]
    N = 0.25 * (1 + cs * s) * (1 + ct * t)
    dN = np.stack([0.25 * cs * (1 + ct * t), 0.25 * ct * (1 + cs * s)], axis=-1)
    return N, dN


def shape_l2(xi):
    """Linear segment shape functions at reference coordinates ``xi``."""
    xi = np.asarray(xi, dtype=float)
    return np.stack([0.5 * (1 - xi), 0.5 * (1 + xi)], axis=-1)


@dataclass(frozen=True)
class QuadMesh:
    nodes: np.ndarray  # (n_nodes, 2)
    elements: np.ndarray  # (n_elem, 4), counterclockwise
    boundary_tags: dict = field(default_factory=dict)  # name -> ordered node ids
    shape: tuple | None = None  # (nx, ny) for structured meshes
    origin: tuple | None = None
    extent: tuple | None = None

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_dofs(self):
        return 2 * len(self.nodes)

    def element_areas(self, order=2):
        rule = gauss_rule(order, "quad")
        _, dN = shape_q4(rule.points)
        X = self.nodes[self.elements]  # (E, 4, 2)
        J = np.einsum("eai,qaj->eqij", X, dN)
        return np.einsum("eq,q->e", np.linalg.det(J), rule.weights)

    def boundary_edges(self):
        """Edges that belong to exactly one element, oriented counterclockwise.

        Returns (edges (m, 2), owners (m,)).
        """
        seen = {}
        for e, conn in enumerate(self.elements):
            for a, b in QUAD_EDGES:
                i, j = int(conn[a]), int(conn[b])
                key = (min(i, j), max(i, j))
                if key in seen:
                    seen[key] = None
                else:
                    seen[key] = (i, j, e)
        out = [v for v in seen.values() if v is not None]
        edges = np.array([(i, j) for i, j, _ in out], dtype=int).reshape(-1, 2)
        owners = np.array([e for _, _, e in out], dtype=int)
        return edges, owners

    def nodes_on(self, name):
        try:
            return self.boundary_tags[name]
        except KeyError:
            raise InvalidArgument(f"no boundary named {name!r}") from None

    def nearest_node(self, point):
        return int(np.argmin(np.linalg.norm(self.nodes - np.asarray(point), axis=1)))


def build_structured_quad_mesh(nx: int, ny: int, origin=(0.0, 0.0), extent=(1.0, 1.0)) -> QuadMesh:
    """Uniform ``nx`` by ``ny`` grid of bilinear quads over a rectangle.

    Nodes are numbered row by row starting at ``origin``. Boundary tags list
    the nodes of each side in counterclockwise traversal order.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise InvalidArgument(f"element counts must be positive integers, got ({nx}, {ny})")
    if extent[0] <= 0 or extent[1] <= 0:
        raise InvalidArgument(f"extent must be positive, got {extent}")
    nx, ny = int(nx), int(ny)
    x = origin[0] + np.linspace(0.0, extent[0], nx + 1)
    y = origin[1] + np.linspace(0.0, extent[1], ny + 1)
    X, Y = np.meshgrid(x, y, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return j * (nx + 1) + i

    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    i, j = i.ravel(), j.ravel()
    elements = np.column_stack([nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)])

    tags = {
        "bottom": np.array([nid(k, 0) for k in range(nx + 1)]),
        "right": np.array([nid(nx, k) for k in range(ny + 1)]),
        "top": np.array([nid(k, ny) for k in range(nx, -1, -1)]),
        "left": np.array([nid(0, k) for k in range(ny, -1, -1)]),
    }
    return QuadMesh(nodes, elements, tags, shape=(nx, ny), origin=tuple(map(float, origin)),
                    extent=tuple(map(float, extent)))


Selector = Union[str, Iterable[str], Callable[[np.ndarray], bool]]


@dataclass(frozen=True)
class InterfaceMesh:
    """Ordered chain(s) of solid boundary edges wetted by the fluid.

    ``node_ids[s]`` are the solid nodes at the start/end of segment ``s`` in
    counterclockwise order, so the outward solid normal of a segment with
    unit tangent t is (t_y, -t_x).
    """

    node_ids: np.ndarray  # (S, 2)
    owners: np.ndarray  # (S,) owning solid element
    ref_points: np.ndarray  # (n_nodes_total, 2) solid reference coordinates
    chains: tuple  # ((start, stop, closed), ...) segment index ranges
    quadrature_order: int = 2

    @property
    def n_segments(self):
        return len(self.node_ids)

    @property
    def nodes(self):
        """Distinct solid nodes touched by the interface."""
        return np.unique(self.node_ids)

    @property
    def n_samples(self):
        return self.n_segments * self.quadrature_order

    def endpoints(self, d=None):
        """Segment endpoints (S, 2, 2) in the configuration displaced by ``d``."""
        x = self.ref_points
        if d is not None:
            x = x + np.asarray(d).reshape(-1, 2)
        return x[self.node_ids]

    def lengths(self, d=None):
        p = self.endpoints(d)
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    def normals(self, d=None):
        """Unit outward solid normals n^s of each segment."""
        p = self.endpoints(d)
        t = p[:, 1] - p[:, 0]
        n = np.column_stack([t[:, 1], -t[:, 0]])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def quadrature(self, d=None):
        """Sample points (S*q, 2), weights (S*q,), normals (S*q, 2) and the
        segment shape function values (q, 2) of the interface rule."""
        rule = gauss_rule(self.quadrature_order, "segment")
        N = shape_l2(rule.points[:, 0])  # (q, 2)
        p = self.endpoints(d)
        pts = np.einsum("qa,sai->sqi", N, p).reshape(-1, 2)
        L = self.lengths(d)
        w = (0.5 * L[:, None] * rule.weights[None, :]).ravel()
        n = np.repeat(self.normals(d), self.quadrature_order, axis=0)
        return pts, w, n, N

    def total_length(self, d=None):
        return float(self.lengths(d).sum())

    def polygons(self, d=None):
        """One vertex loop (k, 2) per chain. An open chain is closed by the
        straight edge from its last node back to its first, which for a
        clamped strip runs along the clamped side."""
        p = self.endpoints(d)
        return [np.vstack([p[a:b, 0], p[b - 1, 1][None]]) if not closed else p[a:b, 0].copy()
                for a, b, closed in self.chains]


def points_in_polygon(points, polygon):
    """Even-odd crossing test; points exactly on an edge may fall either way."""
    pts = np.asarray(points, dtype=float)
    v = np.asarray(polygon, dtype=float)
    w = np.roll(v, -1, axis=0)
    x, y = pts[:, 0:1], pts[:, 1:2]
    straddle = (v[None, :, 1] > y) != (w[None, :, 1] > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = v[None, :, 0] + (y - v[None, :, 1]) * (w[None, :, 0] - v[None, :, 0]) / (w[None, :, 1] - v[None, :, 1])
    return np.count_nonzero(straddle & (x < x_cross), axis=1) % 2 == 1


def _select_edges(mesh, selector):
    edges, owners = mesh.boundary_edges()
    if callable(selector):
        mid = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
        mask = np.array([bool(selector(m)) for m in mid], dtype=bool)
    else:
        names = [selector] if isinstance(selector, str) else list(selector)
        mask = np.zeros(len(edges), dtype=bool)
        for name in names:
            tagged = np.zeros(mesh.n_nodes, dtype=bool)
            tagged[mesh.nodes_on(name)] = True
            mask |= tagged[edges[:, 0]] & tagged[edges[:, 1]]
    return edges[mask], owners[mask]


def extract_interface(mesh: QuadMesh, selector: Selector, quadrature_order: int = 2) -> InterfaceMesh:
    """Collect the selected boundary edges into contiguous chains.

    ``selector`` is a boundary name, a list of names, or a predicate evaluated
    at each boundary edge midpoint.
    """
    gauss_rule(quadrature_order, "segment")
    edges, owners = _select_edges(mesh, selector)
    if len(edges) == 0:
        raise InvalidArgument("interface selector matched no boundary edges")

    by_start = {}
    ends = set()
    for k, (i, j) in enumerate(edges):
        if i in by_start or j in ends:
            raise TopologyError(f"selected edges branch at node {i if i in by_start else j}")
        by_start[int(i)] = k
        ends.add(int(j))

    heads = sorted((int(i) for i, _ in edges if i not in ends), key=lambda n: by_start[n])
    order, chains, used = [], [], set()

    def walk(start_node):
        begin = len(order)
        node = start_node
        while node in by_start and by_start[node] not in used:
            k = by_start[node]
            used.add(k)
            order.append(k)
            node = int(edges[k, 1])
        return begin, len(order), node == start_node

    for h in heads:
        chains.append(walk(h))
    # remaining edges form closed loops
    for k in range(len(edges)):
        if k not in used:
            chains.append(walk(int(edges[k, 0])))

    order = np.array(order, dtype=int)
    return InterfaceMesh(
        node_ids=edges[order].copy(),
        owners=owners[order].copy(),
        ref_points=mesh.nodes.copy(),
        chains=tuple(chains),
        quadrature_order=quadrature_order,
    )
