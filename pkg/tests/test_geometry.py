import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robinfsi.errors import InvalidArgument, TopologyError
from robinfsi.geometry import (build_structured_quad_mesh, extract_interface, gauss_rule, points_in_polygon,
                               shape_q4)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_gauss_weights_sum_to_reference_measure(order):
    assert gauss_rule(order, "segment").weights.sum() == pytest.approx(2.0, abs=1e-14)
    assert gauss_rule(order, "quad").weights.sum() == pytest.approx(4.0, abs=1e-14)
    assert len(gauss_rule(order, "quad")) == order**2


@given(order=st.integers(1, 3), px=st.integers(0, 5), py=st.integers(0, 5))
def test_gauss_exact_up_to_degree_2n_minus_1(order, px, py):
    if px > 2 * order - 1 or py > 2 * order - 1:
        return
    rule = gauss_rule(order, "quad")
    x, y = rule.points[:, 0], rule.points[:, 1]
    exact = lambda p: 0.0 if p % 2 else 2.0 / (p + 1)
    assert np.dot(rule.weights, x**px * y**py) == pytest.approx(exact(px) * exact(py), abs=1e-13)


def test_gauss_rejects_unsupported_orders():
    with pytest.raises(InvalidArgument):
        gauss_rule(4)
    with pytest.raises(InvalidArgument):
        gauss_rule(2, "triangle")


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_shape_functions_partition_unity_and_reproduce_coordinates(s, t):
    N, dN = shape_q4(np.array([s, t]))
    corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], float)
    assert N.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.allclose(N @ corners, [s, t], atol=1e-14)
    assert np.allclose(dN.sum(axis=0), 0.0, atol=1e-14)
    assert np.allclose(dN.T @ corners, np.eye(2), atol=1e-14)


def test_shape_functions_are_nodal():
    corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], float)
    N, _ = shape_q4(corners)
    assert np.array_equal(N, np.eye(4))


def test_structured_mesh_counts_and_area():
    mesh = build_structured_quad_mesh(8, 24, (0.5, 0.0), (0.0853, 0.3))
    assert mesh.n_nodes == 9 * 25
    assert mesh.n_elements == 192
    assert mesh.element_areas().sum() == pytest.approx(0.0853 * 0.3, rel=1e-13)
    assert np.all(mesh.element_areas() > 0)


def test_boundary_tags_run_counterclockwise():
    mesh = build_structured_quad_mesh(3, 2)
    x = mesh.nodes
    assert np.all(np.diff(x[mesh.nodes_on("bottom"), 0]) > 0)
    assert np.all(np.diff(x[mesh.nodes_on("right"), 1]) > 0)
    assert np.all(np.diff(x[mesh.nodes_on("top"), 0]) < 0)
    assert np.all(np.diff(x[mesh.nodes_on("left"), 1]) < 0)


@pytest.mark.parametrize("nx,ny", [(0, 3), (2, -1), (1.5, 2)])
def test_mesh_rejects_bad_counts(nx, ny):
    with pytest.raises(InvalidArgument):
        build_structured_quad_mesh(nx, ny)


def test_mesh_rejects_bad_extent():
    with pytest.raises(InvalidArgument):
        build_structured_quad_mesh(2, 2, extent=(0.0, 1.0))


def test_unknown_boundary_name():
    with pytest.raises(InvalidArgument):
        build_structured_quad_mesh(2, 2).nodes_on("front")


def test_three_sided_interface_is_one_open_chain():
    mesh = build_structured_quad_mesh(8, 24, (0.5, 0.0), (0.0853, 0.3))
    itf = extract_interface(mesh, ["right", "top", "left"])
    assert itf.n_segments == 24 + 8 + 24
    assert itf.chains == ((0, 56, False),)
    assert itf.total_length() == pytest.approx(2 * 0.3 + 0.0853, rel=1e-13)
    # consecutive segments share a node
    assert np.array_equal(itf.node_ids[1:, 0], itf.node_ids[:-1, 1])


def test_interface_normals_point_out_of_the_solid():
    mesh = build_structured_quad_mesh(2, 4, (0.0, 0.0), (1.0, 2.0))
    itf = extract_interface(mesh, ["right", "top", "left"])
    pts, w, n, _ = itf.quadrature()
    center = np.array([0.5, 1.0])
    right = pts[:, 0] > 1 - 1e-12
    assert np.allclose(n[right], [1.0, 0.0])
    top = pts[:, 1] > 2 - 1e-12
    assert np.allclose(n[top], [0.0, 1.0])
    assert np.all(np.einsum("ij,ij->i", pts - center, n) > 0)
    assert w.sum() == pytest.approx(itf.total_length(), rel=1e-14)


def test_closed_boundary_is_a_closed_loop():
    mesh = build_structured_quad_mesh(3, 3)
    itf = extract_interface(mesh, ["bottom", "right", "top", "left"])
    assert len(itf.chains) == 1 and itf.chains[0][2] is True
    assert itf.total_length() == pytest.approx(4.0)


def test_predicate_selector_matches_named_selection():
    mesh = build_structured_quad_mesh(4, 4)
    by_name = extract_interface(mesh, "top")
    by_pred = extract_interface(mesh, lambda m: m[1] > 0.999)
    assert np.array_equal(by_name.node_ids, by_pred.node_ids)


def test_two_disjoint_sides_give_two_chains():
    mesh = build_structured_quad_mesh(3, 3)
    itf = extract_interface(mesh, ["left", "right"])
    assert len(itf.chains) == 2


def test_empty_selection_is_rejected():
    with pytest.raises(InvalidArgument):
        extract_interface(build_structured_quad_mesh(2, 2), lambda m: False)


def test_branching_selection_is_rejected():
    from robinfsi.geometry import QuadMesh

    # two squares touching only at a corner: the shared node has two outgoing edges
    nodes = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [2, 1], [2, 2], [1, 2]], float)
    elems = np.array([[0, 1, 2, 3], [2, 4, 5, 6]])
    mesh = QuadMesh(nodes, elems)
    with pytest.raises(TopologyError):
        extract_interface(mesh, lambda m: True)


def test_interface_follows_displacement():
    mesh = build_structured_quad_mesh(1, 2, extent=(1.0, 2.0))
    itf = extract_interface(mesh, "right")
    d = np.zeros(mesh.n_dofs)
    d[0::2] = 0.25
    assert np.allclose(itf.endpoints(d)[:, :, 0], 1.25)
    assert itf.total_length(d) == pytest.approx(2.0)


def test_polygon_of_open_chain_encloses_the_strip():
    mesh = build_structured_quad_mesh(2, 4, (0.0, 0.0), (0.2, 1.0))
    itf = extract_interface(mesh, ["right", "top", "left"])
    (poly,) = itf.polygons()
    pts = np.array([[0.1, 0.5], [0.1, 0.01], [0.3, 0.5], [-0.05, 0.5], [0.1, 1.05]])
    assert points_in_polygon(pts, poly).tolist() == [True, True, False, False, False]


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_point_in_polygon_matches_box_test(x, y):
    box = np.array([[-1, -0.5], [1, -0.5], [1, 0.5], [-1, 0.5]], float)
    if abs(abs(x) - 1) < 1e-9 or abs(abs(y) - 0.5) < 1e-9:
        return
    assert points_in_polygon(np.array([[x, y]]), box)[0] == (abs(x) < 1 and abs(y) < 0.5)
