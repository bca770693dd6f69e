import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vansfem.errors import ConfigurationError, DomainError
from vansfem.fem import (build_box_mesh, cell_values, fe_space, gauss_rule, lagrange_eval,
                         mass_matrix, reference_nodes, stiffness_matrix, tabulate)

unit = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


def test_box_mesh_counts_2d():
    mesh = build_box_mesh([0, 0], [2, 1], [4, 2])
    assert mesh.n_cells == 8
    assert mesh.n_nodes == 15
    np.testing.assert_allclose(mesh.cell_measures, 0.25)
    assert len(mesh.facets_with_tag("x-max")) == 2


def test_box_mesh_3d_desk_duct():
    mesh = build_box_mesh([0, 0, 0], [0.01, 0.01, 0.06], [5, 5, 30])
    assert mesh.n_cells == 750
    np.testing.assert_allclose(mesh.cell_measures, 8e-9, rtol=1e-12)
    assert mesh.n_nodes == 6 * 6 * 31


def test_mesh_rejects_inverted_bounds():
    with pytest.raises(ConfigurationError):
        build_box_mesh([0, 0], [0, 1], [2, 2])


def test_locate_points_and_outside():
    mesh = build_box_mesh([0, 0], [1, 1], [4, 4])
    cells, ref = mesh.locate(np.array([[0.1, 0.1], [1.0, 1.0], [0.5, 0.25], [1.5, 0.2]]))
    assert cells[0] == 0
    assert cells[1] == mesh.n_cells - 1  # upper face belongs to the last cell
    assert cells[3] == -1
    np.testing.assert_allclose(ref[0], [0.4, 0.4])


@settings(max_examples=50, deadline=None)
@given(k=st.integers(1, 4), x=unit, y=unit)
def test_partition_of_unity(k, x, y):
    vals, grads, _ = tabulate(k, [[x, y]])
    assert abs(vals.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(grads.sum(axis=1), 0.0, atol=1e-10)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_basis_is_cardinal_at_nodes(k):
    nodes = reference_nodes(k, 2)
    vals, _, _ = tabulate(k, nodes)
    np.testing.assert_allclose(vals, np.eye(len(nodes)), atol=1e-12)


def test_lagrange_eval_outside_reference_cell():
    with pytest.raises(DomainError):
        lagrange_eval(1, [1.2, 0.5])


def test_degree_out_of_range():
    with pytest.raises(ConfigurationError):
        tabulate(7, [[0.5, 0.5]])


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_gauss_rule_monomial_exactness(n):
    rule = gauss_rule(n, 2)
    for a in range(2 * n):
        for b in range(2 * n):
            exact = 1.0 / ((a + 1) * (b + 1))
            approx = np.dot(rule.weights, rule.points[:, 0] ** a * rule.points[:, 1] ** b)
            assert abs(approx - exact) < 1e-14


def test_gauss_rule_fails_one_degree_higher():
    rule = gauss_rule(2, 2)
    approx = np.dot(rule.weights, rule.points[:, 0] ** 4)
    assert abs(approx - 0.2) > 1e-6


def test_mass_matrix_sums_to_area_and_stiffness_kills_constants():
    mesh = build_box_mesh([-1, -1], [1, 1], [3, 5])
    for k in (1, 2):
        V = fe_space(mesh, k)
        M = mass_matrix(V)
        K = stiffness_matrix(V)
        assert abs(M.sum() - 4.0) < 1e-12
        np.testing.assert_allclose(K @ np.ones(V.n_dofs), 0.0, atol=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_interpolation_reproduces_polynomials(k):
    mesh = build_box_mesh([0, 0], [1, 2], [3, 2])
    V = fe_space(mesh, k)

    def f(x):
        return x[:, 0] ** k + 2 * x[:, 1] ** k - x[:, 0] * x[:, 1]

    pts = np.random.default_rng(0).uniform([0, 0], [1, 2], size=(30, 2))
    np.testing.assert_allclose(V.evaluate(V.interpolate(f), pts), f(pts), atol=1e-11)


def test_laplacian_of_quadratic_is_exact():
    mesh = build_box_mesh([0, 0], [1, 1], [2, 2])
    V = fe_space(mesh, 2)
    coeffs = V.interpolate(lambda x: x[:, 0] ** 2 + 3 * x[:, 1] ** 2)
    cv = cell_values(V, gauss_rule(3, 2))
    lap = np.einsum("cqa,ca->cq", cv.laplacians, coeffs[V.cell_dofs])
    np.testing.assert_allclose(lap, 8.0, atol=1e-10)


def test_boundary_dofs_of_q2_face():
    mesh = build_box_mesh([0, 0], [1, 1], [2, 3])
    V = fe_space(mesh, 2)
    dofs = V.boundary_dofs("x-min")
    assert dofs.size == 7
    np.testing.assert_allclose(V.support_points[dofs, 0], 0.0)


def test_evaluate_outside_is_nan():
    mesh = build_box_mesh([0, 0], [1, 1], [2, 2])
    V = fe_space(mesh, 1)
    out = V.evaluate(np.ones(V.n_dofs), np.array([[2.0, 0.0]]))
    assert np.isnan(out[0])
