import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import legendre as npleg

from cr_forchheimer.mesh import build_facets, generate_structured_mesh, make_mesh
from cr_forchheimer.polybasis import (
    MAX_QUADRATURE_DEGREE,
    CellModalBasis,
    QuadratureError,
    bulk_bubble,
    bulk_bubble_eval,
    edge_points,
    facet_bubble,
    facet_bubble_eval,
    legendre_eval,
    legendre_table,
    modal_flux_basis,
    quadrature_edge,
    quadrature_triangle,
)

REF = make_mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))


def test_legendre_examples():
    assert legendre_eval(1, 0.3) == pytest.approx(0.3, abs=1e-15)
    assert legendre_eval(2, 0.0) == pytest.approx(-0.5, abs=1e-15)
    assert legendre_eval(3, -1.0) == pytest.approx(-1.0, abs=1e-15)
    for k in range(9):
        assert legendre_eval(k, 1.0) == pytest.approx(1.0, abs=1e-14)


def test_legendre_explicit_formulas():
    x = np.random.default_rng(0).uniform(-1, 1, 100)
    explicit = [
        np.ones_like(x),
        x,
        (3 * x**2 - 1) / 2,
        (5 * x**3 - 3 * x) / 2,
        (35 * x**4 - 30 * x**2 + 3) / 8,
    ]
    P, dP = legendre_table(4, x)
    for k in range(5):
        np.testing.assert_allclose(P[k], explicit[k], atol=1e-14)
        np.testing.assert_allclose(dP[k], npleg.legval(x, npleg.legder([0] * k + [1])), atol=1e-13)


def test_triangle_rule_examples():
    rule = quadrature_triangle(4)
    x, y = rule.points[:, 1], rule.points[:, 2]
    assert rule.weights.sum() == pytest.approx(0.5, abs=1e-15)
    assert rule.weights @ (x * y) == pytest.approx(1 / 24, abs=1e-15)
    assert rule.weights @ x**4 == pytest.approx(1 / 30, abs=1e-15)


def test_edge_rule_examples():
    rule = quadrature_edge(6)
    t = rule.points
    assert rule.weights.sum() == pytest.approx(2.0, abs=1e-15)
    assert rule.weights @ t**2 == pytest.approx(2 / 3, abs=1e-15)
    assert abs(rule.weights @ (legendre_eval(2, t) * legendre_eval(3, t))) < 1e-14


@pytest.mark.parametrize("degree", [0, 1, 2, 5, 8, 13, 20])
def test_triangle_monomial_exactness(degree):
    rule = quadrature_triangle(degree)
    x, y = rule.points[:, 1], rule.points[:, 2]
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            assert rule.weights @ (x**a * y**b) == pytest.approx(exact, rel=1e-13)


@pytest.mark.parametrize("degree", [0, 1, 4, 9, 30])
def test_edge_monomial_exactness(degree):
    rule = quadrature_edge(degree)
    for a in range(degree + 1):
        exact = 0.0 if a % 2 else 2.0 / (a + 1)
        assert rule.weights @ rule.points**a == pytest.approx(exact, rel=1e-13, abs=1e-14)


def test_quadrature_degree_limits():
    quadrature_triangle(MAX_QUADRATURE_DEGREE)
    with pytest.raises(QuadratureError, match=str(MAX_QUADRATURE_DEGREE)):
        quadrature_triangle(MAX_QUADRATURE_DEGREE + 1)
    with pytest.raises(QuadratureError):
        quadrature_edge(MAX_QUADRATURE_DEGREE + 2)
    with pytest.raises(ValueError):
        quadrature_edge(-1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 6), st.integers(0, 6))
def test_barycentric_points_inside(a, b):
    rule = quadrature_triangle(a + b)
    assert rule.points.min() >= -1e-15
    np.testing.assert_allclose(rule.points.sum(axis=1), 1.0, atol=1e-15)


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_facet_bubble_values(k):
    # local facet 0 is opposite vertex 0 = (0, 0)
    assert facet_bubble_eval(k, REF, 0, 0, (0.5, 0.5)) == pytest.approx(1.0, abs=1e-14)
    assert facet_bubble_eval(k, REF, 0, 0, (0.0, 0.0)) == pytest.approx((-1.0) ** k, abs=1e-14)


def test_facet_bubble_outside_cell():
    with pytest.raises(ValueError):
        facet_bubble_eval(1, REF, 0, 0, (1.0, 1.0))
    with pytest.raises(ValueError):
        facet_bubble_eval(0, REF, 0, 0, (0.2, 0.2))


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_facet_bubble_jump_orthogonality(k):
    """The jump of the facet bubble of an interior facet has vanishing P_{k-1} moments."""
    rng = np.random.default_rng(k)
    verts = np.array([[0, 0], [1, 0], [2, 0], [0, 1], [1, 1], [2, 1], [0, 2], [1, 2], [2, 2]], float)
    verts[4] += rng.uniform(-0.2, 0.2, 2)
    mesh = make_mesh(verts, generate_structured_mesh(2, 2, (0, 2, 0, 2)).cells)
    topo = build_facets(mesh)
    rule = quadrature_edge(2 * k)
    s = edge_points(rule.points)
    for f in topo.interior:
        a, b = mesh.vertices[topo.facets[f]]
        pts = s[:, :1] * a + s[:, 1:] * b
        vals = []
        for side, cell in enumerate((topo.left[f], topo.right[f])):
            i = topo.local_index[f, side]
            vals.append([facet_bubble_eval(k, mesh, cell, i, x) for x in pts])
        jump = np.array(vals[0]) - np.array(vals[1])
        for j in range(k):
            assert abs(rule.weights @ (jump * legendre_eval(j, rule.points))) <= 1e-12


@pytest.mark.parametrize("k", [2, 4, 6])
def test_bulk_bubble_vertices_and_center(k):
    for vertex in REF.vertices:
        assert bulk_bubble_eval(k, REF, 0, vertex) == pytest.approx(1.0, abs=1e-13)
    if k == 2:
        assert bulk_bubble_eval(2, REF, 0, (1 / 3, 1 / 3)) == pytest.approx(-1.0, abs=1e-14)


def test_bulk_bubble_odd_rejected():
    with pytest.raises(ValueError):
        bulk_bubble_eval(3, REF, 0, (0.2, 0.2))
    with pytest.raises(ValueError):
        bulk_bubble(1, np.array([1 / 3, 1 / 3, 1 / 3]))


@pytest.mark.parametrize("k", [2, 4])
def test_bulk_bubble_is_sum_of_facet_bubbles(k):
    lam = np.random.default_rng(1).dirichlet(np.ones(3), size=50)
    expected = 0.5 * (-1 + sum(facet_bubble(k, lam[:, i])[0] for i in range(3)))
    np.testing.assert_allclose(bulk_bubble(k, lam)[0], expected, atol=1e-14)


@pytest.mark.parametrize("k", [2, 4])
def test_bulk_bubble_continuous_across_patch(k):
    mesh = generate_structured_mesh(1, 1, (0.0, 1.0, 0.0, 1.0))
    topo = build_facets(mesh)
    f = topo.interior[0]
    a, b = mesh.vertices[topo.facets[f]]
    for t in np.linspace(0.1, 0.9, 5):
        x = (1 - t) * a + t * b
        assert bulk_bubble_eval(k, mesh, 0, x) == pytest.approx(bulk_bubble_eval(k, mesh, 1, x), abs=1e-12)


def test_modal_flux_basis_constant():
    mesh = generate_structured_mesh(2, 2, (-1.0, 1.0, -1.0, 1.0))
    basis = modal_flux_basis(mesh, 3, 0)
    assert len(basis) == 1
    area = mesh.areas()[3]
    centroid = mesh.cell_coords()[3].mean(axis=0)
    assert basis(centroid)[0, 0] == pytest.approx(1 / math.sqrt(area), rel=1e-14)


@pytest.mark.parametrize("degree", [0, 1, 2, 3, 4])
def test_modal_gram_identity(degree):
    verts = np.array([[0.0, 0.0], [3.0, 0.5], [0.7, 2.0], [2.5, 2.6]])
    mesh = make_mesh(verts, np.array([[0, 1, 2], [1, 3, 2]]))
    basis = CellModalBasis(mesh, degree)
    assert basis.n == (degree + 1) * (degree + 2) // 2
    rule = quadrature_triangle(2 * degree + 2)
    pts = mesh.map_points(rule.points)
    w = rule.weights[None, :] * 2 * mesh.areas()[:, None]
    phi = basis.values(pts)
    G = np.einsum("tq,tqi,tqj->tij", w, phi, phi)
    for g in G:
        np.testing.assert_allclose(g, np.eye(basis.n), atol=1e-12)


def test_modal_flux_p2_counts():
    mesh = generate_structured_mesh(1, 1, (0.0, 1.0, 0.0, 1.0))
    basis = modal_flux_basis(mesh, 0, 2)
    assert len(basis) == 6
    assert 2 * len(basis) == 12


def test_modal_gradients_match_finite_differences():
    mesh = generate_structured_mesh(1, 1, (0.0, 1.0, 0.0, 1.0))
    basis = CellModalBasis(mesh, 3)
    x = np.array([[[0.6, 0.2]]])
    eps = 1e-6
    g = basis.grads(x, np.array([0]))[0, 0]
    for d in range(2):
        e = np.zeros(2)
        e[d] = eps
        fd = (basis.values(x + e, np.array([0])) - basis.values(x - e, np.array([0])))[0, 0] / (2 * eps)
        np.testing.assert_allclose(g[:, d], fd, rtol=1e-6, atol=1e-6)
