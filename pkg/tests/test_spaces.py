import numpy as np
import pytest
import scipy.sparse as sp

from cr_forchheimer.errors import fit_rate
from cr_forchheimer.mesh import build_facets, dirichlet_on, generate_structured_mesh, make_mesh
from cr_forchheimer.polybasis import (
    CellModalBasis,
    edge_points,
    legendre_table,
    quadrature_edge,
    quadrature_triangle,
    scaled_monomials,
)
from cr_forchheimer.spaces import (
    FluxSpace,
    apply_dirichlet,
    build_cr_space,
    cell_values,
    cr_interpolate,
    eval_cr,
    eval_cr_grad,
    local_cr_basis,
    project_l2,
)

BOX = (-1.0, 1.0, -1.0, 1.0)


def perturbed_mesh(n=3, amount=0.15, seed=0):
    """Structured mesh with jittered interior vertices (keeps facet orientations generic)."""
    mesh = generate_structured_mesh(n, n, BOX)
    v = mesh.vertices.copy()
    inner = (np.abs(v[:, 0]) < 1 - 1e-12) & (np.abs(v[:, 1]) < 1 - 1e-12)
    v[inner] += np.random.default_rng(seed).uniform(-amount, amount, (inner.sum(), 2)) * (2.0 / n)
    return make_mesh(v, mesh.cells, BOX)


def single_cell():
    return make_mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.2, 0.9]]), np.array([[0, 1, 2]]))


def poly(k, seed=0):
    """Random polynomial of total degree k (global coordinates)."""
    c = np.random.default_rng(seed).standard_normal((k + 1) * (k + 2) // 2)
    return lambda x, y: scaled_monomials(k, np.asarray(x, float), np.asarray(y, float)) @ c


def test_dof_counts_examples():
    two = generate_structured_mesh(1, 1, BOX)
    assert build_cr_space(two, build_facets(two), 1).n_dofs == 5
    one = single_cell()
    assert build_cr_space(one, build_facets(one), 2).n_dofs == 6
    assert build_cr_space(one, build_facets(one), 3).n_dofs == 10


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_dof_count_formula(k):
    mesh = generate_structured_mesh(3, 2, BOX)
    topo = build_facets(mesh)
    space = build_cr_space(mesh, topo, k)
    V, E, T = mesh.n_vertices, topo.n_facets, mesh.n_cells
    nb = (k - 1) * (k - 2) // 2
    if k % 2:
        expected = E * k + T * nb
    else:
        expected = V + E * (k - 1) + T * nb + T - 1
    assert space.n_dofs == expected
    assert space.has_mean_constraint
    assert len(space.dof_table) == space.n_dofs


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_single_cell_spans_pk(k):
    mesh = single_cell()
    space = build_cr_space(mesh, build_facets(mesh), k)
    dim = (k + 1) * (k + 2) // 2
    assert space.n_dofs == dim
    rule = quadrature_triangle(2 * k)
    val, _ = space.basis(rule.points)
    assert np.linalg.matrix_rank(val[0]) == dim


def test_invalid_order():
    mesh = single_cell()
    with pytest.raises(ValueError):
        build_cr_space(mesh, build_facets(mesh), 0)


def jump_moments(space):
    """(n_interior * k, n_dofs) matrix of int_F [phi] S_j over interior facets."""
    k = space.k
    topo = space.topo
    rule = quadrature_edge(2 * k + 2)
    P, _ = legendre_table(k - 1, rule.points)
    inner = topo.interior
    out = sp.lil_matrix((inner.size * k, space.n_dofs))
    for side, sign in ((0, 1.0), (1, -1.0)):
        val, _, dofs = space.facet_trace(inner, side, rule.points)
        mom = np.einsum("q,fql,jq->fjl", rule.weights, val, P) * sign
        for n in range(inner.size):
            for j in range(k):
                for loc, d in enumerate(dofs[n]):
                    if d >= 0:
                        out[n * k + j, d] += mom[n, j, loc]
    return out.toarray()


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_jump_moment_orthogonality(k):
    mesh = perturbed_mesh(3)
    space = build_cr_space(mesh, build_facets(mesh), k)
    assert np.abs(jump_moments(space)).max() <= 1e-12


def _global_values(space, rule, include_removed=False):
    val, grad = space.basis(rule.points)
    dofs = space.cell_dofs
    n = space.n_dofs + (1 if include_removed else 0)
    T, nq, nloc = val.shape
    V = np.zeros((T * nq, n))
    G = np.zeros((T * nq * 2, n))
    for t in range(T):
        for loc in range(nloc):
            d = dofs[t, loc]
            if d < 0:
                if not include_removed:
                    continue
                d = n - 1
            V[t * nq : (t + 1) * nq, d] += val[t, :, loc]
            G[t * nq * 2 : (t + 1) * nq * 2, d] += grad[t, :, loc, :].ravel()
    return V, G


@pytest.mark.parametrize("k", [2, 4])
def test_even_order_single_dependence(k):
    mesh = perturbed_mesh(2, seed=3)
    space = build_cr_space(mesh, build_facets(mesh), k)
    rule = quadrature_triangle(2 * k)
    w = np.repeat((rule.weights[None, :] * 2 * mesh.areas()[:, None]).ravel(), 1)
    for include, zeros in ((True, 1), (False, 0)):
        V, G = _global_values(space, rule, include)
        gram = V.T @ (w[:, None] * V) + G.T @ (np.repeat(w, 2)[:, None] * G)
        s = np.linalg.svd(gram, compute_uv=False)
        assert int((s / s[0] <= 1e-12).sum()) == zeros


def test_local_bubble_is_last():
    lam = np.array([[[0.2, 0.3, 0.5]]])
    full, _ = local_cr_basis(2, lam, np.ones((1, 3), bool))
    short, _ = local_cr_basis(2, lam, np.ones((1, 3), bool), with_bubble=False)
    assert full.shape[-1] == short.shape[-1] + 1
    np.testing.assert_allclose(full[..., :-1], short)


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_interpolant_reproduces_pk(k):
    mesh = perturbed_mesh(3, seed=k)
    space = build_cr_space(mesh, build_facets(mesh), k)
    q = poly(k, seed=k)
    c = cr_interpolate(space, q)
    rng = np.random.default_rng(10 + k)
    for cell in rng.integers(0, mesh.n_cells, 10):
        lam = rng.dirichlet(np.ones(3))
        x = lam @ mesh.vertices[mesh.cells[cell]]
        assert eval_cr(space, c, cell, x) == pytest.approx(float(q(*x)), abs=1e-11)


def _facet_moments(space, values_fn, n_moments):
    """|F|^-1 int_F v S_j on every facet from a callback ``values_fn(facets, t) -> (nf, nq)``."""
    rule = quadrature_edge(2 * space.k + 8)
    P, _ = legendre_table(n_moments - 1, rule.points)
    v = values_fn(np.arange(space.topo.n_facets), rule.points)
    return 0.5 * np.einsum("q,fq,jq->fj", rule.weights, v, P[:n_moments])


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_interpolant_moment_identities(k):
    from cr_forchheimer.spaces import facet_values

    mesh = perturbed_mesh(3, seed=2)
    topo = build_facets(mesh)
    space = build_cr_space(mesh, topo, k)

    def q(x, y):
        return np.sin(1.3 * x + 0.4) * np.exp(0.5 * y)

    c = cr_interpolate(space, q)
    xy = mesh.vertices

    def exact_on(facets, t):
        s = edge_points(t)
        a, b = xy[topo.facets[facets, 0]], xy[topo.facets[facets, 1]]
        pts = a[:, None, :] * s[None, :, :1] + b[:, None, :] * s[None, :, 1:]
        return q(pts[..., 0], pts[..., 1])

    # odd k: all k facet moments; even k: the modal interpolant matches moments j <= k-2
    n_mom = k if k % 2 else k - 1
    if n_mom:
        mine = _facet_moments(space, lambda f, t: facet_values(space, c, f, 0, t), n_mom)
        ref = _facet_moments(space, exact_on, n_mom)
        np.testing.assert_allclose(mine, ref, atol=1e-11)
        # the trace from the other side has the same moments on interior facets
        inner = topo.interior
        other = _facet_moments(space, lambda f, t: np.where(
            topo.right[f][:, None] >= 0, facet_values(space, c, np.where(topo.right[f] >= 0, f, inner[0]), 1, t),
            facet_values(space, c, f, 0, t)), n_mom)
        np.testing.assert_allclose(other, ref, atol=1e-11)
    if k % 2 == 0:
        vertex_vals = c[: mesh.n_vertices]
        np.testing.assert_allclose(vertex_vals, q(xy[:, 0], xy[:, 1]), atol=1e-12)
        bubbles = space.dof_kind == "bulk_bubble"
        assert np.all(c[bubbles] == 0.0) or np.abs(c[bubbles]).max() <= 1e-12
    if k >= 3:
        rule = quadrature_triangle(2 * k + 6)
        pts = mesh.map_points(rule.points)
        w = rule.weights[None, :] * 2 * mesh.areas()[:, None]
        centers = mesh.cell_coords().mean(axis=1)
        loc = (pts - centers[:, None, :]) / mesh.diameters()[:, None, None]
        m = scaled_monomials(k - 3, loc[..., 0], loc[..., 1])
        val, _ = cell_values(space, c, rule.points)
        exact = q(pts[..., 0], pts[..., 1])
        np.testing.assert_allclose(np.einsum("tq,tq,tqb->tb", w, val - exact, m), 0.0, atol=1e-11)


@pytest.mark.parametrize("k", [1, 3])
def test_constant_interpolant_odd(k):
    mesh = perturbed_mesh(2)
    space = build_cr_space(mesh, build_facets(mesh), k)
    c = cr_interpolate(space, lambda x, y: np.ones_like(x))
    # facet bubbles carry the value 1, facet modes vanish; for k = 3 the three bubbles
    # do not add up to one, the bulk mode absorbs the difference
    np.testing.assert_allclose(c[space.dof_kind == "facet_bubble"], 1.0, atol=1e-12)
    np.testing.assert_allclose(c[space.dof_kind == "facet_modal"], 0.0, atol=1e-12)


def test_constant_interpolant_even():
    mesh = perturbed_mesh(2)
    space = build_cr_space(mesh, build_facets(mesh), 2)
    c = cr_interpolate(space, lambda x, y: np.ones_like(x))
    np.testing.assert_allclose(c[space.dof_kind == "vertex"], 1.0, atol=1e-12)
    np.testing.assert_allclose(c[space.dof_kind != "vertex"], 0.0, atol=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_interpolation_rates(k):
    def q(x, y):
        return np.sin(np.pi * x)

    def dq(x, y):
        return np.pi * np.cos(np.pi * x), 0.0 * y

    l2, h1, hs = [], [], []
    rule = quadrature_triangle(2 * k + 6)
    for nx in (4, 8, 16):
        mesh = generate_structured_mesh(nx, nx, BOX)
        space = build_cr_space(mesh, build_facets(mesh), k)
        c = cr_interpolate(space, q)
        pts = mesh.map_points(rule.points)
        w = rule.weights[None, :] * 2 * mesh.areas()[:, None]
        val, grad = cell_values(space, c, rule.points)
        e = q(pts[..., 0], pts[..., 1]) - val
        gx, gy = dq(pts[..., 0], pts[..., 1])
        ge = (gx - grad[..., 0]) ** 2 + (gy - grad[..., 1]) ** 2
        l2.append(np.sqrt(np.sum(w * e**2)))
        h1.append(np.sqrt(np.sum(w * ge)))
        hs.append(mesh.h)
    assert fit_rate(zip(hs, l2)) == pytest.approx(k + 1, abs=0.2)
    assert fit_rate(zip(hs, h1)) == pytest.approx(k, abs=0.2)


def test_project_constant_vector():
    mesh = perturbed_mesh(2)
    flux = FluxSpace(mesh, 0)
    c = project_l2(flux, lambda x, y: (np.ones_like(x), np.ones_like(x)))
    lam = np.array([[0.2, 0.3, 0.5], [1.0, 0.0, 0.0]])
    np.testing.assert_allclose(flux.values(c, lam), 1.0, atol=1e-13)


def test_project_linear_to_barycenter():
    mesh = single_cell()
    basis = CellModalBasis(mesh, 0)
    cx = project_l2(basis, lambda x, y: x)
    cy = project_l2(basis, lambda x, y: y)
    centroid = mesh.vertices.mean(axis=0)
    phi = basis.values(centroid.reshape(1, 1, 2))[0, 0, 0]
    assert cx[0] * phi == pytest.approx(centroid[0], abs=1e-14)
    assert cy[0] * phi == pytest.approx(centroid[1], abs=1e-14)


@pytest.mark.parametrize("degree", [0, 1, 2])
def test_projection_error_orthogonality(degree):
    mesh = perturbed_mesh(2, seed=5)
    flux = FluxSpace(mesh, degree)

    def w(x, y):
        return np.sin(2 * x) * np.cos(y), np.exp(x * y)

    c = project_l2(flux, w, degree=2 * degree + 10)
    rule = quadrature_triangle(2 * degree + 10)
    pts = mesh.map_points(rule.points)
    wt = rule.weights[None, :] * 2 * mesh.areas()[:, None]
    err = np.stack(w(pts[..., 0], pts[..., 1]), -1) - flux.values(c, rule.points)
    phi = flux.scalar.values(pts)
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = rng.standard_normal((mesh.n_cells, 2, flux.n_modes))
        qv = np.einsum("tqm,tdm->tqd", phi, a)
        assert abs(np.sum(wt[..., None] * err * qv)) <= 1e-12


def test_project_reproduces_polynomials():
    mesh = perturbed_mesh(2)
    basis = CellModalBasis(mesh, 2)
    q = poly(2, seed=4)
    c = project_l2(basis, q).reshape(mesh.n_cells, -1)
    pts = mesh.map_points(np.array([[0.1, 0.6, 0.3]]))
    np.testing.assert_allclose(np.einsum("tqm,tm->tq", basis.values(pts), c), q(pts[..., 0], pts[..., 1]),
                               atol=1e-12)


def test_eval_zero_and_outside():
    mesh = perturbed_mesh(2)
    space = build_cr_space(mesh, build_facets(mesh), 3)
    z = np.zeros(space.n_dofs)
    x = mesh.vertices[mesh.cells[0]].mean(axis=0)
    assert eval_cr(space, z, 0, x) == 0.0
    np.testing.assert_array_equal(eval_cr_grad(space, z, 0, x), 0.0)
    far = mesh.vertices[mesh.cells[-1]].mean(axis=0)
    with pytest.raises(ValueError):
        eval_cr(space, z, 0, far)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_eval_gradient_finite_differences(k):
    mesh = perturbed_mesh(2, seed=7)
    space = build_cr_space(mesh, build_facets(mesh), k)
    c = np.random.default_rng(k).standard_normal(space.n_dofs)
    cell = 3
    x = np.array([0.3, 0.3, 0.4]) @ mesh.vertices[mesh.cells[cell]]
    g = eval_cr_grad(space, c, cell, x)
    eps = 1e-6
    fd = [(eval_cr(space, c, cell, x + eps * e) - eval_cr(space, c, cell, x - eps * e)) / (2 * eps)
          for e in np.eye(2)]
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-6 * np.abs(g).max())


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_dirichlet_zero_data(k):
    mesh = perturbed_mesh(3)
    space = build_cr_space(mesh, build_facets(mesh, dirichlet_on("left", "bottom")), k)
    assert not space.has_mean_constraint
    assert space.constraints.fixed.size > 0
    np.testing.assert_array_equal(apply_dirichlet(space, lambda x, y: 0.0 * x), 0.0)


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_dirichlet_polynomial_trace(k):
    mesh = perturbed_mesh(3, seed=1)
    space = build_cr_space(mesh, build_facets(mesh, dirichlet_on("left", "top")), k)
    q = poly(k, seed=9)
    c = cr_interpolate(space, q)
    fixed = space.constraints.fixed
    values = apply_dirichlet(space, q)
    # the interpolant satisfies the constraints, so its free part lifts back to itself
    np.testing.assert_allclose(space.lift(c[space.constraints.free], values), c, atol=1e-11)
    np.testing.assert_allclose(values[fixed] + (space.constraints.T @ c[space.constraints.free])[fixed],
                               c[fixed], atol=1e-11)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_lift_carries_dirichlet_moments(k):
    from cr_forchheimer.spaces import facet_values

    mesh = perturbed_mesh(2, seed=4)
    topo = build_facets(mesh, dirichlet_on("left", "bottom"))
    space = build_cr_space(mesh, topo, k)

    def g(x, y):
        return np.cos(x + 2.0 * y)

    values = apply_dirichlet(space, g)
    rule = quadrature_edge(2 * k + 6)
    P, _ = legendre_table(k - 1, rule.points)
    target = space.dirichlet_moments(g).reshape(-1, k)
    rng = np.random.default_rng(k)
    for _ in range(3):
        x = space.lift(rng.standard_normal(space.constraints.n_free), values)
        trace = facet_values(space, x, topo.dirichlet, 0, rule.points)
        mom = 0.5 * np.einsum("q,fq,jq->fj", rule.weights, trace, P)
        np.testing.assert_allclose(mom, target, atol=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_flux_space_gram(k):
    mesh = perturbed_mesh(2)
    flux = FluxSpace(mesh, k - 1)
    assert flux.n_dofs == 2 * mesh.n_cells * k * (k + 1) // 2
    rule = quadrature_triangle(2 * k)
    pts = mesh.map_points(rule.points)
    w = rule.weights[None, :] * 2 * mesh.areas()[:, None]
    phi = flux.scalar.values(pts)
    G = np.einsum("tq,tqi,tqj->tij", w, phi, phi)
    np.testing.assert_allclose(G, np.broadcast_to(np.eye(flux.n_modes), G.shape), atol=1e-12)
