import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from thermomicropolar.assembly import (
    Direction,
    Form,
    apply_dirichlet,
    assemble_bilinear,
    assemble_convection,
    assemble_curl_coupling,
    assemble_functional,
    assemble_thermal_curl,
)
from thermomicropolar.checks import (
    _dense_reference,
    check_dense_assembly,
    check_orthogonality,
    check_skew,
)
from thermomicropolar.elements import Family, quadrature
from thermomicropolar.mesh import build_structured_mesh
from thermomicropolar.spaces import Field, FunctionSpace, classify_boundary_dofs


def _square(n):
    return build_structured_mesh((0, 0), (1, 1), n)


def _interior_random(space, rng):
    x = rng.standard_normal(space.n_dofs)
    x[classify_boundary_dofs(space.mesh, space)] = 0.0
    return x


def test_p1_mass_local_matrix():
    # both cells of the single-square mesh have the reference area 1/2
    mesh = build_structured_mesh((0, 0), (1, 1), 1)
    S = FunctionSpace(mesh, Family.P1)
    M = assemble_bilinear(Form.MASS, S, S).toarray()
    local = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24
    expected = np.zeros((4, 4))
    for cell in mesh.cells:
        expected[np.ix_(cell, cell)] += local
    assert np.allclose(M, expected, atol=1e-16)


@pytest.mark.parametrize("family", list(Family))
@pytest.mark.parametrize("dim", [2, 3])
def test_stiffness_row_sums_vanish(family, dim):
    mesh = build_structured_mesh((0,) * dim, (1,) * dim, 2)
    V = FunctionSpace(mesh, family)
    K = assemble_bilinear(Form.STIFFNESS, V, V)
    assert np.abs(K @ V.constant(1.0).coeffs).max() < 1e-13


def test_csr_canonical():
    V = FunctionSpace(_square(3), Family.P2, 2)
    K = assemble_bilinear(Form.STIFFNESS, V, V)
    assert K.has_canonical_format
    for i in range(K.shape[0]):
        cols = K.indices[K.indptr[i] : K.indptr[i + 1]]
        assert (np.diff(cols) > 0).all()


def test_pressure_div_constant_pressure():
    mesh = _square(4)
    V, Q = FunctionSpace(mesh, Family.P1_BUBBLE, 2), FunctionSpace(mesh, Family.P1)
    B = assemble_bilinear(Form.PRESSURE_DIV, Q, V)
    interior = np.setdiff1d(np.arange(V.n_dofs), classify_boundary_dofs(mesh, V))
    assert np.abs((B @ np.ones(Q.n_dofs))[interior]).max() < 1e-14


def test_grad_is_minus_pressure_div_on_interior_rows():
    mesh = _square(3)
    V, Q = FunctionSpace(mesh, Family.P2, 2), FunctionSpace(mesh, Family.P1)
    B = assemble_bilinear(Form.PRESSURE_DIV, Q, V)
    G = assemble_bilinear(Form.GRAD, Q, V)
    interior = np.setdiff1d(np.arange(V.n_dofs), classify_boundary_dofs(mesh, V))
    assert np.abs((B + G)[interior].toarray()).max() < 1e-14


def test_incompatible_components_rejected():
    mesh = _square(2)
    scalar, vector = FunctionSpace(mesh, Family.P1), FunctionSpace(mesh, Family.P1, 2)
    with pytest.raises(ValueError):
        assemble_bilinear(Form.MASS, scalar, vector)
    with pytest.raises(ValueError):
        assemble_bilinear(Form.DIV_DIV, scalar, scalar)
    with pytest.raises(ValueError):
        assemble_bilinear(Form.PRESSURE_DIV, vector, vector)
    with pytest.raises(ValueError):
        assemble_curl_coupling(scalar, scalar, Direction.VEL_TO_ANG)


def test_dense_equivalence_suite():
    result = check_dense_assembly()
    assert result.passed, result.line()


def test_convection_zero_advecting():
    V = FunctionSpace(_square(2), Family.P2, 2)
    assert assemble_convection(V.zero(), V, V).count_nonzero() == 0


def test_convection_skew_random_vectors():
    rng = np.random.default_rng(3)
    V = FunctionSpace(_square(3), Family.P1_BUBBLE, 2)
    C = assemble_convection(Field(V, rng.standard_normal(V.n_dofs)), V, V)
    scale = abs(C).sum()
    for _ in range(10):
        v = rng.standard_normal(V.n_dofs)
        assert abs(v @ (C @ v)) <= 1e-13 * scale
    assert check_skew().passed


def _dense_convection(b, space):
    """Brute-force skew transport form for a scalar space and constant b."""
    from thermomicropolar.elements import eval_basis, eval_grad_basis, reference_element

    mesh = space.mesh
    elem = reference_element(space.family, mesh.dim)
    rule = quadrature(mesh.dim, 2 * space.degree + 2)
    F = np.zeros((space.n_dofs, space.n_dofs))
    for c in range(mesh.n_cells):
        verts = mesh.vertices[mesh.cells[c]]
        det = abs(np.linalg.det((verts[1:] - verts[:1]).T))
        for lam, w in zip(rule.points, rule.weights):
            phi, grad = eval_basis(elem, lam), eval_grad_basis(elem, lam, verts)
            for i, I in enumerate(space.cell_dofs[c]):
                for j, J in enumerate(space.cell_dofs[c]):
                    F[I, J] += w * det * (b @ grad[j]) * phi[i]
    return 0.5 * (F - F.T)


def test_convection_constant_field_matches_dense():
    mesh = build_structured_mesh((0, 0), (1, 1), 1)
    S = FunctionSpace(mesh, Family.P1)
    b = FunctionSpace(mesh, Family.P1, 2).constant((1.0, 0.0))
    got = assemble_convection(b, S, S).toarray()
    ref = _dense_convection(np.array([1.0, 0.0]), S)
    assert np.abs(got - ref).max() <= 1e-13


def test_curl_of_shear_flow():
    mesh = _square(4)
    V, W = FunctionSpace(mesh, Family.P2, 2), FunctionSpace(mesh, Family.P2)
    u = V.interpolate(lambda x: np.column_stack([x[:, 1], 0 * x[:, 0]]))
    R = assemble_curl_coupling(V, W, Direction.VEL_TO_ANG)
    assert np.ones(W.n_dofs) @ (R @ u.coeffs) == pytest.approx(-1.0, abs=1e-13)


def test_curl_of_constant_angular_is_zero():
    mesh = _square(3)
    V, W = FunctionSpace(mesh, Family.P2, 2), FunctionSpace(mesh, Family.P2)
    R = assemble_curl_coupling(W, V, Direction.ANG_TO_VEL)
    assert np.abs(R @ np.full(W.n_dofs, 2.5)).max() < 1e-13


@pytest.mark.parametrize("dim", [2, 3])
def test_curl_couplings_adjoint(dim):
    rng = np.random.default_rng(4)
    mesh = build_structured_mesh((0,) * dim, (1,) * dim, 3 if dim == 2 else 2)
    V = FunctionSpace(mesh, Family.P2, dim)
    W = FunctionSpace(mesh, Family.P2, 1 if dim == 2 else 3)
    u, w = _interior_random(V, rng), _interior_random(W, rng)
    lhs = w @ (assemble_curl_coupling(V, W, Direction.VEL_TO_ANG) @ u)
    rhs = u @ (assemble_curl_coupling(W, V, Direction.ANG_TO_VEL) @ w)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_thermal_curl_constant_angular_is_zero():
    mesh = _square(3)
    W, M = FunctionSpace(mesh, Family.P2), FunctionSpace(mesh, Family.P2)
    assert abs(assemble_thermal_curl(W.constant(3.0), M, M)).max() < 1e-14


def test_thermal_curl_matches_transport_form():
    # omega = x has curl (0, -1), so S(omega; T, G) = -(dT/dy, G)
    mesh = _square(3)
    W, M = FunctionSpace(mesh, Family.P2), FunctionSpace(mesh, Family.P2)
    S = assemble_thermal_curl(W.interpolate(lambda x: x[:, 0]), M, M).toarray()
    from thermomicropolar.elements import eval_basis, eval_grad_basis, reference_element

    elem = reference_element(M.family, 2)
    rule = quadrature(2, 6)
    ref = np.zeros_like(S)
    for c in range(mesh.n_cells):
        verts = mesh.vertices[mesh.cells[c]]
        det = abs(np.linalg.det((verts[1:] - verts[:1]).T))
        for lam, w in zip(rule.points, rule.weights):
            phi, grad = eval_basis(elem, lam), eval_grad_basis(elem, lam, verts)
            ref[np.ix_(M.cell_dofs[c], M.cell_dofs[c])] -= w * det * np.outer(phi, grad[:, 1])
    assert np.abs(S - ref).max() <= 1e-13


@pytest.mark.parametrize("family", [Family.P1, Family.P2])
@pytest.mark.parametrize("dim", [2, 3])
def test_thermal_curl_self_term_vanishes_for_zero_boundary_angular(family, dim):
    # curl of a continuous piecewise polynomial is divergence-free per cell
    # with continuous normal trace, so S(w; T, T) is the boundary integral
    # of T^2/2 curl(w).n, which is zero when w vanishes on the boundary
    mesh = build_structured_mesh((0,) * dim, (1,) * dim, 4 if dim == 2 else 2)
    comps = 1 if dim == 2 else 3
    W, M = FunctionSpace(mesh, family, comps), FunctionSpace(mesh, family)
    rng = np.random.default_rng(5)
    w = Field(W, _interior_random(W, rng))
    T = Field(M, rng.standard_normal(M.n_dofs))
    S = assemble_thermal_curl(w, M, M)
    assert abs(T.coeffs @ (S @ T.coeffs)) <= 1e-13 * abs(S).sum() * np.abs(T.coeffs).max() ** 2


def test_thermal_curl_self_term_is_boundary_integral():
    # w = x y: curl w = (x, -y); S(w; T, T) with T = 1 + x equals the
    # boundary integral of T^2/2 curl(w).n = x on the right edge only: 1/2 * 4 * 1
    mesh = _square(6)
    W, M = FunctionSpace(mesh, Family.P2), FunctionSpace(mesh, Family.P2)
    w = W.interpolate(lambda x: x[:, 0] * x[:, 1])
    T = M.interpolate(lambda x: 1 + x[:, 0])
    val = T.coeffs @ (assemble_thermal_curl(w, M, M) @ T.coeffs)
    # top edge: T^2/2 * (-y) n_y = -(1 + x)^2 / 2, integral -7/6; right edge: 4/2 * 1 = 2
    assert val == pytest.approx(2.0 - 7.0 / 6.0, abs=1e-12)


def test_functional_examples():
    mesh = _square(20)
    P1 = FunctionSpace(mesh, Family.P1)
    assert not assemble_functional(P1, lambda x: np.zeros(len(x))).any()
    assert assemble_functional(_square_p1(4), lambda x: np.ones(len(x))).sum() == pytest.approx(1.0, abs=1e-14)
    assert assemble_functional(P1, lambda x: x[:, 0]).sum() == pytest.approx(0.5, abs=1e-12)


def _square_p1(n):
    return FunctionSpace(_square(n), Family.P1)


def test_buoyancy_functional_points_up():
    V = FunctionSpace(_square(4), Family.P2, 2)
    b = assemble_functional(V, lambda x: np.column_stack([0 * x[:, 0], 3.0 * np.ones(len(x))]))
    n = V.n_scalar
    assert not b[:n].any()
    assert b[n:].sum() == pytest.approx(3.0, abs=1e-13)


def test_dirichlet_all_constrained():
    A = sp.csr_matrix(np.array([[4.0, 1, 0], [1, 3, 1], [0, 1, 2]]))
    A2, b2 = apply_dirichlet(A, np.array([1.0, 2, 3]), np.arange(3), 0.0)
    assert np.array_equal(np.linalg.solve(A2.toarray(), b2), np.zeros(3))


def test_dirichlet_hand_elimination():
    A = sp.csr_matrix(np.array([[2.0, -1, 0], [-1, 2, -1], [0, -1, 2]]))
    A2, b2 = apply_dirichlet(A, np.array([1.0, 0, 0]), np.array([2]), np.array([5.0]))
    assert np.array_equal(A2.toarray(), [[2, -1, 0], [-1, 2, 0], [0, 0, 1]])
    assert np.array_equal(b2, [1.0, 5.0, 5.0])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), k=st.integers(1, 5))
def test_dirichlet_keeps_symmetry(seed, k):
    rng = np.random.default_rng(seed)
    R = sp.random(8, 8, density=0.4, random_state=rng)
    A = R + R.T + 8 * sp.eye(8)
    dofs = rng.choice(8, size=k, replace=False)
    A2, b2 = apply_dirichlet(A, rng.standard_normal(8), dofs, rng.standard_normal(k))
    assert abs(A2 - A2.T).max() == 0
    x = np.linalg.solve(A2.toarray(), b2)
    assert np.allclose(x[dofs], b2[dofs])


def test_orthogonality_identity():
    assert check_orthogonality().passed


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_mass_matrix_is_spd(seed):
    rng = np.random.default_rng(seed)
    V = FunctionSpace(_square(2), Family.P1_BUBBLE, 2)
    M = assemble_bilinear(Form.MASS, V, V)
    x = rng.standard_normal(V.n_dofs)
    assert abs(M - M.T).max() == 0
    assert x @ (M @ x) > 0


def test_assembly_is_deterministic():
    V = FunctionSpace(_square(5), Family.P2, 2)
    b = V.interpolate(lambda x: np.column_stack([np.sin(x[:, 0]), x[:, 1] ** 2]))
    A1 = assemble_convection(b, V, V)
    A2 = assemble_convection(b, V, V)
    assert np.array_equal(A1.data, A2.data) and np.array_equal(A1.indices, A2.indices)


def test_dense_reference_helper_grad():
    mesh = build_structured_mesh((0, 0), (1, 1), 1)
    V, Q = FunctionSpace(mesh, Family.P2, 2), FunctionSpace(mesh, Family.P1)
    ref = _dense_reference(Form.GRAD, Q, V)
    assert np.abs(assemble_bilinear(Form.GRAD, Q, V).toarray() - ref).max() < 1e-14
