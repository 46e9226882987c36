import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermomicropolar.elements import Family
from thermomicropolar.mesh import FACE_TAGS, build_structured_mesh, facet_normal
from thermomicropolar.spaces import FunctionSpace, classify_boundary_dofs


def test_unit_square_single_cell_counts():
    mesh = build_structured_mesh((0, 0), (1, 1), 1)
    assert mesh.n_vertices == 4
    assert mesh.n_cells == 2
    assert len(mesh.boundary_facets) == 4


def test_unit_square_n10_counts_and_h():
    mesh = build_structured_mesh((0, 0), (1, 1), 10)
    assert mesh.n_vertices == 121
    assert mesh.n_cells == 200
    assert mesh.h == pytest.approx(math.sqrt(2) / 10, rel=1e-14)


def test_unit_cube_n2_counts():
    mesh = build_structured_mesh((0, 0, 0), (1, 1, 1), 2)
    assert mesh.n_vertices == 27
    assert mesh.n_cells == 48


def test_lower_left_to_upper_right_diagonal():
    mesh = build_structured_mesh((0, 0), (1, 1), 1)
    edges, _ = mesh.edges
    pts = mesh.vertices[edges]
    diag = [e for e in pts if np.abs(e[0] - e[1]).min() > 0.5]
    assert len(diag) == 1
    assert sorted(map(tuple, diag[0])) == [(0.0, 0.0), (1.0, 1.0)]


@pytest.mark.parametrize("bad", [0, -1, (2, 0)])
def test_rejects_nonpositive_counts(bad):
    with pytest.raises(ValueError):
        build_structured_mesh((0, 0), (1, 1), bad)


def test_rejects_inverted_box():
    with pytest.raises(ValueError):
        build_structured_mesh((0, 0), (0, 1), 2)


def test_boundary_tags_cover_faces():
    for dim in (2, 3):
        mesh = build_structured_mesh((0,) * dim, (1,) * dim, 2)
        assert set(np.unique(mesh.boundary_tags)) == set(FACE_TAGS[dim])
        for name, (axis, side) in FACE_TAGS[dim].items():
            pts = mesh.vertices[mesh.facets_with_tag(name)]
            assert np.allclose(pts[..., axis], float(side))


def test_p1_all_boundary_dofs():
    mesh = build_structured_mesh((0, 0), (1, 1), 10)
    assert len(classify_boundary_dofs(mesh, FunctionSpace(mesh, Family.P1))) == 40


def test_bubble_dofs_never_on_boundary():
    for dim in (2, 3):
        mesh = build_structured_mesh((0,) * dim, (1,) * dim, 2)
        space = FunctionSpace(mesh, Family.P1_BUBBLE, dim)
        dofs = classify_boundary_dofs(mesh, space) % space.n_scalar
        assert (dofs < mesh.n_vertices).all()


def test_p2_single_cell_boundary_dofs():
    # 4 vertices plus 4 boundary edge midpoints; the diagonal is interior
    mesh = build_structured_mesh((0, 0), (1, 1), 1)
    space = FunctionSpace(mesh, Family.P2)
    dofs = classify_boundary_dofs(mesh, space)
    assert len(dofs) == 8
    centre = np.flatnonzero(np.all(np.isclose(space.support_points, 0.5), axis=1))
    assert centre.tolist() not in dofs.tolist()


def test_classify_with_predicate_and_tags():
    mesh = build_structured_mesh((0, 0), (1, 1), 4)
    space = FunctionSpace(mesh, Family.P1)
    left = classify_boundary_dofs(mesh, space, "left")
    by_pred = classify_boundary_dofs(mesh, space, lambda x: x[:, 0] < 1e-12)
    assert np.array_equal(np.sort(left), np.sort(by_pred))
    assert len(left) == 5
    with pytest.raises(ValueError):
        classify_boundary_dofs(mesh, space, "nowhere")


@settings(max_examples=25, deadline=None)
@given(
    dim=st.sampled_from([2, 3]),
    n=st.integers(1, 3),
    lo=st.floats(-3, 3),
    span=st.floats(0.1, 4),
)
def test_volumes_orientation_and_facets(dim, n, lo, span):
    mesh = build_structured_mesh((lo,) * dim, (lo + span,) * dim, n)
    assert (mesh.determinants > 0).all()
    assert mesh.volumes.sum() == pytest.approx(span**dim, rel=1e-12)
    facets, facet_cells, cell_facets = mesh.facets
    boundary = facet_cells[:, 1] < 0
    assert boundary.sum() == len(mesh.boundary_facets)
    # interior facets: the two cells see opposite orientations
    for f in np.flatnonzero(~boundary)[:20]:
        normals = []
        for c in facet_cells[f]:
            local = int(np.flatnonzero(cell_facets[c] == f)[0])
            normals.append(facet_normal(mesh.vertices[mesh.oriented_facet(int(c), local)]))
        assert np.allclose(normals[0] / np.linalg.norm(normals[0]), -normals[1] / np.linalg.norm(normals[1]))
    # boundary facets: outward unit normals
    centre = np.full(dim, lo + span / 2)
    for f in np.flatnonzero(boundary)[:20]:
        c = int(facet_cells[f, 0])
        local = int(np.flatnonzero(cell_facets[c] == f)[0])
        pts = mesh.vertices[mesh.oriented_facet(c, local)]
        nrm = facet_normal(pts)
        nrm = nrm / np.linalg.norm(nrm)
        assert np.linalg.norm(nrm) == pytest.approx(1.0, abs=1e-12)
        assert nrm @ (pts.mean(axis=0) - centre) > 0


def test_h_is_max_vertex_distance():
    mesh = build_structured_mesh((0, 0, 0), (2, 1, 1), (4, 3, 2))
    pts = mesh.vertices[mesh.cells]
    d = np.linalg.norm(pts[:, :, None] - pts[:, None], axis=-1).max()
    assert mesh.h == pytest.approx(d, rel=1e-14)


def test_locate_points():
    mesh = build_structured_mesh((0, 0), (1, 1), 5)
    pts = np.array([[0.13, 0.77], [1.0, 1.0], [0.0, 0.5]])
    cells, lam = mesh.locate(pts)
    assert np.allclose(np.einsum("pi,pid->pd", lam, mesh.vertices[mesh.cells[cells]]), pts)
    with pytest.raises(ValueError):
        mesh.locate(np.array([[1.5, 0.5]]))
