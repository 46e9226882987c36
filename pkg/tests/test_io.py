from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermomicropolar.io import (
    ManifestError,
    RunManifest,
    format_manifest,
    parse_manifest,
    read_vtk_points,
    vertex_values,
    write_csv,
    write_state_vtk,
    write_vtk,
)
from thermomicropolar.mesh import build_structured_mesh
from thermomicropolar.schemes import Discretization, Problem, initial_state
from thermomicropolar.spaces import FunctionSpace

MANIFESTS = Path(__file__).resolve().parents[1] / "manifests"


def test_minimal_manifest_applies_defaults():
    m = parse_manifest("[problem]\npreset = cavity2d\n")
    assert m.problem_id == "cavity2d"
    assert m.scheme == "rpc1" and m.every == 0 and m.vtk and m.rel_tol == 1e-10
    assert "run.scheme" in m.defaults_applied and "output.dir" in m.defaults_applied


def test_first_order_convergence_manifest():
    m = parse_manifest((MANIFESTS / "conv2d_rpc1.cfg").read_text())
    assert (m.scheme, m.elements, m.tau_law, m.tend) == ("rpc1", "p1b-p1", "h2", 0.1)
    assert m.n == (10, 20, 40) and m.manufactured == "ms2d"


@pytest.mark.parametrize("path", sorted(MANIFESTS.glob("*.cfg")), ids=lambda p: p.name)
def test_shipped_manifests_parse(path):
    parse_manifest(path.read_text())


@pytest.mark.parametrize(
    "text, message",
    [
        ("[run]\ntau = -0.1\n[problem]\npreset = cavity2d\n", "line 2: key 'tau'"),
        ("[run]\nspeed = 3\n[problem]\npreset = cavity2d\n", "line 2: unknown key 'speed'"),
        ("[problem]\npreset = cavity2d\n[extra]\n", "line 3: unknown section"),
        ("[run]\nscheme = rpc3\n[problem]\npreset = cavity2d\n", "line 2: key 'scheme'"),
        ("[run]\ntau = 0.1\ntau_law = h\n[problem]\npreset = cavity2d\n", "either tau or tau_law"),
        ("[run]\nn = 4\nn = 5\n[problem]\nmanufactured = ms2d\n", "duplicate key 'n'"),
        ("[run]\nn = 4\n", "exactly one"),
        ("[problem]\npreset = cavity2d\nmanufactured = ms2d\n", "exactly one"),
        ("scheme = rpc1\n", "outside of any"),
        ("[output]\nvtk = maybe\n[problem]\npreset = cavity2d\n", "key 'vtk'"),
    ],
)
def test_invalid_manifests(text, message):
    with pytest.raises(ManifestError, match=message):
        parse_manifest(text)


def test_h_converts_to_n():
    m = parse_manifest("[run]\nh = 0.05\n[problem]\nmanufactured = ms2d\n")
    assert m.n == (20,)


manifests = st.builds(
    RunManifest,
    scheme=st.sampled_from(["spc1", "rpc1", "rpc2"]),
    dim=st.sampled_from([None, 2, 3]),
    elements=st.sampled_from([None, "p1b-p1", "p2-p1"]),
    tend=st.one_of(st.none(), st.floats(1e-6, 1e3)),
    tau=st.one_of(st.none(), st.floats(1e-8, 1.0)),
    n=st.one_of(st.none(), st.lists(st.integers(1, 200), min_size=1, max_size=4).map(tuple)),
    physics=st.dictionaries(st.sampled_from(["nu", "nu_r", "e_hat", "alpha", "kappa"]), st.floats(1e-6, 1e7)),
    preset=st.sampled_from(["benard2d", "cavity2d", "cavity3d", "hotstrip3d"]),
    out_dir=st.sampled_from(["output", "out/run_1"]),
    every=st.integers(0, 1000),
    vtk=st.booleans(),
    profiles=st.booleans(),
    rel_tol=st.floats(1e-14, 1e-2),
    max_iter=st.integers(0, 10000),
    reproducible=st.booleans(),
)


@given(manifests)
@settings(max_examples=60)
def test_manifest_round_trip(m):
    text = format_manifest(m)
    again = parse_manifest(text)
    assert again == m
    assert format_manifest(again) == text


def test_vtk_two_triangle_zero_state(tmp_path):
    mesh = build_structured_mesh((0, 0), (1, 1), 1)
    disc = Discretization(Problem(mesh))
    path = tmp_path / "fields_0.vtk"
    write_state_vtk(path, initial_state(disc), disc)
    pts, n_cells = read_vtk_points(path)
    assert pts.shape == (4, 3) and n_cells == 2
    np.testing.assert_array_equal(pts[:, :2], mesh.vertices)
    text = path.read_text()
    for name in ("velocity", "pressure", "temperature", "angular_velocity"):
        assert name in text


def test_vtk_points_round_trip_exactly(tmp_path):
    mesh = build_structured_mesh((0, 0, 0), (0.3, 1, 1), 2)
    path = tmp_path / "m.vtk"
    write_vtk(path, mesh, {"x": mesh.vertices[:, 0]})
    pts, n_cells = read_vtk_points(path)
    assert n_cells == mesh.n_cells
    np.testing.assert_array_equal(pts, mesh.vertices)


def test_vertex_values_of_bubble_field_are_nodal():
    mesh = build_structured_mesh((0, 0), (1, 1), 3)
    V = FunctionSpace(mesh, "P1_BUBBLE", 2)
    f = V.interpolate(lambda x: np.stack([x[:, 0] ** 2, x[:, 1]], axis=1))
    np.testing.assert_allclose(vertex_values(f), np.stack([mesh.vertices[:, 0] ** 2, mesh.vertices[:, 1]], axis=1), atol=1e-14)


def test_csv_writer_keeps_full_precision(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, ["a", "b"], [(1, 0.1 + 0.2)])
    lines = path.read_text().splitlines()
    assert lines[0] == "a,b"
    assert float(lines[1].split(",")[1]) == 0.1 + 0.2
