"""Run manifests, legacy VTK output and CSV writers.

Manifest format: one ``key = value`` per line, ``[section]`` headers, and
``#`` comments. Sections and keys::

    [run]      scheme (spc1|rpc1|rpc2), dim (2|3), elements (p1b-p1|p2-p1),
               tend, tau or tau_law (h|h2), n (comma list) or h
    [physics]  nu, nu_r, e_hat, alpha, beta, kappa, D
    [problem]  preset (benard2d|cavity2d|cavity3d|hotstrip3d)
               or manufactured (ms2d|ms3d)
    [output]   dir, every, vtk (on|off), profiles (on|off)
    [solver]   rel_tol, max_iter, reproducible (on|off)
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .mesh import Mesh

__all__ = [
    "ManifestError",
    "PRESET_ALIASES",
    "RunManifest",
    "format_manifest",
    "parse_manifest",
    "read_vtk_points",
    "vertex_values",
    "write_csv",
    "write_state_vtk",
    "write_vtk",
]

PRESET_ALIASES = {
    "benard2d": "BENARD_2D",
    "cavity2d": "CAVITY_2D",
    "cavity3d": "CAVITY_3D",
    "hotstrip3d": "CAVITY_3D_HOTSTRIP",
}
MANUFACTURED = ("ms2d", "ms3d")
ELEMENTS = {"p1b-p1": "P1B_P1", "p2-p1": "P2_P1"}
SCHEMES = ("spc1", "rpc1", "rpc2")


class ManifestError(ValueError):
    """Invalid manifest text; the message names the line and key."""


def _on_off(text: str) -> bool:
    if text.lower() not in ("on", "off"):
        raise ValueError("expected on or off")
    return text.lower() == "on"


def _choice(options: Iterable[str]) -> Callable[[str], str]:
    options = tuple(options)

    def parse(text: str) -> str:
        value = text.lower()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return value

    return parse


def _positive_float(name: str) -> Callable[[str], float]:
    def parse(text: str) -> float:
        value = float(text)
        if not (math.isfinite(value) and value > 0):
            raise ValueError(f"{name} must be positive")
        return value

    return parse


def _nonneg_float(name: str) -> Callable[[str], float]:
    def parse(text: str) -> float:
        value = float(text)
        if not (math.isfinite(value) and value >= 0):
            raise ValueError(f"{name} must be nonnegative")
        return value

    return parse


def _int_list(text: str) -> tuple[int, ...]:
    values = tuple(int(part) for part in text.split(","))
    if not values or min(values) < 1:
        raise ValueError("cell counts must be positive integers")
    return values


def _dim(text: str) -> int:
    value = int(text)
    if value not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise ValueError("must be a nonnegative integer")
    return value


# section -> key -> parser
_GRAMMAR: dict[str, dict[str, Callable[[str], Any]]] = {
    "run": {
        "scheme": _choice(SCHEMES),
        "dim": _dim,
        "elements": _choice(ELEMENTS),
        "tend": _positive_float("tend"),
        "tau": _positive_float("tau"),
        "tau_law": _choice(("h", "h2")),
        "n": _int_list,
        "h": _positive_float("h"),
    },
    "physics": {k: (_positive_float(k) if k in ("nu", "alpha", "kappa") else _nonneg_float(k))
                for k in ("nu", "nu_r", "e_hat", "alpha", "beta", "kappa", "D")},
    "problem": {"preset": _choice(PRESET_ALIASES), "manufactured": _choice(MANUFACTURED)},
    "output": {"dir": str, "every": _nonneg_int, "vtk": _on_off, "profiles": _on_off},
    "solver": {"rel_tol": _positive_float("rel_tol"), "max_iter": _nonneg_int, "reproducible": _on_off},
}


@dataclass(frozen=True)
class RunManifest:
    """Validated run description. ``None`` means "use the problem default"."""

    scheme: str = "rpc1"
    dim: int | None = None
    elements: str | None = None
    tend: float | None = None
    tau: float | None = None
    tau_law: str | None = None
    n: tuple[int, ...] | None = None
    physics: Mapping[str, float] = field(default_factory=dict)
    preset: str | None = None
    manufactured: str | None = None
    out_dir: str = "output"
    every: int = 0
    vtk: bool = True
    profiles: bool = True
    rel_tol: float = 1e-10
    max_iter: int = 0
    reproducible: bool = True
    defaults_applied: tuple[str, ...] = field(default=(), compare=False)

    @property
    def problem_id(self) -> str:
        return self.preset or self.manufactured or ""


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


def parse_manifest(text: str) -> RunManifest:
    """Parse and validate manifest text.

    Raises:
        ManifestError: unknown section or key, bad value, duplicate or
            missing required entries. The message names the line and key.
    """
    section = None
    values: dict[str, dict[str, tuple[Any, int]]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ManifestError(f"line {lineno}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip().lower()
            if section not in _GRAMMAR:
                raise ManifestError(f"line {lineno}: unknown section [{section}]")
            values.setdefault(section, {})
            continue
        if "=" not in line:
            raise ManifestError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if section is None:
            raise ManifestError(f"line {lineno}: key outside of any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        parser = _GRAMMAR[section].get(key)
        if parser is None:
            raise ManifestError(f"line {lineno}: unknown key '{key}' in [{section}]")
        if key in values[section]:
            raise ManifestError(f"line {lineno}: duplicate key '{key}' in [{section}]")
        try:
            values[section][key] = (parser(value), lineno)
        except ValueError as exc:
            raise ManifestError(f"line {lineno}: key '{key}': {exc}") from None

    def get(sec, key, default=None):
        entry = values.get(sec, {}).get(key)
        return default if entry is None else entry[0]

    problem = values.get("problem", {})
    if ("preset" in problem) == ("manufactured" in problem):
        raise ManifestError("line 0: key 'preset' or 'manufactured': [problem] needs exactly one of them")
    run = values.get("run", {})
    if "tau" in run and "tau_law" in run:
        raise ManifestError(f"line {run['tau_law'][1]}: key 'tau_law': give either tau or tau_law, not both")
    if "n" in run and "h" in run:
        raise ManifestError(f"line {run['h'][1]}: key 'h': give either n or h, not both")
    n = get("run", "n")
    if "h" in run:
        n = (max(1, round(1.0 / run["h"][0])),)

    defaults = []
    for sec, grammar in _GRAMMAR.items():
        for key in grammar:
            if key not in values.get(sec, {}) and not (sec == "problem" or (sec == "run" and key in ("h", "tau", "tau_law"))):
                defaults.append(f"{sec}.{key}")
    return RunManifest(
        scheme=get("run", "scheme", "rpc1"),
        dim=get("run", "dim"),
        elements=get("run", "elements"),
        tend=get("run", "tend"),
        tau=get("run", "tau"),
        tau_law=get("run", "tau_law"),
        n=n,
        physics={k: v for k, (v, _) in values.get("physics", {}).items()},
        preset=get("problem", "preset"),
        manufactured=get("problem", "manufactured"),
        out_dir=get("output", "dir", "output"),
        every=get("output", "every", 0),
        vtk=get("output", "vtk", True),
        profiles=get("output", "profiles", True),
        rel_tol=get("solver", "rel_tol", 1e-10),
        max_iter=get("solver", "max_iter", 0),
        reproducible=get("solver", "reproducible", True),
        defaults_applied=tuple(defaults),
    )


def format_manifest(m: RunManifest) -> str:
    """Manifest text that parses back to an equal manifest."""
    lines = ["[run]", f"scheme = {m.scheme}"]
    for key in ("dim", "elements", "tend", "tau", "tau_law", "n"):
        value = getattr(m, key)
        if value is not None:
            lines.append(f"{key} = {_format_value(value)}")
    if m.physics:
        lines.append("")
        lines.append("[physics]")
        lines += [f"{k} = {_format_value(float(v))}" for k, v in m.physics.items()]
    lines += ["", "[problem]"]
    lines.append(f"preset = {m.preset}" if m.preset else f"manufactured = {m.manufactured}")
    lines += [
        "",
        "[output]",
        f"dir = {m.out_dir}",
        f"every = {m.every}",
        f"vtk = {_format_value(m.vtk)}",
        f"profiles = {_format_value(m.profiles)}",
        "",
        "[solver]",
        f"rel_tol = {_format_value(m.rel_tol)}",
        f"max_iter = {m.max_iter}",
        f"reproducible = {_format_value(m.reproducible)}",
    ]
    return "\n".join(lines) + "\n"


VTK_TRIANGLE = 5
VTK_TETRA = 10


def write_vtk(path: str | os.PathLike, mesh: Mesh, point_data: Mapping[str, np.ndarray], title: str = "fields") -> None:
    """Legacy ASCII unstructured-grid file with per-vertex data.

    Arrays with one column are written as SCALARS, three columns as VECTORS
    (two-column arrays are padded with a zero third component).
    """
    fmt = "%.17g"
    n, dim = mesh.vertices.shape
    pts = np.zeros((n, 3))
    pts[:, :dim] = mesh.vertices
    nloc = mesh.cells.shape[1]
    ctype = VTK_TRIANGLE if dim == 2 else VTK_TETRA
    with open(path, "w") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {n} double\n")
        np.savetxt(fh, pts, fmt=fmt)
        fh.write(f"CELLS {len(mesh.cells)} {len(mesh.cells) * (nloc + 1)}\n")
        np.savetxt(fh, np.column_stack([np.full(len(mesh.cells), nloc), mesh.cells]), fmt="%d")
        fh.write(f"CELL_TYPES {len(mesh.cells)}\n")
        np.savetxt(fh, np.full(len(mesh.cells), ctype), fmt="%d")
        fh.write(f"POINT_DATA {n}\n")
        for name, arr in point_data.items():
            arr = np.asarray(arr, dtype=float).reshape(n, -1)
            if arr.shape[1] == 1:
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                np.savetxt(fh, arr, fmt=fmt)
            elif arr.shape[1] in (2, 3):
                vec = np.zeros((n, 3))
                vec[:, : arr.shape[1]] = arr
                fh.write(f"VECTORS {name} double\n")
                np.savetxt(fh, vec, fmt=fmt)
            else:
                raise ValueError(f"point data '{name}' has {arr.shape[1]} components")


def read_vtk_points(path: str | os.PathLike) -> tuple[np.ndarray, int]:
    """Minimal reader: ``(points (n, 3), n_cells)`` of a legacy ASCII file."""
    with open(path) as fh:
        tokens = fh.read().split()
    i = tokens.index("POINTS")
    n = int(tokens[i + 1])
    pts = np.array(tokens[i + 3 : i + 3 + 3 * n], dtype=float).reshape(n, 3)
    j = tokens.index("CELLS")
    return pts, int(tokens[j + 1])


def write_csv(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """CSV with floats at full round-trip precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def vertex_values(field) -> np.ndarray:
    """Vertex samples ``(n_vertices, components)`` of a nodal field.

    Vertex dofs come first in every family and the bubble vanishes at the
    vertices, so this is a plain slice of the coefficients.
    """
    space = field.space
    n = space.mesh.n_vertices
    return field.coeffs.reshape(space.components, space.n_scalar)[:, :n].T.copy()


def write_state_vtk(path: str | os.PathLike, state, disc) -> None:
    """Velocity, pressure, temperature and angular velocity at the vertices."""
    u = disc.project_velocity(state.u)
    write_vtk(
        path,
        disc.mesh,
        {
            "velocity": vertex_values(u),
            "pressure": vertex_values(state.p),
            "temperature": vertex_values(state.T),
            "angular_velocity": vertex_values(state.w),
        },
        title=f"t={state.t!r} step={state.step}",
    )
