"""Buoyancy-driven benchmark presets, profile sampling and sanity metrics."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Mapping

import numpy as np

from .mesh import FACE_TAGS, TAG_PRIORITY, Mesh, build_structured_mesh
from .schemes import (
    ElementPair,
    PhysicalParams,
    Problem,
    RunResult,
    Scheme,
    SchemeConfig,
    run_transient,
)
from .spaces import Field

__all__ = [
    "BenchmarkPreset",
    "Preset",
    "boundary_layer_jump",
    "extract_profile",
    "face_function",
    "load_preset",
    "max_principle_overshoot",
    "run_benchmark",
]

PROFILE_POINTS = 201


class Preset(str, Enum):
    BENARD_2D = "BENARD_2D"
    CAVITY_2D = "CAVITY_2D"
    CAVITY_3D = "CAVITY_3D"
    CAVITY_3D_HOTSTRIP = "CAVITY_3D_HOTSTRIP"


def face_function(
    lower: np.ndarray, upper: np.ndarray, faces: Mapping[str, Callable[[np.ndarray], np.ndarray]]
) -> Callable[[np.ndarray, float], np.ndarray]:
    """Boundary data given per box face.

    A point on several listed faces takes the value of the face that comes
    last in the tag priority order. Points on no listed face get 0.
    """
    dim = len(lower)
    span = np.asarray(upper) - np.asarray(lower)
    order = [name for name in TAG_PRIORITY if name in faces]

    def evaluate(x: np.ndarray, t: float = 0.0) -> np.ndarray:
        out = np.zeros(len(x))
        for name in order:
            axis, side = FACE_TAGS[dim][name]
            target = upper[axis] if side else lower[axis]
            on = np.abs(x[:, axis] - target) <= 1e-12 * span[axis]
            if on.any():
                out[on] = np.broadcast_to(faces[name](x[on]), (int(on.sum()),))
        return out

    return evaluate


@dataclass(frozen=True)
class BenchmarkPreset:
    """A fully specified benchmark: domain, data, coefficients and discretization."""

    name: Preset
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    inv_h: int
    temperature_faces: Mapping[str, Callable[[np.ndarray], np.ndarray]]
    initial_temperature: Callable[[np.ndarray], np.ndarray]
    params: PhysicalParams
    tau: float
    end_time: float
    scheme: Scheme = Scheme.RPC1
    elements: ElementPair = ElementPair.P2_P1
    # name -> (field, component, start point, end point)
    profiles: Mapping[str, tuple[str, int, tuple, tuple]] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def temperature_range(self) -> tuple[float, float]:
        """Min and max of the Dirichlet temperature data."""
        mesh = self.mesh()
        bc = face_function(np.array(self.lower), np.array(self.upper), self.temperature_faces)
        facets = mesh.facets_with_tag(*self.temperature_faces)
        vals = bc(mesh.vertices[np.unique(facets)])
        return float(vals.min()), float(vals.max())

    def mesh(self) -> Mesh:
        cells = [round(self.inv_h * (b - a)) for a, b in zip(self.lower, self.upper)]
        return build_structured_mesh(self.lower, self.upper, cells)

    def build(self, mesh: Mesh | None = None) -> tuple[Problem, PhysicalParams, SchemeConfig]:
        mesh = mesh or self.mesh()
        lower, upper = np.array(self.lower), np.array(self.upper)
        problem = Problem(
            mesh=mesh,
            temperature_bc=face_function(lower, upper, self.temperature_faces),
            temperature_dirichlet=tuple(self.temperature_faces),
            T0=self.initial_temperature,
        )
        config = SchemeConfig(scheme=self.scheme, tau=self.tau, end_time=self.end_time, elements=self.elements)
        return problem, self.params, config


def _bottom_strip(x: np.ndarray) -> np.ndarray:
    return np.where(np.abs(x[:, 2]) <= 1e-12, 4.0 * x[:, 0] * (1.0 - x[:, 0]), 0.0)


_DEFAULTS = {
    Preset.BENARD_2D: dict(
        lower=(0.0, 0.0), upper=(5.0, 1.0), inv_h=20, e_hat=1e4, tau=None, end_time=1.0,
        temperature_faces={"bottom": lambda x: np.ones(len(x)), "top": lambda x: np.zeros(len(x))},
        initial_temperature=lambda x: 1.0 - x[:, 1],
        profiles={
            "vertical_velocity_x2.5": ("u", 1, (2.5, 0.0), (2.5, 1.0)),
            "temperature_y0.5": ("T", 0, (0.0, 0.5), (5.0, 0.5)),
        },
    ),
    Preset.CAVITY_2D: dict(
        lower=(0.0, 0.0), upper=(1.0, 1.0), inv_h=30, e_hat=1e4, tau=None, end_time=1.0,
        temperature_faces={"left": lambda x: np.ones(len(x)), "right": lambda x: np.zeros(len(x))},
        initial_temperature=lambda x: 1.0 - x[:, 0],
        profiles={
            "vertical_velocity_x0.5": ("u", 1, (0.5, 0.0), (0.5, 1.0)),
            "horizontal_velocity_y0.5": ("u", 0, (0.0, 0.5), (1.0, 0.5)),
            "temperature_y0.5": ("T", 0, (0.0, 0.5), (1.0, 0.5)),
        },
    ),
    Preset.CAVITY_3D: dict(
        lower=(0.0, 0.0, 0.0), upper=(1.0, 1.0, 1.0), inv_h=15, e_hat=1e4, tau=0.01, end_time=1.0,
        temperature_faces={"left": lambda x: np.ones(len(x)), "right": lambda x: np.zeros(len(x))},
        initial_temperature=lambda x: 1.0 - x[:, 0],
        profiles={
            "vertical_velocity_x0.5": ("u", 2, (0.5, 0.5, 0.0), (0.5, 0.5, 1.0)),
            "temperature_z0.5": ("T", 0, (0.0, 0.5, 0.5), (1.0, 0.5, 0.5)),
        },
    ),
    Preset.CAVITY_3D_HOTSTRIP: dict(
        lower=(0.0, 0.0, 0.0), upper=(1.0, 1.0, 1.0), inv_h=15, e_hat=10.0, tau=None, end_time=1.0,
        temperature_faces={
            "left": lambda x: np.zeros(len(x)),
            "top": lambda x: np.zeros(len(x)),
            "bottom": lambda x: 4.0 * x[:, 0] * (1.0 - x[:, 0]),
        },
        initial_temperature=_bottom_strip,
        profiles={
            "temperature_x0.5": ("T", 0, (0.5, 0.6, 0.0), (0.5, 0.6, 1.0)),
            "vertical_velocity_z0.5": ("u", 2, (0.0, 0.6, 0.5), (1.0, 0.6, 0.5)),
        },
    ),
}


def load_preset(
    name: Preset | str,
    rayleigh: float | None = None,
    inv_h: int | None = None,
    tau: float | None = None,
    end_time: float | None = None,
    scheme: Scheme | str = Scheme.RPC1,
) -> BenchmarkPreset:
    """Preset with the published coefficients; any argument given overrides the default.

    ``tau`` defaults to ``h^2`` except for the plain 3D cavity (0.01).
    """
    try:
        key = name if isinstance(name, Preset) else Preset(str(name).upper())
    except ValueError:
        raise ValueError(f"unknown preset {name!r}; choose from {[p.value for p in Preset]}") from None
    d = _DEFAULTS[key]
    n = int(inv_h or d["inv_h"])
    if n < 1:
        raise ValueError("inv_h must be a positive integer")
    step = tau if tau is not None else (d["tau"] if d["tau"] is not None and inv_h is None else 1.0 / n**2)
    e_hat = d["e_hat"] if rayleigh is None else float(rayleigh)
    return BenchmarkPreset(
        name=key,
        lower=d["lower"],
        upper=d["upper"],
        inv_h=n,
        temperature_faces=d["temperature_faces"],
        initial_temperature=d["initial_temperature"],
        params=PhysicalParams(e_hat=e_hat),
        tau=float(step),
        end_time=float(end_time if end_time is not None else d["end_time"]),
        scheme=Scheme(scheme),
        profiles=d["profiles"],
    )


def run_benchmark(preset: BenchmarkPreset, callback=None, every: int = 1, **overrides) -> RunResult:
    problem, params, config = preset.build()
    if overrides:
        config = replace(config, **overrides)
    return run_transient(problem, params, config, callback=callback, every=every)


def extract_profile(
    field: Field, start, end, component: int = 0, n_points: int = PROFILE_POINTS
) -> tuple[np.ndarray, np.ndarray]:
    """Sample one component of a field at evenly spaced points on a segment.

    Returns ``(s, values)`` where ``s`` is the distance from ``start``.

    Raises:
        ValueError: the segment leaves the mesh.
    """
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    mesh = field.mesh
    tol = 1e-12 * np.max(mesh.upper - mesh.lower)
    for pt in (start, end):
        if pt.shape != (mesh.dim,) or (pt < mesh.lower - tol).any() or (pt > mesh.upper + tol).any():
            raise ValueError(f"profile endpoint {pt.tolist()} lies outside the domain")
    s = np.linspace(0.0, 1.0, n_points)
    pts = start[None, :] + s[:, None] * (end - start)[None, :]
    values = field(pts)[:, component]
    return s * float(np.linalg.norm(end - start)), values


def boundary_layer_jump(p: Field) -> float:
    """Size of the pressure-gradient jumps next to the boundary.

    ``sqrt(sum_F |F| |[grad p]|^2)`` over interior facets ``F`` that belong to
    a cell touching the boundary. ``p`` must be piecewise linear.
    """
    mesh = p.mesh
    if p.space.degree != 1:
        raise ValueError("jump metric expects a P1 pressure")
    from .elements import quadrature

    grads = p.gradients(quadrature(mesh.dim, 1))[:, 0, 0, :]
    facets, facet_cells, _ = mesh.facets
    on_boundary = np.zeros(mesh.n_vertices, dtype=bool)
    on_boundary[mesh.boundary_vertices] = True
    layer = on_boundary[mesh.cells].any(axis=1)
    interior = facet_cells[:, 1] >= 0
    a, b = facet_cells[:, 0], facet_cells[:, 1]
    sel = interior & (layer[a] | (interior & layer[np.where(interior, b, 0)]))
    a, b, f = a[sel], b[sel], facets[sel]
    pts = mesh.vertices[f]
    if mesh.dim == 2:
        size = np.linalg.norm(pts[:, 1] - pts[:, 0], axis=1)
    else:
        size = 0.5 * np.linalg.norm(np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0]), axis=1)
    jump = np.sum((grads[a] - grads[b]) ** 2, axis=1)
    return float(np.sqrt(np.sum(size * jump)))


def max_principle_overshoot(T: Field, lower: float, upper: float) -> float:
    """Largest excursion of the dof values outside ``[lower, upper]``, relative to the range."""
    span = upper - lower
    over = max(float(T.coeffs.max()) - upper, lower - float(T.coeffs.min()), 0.0)
    return over / span if span > 0 else over
