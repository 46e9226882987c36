"""Structured simplicial meshes of axis-aligned boxes.

Rectangles are split into two triangles per grid square along the
lower-left to upper-right diagonal; boxes are split into six tetrahedra
per grid cube (Kuhn subdivision). Both splits are conforming and
deterministic, so dof numbering is reproducible run to run.

Boundary facets carry the name of the box face they lie on. In 2D the
faces are ``left/right`` (x) and ``bottom/top`` (y); in 3D ``left/right``
(x), ``front/back`` (y) and ``bottom/top`` (z), so ``bottom``/``top``
always refer to the vertical (gravity) axis.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

__all__ = [
    "FACE_TAGS",
    "LOCAL_EDGES",
    "TAG_PRIORITY",
    "Mesh",
    "build_structured_mesh",
]

# face name -> (axis, side) with side 0 = min corner, 1 = max corner
FACE_TAGS = {
    2: {"left": (0, 0), "right": (0, 1), "bottom": (1, 0), "top": (1, 1)},
    3: {
        "left": (0, 0),
        "right": (0, 1),
        "front": (1, 0),
        "back": (1, 1),
        "bottom": (2, 0),
        "top": (2, 1),
    },
}

# Later entries win when two faces prescribe different values at a shared
# vertex or edge.
TAG_PRIORITY = ("left", "right", "bottom", "top", "front", "back")

LOCAL_EDGES = {
    2: ((0, 1), (1, 2), (0, 2)),
    3: ((0, 1), (1, 2), (0, 2), (0, 3), (1, 3), (2, 3)),
}


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable simplicial mesh.

    Attributes:
        dim: spatial dimension (2 or 3).
        vertices: ``(n_vertices, dim)`` coordinates.
        cells: ``(n_cells, dim + 1)`` vertex indices, positively oriented.
        boundary_facets: ``(n_bfacets, dim)`` vertex indices ordered so the
            facet normal points out of the domain.
        boundary_tags: face name of each boundary facet.
        lower, upper: corners of the bounding box.
    """

    dim: int
    vertices: np.ndarray
    cells: np.ndarray
    boundary_facets: np.ndarray
    boundary_tags: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @cached_property
    def h(self) -> float:
        """Largest cell diameter (longest vertex-to-vertex distance)."""
        pts = self.vertices[self.cells]
        best = np.zeros(self.n_cells)
        for a, b in itertools.combinations(range(self.dim + 1), 2):
            best = np.maximum(best, np.linalg.norm(pts[:, a] - pts[:, b], axis=1))
        return float(best.max())

    @cached_property
    def jacobians(self) -> np.ndarray:
        """``(n_cells, dim, dim)`` affine-map Jacobians, column k = v_{k+1} - v_0."""
        pts = self.vertices[self.cells]
        return np.transpose(pts[:, 1:] - pts[:, :1], (0, 2, 1))

    @cached_property
    def inverse_jacobians(self) -> np.ndarray:
        return np.linalg.inv(self.jacobians)

    @cached_property
    def determinants(self) -> np.ndarray:
        return np.linalg.det(self.jacobians)

    @cached_property
    def volumes(self) -> np.ndarray:
        return self.determinants / (1.0 if self.dim == 2 else 3.0) / 2.0

    @property
    def domain_volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    # -- topology ---------------------------------------------------------

    @cached_property
    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique edges ``(n_edges, 2)`` and the ``(n_cells, n_local)`` cell-to-edge map."""
        local = LOCAL_EDGES[self.dim]
        pairs = np.stack([self.cells[:, list(e)] for e in local], axis=1)
        pairs = np.sort(pairs, axis=2).reshape(-1, 2)
        uniq, inverse = np.unique(pairs, axis=0, return_inverse=True)
        return uniq, inverse.reshape(self.n_cells, len(local))

    @cached_property
    def facets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unique facets, facet-to-cell adjacency and cell-to-facet map.

        Returns ``(facets, facet_cells, cell_facets)``. ``facet_cells`` is
        ``(n_facets, 2)`` with ``-1`` in the second column for boundary
        facets. Local facet ``i`` of a cell is the one opposite vertex ``i``.
        """
        nloc = self.dim + 1
        local = [tuple(j for j in range(nloc) if j != i) for i in range(nloc)]
        allf = np.stack([self.cells[:, list(f)] for f in local], axis=1)
        keys = np.sort(allf, axis=2).reshape(-1, self.dim)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        owner = np.repeat(np.arange(self.n_cells), nloc)
        facet_cells = np.full((len(uniq), 2), -1, dtype=np.int64)
        order = np.argsort(inverse, kind="stable")
        inv_sorted = inverse[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = inv_sorted[1:] != inv_sorted[:-1]
        facet_cells[inv_sorted[first], 0] = owner[order[first]]
        facet_cells[inv_sorted[~first], 1] = owner[order[~first]]
        return uniq, facet_cells, inverse.reshape(self.n_cells, nloc)

    def oriented_facet(self, cell: int, local: int) -> np.ndarray:
        """Vertices of local facet ``local`` of ``cell`` ordered for an outward normal."""
        verts = [int(v) for j, v in enumerate(self.cells[cell]) if j != local]
        opposite = self.vertices[self.cells[cell, local]]
        if facet_normal(self.vertices[verts]) @ (opposite - self.vertices[verts[0]]) > 0:
            verts[0], verts[1] = verts[1], verts[0]
        return np.array(verts)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_facets)

    def facets_with_tag(self, *tags: str) -> np.ndarray:
        mask = np.isin(self.boundary_tags, tags)
        return self.boundary_facets[mask]

    # -- geometry queries -------------------------------------------------

    def barycentric(self, points: np.ndarray, cells: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of ``points[i]`` with respect to ``cells[i]``."""
        ref = np.einsum(
            "ckj,cj->ck", self.inverse_jacobians[cells], points - self.vertices[self.cells[cells, 0]]
        )
        return np.concatenate([1.0 - ref.sum(axis=1, keepdims=True), ref], axis=1)

    def locate(self, points: np.ndarray, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
        """Find a containing cell for each point.

        Returns ``(cells, barycentric)``. Raises ``ValueError`` for points
        outside the mesh.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        x0 = self.vertices[self.cells[:, 0]]
        found = np.full(len(points), -1, dtype=np.int64)
        for start in range(0, len(points), 64):
            chunk = points[start : start + 64]
            ref = np.einsum("ckj,pcj->pck", self.inverse_jacobians, chunk[:, None, :] - x0[None])
            lam0 = 1.0 - ref.sum(axis=2)
            inside = (ref.min(axis=2) >= -tol) & (lam0 >= -tol)
            has = inside.any(axis=1)
            found[start : start + 64] = np.where(has, inside.argmax(axis=1), -1)
        if (found < 0).any():
            bad = points[found < 0][0]
            raise ValueError(f"point {bad.tolist()} lies outside the mesh")
        return found, self.barycentric(points, found)


def facet_normal(pts: np.ndarray) -> np.ndarray:
    """Unnormalized normal of a facet given its ordered vertex coordinates."""
    if len(pts) == 2:
        t = pts[1] - pts[0]
        return np.array([t[1], -t[0]])
    return np.cross(pts[1] - pts[0], pts[2] - pts[0])


def _kuhn_tets() -> list[tuple[int, int, int, int]]:
    # Paths from corner 000 to 111 through the unit cube; corner index = x + 2y + 4z.
    tets = []
    for perm in itertools.permutations(range(3)):
        path = [0]
        cur = 0
        for axis in perm:
            cur += 1 << axis
            path.append(cur)
        tets.append(tuple(path))
    return tets


def build_structured_mesh(
    lower: Sequence[float], upper: Sequence[float], n: int | Sequence[int], dim: int | None = None
) -> Mesh:
    """Uniform simplicial mesh of the box ``[lower, upper]``.

    ``n`` is the number of grid cells per axis (an int or one per axis).
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if dim is None:
        dim = len(lower)
    if dim not in (2, 3) or lower.shape != (dim,) or upper.shape != (dim,):
        raise ValueError(f"box corners must both have length dim={dim}")
    counts = np.broadcast_to(np.asarray(n), (dim,)).astype(int)
    if (np.asarray(n) != np.broadcast_to(np.asarray(n), (dim,)).astype(int)).any() or (counts < 1).any():
        raise ValueError(f"cell counts must be positive integers, got {n!r}")
    if not (upper > lower).all():
        raise ValueError("upper corner must exceed lower corner in every coordinate")

    axes = [np.linspace(lower[k], upper[k], counts[k] + 1) for k in range(dim)]
    # vertex index = i + (nx+1) * (j + (ny+1) * k)
    grid = np.meshgrid(*axes, indexing="ij")
    vertices = np.stack([g.ravel(order="F") for g in grid], axis=1)
    stride = np.cumprod([1] + [c + 1 for c in counts[:-1]])
    base_idx = np.stack(
        [g.ravel(order="F") for g in np.meshgrid(*[np.arange(c) for c in counts], indexing="ij")],
        axis=1,
    )
    base = base_idx @ stride

    if dim == 2:
        corner = np.array([0, stride[0], stride[1], stride[0] + stride[1]])
        local = [(0, 1, 3), (0, 3, 2)]
    else:
        corner = np.array(
            [sum(((c >> a) & 1) * stride[a] for a in range(3)) for c in range(8)]
        )
        local = _kuhn_tets()
    cells = np.concatenate(
        [base[:, None] + corner[list(t)][None, :] for t in local], axis=0
    )
    # group cells by grid square/cube for locality
    ncube = len(base)
    cells = cells.reshape(len(local), ncube, dim + 1).transpose(1, 0, 2).reshape(-1, dim + 1)
    cells = _orient(vertices, cells)

    mesh = Mesh(
        dim=dim,
        vertices=vertices,
        cells=cells.astype(np.int64),
        boundary_facets=np.zeros((0, dim), dtype=np.int64),
        boundary_tags=np.zeros(0, dtype="<U6"),
        lower=lower,
        upper=upper,
    )
    bfacets, btags = _boundary(mesh)
    object.__setattr__(mesh, "boundary_facets", bfacets)
    object.__setattr__(mesh, "boundary_tags", btags)
    return mesh


def _orient(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    pts = vertices[cells]
    det = np.linalg.det(pts[:, 1:] - pts[:, :1])
    flip = det < 0
    cells = cells.copy()
    cells[flip, 0], cells[flip, 1] = cells[flip, 1], cells[flip, 0].copy()
    return cells


def _boundary(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    _, facet_cells, cell_facets = mesh.facets
    bidx = np.flatnonzero(facet_cells[:, 1] < 0)
    owners = facet_cells[bidx, 0]
    local = np.argmax(cell_facets[owners] == bidx[:, None], axis=1)
    facets = np.array([mesh.oriented_facet(c, l) for c, l in zip(owners, local)], dtype=np.int64)
    tags = np.empty(len(facets), dtype="<U6")
    span = mesh.upper - mesh.lower
    for name, (axis, side) in FACE_TAGS[mesh.dim].items():
        target = mesh.upper[axis] if side else mesh.lower[axis]
        coord = mesh.vertices[facets, axis]
        on = np.all(np.abs(coord - target) <= 1e-12 * span[axis], axis=1)
        tags[on] = name
    if (tags == "").any():
        raise RuntimeError("boundary facet not on any box face")
    return facets, tags
