"""Continuous Lagrange spaces on a mesh and discrete fields living on them.

Vector spaces are stored component-major: global dof ``c * n_scalar + s``
is component ``c`` of scalar dof ``s``, so every component-wise operator
is block diagonal.
"""

from __future__ import annotations

from functools import cached_property, lru_cache
from typing import Callable, Iterator, Sequence

import numpy as np

from .elements import Family, QuadratureRule, ReferenceElement, quadrature, reference_element
from .mesh import Mesh

__all__ = [
    "CorrectedVelocity",
    "Field",
    "FunctionSpace",
    "cell_chunks",
    "classify_boundary_dofs",
    "tabulate",
]

CHUNK = 2048


def cell_chunks(n_cells: int, size: int = CHUNK) -> Iterator[slice]:
    for start in range(0, n_cells, size):
        yield slice(start, min(start + size, n_cells))


@lru_cache(maxsize=None)
def tabulate(elem: ReferenceElement, rule: QuadratureRule) -> tuple[np.ndarray, np.ndarray]:
    """Basis values ``(nq, nb)`` and reference gradients ``(nq, nb, dim)`` at the rule points."""
    return elem.values(rule.points), elem.reference_gradients(rule.points)


class FunctionSpace:
    """Scalar or vector Lagrange space (P1, P2 or P1+bubble) on a mesh."""

    def __init__(self, mesh: Mesh, family: Family | str, components: int = 1):
        self.mesh = mesh
        self.element = reference_element(Family(family), mesh.dim)
        if components not in (1, mesh.dim) and not (components == 3 and mesh.dim == 3):
            raise ValueError(f"components must be 1 or {mesh.dim}, got {components}")
        self.components = components
        self._patterns: dict = {}

    @property
    def family(self) -> Family:
        return self.element.family

    @property
    def degree(self) -> int:
        return self.element.degree

    def __repr__(self) -> str:
        return f"FunctionSpace({self.family.value}, components={self.components}, n_dofs={self.n_dofs})"

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        """Scalar dof indices per cell, ``(n_cells, n_basis)``."""
        mesh = self.mesh
        if self.family is Family.P1:
            return mesh.cells.copy()
        if self.family is Family.P2:
            _, cell_edges = mesh.edges
            return np.concatenate([mesh.cells, mesh.n_vertices + cell_edges], axis=1)
        bubbles = mesh.n_vertices + np.arange(mesh.n_cells)
        return np.concatenate([mesh.cells, bubbles[:, None]], axis=1)

    @cached_property
    def n_scalar(self) -> int:
        mesh = self.mesh
        if self.family is Family.P1:
            return mesh.n_vertices
        if self.family is Family.P2:
            return mesh.n_vertices + len(mesh.edges[0])
        return mesh.n_vertices + mesh.n_cells

    @property
    def n_dofs(self) -> int:
        return self.components * self.n_scalar

    @cached_property
    def dofmap(self) -> np.ndarray:
        """Global dofs per cell, ``(n_cells, components * n_basis)``, component-major."""
        return np.concatenate(
            [self.cell_dofs + c * self.n_scalar for c in range(self.components)], axis=1
        )

    @cached_property
    def support_points(self) -> np.ndarray:
        """Coordinates of the scalar dof nodes."""
        mesh = self.mesh
        parts = [mesh.vertices]
        if self.family is Family.P2:
            edges, _ = mesh.edges
            parts.append(0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]]))
        elif self.family is Family.P1_BUBBLE:
            parts.append(mesh.vertices[mesh.cells].mean(axis=1))
        return np.concatenate(parts, axis=0)

    def scalar_to_global(self, scalar_dofs: np.ndarray) -> np.ndarray:
        scalar_dofs = np.asarray(scalar_dofs, dtype=np.int64)
        return np.concatenate([scalar_dofs + c * self.n_scalar for c in range(self.components)])

    def boundary_scalar_dofs(self, facets: np.ndarray) -> np.ndarray:
        """Scalar dofs supported on the given boundary facets."""
        dofs = [np.unique(facets)]
        if self.family is Family.P2 and len(facets):
            edges, _ = self.mesh.edges
            nv = self.mesh.n_vertices
            keys = edges[:, 0] * nv + edges[:, 1]
            pairs = [(0, 1)] if self.mesh.dim == 2 else [(0, 1), (1, 2), (0, 2)]
            for a, b in pairs:
                lo = np.minimum(facets[:, a], facets[:, b])
                hi = np.maximum(facets[:, a], facets[:, b])
                dofs.append(nv + np.searchsorted(keys, lo * nv + hi))
        return np.unique(np.concatenate(dofs))

    def interpolate(self, func: Callable[[np.ndarray], np.ndarray]) -> "Field":
        """Nodal interpolant of ``func(points) -> (n,) or (n, components)``."""
        pts = self.support_points
        vals = np.asarray(func(pts), dtype=float).reshape(len(pts), -1)
        if vals.shape[1] != self.components:
            raise ValueError(f"function returned {vals.shape[1]} components, expected {self.components}")
        if self.family is Family.P1_BUBBLE:
            nv = self.mesh.n_vertices
            vertex_mean = vals[:nv][self.mesh.cells].mean(axis=1)
            vals = vals.copy()
            vals[nv:] -= vertex_mean
        return Field(self, vals.T.ravel())

    def zero(self) -> "Field":
        return Field(self, np.zeros(self.n_dofs))

    def constant(self, value: float | Sequence[float]) -> "Field":
        return self.interpolate(lambda x: np.broadcast_to(np.asarray(value, float), (len(x), self.components)))


def classify_boundary_dofs(
    mesh: Mesh,
    space: FunctionSpace,
    predicate: None | str | Sequence[str] | Callable[[np.ndarray], np.ndarray] = None,
) -> np.ndarray:
    """Global dofs whose support point lies on a selected part of the boundary.

    ``predicate`` selects boundary facets: ``None`` for the whole boundary,
    a face name or list of face names, or a callable mapping support point
    coordinates ``(n, dim)`` to a boolean mask.
    """
    if space.mesh is not mesh:
        raise ValueError("space is not defined on this mesh")
    if predicate is None or callable(predicate):
        facets = mesh.boundary_facets
    else:
        tags = (predicate,) if isinstance(predicate, str) else tuple(predicate)
        unknown = set(tags) - set(np.unique(mesh.boundary_tags))
        if unknown:
            raise ValueError(f"unknown boundary tags {sorted(unknown)}")
        facets = mesh.facets_with_tag(*tags)
    scalar = space.boundary_scalar_dofs(facets)
    if callable(predicate):
        scalar = scalar[np.asarray(predicate(space.support_points[scalar]), dtype=bool)]
    return space.scalar_to_global(scalar)


def _physical_gradients(mesh: Mesh, cells: slice | np.ndarray, dref: np.ndarray) -> np.ndarray:
    return np.einsum("qbk,ckj->cqbj", dref, mesh.inverse_jacobians[cells], optimize=True)


class Field:
    """Coefficient vector on a function space."""

    def __init__(self, space: FunctionSpace, coeffs: np.ndarray):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (space.n_dofs,):
            raise ValueError(f"expected {space.n_dofs} coefficients, got shape {coeffs.shape}")
        self.space = space
        self.coeffs = coeffs

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    def copy(self) -> "Field":
        return Field(self.space, self.coeffs.copy())

    def local(self, cells: slice | np.ndarray) -> np.ndarray:
        """Cell-local coefficients ``(n, components, n_basis)``."""
        sp = self.space
        return self.coeffs.reshape(sp.components, sp.n_scalar)[:, sp.cell_dofs[cells]].transpose(1, 0, 2)

    def values(self, rule: QuadratureRule, cells: slice | np.ndarray = slice(None)) -> np.ndarray:
        phi, _ = tabulate(self.space.element, rule)
        return np.matmul(phi, self.local(cells).transpose(0, 2, 1))

    def gradients(self, rule: QuadratureRule, cells: slice | np.ndarray = slice(None)) -> np.ndarray:
        """``(n, nq, components, dim)`` gradients at the rule points."""
        _, dref = tabulate(self.space.element, rule)
        grads = _physical_gradients(self.mesh, cells, dref)
        return np.einsum("cqbj,ckb->cqkj", grads, self.local(cells), optimize=True)

    def at_barycentric(self, cells: np.ndarray, lam: np.ndarray) -> np.ndarray:
        """Values ``(n, components)`` at per-point barycentric coordinates in given cells."""
        phi = self.space.element.values(lam)
        return np.einsum("pb,pkb->pk", phi, self.local(cells))

    def __call__(self, points: np.ndarray) -> np.ndarray:
        cells, lam = self.mesh.locate(points)
        return self.at_barycentric(cells, lam)

    def mean(self) -> float:
        """Integral mean over the domain (scalar fields)."""
        from .assembly import assemble_functional

        ones = assemble_functional(self.space, lambda x: np.ones(len(x)))
        return float(ones @ self.coeffs) / self.mesh.domain_volume


class CorrectedVelocity:
    """End-of-step velocity ``base - factor * grad(potential)``.

    ``base`` lives on the velocity space and ``potential`` on a P1 space, so
    the correction is constant on each cell. Keeping the pair instead of a
    projected field makes ``(u, grad q) = (base, grad q) - factor (grad phi, grad q)``
    exact for every P1 ``q``.
    """

    def __init__(self, base: Field, potential: Field | None = None, factor: float = 0.0):
        if potential is not None and potential.space.family is not Family.P1:
            raise ValueError("correction potential must be P1")
        self.base = base
        self.potential = potential
        self.factor = float(factor) if potential is not None else 0.0

    @property
    def space(self) -> FunctionSpace:
        return self.base.space

    @property
    def mesh(self) -> Mesh:
        return self.base.mesh

    def _correction(self, cells) -> np.ndarray:
        pot = self.potential
        local = pot.local(cells)[:, 0, :]
        _, dref = tabulate(pot.space.element, quadrature(self.mesh.dim, 1))
        grads = _physical_gradients(self.mesh, cells, dref)[:, 0]
        return self.factor * np.einsum("cbj,cb->cj", grads, local)

    def values(self, rule: QuadratureRule, cells: slice | np.ndarray = slice(None)) -> np.ndarray:
        vals = self.base.values(rule, cells)
        if self.potential is None:
            return vals
        return vals - self._correction(cells)[:, None, :]

    def gradients(self, rule: QuadratureRule, cells: slice | np.ndarray = slice(None)) -> np.ndarray:
        # the correction is piecewise constant
        return self.base.gradients(rule, cells)

    def at_barycentric(self, cells: np.ndarray, lam: np.ndarray) -> np.ndarray:
        vals = self.base.at_barycentric(cells, lam)
        if self.potential is None:
            return vals
        return vals - self._correction(cells)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        cells, lam = self.mesh.locate(points)
        return self.at_barycentric(cells, lam)

