"""Reference simplex elements (P1, P2, P1+bubble) and quadrature rules.

Basis functions are written in barycentric coordinates ``lam`` with
``lam[0] = 1 - sum(x)`` and ``lam[k] = x[k-1]`` on the reference simplex
spanned by the origin and the unit vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .mesh import LOCAL_EDGES

__all__ = [
    "Family",
    "QuadratureRule",
    "ReferenceElement",
    "SingularGeometryError",
    "UnsupportedDegreeError",
    "eval_basis",
    "eval_grad_basis",
    "quadrature",
    "reference_element",
]

MAX_QUADRATURE_DEGREE = 40


class SingularGeometryError(ValueError):
    """Raised for cells with zero or negative volume."""


class UnsupportedDegreeError(NotImplementedError):
    """Raised when no quadrature rule of the requested degree is available."""


class Family(str, Enum):
    P1 = "P1"
    P2 = "P2"
    P1_BUBBLE = "P1_BUBBLE"


@dataclass(frozen=True)
class ReferenceElement:
    family: Family
    simplex_dim: int

    @property
    def n_vertices(self) -> int:
        return self.simplex_dim + 1

    @property
    def n_basis(self) -> int:
        nv = self.n_vertices
        if self.family is Family.P1:
            return nv
        if self.family is Family.P2:
            return nv + len(LOCAL_EDGES[self.simplex_dim])
        return nv + 1

    @property
    def degree(self) -> int:
        """Polynomial degree; the bubble counts as ``simplex_dim + 1``."""
        return {Family.P1: 1, Family.P2: 2}.get(self.family, self.simplex_dim + 1)

    @property
    def bubble_scale(self) -> float:
        # normalizes the bubble to 1 at the barycenter
        return float(self.n_vertices**self.n_vertices)

    @property
    def nodes(self) -> np.ndarray:
        """Barycentric coordinates of the dof nodes, ``(n_basis, n_vertices)``."""
        nv = self.n_vertices
        rows = list(np.eye(nv))
        if self.family is Family.P2:
            for a, b in LOCAL_EDGES[self.simplex_dim]:
                lam = np.zeros(nv)
                lam[[a, b]] = 0.5
                rows.append(lam)
        elif self.family is Family.P1_BUBBLE:
            rows.append(np.full(nv, 1.0 / nv))
        return np.array(rows)

    def values(self, lam: np.ndarray) -> np.ndarray:
        """Basis values at barycentric points ``lam`` of shape ``(n, n_vertices)``."""
        lam = np.atleast_2d(lam)
        cols = [lam[:, i] for i in range(self.n_vertices)]
        if self.family is Family.P2:
            cols = [li * (2.0 * li - 1.0) for li in cols]
            cols += [4.0 * lam[:, a] * lam[:, b] for a, b in LOCAL_EDGES[self.simplex_dim]]
        elif self.family is Family.P1_BUBBLE:
            cols.append(self.bubble_scale * np.prod(lam, axis=1))
        return np.stack(cols, axis=1)

    def barycentric_gradients(self, lam: np.ndarray) -> np.ndarray:
        """Derivatives with respect to each barycentric coordinate, ``(n, n_basis, n_vertices)``."""
        lam = np.atleast_2d(lam)
        n, nv = lam.shape
        out = np.zeros((n, self.n_basis, nv))
        if self.family is Family.P2:
            for i in range(nv):
                out[:, i, i] = 4.0 * lam[:, i] - 1.0
            for k, (a, b) in enumerate(LOCAL_EDGES[self.simplex_dim]):
                out[:, nv + k, a] = 4.0 * lam[:, b]
                out[:, nv + k, b] = 4.0 * lam[:, a]
            return out
        out[:, np.arange(nv), np.arange(nv)] = 1.0
        if self.family is Family.P1_BUBBLE:
            for k in range(nv):
                others = [j for j in range(nv) if j != k]
                out[:, nv, k] = self.bubble_scale * np.prod(lam[:, others], axis=1)
        return out

    def reference_gradients(self, lam: np.ndarray) -> np.ndarray:
        """Gradients with respect to reference coordinates, ``(n, n_basis, dim)``."""
        dlam = self.barycentric_gradients(lam)
        return dlam[:, :, 1:] - dlam[:, :, :1]


@lru_cache(maxsize=None)
def reference_element(family: Family | str, simplex_dim: int) -> ReferenceElement:
    return ReferenceElement(Family(family), simplex_dim)


def _check_barycentric(elem: ReferenceElement, point) -> np.ndarray:
    lam = np.asarray(point, dtype=float)
    if lam.shape[-1] != elem.n_vertices:
        raise ValueError(f"expected {elem.n_vertices} barycentric coordinates, got {lam.shape[-1]}")
    if np.any(np.abs(lam.sum(axis=-1) - 1.0) > 1e-12):
        raise ValueError("barycentric coordinates must sum to 1")
    return lam


def eval_basis(elem: ReferenceElement, point) -> np.ndarray:
    """Basis values at one barycentric point (or a stack of them)."""
    lam = _check_barycentric(elem, point)
    vals = elem.values(lam.reshape(-1, elem.n_vertices))
    return vals[0] if lam.ndim == 1 else vals


def eval_grad_basis(elem: ReferenceElement, point, cell_vertices) -> np.ndarray:
    """Physical gradients ``(n_basis, dim)`` at a barycentric point of a cell."""
    lam = _check_barycentric(elem, point)
    verts = np.asarray(cell_vertices, dtype=float)
    jac = (verts[1:] - verts[:1]).T
    det = np.linalg.det(jac)
    if not det > 1e-14 * np.abs(verts).max() ** elem.simplex_dim:
        raise SingularGeometryError(f"cell has nonpositive volume (det J = {det:g})")
    ref = elem.reference_gradients(lam.reshape(1, -1))[0]
    return ref @ np.linalg.inv(jac)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray  # barycentric, (n, dim + 1)
    weights: np.ndarray  # sum to the reference simplex volume
    degree: int

    @property
    def reference_points(self) -> np.ndarray:
        return self.points[:, 1:]

    def __len__(self) -> int:
        return len(self.weights)


def _gauss_jacobi01(n: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    # nodes/weights on [0, 1] for the weight (1 - s)^alpha
    x, w = roots_jacobi(n, alpha, 0.0)
    return (x + 1.0) / 2.0, w / 2.0 ** (alpha + 1.0)


def _collapsed_rule(dim: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    n = degree // 2 + 1
    if dim == 2:
        s, ws = _gauss_jacobi01(n, 1.0)
        t, wt = _gauss_jacobi01(n, 0.0)
        S, T = np.meshgrid(s, t, indexing="ij")
        pts = np.stack([S, T * (1 - S)], axis=-1).reshape(-1, 2)
        wts = np.outer(ws, wt).ravel()
        return pts, wts
    s, ws = _gauss_jacobi01(n, 2.0)
    t, wt = _gauss_jacobi01(n, 1.0)
    r, wr = _gauss_jacobi01(n, 0.0)
    S, T, R = np.meshgrid(s, t, r, indexing="ij")
    pts = np.stack([S, T * (1 - S), R * (1 - S) * (1 - T)], axis=-1).reshape(-1, 3)
    wts = np.einsum("i,j,k->ijk", ws, wt, wr).ravel()
    return pts, wts


@lru_cache(maxsize=None)
def quadrature(simplex_dim: int, degree: int) -> QuadratureRule:
    """Quadrature rule on the reference simplex exact to at least ``degree``.

    Degrees 1 and 2 use the classical symmetric rules; higher degrees use
    Gauss-Jacobi conical product rules (all weights positive).
    """
    if simplex_dim not in (2, 3):
        raise ValueError(f"simplex_dim must be 2 or 3, got {simplex_dim}")
    if degree < 1:
        raise ValueError("quadrature degree must be >= 1")
    if degree > MAX_QUADRATURE_DEGREE:
        raise UnsupportedDegreeError(f"no quadrature rule of degree {degree}")
    vol = 1.0 / math.factorial(simplex_dim)
    nv = simplex_dim + 1
    if degree == 1:
        lam = np.full((1, nv), 1.0 / nv)
        return QuadratureRule(lam, np.array([vol]), 1)
    if degree == 2:
        a = 1.0 / 6.0 if simplex_dim == 2 else (5.0 - math.sqrt(5.0)) / 20.0
        b = 1.0 - (nv - 1) * a
        lam = np.full((nv, nv), a)
        np.fill_diagonal(lam, b)
        return QuadratureRule(lam, np.full(nv, vol / nv), 2)
    ref, w = _collapsed_rule(simplex_dim, degree)
    lam = np.concatenate([1.0 - ref.sum(axis=1, keepdims=True), ref], axis=1)
    return QuadratureRule(lam, w, 2 * (degree // 2 + 1) - 1)
