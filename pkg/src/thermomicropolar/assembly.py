"""Sparse assembly of the bilinear and trilinear forms.

All matrices are ``scipy.sparse.csr_matrix`` with sorted, duplicate-free
column indices. Row index = test dof, column index = trial dof.

Quadrature policy: bilinear forms use degree ``2 * p_max``; convection,
thermal-curl and load terms use ``2 * p_max + 2`` (``p_max`` is the
largest polynomial degree among the arguments, bubbles included).
"""

from __future__ import annotations

from enum import Enum
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .elements import quadrature
from .spaces import CorrectedVelocity, Field, FunctionSpace, cell_chunks, tabulate

__all__ = [
    "Direction",
    "Form",
    "apply_dirichlet",
    "assemble_bilinear",
    "assemble_convection",
    "assemble_curl_coupling",
    "assemble_functional",
    "assemble_thermal_curl",
    "curl_tensor",
    "scalar_space",
]


class Form(str, Enum):
    MASS = "mass"
    STIFFNESS = "stiffness"
    DIV_DIV = "div_div"
    PRESSURE_DIV = "pressure_div"  # (p, div v): trial scalar, test vector
    GRAD = "grad"  # (grad p, v): trial scalar, test vector


class Direction(str, Enum):
    VEL_TO_ANG = "vel_to_ang"  # (curl u, zeta)
    ANG_TO_VEL = "ang_to_vel"  # (curl omega, v)


def curl_tensor(dim: int, components: int) -> np.ndarray:
    """Coefficients ``E[out, comp, deriv]`` with ``curl(f)_out = sum E * d_deriv f_comp``.

    In 2D a 2-vector maps to the scalar ``d1 f2 - d2 f1`` and a scalar
    (the third component of an out-of-plane field) maps to ``(d2 f, -d1 f)``.
    """
    if dim == 2 and components == 2:
        E = np.zeros((1, 2, 2))
        E[0, 1, 0], E[0, 0, 1] = 1.0, -1.0
        return E
    if dim == 2 and components == 1:
        E = np.zeros((2, 1, 2))
        E[0, 0, 1], E[1, 0, 0] = 1.0, -1.0
        return E
    if dim == 3 and components == 3:
        E = np.zeros((3, 3, 3))
        for out, comp, deriv, sign in _LEVI_CIVITA:
            E[out, comp, deriv] = sign
        return E
    raise ValueError(f"no curl for a {components}-component field in {dim}D")


# (out, comp, deriv, sign): curl_out = sum eps[out, deriv, comp] d_deriv f_comp
_LEVI_CIVITA = [
    (0, 2, 1, 1.0), (0, 1, 2, -1.0),
    (1, 0, 2, 1.0), (1, 2, 0, -1.0),
    (2, 1, 0, 1.0), (2, 0, 1, -1.0),
]


def scalar_space(space: FunctionSpace) -> FunctionSpace:
    """The one-component space sharing ``space``'s mesh and element."""
    if space.components == 1:
        return space
    cached = getattr(space, "_scalar", None)
    if cached is None:
        cached = FunctionSpace(space.mesh, space.family, 1)
        space._scalar = cached
    return cached


def _pattern(test: FunctionSpace, trial: FunctionSpace):
    entry = test._patterns.get(id(trial))
    if entry is not None and entry[0] is trial:
        return entry[1:]
    rows, cols = test.dofmap, trial.dofmap
    ncols = trial.n_dofs
    keys = (rows[:, :, None] * ncols + cols[:, None, :]).ravel()
    uniq, position = np.unique(keys, return_inverse=True)
    counts = np.bincount(uniq // ncols, minlength=test.n_dofs)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    indices = (uniq % ncols).astype(np.int32 if ncols < 2**31 else np.int64)
    test._patterns[id(trial)] = (trial, indptr, indices, position.ravel())
    return indptr, indices, position.ravel()


def _to_csr(test: FunctionSpace, trial: FunctionSpace, local: np.ndarray) -> sp.csr_matrix:
    indptr, indices, position = _pattern(test, trial)
    data = np.bincount(position, weights=local.ravel(), minlength=len(indices))
    return sp.csr_matrix((data, indices, indptr), shape=(test.n_dofs, trial.n_dofs))


def _blocks(matrix: sp.csr_matrix, copies: int) -> sp.csr_matrix:
    if copies == 1:
        return matrix
    return sp.kron(sp.identity(copies, format="csr"), matrix, format="csr")


class _Chunk:
    """Quadrature data for a block of cells."""

    def __init__(self, mesh, rule, cells: slice):
        self.mesh, self.rule, self.cells = mesh, rule, cells
        self.weights = rule.weights[None, :] * np.abs(mesh.determinants[cells])[:, None]

    def basis(self, space: FunctionSpace):
        phi, dref = tabulate(space.element, self.rule)
        grads = np.einsum("qbk,ckj->cqbj", dref, self.mesh.inverse_jacobians[self.cells], optimize=True)
        return phi, grads

    def points(self) -> np.ndarray:
        mesh = self.mesh
        x0 = mesh.vertices[mesh.cells[self.cells, 0]]
        return x0[:, None, :] + np.einsum("cij,qj->cqi", mesh.jacobians[self.cells], self.rule.reference_points)


def _transport(ch: _Chunk, weighted: np.ndarray, trial: FunctionSpace, test: FunctionSpace) -> np.ndarray:
    """``sum_q (b . grad phi_j) psi_i`` for a weighted vector field ``b`` at the rule points."""
    _, dref = tabulate(trial.element, ch.rule)
    phi, _ = tabulate(test.element, ch.rule)
    # b . (invJ^T grad_ref) = (invJ b) . grad_ref
    b_ref = np.matmul(weighted, ch.mesh.inverse_jacobians[ch.cells].transpose(0, 2, 1))
    directional = np.matmul(b_ref.transpose(1, 0, 2), dref.transpose(0, 2, 1)).transpose(1, 0, 2)
    return np.matmul(phi.T[None, :, :], directional)


def _check_same_mesh(*objs) -> None:
    meshes = {id(o.mesh) for o in objs}
    if len(meshes) != 1:
        raise ValueError("all arguments must live on the same mesh")


def _bilinear_degree(*spaces) -> int:
    return 2 * max(s.degree for s in spaces)


def _nonlinear_degree(*spaces) -> int:
    return 2 * max(s.degree for s in spaces) + 2


def _integrate(test: FunctionSpace, trial: FunctionSpace, degree: int, kernel) -> sp.csr_matrix:
    mesh = test.mesh
    rule = quadrature(mesh.dim, degree)
    local = np.empty((mesh.n_cells, test.dofmap.shape[1], trial.dofmap.shape[1]))
    for cells in cell_chunks(mesh.n_cells):
        local[cells] = kernel(_Chunk(mesh, rule, cells))
    return _to_csr(test, trial, local)


def assemble_bilinear(
    kind: Form | str,
    trial: FunctionSpace,
    test: FunctionSpace,
    coefficient: float = 1.0,
    degree: int | None = None,
) -> sp.csr_matrix:
    """Assemble ``coefficient * form(trial basis, test basis)``."""
    kind = Form(kind)
    _check_same_mesh(trial, test)
    dim = test.mesh.dim
    deg = degree or _bilinear_degree(trial, test)

    if kind in (Form.MASS, Form.STIFFNESS):
        if trial.components != test.components:
            raise ValueError(f"{kind.value} needs matching component counts")
        s_trial, s_test = scalar_space(trial), scalar_space(test)

        def kernel(ch: _Chunk):
            pt, gt = ch.basis(s_test)
            ps, gs = ch.basis(s_trial)
            if kind is Form.MASS:
                return np.einsum("cq,qi,qj->cij", ch.weights, pt, ps, optimize=True)
            return np.einsum("cq,cqik,cqjk->cij", ch.weights, gt, gs, optimize=True)

        scalar = _integrate(s_test, s_trial, deg, kernel)
        return coefficient * _blocks(scalar, test.components)

    if kind is Form.DIV_DIV:
        if trial.components != dim or test.components != dim:
            raise ValueError("div_div needs vector spaces on both sides")

        def kernel(ch: _Chunk):
            _, gt = ch.basis(test)
            _, gs = ch.basis(trial)
            loc = np.einsum("cq,cqia,cqjb->caibj", ch.weights, gt, gs, optimize=True)
            return loc.reshape(len(loc), dim * gt.shape[2], dim * gs.shape[2])

        return coefficient * _integrate(test, trial, deg, kernel)

    # mixed scalar-trial / vector-test forms
    if trial.components != 1 or test.components != dim:
        raise ValueError(f"{kind.value} needs a scalar trial space and a vector test space")

    def kernel(ch: _Chunk):
        pt, gt = ch.basis(scalar_space(test))
        ps, gs = ch.basis(trial)
        if kind is Form.PRESSURE_DIV:
            loc = np.einsum("cq,cqia,qj->caij", ch.weights, gt, ps, optimize=True)
        else:
            loc = np.einsum("cq,cqja,qi->caij", ch.weights, gs, pt, optimize=True)
        return loc.reshape(len(loc), dim * pt.shape[1], ps.shape[1])

    return coefficient * _integrate(test, trial, deg, kernel)


def assemble_convection(
    advecting: Field | CorrectedVelocity,
    trial: FunctionSpace,
    test: FunctionSpace,
    degree: int | None = None,
) -> sp.csr_matrix:
    """Skew-symmetric convection ``1/2 ((a.grad) v, w) - 1/2 ((a.grad) w, v)``.

    Vector spaces get one identical block per component. With ``trial is
    test`` the matrix is exactly antisymmetric in floating point.
    """
    _check_same_mesh(advecting, trial, test)
    if trial.components != test.components:
        raise ValueError("convection needs matching component counts")
    if advecting.space.components != trial.mesh.dim:
        raise ValueError("advecting field must be a velocity (vector) field")
    s_trial, s_test = scalar_space(trial), scalar_space(test)
    deg = degree or _nonlinear_degree(advecting.space, trial, test)
    same = s_trial is s_test

    def kernel(ch: _Chunk):
        a = ch.weights[:, :, None] * advecting.values(ch.rule, ch.cells)
        forward = _transport(ch, a, s_trial, s_test)
        if same:
            return 0.5 * (forward - forward.transpose(0, 2, 1))
        backward = _transport(ch, a, s_test, s_trial).transpose(0, 2, 1)
        return 0.5 * (forward - backward)

    return _blocks(_integrate(s_test, s_trial, deg, kernel), test.components)


def assemble_curl_coupling(
    trial: FunctionSpace, test: FunctionSpace, direction: Direction | str, degree: int | None = None
) -> sp.csr_matrix:
    """``(curl u, zeta)`` (VEL_TO_ANG) or ``(curl omega, v)`` (ANG_TO_VEL)."""
    direction = Direction(direction)
    _check_same_mesh(trial, test)
    dim = trial.mesh.dim
    ang_comps = 1 if dim == 2 else 3
    vel, ang = (trial, test) if direction is Direction.VEL_TO_ANG else (test, trial)
    if vel.components != dim or ang.components != ang_comps:
        raise ValueError(
            f"{direction.value} in {dim}D needs a {dim}-vector velocity space and a "
            f"{ang_comps}-component angular space"
        )
    E = curl_tensor(dim, trial.components)
    deg = degree or _bilinear_degree(trial, test)

    def kernel(ch: _Chunk):
        pt, _ = ch.basis(scalar_space(test))
        _, gs = ch.basis(scalar_space(trial))
        D = np.einsum("cq,qi,cqjd->cijd", ch.weights, pt, gs, optimize=True)
        loc = np.einsum("okd,cijd->coikj", E, D, optimize=True)
        n = len(loc)
        return loc.reshape(n, E.shape[0] * pt.shape[1], E.shape[1] * gs.shape[2])

    return _integrate(test, trial, deg, kernel)


def field_curl(field: Field | CorrectedVelocity, rule, cells) -> np.ndarray:
    """Curl of a field at rule points, ``(n, nq, n_out)``."""
    E = curl_tensor(field.mesh.dim, field.space.components)
    return np.einsum("okd,cqkd->cqo", E, field.gradients(rule, cells), optimize=True)


def assemble_thermal_curl(
    angular: Field, trial: FunctionSpace, test: FunctionSpace, degree: int | None = None
) -> sp.csr_matrix:
    """``S(omega; T, G) = (curl(omega) . grad T, G)``, assembled in its plain (non-skew) form."""
    _check_same_mesh(angular, trial, test)
    if trial.components != 1 or test.components != 1:
        raise ValueError("thermal curl form acts on scalar spaces")
    deg = degree or _nonlinear_degree(angular.space, trial, test)

    def kernel(ch: _Chunk):
        w = ch.weights[:, :, None] * field_curl(angular, ch.rule, ch.cells)
        return _transport(ch, w, trial, test)

    return _integrate(test, trial, deg, kernel)


def assemble_functional(
    test: FunctionSpace,
    integrand: Callable[[np.ndarray], np.ndarray],
    degree: int | None = None,
) -> np.ndarray:
    """Load vector ``b_i = (integrand, basis_i)``.

    ``integrand`` maps points ``(n, dim)`` to ``(n,)`` or ``(n, components)``.
    """
    mesh = test.mesh
    rule = quadrature(mesh.dim, degree or _nonlinear_degree(test))
    s_test = scalar_space(test)
    out = np.zeros(test.n_dofs)
    for cells in cell_chunks(mesh.n_cells):
        ch = _Chunk(mesh, rule, cells)
        pts = ch.points()
        vals = np.asarray(integrand(pts.reshape(-1, mesh.dim)), dtype=float)
        vals = vals.reshape(pts.shape[0], pts.shape[1], -1)
        if vals.shape[2] != test.components:
            raise ValueError(f"integrand has {vals.shape[2]} components, space has {test.components}")
        pt, _ = ch.basis(s_test)
        loc = np.einsum("cq,cqa,qi->cai", ch.weights, vals, pt, optimize=True)
        out += np.bincount(test.dofmap[cells].ravel(), weights=loc.reshape(len(loc), -1).ravel(), minlength=test.n_dofs)
    return out


def apply_dirichlet(
    matrix: sp.spmatrix, rhs: np.ndarray, dofs: np.ndarray, values: np.ndarray | float
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Impose ``x[dofs] = values`` by symmetric row/column elimination.

    Returns new ``(matrix, rhs)``; the inputs are not modified.
    """
    A = sp.csr_matrix(matrix)
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValueError("Dirichlet elimination needs a square matrix")
    dofs = np.asarray(dofs, dtype=np.int64)
    fixed = np.zeros(n, dtype=bool)
    fixed[dofs] = True
    lifted = np.zeros(n)
    lifted[dofs] = values
    b = np.asarray(rhs, dtype=float) - A @ lifted
    b[dofs] = lifted[dofs]
    keep = sp.diags((~fixed).astype(float), format="csr")
    out = (keep @ A @ keep + sp.diags(fixed.astype(float), format="csr")).tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    return out, b
