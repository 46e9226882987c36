"""Fast algebraic self-checks of the discretization.

Each check returns a :class:`CheckResult`; :func:`run_checks` runs them all
in a few seconds on meshes of at most eight cells (plus a couple of tiny
time-stepping runs for the zero-data and mean-zero checks).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from math import factorial
from typing import Callable

import numpy as np

from .assembly import Form, assemble_bilinear, assemble_convection, field_curl
from .elements import Family, eval_basis, eval_grad_basis, quadrature, reference_element
from .mesh import FACE_TAGS, Mesh, build_structured_mesh
from .spaces import Field, FunctionSpace

__all__ = ["CheckResult", "CHECKS", "run_checks"]

FAMILIES = (Family.P1, Family.P2, Family.P1_BUBBLE)


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.3e} (tol {self.tolerance:.1e})"


def _small_meshes() -> list[Mesh]:
    return [
        build_structured_mesh((0.0, 0.0), (1.0, 1.0), 2),
        build_structured_mesh((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), 1),
    ]


def _boundary_free(space: FunctionSpace, rng: np.random.Generator) -> np.ndarray:
    mesh = space.mesh
    facets = mesh.facets_with_tag(*FACE_TAGS[mesh.dim])
    x = rng.standard_normal(space.n_dofs)
    x[space.scalar_to_global(space.boundary_scalar_dofs(facets))] = 0.0
    return x


def check_quadrature(max_degree: int = 8) -> CheckResult:
    """Monomials ``x^a y^b (z^c)`` on the reference simplex against ``a! b! c! / (a+b+c+d)!``."""
    worst = 0.0
    for dim in (2, 3):
        for degree in range(1, max_degree + 1):
            rule = quadrature(dim, degree)
            x = rule.reference_points
            for powers in np.ndindex(*(degree + 1,) * dim):
                if sum(powers) > degree:
                    continue
                exact = math.prod(factorial(k) for k in powers) / factorial(sum(powers) + dim)
                approx = float(rule.weights @ np.prod(x ** np.array(powers), axis=1))
                worst = max(worst, abs(approx - exact) / exact)
    return CheckResult("quadrature monomial exactness", worst, 1e-13)


def _dense_reference(kind: Form, trial: FunctionSpace, test: FunctionSpace) -> np.ndarray:
    """Cell-by-cell, point-by-point assembly straight from the element routines."""
    mesh = test.mesh
    dim = mesh.dim
    rule = quadrature(dim, 2 * max(trial.degree, test.degree))
    e_trial = reference_element(trial.family, dim)
    e_test = reference_element(test.family, dim)
    out = np.zeros((test.n_dofs, trial.n_dofs))
    for c in range(mesh.n_cells):
        verts = mesh.vertices[mesh.cells[c]]
        det = abs(np.linalg.det((verts[1:] - verts[:1]).T))
        for lam, wq in zip(rule.points, rule.weights):
            w = wq * det
            pt, ps = eval_basis(e_test, lam), eval_basis(e_trial, lam)
            gt, gs = eval_grad_basis(e_test, lam, verts), eval_grad_basis(e_trial, lam, verts)
            for i, I in enumerate(test.cell_dofs[c]):
                for j, J in enumerate(trial.cell_dofs[c]):
                    if kind is Form.MASS:
                        val = pt[i] * ps[j]
                    elif kind is Form.STIFFNESS:
                        val = gt[i] @ gs[j]
                    else:
                        val = None
                    if val is not None:
                        for k in range(test.components):
                            out[I + k * test.n_scalar, J + k * trial.n_scalar] += w * val
                        continue
                    for a in range(dim):
                        if kind is Form.DIV_DIV:
                            for b in range(dim):
                                out[I + a * test.n_scalar, J + b * trial.n_scalar] += w * gt[i, a] * gs[j, b]
                        elif kind is Form.PRESSURE_DIV:
                            out[I + a * test.n_scalar, J] += w * gt[i, a] * ps[j]
                        else:  # GRAD
                            out[I + a * test.n_scalar, J] += w * gs[j, a] * pt[i]
    return out


def check_dense_assembly() -> CheckResult:
    """Sparse assembly against the naive dense loop, all forms and families."""
    worst = 0.0
    for mesh in _small_meshes():
        dim = mesh.dim
        for fam in FAMILIES:
            for kind, comps in ((Form.MASS, 1), (Form.STIFFNESS, dim), (Form.DIV_DIV, dim)):
                space = FunctionSpace(mesh, fam, comps)
                ref = _dense_reference(kind, space, space)
                got = assemble_bilinear(kind, space, space).toarray()
                worst = max(worst, np.abs(got - ref).max() / np.abs(ref).max())
            vel, pre = FunctionSpace(mesh, fam, dim), FunctionSpace(mesh, Family.P1)
            for kind in (Form.PRESSURE_DIV, Form.GRAD):
                ref = _dense_reference(kind, pre, vel)
                got = assemble_bilinear(kind, pre, vel).toarray()
                worst = max(worst, np.abs(got - ref).max() / np.abs(ref).max())
    return CheckResult("dense assembly equivalence", worst, 1e-13)


def check_skew(seed: int = 0) -> CheckResult:
    """``v^T C(b) v = 0`` for the skew convection matrix with arbitrary ``b`` and ``v``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for mesh in _small_meshes():
        for fam in FAMILIES:
            space = FunctionSpace(mesh, fam, mesh.dim)
            b = Field(space, rng.standard_normal(space.n_dofs))
            C = assemble_convection(b, space, space)
            v = rng.standard_normal(space.n_dofs)
            worst = max(worst, abs(v @ (C @ v)) / (np.abs(C).sum() * np.abs(v).max() ** 2))
    return CheckResult("convection skew symmetry", worst, 1e-13)


def check_orthogonality(seed: int = 1) -> CheckResult:
    """``|grad v|^2 = |div v|^2 + |curl v|^2`` for boundary-free discrete fields."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for dim, inv_h in ((2, 3), (3, 2)):
        mesh = build_structured_mesh((0.0,) * dim, (1.0,) * dim, inv_h)
        for fam in (Family.P2, Family.P1_BUBBLE):
            space = FunctionSpace(mesh, fam, dim)
            v = _boundary_free(space, rng)
            grad2 = v @ (assemble_bilinear(Form.STIFFNESS, space, space) @ v)
            div2 = v @ (assemble_bilinear(Form.DIV_DIV, space, space) @ v)
            rule = quadrature(dim, 2 * space.degree)
            curl = field_curl(Field(space, v), rule, slice(None))
            curl2 = float(np.einsum("q,c,cqo->", rule.weights, mesh.determinants, curl**2))
            worst = max(worst, abs(grad2 - div2 - curl2) / grad2)
    return CheckResult("div-curl orthogonality identity", worst, 1e-11)


def check_weak_divergence(seed: int = 2) -> CheckResult:
    """After projection ``(u, grad q) = 0`` for every pressure test function."""
    from .linalg import POISSON
    from .schemes import Discretization, PhysicalParams, Problem, SchemeConfig, _Stepping, initial_state, projection_step

    rng = np.random.default_rng(seed)
    mesh = build_structured_mesh((0.0, 0.0), (1.0, 1.0), 4)
    disc = Discretization(Problem(mesh))
    state = initial_state(disc)
    u_tilde = Field(disc.V, _boundary_free(disc.V, rng))
    tau = 0.05
    config = SchemeConfig(tau=tau, end_time=tau)
    stepping = _Stepping.make(tau, 1)
    u, _, phi = projection_step(u_tilde, state, disc, PhysicalParams(), config, stepping)
    rhs = disc.grad.T @ u_tilde.coeffs
    residual = rhs - u.factor * (disc.stiff_Q @ phi.coeffs)
    value = np.linalg.norm(residual) / np.linalg.norm(rhs)
    return CheckResult("weak divergence-free projection", value, 10 * POISSON.rel_tol)


def check_zero_data() -> CheckResult:
    """Zero data gives identically zero fields for every scheme."""
    from .schemes import PhysicalParams, Problem, Scheme, SchemeConfig, run_transient

    worst = 0.0
    mesh = build_structured_mesh((0.0, 0.0), (1.0, 1.0), 3)
    for scheme in Scheme:
        cfg = SchemeConfig(scheme=scheme, tau=0.1, end_time=0.3)
        s = run_transient(Problem(mesh), PhysicalParams(), cfg).state
        for f in (s.u.base, s.u.potential, s.p, s.w, s.T):
            worst = max(worst, float(np.abs(f.coeffs).max()))
    return CheckResult("zero data stays exactly zero", worst, 0.0)


def check_mean_zero_pressure() -> CheckResult:
    """The pressure mean vanishes after every step."""
    from .manufactured import exact_2d, manufactured_problem
    from .schemes import PhysicalParams, Scheme, SchemeConfig, run_transient

    mesh = build_structured_mesh((0.0, 0.0), (1.0, 1.0), 4)
    params = PhysicalParams()
    problem = manufactured_problem(exact_2d(), mesh, params)
    worst = 0.0

    def record(state, disc):
        nonlocal worst
        scale = max(1.0, float(np.abs(state.p.coeffs).max()))
        worst = max(worst, abs(disc.pressure_mean(state.p)) / scale)

    for scheme in Scheme:
        run_transient(problem, params, SchemeConfig(scheme=scheme, tau=0.05, end_time=0.1), callback=record)
    return CheckResult("mean-zero pressure", worst, 1e-12)


CHECKS: dict[str, Callable[[], CheckResult]] = {
    "quadrature": check_quadrature,
    "dense_assembly": check_dense_assembly,
    "skew": check_skew,
    "orthogonality": check_orthogonality,
    "weak_divergence": check_weak_divergence,
    "zero_data": check_zero_data,
    "mean_zero_pressure": check_mean_zero_pressure,
}


def run_checks() -> list[CheckResult]:
    return [check() for check in CHECKS.values()]
