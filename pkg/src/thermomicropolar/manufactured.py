"""Manufactured solutions, synthesized forcing, error norms and convergence tables."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import sympy as sy

from .elements import quadrature
from .mesh import build_structured_mesh
from .schemes import (
    ElementPair,
    PhysicalParams,
    Problem,
    RunResult,
    Scheme,
    SchemeConfig,
    run_transient,
)
from .spaces import CorrectedVelocity, Field, cell_chunks

__all__ = [
    "ConvergenceRow",
    "ConvergenceTable",
    "ExactSolution",
    "FIELDS",
    "convergence_rate",
    "error_norms",
    "exact_2d",
    "exact_3d",
    "forcing_from_exact",
    "manufactured_problem",
    "run_convergence_study",
]

X, Y, Z, TIME = sy.symbols("x y z t", real=True)
FIELDS = ("u", "p", "w", "T")


def _lambdify(exprs: Sequence[sy.Expr], dim: int) -> Callable[[np.ndarray, float], np.ndarray]:
    """Vectorized evaluator ``(points (n, dim), t) -> (n, len(exprs))``."""
    syms = (X, Y, Z)[:dim]
    funcs = [sy.lambdify((*syms, TIME), e, "numpy") for e in exprs]

    def evaluate(points: np.ndarray, t: float) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, dim)
        cols = [f(*pts.T, t) for f in funcs]
        return np.stack([np.broadcast_to(np.asarray(c, float), (len(pts),)) for c in cols], axis=1)

    return evaluate


def _curl(exprs: Sequence[sy.Expr], dim: int) -> list[sy.Expr]:
    if dim == 2 and len(exprs) == 2:
        return [sy.diff(exprs[1], X) - sy.diff(exprs[0], Y)]
    if dim == 2:
        (w,) = exprs
        return [sy.diff(w, Y), -sy.diff(w, X)]
    a, b, c = exprs
    return [sy.diff(c, Y) - sy.diff(b, Z), sy.diff(a, Z) - sy.diff(c, X), sy.diff(b, X) - sy.diff(a, Y)]


@dataclass
class ExactSolution:
    """Closed-form fields over ``(x, t)`` on the unit square or cube.

    ``w`` holds one expression in 2D (the out-of-plane microrotation) and
    three in 3D. The pressure is shifted to zero mean over the domain.
    """

    dim: int
    u: list[sy.Expr]
    p: sy.Expr
    w: list[sy.Expr]
    T: sy.Expr
    end_time: float
    homogeneous_boundary: bool = False
    name: str = ""

    def __post_init__(self):
        coords = (X, Y, Z)[: self.dim]
        mean = self.p
        for s in coords:
            mean = sy.integrate(mean, (s, 0, 1))
        self.p = sy.simplify(self.p - mean)

    @property
    def coords(self) -> tuple[sy.Symbol, ...]:
        return (X, Y, Z)[: self.dim]

    def components(self, name: str) -> list[sy.Expr]:
        value = getattr(self, name)
        return list(value) if isinstance(value, (list, tuple)) else [value]

    def gradient_exprs(self, name: str) -> list[sy.Expr]:
        """Row-major ``d comp / d x_j``."""
        return [sy.diff(c, s) for c in self.components(name) for s in self.coords]

    @cached_property
    def _evaluators(self) -> dict[str, Callable]:
        out = {}
        for name in FIELDS:
            out[name] = _lambdify(self.components(name), self.dim)
            out[name + "_grad"] = _lambdify(self.gradient_exprs(name), self.dim)
        return out

    def value(self, name: str) -> Callable[[np.ndarray, float], np.ndarray]:
        return self._evaluators[name]

    def gradient(self, name: str) -> Callable[[np.ndarray, float], np.ndarray]:
        """Evaluator returning ``(n, components, dim)``."""
        flat = self._evaluators[name + "_grad"]
        ncomp = len(self.components(name))

        def evaluate(points, t):
            return flat(points, t).reshape(-1, ncomp, self.dim)

        return evaluate

    def at_time(self, name: str, t: float) -> Callable[[np.ndarray], np.ndarray]:
        f = self.value(name)
        return lambda x: f(x, t)

    def divergence_expr(self) -> sy.Expr:
        return sum(sy.diff(c, s) for c, s in zip(self.u, self.coords))


def exact_2d() -> ExactSolution:
    """Polynomial-in-space, cosine-in-time solution with zero boundary values."""
    ct = sy.cos(TIME)
    u1 = 10 * X**2 * (X - 1) ** 2 * Y * (Y - 1) * (2 * Y - 1) * ct
    u2 = 10 * Y**2 * (Y - 1) ** 2 * X * (1 - X) * (2 * X - 1) * ct
    p = 10 * (2 * X - 1) * (2 * Y - 1) * ct
    return ExactSolution(2, [u1, u2], p, [u1 - u2], u1 + u2, 0.1, homogeneous_boundary=True, name="2d")


def exact_3d() -> ExactSolution:
    """Smooth 3D solution with nonzero boundary values."""
    ct = sy.cos(TIME)
    u = [(Y**4 + Z**2) * ct, (Z**4 + X**2) * ct, (X**4 + Y**2) * ct]
    w = [(sy.sin(Y) + Z) * ct, (sy.sin(Z) + X) * ct, (sy.sin(X) + Y) * ct]
    p = (2 * X - 1) * (2 * Y - 1) * (2 * Z - 1) * ct
    return ExactSolution(3, u, p, w, u[0] + u[1] + u[2], 0.5, homogeneous_boundary=False, name="3d")


def forcing_expressions(exact: ExactSolution, params: PhysicalParams) -> tuple[list, list, list]:
    """Strong-form residuals of the exact fields, i.e. the forcing that makes them a solution."""
    dim, coords = exact.dim, exact.coords
    u, w, T, p = exact.u, exact.w, exact.T, exact.p
    nu, nu_r, e_hat = params.nu, params.nu_r, params.e_hat
    lap = lambda f: sum(sy.diff(f, s, 2) for s in coords)  # noqa: E731
    adv = lambda f: sum(uj * sy.diff(f, s) for uj, s in zip(u, coords))  # noqa: E731
    curl_w = _curl(w, dim)
    curl_u = _curl(u, dim)

    f1 = []
    for i, s in enumerate(coords):
        buoy = e_hat * T if i == dim - 1 else 0
        f1.append(sy.diff(u[i], TIME) - (nu + nu_r) * lap(u[i]) + adv(u[i]) + sy.diff(p, s) - 2 * nu_r * curl_w[i] - buoy)

    div_w = sum(sy.diff(c, s) for c, s in zip(w, coords)) if dim == 3 else 0
    f2 = []
    for i, wi in enumerate(w):
        grad_div = sy.diff(div_w, coords[i]) if dim == 3 else 0
        f2.append(
            sy.diff(wi, TIME) - params.alpha * lap(wi) + adv(wi) - params.beta * grad_div
            + 4 * nu_r * wi - 2 * nu_r * curl_u[i]
        )

    thermal = sum(cw * sy.diff(T, s) for cw, s in zip(curl_w, coords))
    f3 = [sy.diff(T, TIME) - params.kappa * lap(T) + adv(T) - params.D * thermal]
    return f1, f2, f3


def forcing_from_exact(exact: ExactSolution, params: PhysicalParams):
    """Evaluators ``(f1, f2, f3)`` over ``(points, t)``."""
    return tuple(_lambdify(exprs, exact.dim) for exprs in forcing_expressions(exact, params))


def manufactured_problem(exact: ExactSolution, mesh, params: PhysicalParams) -> Problem:
    f1, f2, f3 = forcing_from_exact(exact, params)
    bc = {}
    if not exact.homogeneous_boundary:
        bc = dict(
            velocity_bc=exact.value("u"),
            angular_bc=exact.value("w"),
            temperature_bc=lambda x, t: exact.value("T")(x, t)[:, 0],
        )
    return Problem(
        mesh=mesh,
        f1=f1,
        f2=f2,
        f3=lambda x, t: f3(x, t)[:, 0],
        u0=exact.at_time("u", 0.0),
        p0=lambda x: exact.value("p")(x, 0.0)[:, 0],
        w0=exact.at_time("w", 0.0),
        T0=lambda x: exact.value("T")(x, 0.0)[:, 0],
        **bc,
    )


def error_norms(
    field: Field | CorrectedVelocity,
    exact_value: Callable[[np.ndarray, float], np.ndarray],
    exact_gradient: Callable[[np.ndarray, float], np.ndarray] | None,
    t: float,
    degree: int | None = None,
) -> tuple[float, float]:
    """``(||e||_0, |e|_1)`` with cellwise quadrature of degree ``>= 2 p + 3``.

    Pass ``exact_gradient=None`` to skip the seminorm (returned as NaN).
    """
    mesh = field.mesh
    rule = quadrature(mesh.dim, degree or 2 * field.space.degree + 3)
    l2 = h1 = 0.0
    for cells in cell_chunks(mesh.n_cells):
        x0 = mesh.vertices[mesh.cells[cells, 0]]
        pts = x0[:, None, :] + np.einsum("cij,qj->cqi", mesh.jacobians[cells], rule.reference_points)
        flat = pts.reshape(-1, mesh.dim)
        w = rule.weights[None, :] * np.abs(mesh.determinants[cells])[:, None]
        vals = field.values(rule, cells)
        ex = exact_value(flat, t).reshape(vals.shape)
        l2 += float(np.einsum("cq,cqk->", w, (vals - ex) ** 2))
        if exact_gradient is not None:
            grads = field.gradients(rule, cells)
            exg = exact_gradient(flat, t).reshape(grads.shape)
            h1 += float(np.einsum("cq,cqkj->", w, (grads - exg) ** 2))
    return math.sqrt(l2), (math.sqrt(h1) if exact_gradient is not None else float("nan"))


def convergence_rate(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> float:
    """``log(E_i / E_{i+1}) / log(h_i / h_{i+1})``."""
    if min(e_coarse, e_fine, h_coarse, h_fine) <= 0:
        raise ValueError("errors and mesh sizes must be positive")
    if h_coarse == h_fine:
        raise ValueError("mesh sizes must differ")
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)


COLUMNS = ("uL2", "pL2", "wL2", "TL2", "uH1", "wH1", "TH1")


@dataclass
class ConvergenceRow:
    inv_h: int
    errors: dict[str, float]
    time_s: float

    @property
    def h(self) -> float:
        return 1.0 / self.inv_h


@dataclass
class ConvergenceTable:
    rows: list[ConvergenceRow] = field(default_factory=list)
    scheme: str = ""

    def rates(self) -> list[dict[str, float]]:
        """Rates between consecutive rows (one entry per row after the first)."""
        out = []
        for a, b in zip(self.rows, self.rows[1:]):
            out.append({k: convergence_rate(a.errors[k], b.errors[k], a.h, b.h) for k in COLUMNS})
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("inv_h", *COLUMNS, "time_s"))
            for row in self.rows:
                writer.writerow((row.inv_h, *(f"{row.errors[k]:.17g}" for k in COLUMNS), f"{row.time_s:.6g}"))

    def to_text(self) -> str:
        head = f"{'1/h':>5} " + " ".join(f"{k:>10}" for k in COLUMNS) + f" {'time_s':>9}"
        lines = [head]
        for row in self.rows:
            lines.append(
                f"{row.inv_h:>5} " + " ".join(f"{row.errors[k]:>10.3e}" for k in COLUMNS) + f" {row.time_s:>9.2f}"
            )
        if len(self.rows) > 1:
            lines.append("rates")
            for row, rate in zip(self.rows[1:], self.rates()):
                lines.append(f"{row.inv_h:>5} " + " ".join(f"{rate[k]:>10.2f}" for k in COLUMNS))
        return "\n".join(lines)


def solution_errors(result: RunResult, exact: ExactSolution) -> dict[str, float]:
    state, t = result.state, result.state.t
    out = {}
    for name, f in (("u", state.u), ("w", state.w), ("T", state.T)):
        l2, h1 = error_norms(f, exact.value(name), exact.gradient(name), t)
        out[name + "L2"], out[name + "H1"] = l2, h1
    out["pL2"], _ = error_norms(state.p, exact.value("p"), None, t)
    return out


def run_convergence_study(
    scheme: Scheme | str,
    exact: ExactSolution,
    inv_hs: Sequence[int],
    tau_law: str = "h2",
    end_time: float | None = None,
    params: PhysicalParams | None = None,
    elements: ElementPair | str = ElementPair.P1B_P1,
    **config_kwargs,
) -> ConvergenceTable:
    """Run the transient problem on a sequence of unit-domain meshes.

    ``tau_law`` is ``"h2"`` (``tau = h^2``) or ``"h"`` (``tau = h``).
    """
    if tau_law not in ("h", "h2"):
        raise ValueError(f"tau_law must be 'h' or 'h2', got {tau_law!r}")
    params = params or PhysicalParams()
    end_time = exact.end_time if end_time is None else end_time
    table = ConvergenceTable(scheme=Scheme(scheme).value)
    for inv_h in inv_hs:
        h = 1.0 / inv_h
        tau = h * h if tau_law == "h2" else h
        start = time.perf_counter()
        mesh = build_structured_mesh((0.0,) * exact.dim, (1.0,) * exact.dim, inv_h)
        problem = manufactured_problem(exact, mesh, params)
        config = SchemeConfig(scheme=scheme, tau=tau, end_time=end_time, elements=elements, **config_kwargs)
        result = run_transient(problem, params, config)
        errors = solution_errors(result, exact)
        table.rows.append(ConvergenceRow(inv_h, errors, time.perf_counter() - start))
    return table
