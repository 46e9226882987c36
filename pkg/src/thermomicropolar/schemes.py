"""Pressure-correction time stepping for the thermomicropolar system.

Each time level runs four linear substeps in a fixed order:

1. tentative velocity (convection semi-implicit, buoyancy and
   microrotation coupling explicit),
2. pressure projection through a pure-Neumann Poisson problem,
3. microrotation,
4. temperature.

``SPC1`` is the standard first-order scheme, ``RPC1`` adds the rotational
divergence term to the pressure update, and ``RPC2`` is the BDF2 variant
started with one ``RPC1`` step.

The end-of-step velocity is kept as the pair ``(u_tilde, phi)`` meaning
``u = u_tilde - (tau / c) grad(phi)`` (see :class:`CorrectedVelocity`), which
keeps ``(u, grad q) = 0`` exact up to the Poisson solver tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    Direction,
    Form,
    apply_dirichlet,
    assemble_bilinear,
    assemble_convection,
    assemble_curl_coupling,
    assemble_functional,
    assemble_thermal_curl,
    scalar_space,
)
from .elements import Family
from .linalg import POISSON, SPD, TRANSPORT, SolveReport, SolverError, SolverSpec, solve
from .mesh import Mesh
from .spaces import CorrectedVelocity, Field, FunctionSpace, classify_boundary_dofs

__all__ = [
    "Discretization",
    "ElementPair",
    "PhysicalParams",
    "Problem",
    "RunResult",
    "Scheme",
    "SchemeConfig",
    "State",
    "StepFailure",
    "angular_step",
    "initial_state",
    "projection_step",
    "run_transient",
    "temperature_step",
    "tentative_velocity_step",
    "time_grid",
]

SpaceFn = Callable[[np.ndarray], np.ndarray]
SpaceTimeFn = Callable[[np.ndarray, float], np.ndarray]


class Scheme(str, Enum):
    SPC1 = "SPC1"
    RPC1 = "RPC1"
    RPC2 = "RPC2"

    @property
    def rotational(self) -> bool:
        return self is not Scheme.SPC1


class ElementPair(str, Enum):
    """Velocity-pressure-microrotation-temperature element choice."""

    P1B_P1 = "P1B_P1"  # P1+bubble / P1 / P1 / P1
    P2_P1 = "P2_P1"  # P2 / P1 / P2 / P2

    @property
    def families(self) -> tuple[Family, Family, Family, Family]:
        if self is ElementPair.P1B_P1:
            return Family.P1_BUBBLE, Family.P1, Family.P1, Family.P1
        return Family.P2, Family.P1, Family.P2, Family.P2


@dataclass(frozen=True)
class PhysicalParams:
    """Nondimensional coefficients.

    ``nu``, ``alpha`` and ``kappa`` must be positive; the coupling
    coefficients may be zero to switch a coupling off.
    """

    nu: float = 1.0
    nu_r: float = 1.0
    e_hat: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    kappa: float = 1.0
    D: float = 1.0

    def __post_init__(self):
        for name in ("nu", "alpha", "kappa"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value}")
        for name in ("nu_r", "e_hat", "beta", "D"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be nonnegative, got {value}")


@dataclass
class Problem:
    """Mesh plus boundary, initial and forcing data.

    Velocity and microrotation carry Dirichlet data on the whole boundary.
    Temperature is Dirichlet on ``temperature_dirichlet`` faces (``None``
    means all) and has zero flux elsewhere. Missing data means zero.
    """

    mesh: Mesh
    velocity_bc: SpaceTimeFn | None = None
    angular_bc: SpaceTimeFn | None = None
    temperature_bc: SpaceTimeFn | None = None
    temperature_dirichlet: tuple[str, ...] | None = None
    f1: SpaceTimeFn | None = None
    f2: SpaceTimeFn | None = None
    f3: SpaceTimeFn | None = None
    u0: SpaceFn | None = None
    p0: SpaceFn | None = None
    w0: SpaceFn | None = None
    T0: SpaceFn | None = None

    @property
    def homogeneous(self) -> bool:
        """True when every boundary condition is homogeneous Dirichlet."""
        return (
            self.velocity_bc is None
            and self.angular_bc is None
            and self.temperature_bc is None
            and self.temperature_dirichlet is None
        )


@dataclass(frozen=True)
class SchemeConfig:
    scheme: Scheme = Scheme.RPC1
    tau: float = 0.01
    end_time: float = 0.1
    elements: ElementPair = ElementPair.P1B_P1
    convection: bool = True
    # replaces nu + nu_r in the rotational pressure update when set
    pressure_update_viscosity: float | None = None
    energy_monitor: bool = False
    poisson_solver: SolverSpec = POISSON
    transport_solver: SolverSpec = TRANSPORT
    mass_solver: SolverSpec = SPD

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "elements", ElementPair(self.elements))
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.end_time >= self.tau * (1 - 1e-12):
            raise ValueError(f"end time {self.end_time} is shorter than one step {self.tau}")


class StepFailure(RuntimeError):
    def __init__(self, step: int, substep: str, report: SolveReport | None, message: str = ""):
        super().__init__(f"step {step} failed in {substep}: {message}")
        self.step = step
        self.substep = substep
        self.report = report


def time_grid(tau: float, end_time: float) -> np.ndarray:
    """Step lengths: ``ceil(end_time / tau)`` steps, the last one shortened to land on ``end_time``."""
    n = max(1, math.ceil(end_time / tau - 1e-9))
    steps = np.full(n, tau)
    steps[-1] = end_time - (n - 1) * tau
    return steps


class Discretization:
    """Spaces, time-independent matrices and boundary dofs for one problem."""

    def __init__(self, problem: Problem, elements: ElementPair | str = ElementPair.P1B_P1):
        mesh = problem.mesh
        self.problem = problem
        self.mesh = mesh
        self.dim = mesh.dim
        fv, fq, fw, ft = ElementPair(elements).families
        self.V = FunctionSpace(mesh, fv, mesh.dim)
        self.Q = FunctionSpace(mesh, fq)
        self.W = FunctionSpace(mesh, fw, 1 if mesh.dim == 2 else 3)
        self.M = FunctionSpace(mesh, ft)

        V, Q, W, M = self.V, self.Q, self.W, self.M
        self.mass_V = assemble_bilinear(Form.MASS, V, V)
        self.stiff_V = assemble_bilinear(Form.STIFFNESS, V, V)
        self.mass_Q = assemble_bilinear(Form.MASS, Q, Q)
        self.stiff_Q = assemble_bilinear(Form.STIFFNESS, Q, Q)
        self.mass_W = assemble_bilinear(Form.MASS, W, W)
        self.stiff_W = assemble_bilinear(Form.STIFFNESS, W, W)
        self.div_div_W = assemble_bilinear(Form.DIV_DIV, W, W) if mesh.dim == 3 else None
        self.mass_M = assemble_bilinear(Form.MASS, M, M)
        self.stiff_M = assemble_bilinear(Form.STIFFNESS, M, M)
        self.pressure_div = assemble_bilinear(Form.PRESSURE_DIV, Q, V)
        self.grad = assemble_bilinear(Form.GRAD, Q, V)
        self.curl_ang_to_vel = assemble_curl_coupling(W, V, Direction.ANG_TO_VEL)
        self.curl_vel_to_ang = assemble_curl_coupling(V, W, Direction.VEL_TO_ANG)
        # (J T, v) with J the upward unit vector: only the last velocity component
        lift = assemble_bilinear(Form.MASS, M, scalar_space(V))
        blocks = [[None] for _ in range(mesh.dim)]
        for c in range(mesh.dim - 1):
            blocks[c][0] = sp.csr_matrix(lift.shape)
        blocks[-1][0] = lift
        self.buoyancy = sp.bmat(blocks, format="csr")
        self.pressure_ones = self.mass_Q @ np.ones(Q.n_dofs)

        self.velocity_dofs = classify_boundary_dofs(mesh, V)
        self.angular_dofs = classify_boundary_dofs(mesh, W)
        self.temperature_dofs = classify_boundary_dofs(mesh, M, problem.temperature_dirichlet)

    def boundary_values(self, space: FunctionSpace, dofs: np.ndarray, bc: SpaceTimeFn | None, t: float):
        if bc is None or len(dofs) == 0:
            return np.zeros(len(dofs))
        return space.interpolate(lambda x: bc(x, t)).coeffs[dofs]

    def load(self, space: FunctionSpace, f: SpaceTimeFn | None, t: float) -> np.ndarray:
        if f is None:
            return np.zeros(space.n_dofs)
        return assemble_functional(space, lambda x: f(x, t))

    def velocity_mass_product(self, u: CorrectedVelocity) -> np.ndarray:
        """Coefficients of ``(u, v_i)`` for a corrected velocity."""
        out = self.mass_V @ u.base.coeffs
        if u.potential is not None:
            out -= u.factor * (self.grad @ u.potential.coeffs)
        return out

    def velocity_inner(self, a: CorrectedVelocity, b: CorrectedVelocity) -> float:
        val = float(a.base.coeffs @ self.velocity_mass_product(b))
        if a.potential is not None:
            val -= a.factor * float(a.potential.coeffs @ (self.grad.T @ b.base.coeffs))
            if b.potential is not None:
                val += a.factor * b.factor * float(a.potential.coeffs @ (self.stiff_Q @ b.potential.coeffs))
        return val

    def project_velocity(self, u: CorrectedVelocity, spec: SolverSpec = SPD) -> Field:
        """L2 projection of a corrected velocity onto the velocity space (for output)."""
        if u.potential is None:
            return u.base
        x, _ = solve(self.mass_V, self.velocity_mass_product(u), spec, u.base.coeffs)
        return Field(self.V, x)

    def pressure_mean(self, p: Field) -> float:
        return float(self.pressure_ones @ p.coeffs) / self.mesh.domain_volume

    @cached_property
    def poincare_constants(self) -> dict[str, float]:
        """Squared discrete Poincare constants ``1 / lambda_min(K, M)`` on Dirichlet-free dofs."""
        out = {}
        for name, space, dofs in (
            ("velocity", self.V, self.velocity_dofs),
            ("angular", self.W, self.angular_dofs),
            ("temperature", self.M, self.temperature_dofs),
        ):
            s = scalar_space(space)
            fixed = np.zeros(s.n_dofs, dtype=bool)
            fixed[dofs[dofs < s.n_dofs]] = True
            free = np.flatnonzero(~fixed)
            K = assemble_bilinear(Form.STIFFNESS, s, s)[free][:, free]
            Mm = assemble_bilinear(Form.MASS, s, s)[free][:, free]
            out[name] = 1.0 / _smallest_eigenvalue(K.tocsc(), Mm.tocsc())
        return out


def _smallest_eigenvalue(K: sp.csc_matrix, M: sp.csc_matrix) -> float:
    n = K.shape[0]
    if n <= 200:
        import scipy.linalg as sla

        return float(sla.eigh(K.toarray(), M.toarray(), eigvals_only=True)[0])
    vals = spla.eigsh(K, k=1, M=M, sigma=0.0, which="LM", return_eigenvectors=False)
    return float(vals[0])


@dataclass
class State:
    """Fields at time level ``n`` (plus level ``n - 1`` once BDF2 is running)."""

    t: float
    step: int
    u: CorrectedVelocity
    p: Field
    w: Field
    T: Field
    u_prev: CorrectedVelocity | None = None
    w_prev: Field | None = None
    T_prev: Field | None = None
    tau_prev: float | None = None
    u_tilde: Field | None = None
    phi: Field | None = None


def initial_state(disc: Discretization) -> State:
    pb = disc.problem

    def make(space: FunctionSpace, f: SpaceFn | None) -> Field:
        return space.zero() if f is None else space.interpolate(f)

    p = make(disc.Q, pb.p0)
    p.coeffs -= disc.pressure_mean(p)
    return State(
        t=0.0,
        step=0,
        u=CorrectedVelocity(make(disc.V, pb.u0)),
        p=p,
        w=make(disc.W, pb.w0),
        T=make(disc.M, pb.T0),
    )


@dataclass(frozen=True)
class _Stepping:
    tau: float
    bdf: int
    coeffs: tuple[float, float, float]  # (a0, a1, a2) multiplying x^{n+1}, x^n, x^{n-1}

    @classmethod
    def make(cls, tau: float, bdf: int, tau_prev: float | None = None) -> "_Stepping":
        if bdf == 1:
            return cls(tau, 1, (1.0, -1.0, 0.0))
        r = tau / tau_prev
        return cls(tau, 2, ((1 + 2 * r) / (1 + r), -(1 + r), r * r / (1 + r)))


def _solve(A, b, spec, x0, step: int, substep: str) -> tuple[np.ndarray, SolveReport]:
    try:
        return solve(A, b, spec, x0)
    except SolverError as exc:
        raise StepFailure(step, substep, exc.report, str(exc)) from exc


def tentative_velocity_step(
    state: State, disc: Discretization, params: PhysicalParams, config: SchemeConfig, stepping: _Stepping
) -> Field:
    """Momentum solve for the intermediate velocity with the old pressure gradient."""
    tau = stepping.tau
    a0, a1, a2 = stepping.coeffs
    t1 = state.t + tau
    A = (a0 / tau) * disc.mass_V + (params.nu + params.nu_r) * disc.stiff_V
    if config.convection:
        A = A + assemble_convection(state.u, disc.V, disc.V)
    history = a1 * disc.velocity_mass_product(state.u)
    if a2:
        history += a2 * disc.velocity_mass_product(state.u_prev)
    rhs = (
        -history / tau
        - disc.grad @ state.p.coeffs
        + 2.0 * params.nu_r * (disc.curl_ang_to_vel @ state.w.coeffs)
        + params.e_hat * (disc.buoyancy @ state.T.coeffs)
        + disc.load(disc.V, disc.problem.f1, t1)
    )
    dofs = disc.velocity_dofs
    A, rhs = apply_dirichlet(A, rhs, dofs, disc.boundary_values(disc.V, dofs, disc.problem.velocity_bc, t1))
    x, _ = _solve(A, rhs, config.transport_solver, state.u.base.coeffs, state.step, "tentative velocity")
    return Field(disc.V, x)


def projection_step(
    u_tilde: Field,
    state: State,
    disc: Discretization,
    params: PhysicalParams,
    config: SchemeConfig,
    stepping: _Stepping,
) -> tuple[CorrectedVelocity, Field, Field]:
    """Pressure Poisson solve, velocity correction and pressure update.

    Returns ``(u, p, phi)`` at the new level.
    """
    tau, c = stepping.tau, stepping.coeffs[0]
    div_u = disc.pressure_div.T @ u_tilde.coeffs  # (div u_tilde, q_j)
    guess = None if state.phi is None else state.phi.coeffs
    phi_c, _ = _solve(disc.stiff_Q, -(c / tau) * div_u, config.poisson_solver, guess, state.step, "projection")
    phi = Field(disc.Q, phi_c)
    u = CorrectedVelocity(u_tilde, phi, tau / c)

    gamma = config.pressure_update_viscosity
    if gamma is None:
        gamma = params.nu + params.nu_r if config.scheme.rotational else 0.0
    p = state.p.coeffs + phi_c
    if gamma:
        div_proj, _ = _solve(disc.mass_Q, div_u, config.mass_solver, None, state.step, "pressure update")
        p = p - gamma * div_proj
    p_field = Field(disc.Q, p)
    p_field.coeffs -= disc.pressure_mean(p_field)
    return u, p_field, phi


def angular_step(
    state: State,
    u_new: CorrectedVelocity,
    disc: Discretization,
    params: PhysicalParams,
    config: SchemeConfig,
    stepping: _Stepping,
) -> Field:
    tau = stepping.tau
    a0, a1, a2 = stepping.coeffs
    t1 = state.t + tau
    W = disc.W
    A = (a0 / tau + 4.0 * params.nu_r) * disc.mass_W + params.alpha * disc.stiff_W
    if disc.div_div_W is not None:
        A = A + params.beta * disc.div_div_W
    if config.convection:
        A = A + assemble_convection(u_new, W, W)
    history = a1 * state.w.coeffs
    if a2:
        history = history + a2 * state.w_prev.coeffs
    # the correction gradient is cellwise constant, so curl(u) = curl(u_tilde) cellwise
    rhs = (
        -(disc.mass_W @ history) / tau
        + 2.0 * params.nu_r * (disc.curl_vel_to_ang @ u_new.base.coeffs)
        + disc.load(W, disc.problem.f2, t1)
    )
    dofs = disc.angular_dofs
    A, rhs = apply_dirichlet(A, rhs, dofs, disc.boundary_values(W, dofs, disc.problem.angular_bc, t1))
    x, _ = _solve(A, rhs, config.transport_solver, state.w.coeffs, state.step, "angular")
    return Field(W, x)


def temperature_step(
    state: State,
    u_new: CorrectedVelocity,
    w_new: Field,
    disc: Discretization,
    params: PhysicalParams,
    config: SchemeConfig,
    stepping: _Stepping,
) -> tuple[Field, sp.csr_matrix | None]:
    """Temperature solve; also returns the thermal-curl matrix (``None`` when ``D = 0``)."""
    tau = stepping.tau
    a0, a1, a2 = stepping.coeffs
    t1 = state.t + tau
    M = disc.M
    A = (a0 / tau) * disc.mass_M + params.kappa * disc.stiff_M
    if config.convection:
        A = A + assemble_convection(u_new, M, M)
    S = None
    if params.D:
        S = assemble_thermal_curl(w_new, M, M)
        A = A - params.D * S
    history = a1 * state.T.coeffs
    if a2:
        history = history + a2 * state.T_prev.coeffs
    rhs = -(disc.mass_M @ history) / tau + disc.load(M, disc.problem.f3, t1)
    dofs = disc.temperature_dofs
    A, rhs = apply_dirichlet(A, rhs, dofs, disc.boundary_values(M, dofs, disc.problem.temperature_bc, t1))
    x, _ = _solve(A, rhs, config.transport_solver, state.T.coeffs, state.step, "temperature")
    return Field(M, x), S


def _norm2(matrix, x) -> float:
    return float(x @ (matrix @ x))


def _forcing_norm2(space: FunctionSpace, f: SpaceTimeFn | None, t: float) -> float:
    if f is None:
        return 0.0
    # same quadrature as the load vector
    from .assembly import _nonlinear_degree
    from .elements import quadrature
    from .spaces import cell_chunks

    mesh = space.mesh
    rule = quadrature(mesh.dim, _nonlinear_degree(space))
    total = 0.0
    for cells in cell_chunks(mesh.n_cells):
        x0 = mesh.vertices[mesh.cells[cells, 0]]
        pts = x0[:, None, :] + np.einsum("cij,qj->cqi", mesh.jacobians[cells], rule.reference_points)
        vals = np.asarray(f(pts.reshape(-1, mesh.dim), t), dtype=float).reshape(pts.shape[0], pts.shape[1], -1)
        w = rule.weights[None, :] * np.abs(mesh.determinants[cells])[:, None]
        total += float(np.einsum("cq,cqk->", w, vals**2))
    return total


def energy_terms(
    old: State,
    new: State,
    disc: Discretization,
    params: PhysicalParams,
    tau: float,
    thermal_curl: sp.csr_matrix | None,
) -> dict[str, float]:
    """Both sides of the one-step energy inequality for a first-order step.

    The constants come from the Young splittings of the stability argument
    with the discrete Poincare constants ``c_V, c_W, c_M``:
    ``2 c_V^2 / nu`` for ``f1`` and the buoyancy term, ``c_W^2 / alpha`` for
    ``f2`` and ``c_M^2 / kappa`` for ``f3``. The thermal-curl term
    ``2 D tau S_h(w; T, T)`` vanishes analytically and is kept as measured.
    """
    pc = disc.poincare_constants
    t1 = new.t
    u_t = CorrectedVelocity(new.u_tilde)
    du = CorrectedVelocity(
        Field(disc.V, new.u_tilde.coeffs - old.u.base.coeffs),
        old.u.potential,
        -old.u.factor,
    )
    dw = new.w.coeffs - old.w.coeffs
    dT = new.T.coeffs - old.T.coeffs
    lhs_terms = [
        disc.velocity_inner(new.u, new.u), -disc.velocity_inner(old.u, old.u), disc.velocity_inner(du, du),
        _norm2(disc.mass_W, new.w.coeffs), -_norm2(disc.mass_W, old.w.coeffs), _norm2(disc.mass_W, dw),
        _norm2(disc.mass_M, new.T.coeffs), -_norm2(disc.mass_M, old.T.coeffs), _norm2(disc.mass_M, dT),
        params.nu * tau * _norm2(disc.stiff_V, u_t.base.coeffs),
        params.alpha * tau * _norm2(disc.stiff_W, new.w.coeffs),
        params.kappa * tau * _norm2(disc.stiff_M, new.T.coeffs),
        4 * params.nu_r * tau * _norm2(disc.mass_W, new.w.coeffs),
        tau**2 * _norm2(disc.stiff_Q, new.p.coeffs), -(tau**2) * _norm2(disc.stiff_Q, old.p.coeffs),
    ]
    if disc.div_div_W is not None:
        lhs_terms.append(2 * params.beta * tau * _norm2(disc.div_div_W, new.w.coeffs))
    pb = disc.problem
    cv, cw, cm = pc["velocity"], pc["angular"], pc["temperature"]
    rhs_terms = [
        2 * cv / params.nu * tau * _forcing_norm2(disc.V, pb.f1, t1),
        cw / params.alpha * tau * _forcing_norm2(disc.W, pb.f2, t1),
        cm / params.kappa * tau * _forcing_norm2(disc.M, pb.f3, t1),
        2 * params.e_hat**2 * cv / params.nu * tau * _norm2(disc.mass_M, old.T.coeffs),
        4 * params.nu_r * tau * _norm2(disc.mass_W, old.w.coeffs),
    ]
    if thermal_curl is not None:
        rhs_terms.append(2 * params.D * tau * float(new.T.coeffs @ (thermal_curl @ new.T.coeffs)))
    lhs, rhs = math.fsum(lhs_terms), math.fsum(rhs_terms)
    # roundoff is relative to the individual terms, not to their (cancelling) sums
    scale = math.fsum(abs(v) for v in lhs_terms + rhs_terms)
    return {"t": t1, "lhs": lhs, "rhs": rhs, "residual": lhs - rhs, "scale": scale}


def advance(
    state: State, disc: Discretization, params: PhysicalParams, config: SchemeConfig, tau: float, bdf: int
) -> tuple[State, sp.csr_matrix | None]:
    """One full time step; returns the new state and the thermal-curl matrix used."""
    stepping = _Stepping.make(tau, bdf, state.tau_prev)
    if bdf == 2 and state.u_prev is None:
        raise ValueError("BDF2 step needs the previous time level")
    step_config = config if bdf == 2 or config.scheme is not Scheme.RPC2 else replace(config, scheme=Scheme.RPC1)
    u_tilde = tentative_velocity_step(state, disc, params, step_config, stepping)
    u, p, phi = projection_step(u_tilde, state, disc, params, step_config, stepping)
    w = angular_step(state, u, disc, params, step_config, stepping)
    T, S = temperature_step(state, u, w, disc, params, step_config, stepping)
    new = State(
        t=state.t + tau,
        step=state.step + 1,
        u=u,
        p=p,
        w=w,
        T=T,
        u_prev=state.u,
        w_prev=state.w,
        T_prev=state.T,
        tau_prev=tau,
        u_tilde=u_tilde,
        phi=phi,
    )
    for name, f in (("u", u_tilde), ("p", p), ("w", w), ("T", T)):
        if not np.all(np.isfinite(f.coeffs)):
            raise StepFailure(state.step, name, None, "non-finite values")
    return new, S


@dataclass
class RunResult:
    state: State
    discretization: Discretization
    energy: list[dict[str, float]] = field(default_factory=list)
    steps: int = 0


def run_transient(
    problem: Problem,
    params: PhysicalParams,
    config: SchemeConfig,
    callback: Callable[[State, Discretization], None] | None = None,
    every: int = 1,
    disc: Discretization | None = None,
) -> RunResult:
    """March from the initial data to ``config.end_time``.

    ``callback(state, disc)`` is called for the initial state and then
    every ``every`` steps, and always for the final state. The energy
    monitor (when enabled) holds one record per step; BDF2 steps get NaN
    entries since the inequality is a first-order statement.
    """
    disc = disc or Discretization(problem, config.elements)
    state = initial_state(disc)
    steps = time_grid(config.tau, config.end_time)
    result = RunResult(state, disc)
    if callback is not None:
        callback(state, disc)
    for n, tau in enumerate(steps):
        bdf = 2 if config.scheme is Scheme.RPC2 and n > 0 else 1
        new, S = advance(state, disc, params, config, float(tau), bdf)
        if n == len(steps) - 1:
            new.t = config.end_time
        if config.energy_monitor:
            if bdf == 1:
                result.energy.append(energy_terms(state, new, disc, params, float(tau), S))
            else:
                nan = float("nan")
                result.energy.append({"t": new.t, "lhs": nan, "rhs": nan, "residual": nan, "scale": nan})
        state = new
        if callback is not None and ((n + 1) % max(every, 1) == 0 or n == len(steps) - 1):
            callback(state, disc)
    result.state = state
    result.steps = len(steps)
    return result
