"""Krylov solvers for the linear systems of each substep.

Thin wrapper over ``scipy.sparse.linalg`` that adds the pure-Neumann
(constant nullspace) treatment, an independent residual check and an
explicit failure carrying the solve report.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "Method",
    "Nullspace",
    "POISSON",
    "SPD",
    "TRANSPORT",
    "Preconditioner",
    "SolveReport",
    "SolverError",
    "SolverSpec",
    "solve",
]


class Method(str, Enum):
    CG = "cg"
    BICGSTAB = "bicgstab"
    GMRES = "gmres"


class Preconditioner(str, Enum):
    NONE = "none"
    JACOBI = "jacobi"


class Nullspace(str, Enum):
    NONE = "none"
    CONSTANTS = "constants"


@dataclass(frozen=True)
class SolverSpec:
    method: Method = Method.BICGSTAB
    preconditioner: Preconditioner = Preconditioner.JACOBI
    rel_tol: float = 1e-10
    abs_tol: float = 1e-14
    max_iter: int | None = None  # None means 10 * n
    nullspace: Nullspace = Nullspace.NONE
    restart: int = 50
    fallback: bool = True  # switch BiCGSTAB to GMRES on breakdown

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "preconditioner", Preconditioner(self.preconditioner))
        object.__setattr__(self, "nullspace", Nullspace(self.nullspace))
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("solver tolerances must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.restart < 1:
            raise ValueError("restart must be >= 1")


POISSON = SolverSpec(method=Method.CG, nullspace=Nullspace.CONSTANTS)
TRANSPORT = SolverSpec(method=Method.BICGSTAB)
SPD = SolverSpec(method=Method.CG)


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    relative_residual: float
    absolute_residual: float
    converged: bool
    method: str


class SolverError(RuntimeError):
    """Linear solve failed to converge; ``report`` holds the last state."""

    def __init__(self, message: str, report: SolveReport):
        super().__init__(message)
        self.report = report


def _project(v: np.ndarray) -> np.ndarray:
    return v - v.mean()


def _preconditioner(A: sp.csr_matrix, spec: SolverSpec) -> spla.LinearOperator | None:
    n = A.shape[0]
    project = spec.nullspace is Nullspace.CONSTANTS
    if spec.preconditioner is Preconditioner.NONE:
        if not project:
            return None
        return spla.LinearOperator((n, n), matvec=_project, dtype=float)
    diag = A.diagonal()
    inv = np.where(diag != 0.0, 1.0 / np.where(diag != 0.0, diag, 1.0), 1.0)
    if project:
        return spla.LinearOperator((n, n), matvec=lambda v: _project(inv * _project(np.ravel(v))), dtype=float)
    return sp.diags(inv, format="csr")


def _krylov(method: Method, A, b, x0, M, tol_abs: float, maxiter: int, restart: int, callback):
    count = [0]

    def cb(arg):
        count[0] += 1
        if callback is not None and method is not Method.GMRES:
            callback(arg)

    if method is Method.CG:
        x, info = spla.cg(A, b, x0=x0, rtol=0.0, atol=tol_abs, maxiter=maxiter, M=M, callback=cb)
    elif method is Method.BICGSTAB:
        x, info = spla.bicgstab(A, b, x0=x0, rtol=0.0, atol=tol_abs, maxiter=maxiter, M=M, callback=cb)
    else:
        # gmres counts restart cycles in maxiter
        x, info = spla.gmres(
            A, b, x0=x0, rtol=0.0, atol=tol_abs, restart=restart,
            maxiter=max(1, -(-maxiter // restart)), M=M, callback=cb, callback_type="pr_norm",
        )
    return x, info, count[0]


def solve(
    matrix: sp.spmatrix,
    rhs: np.ndarray,
    spec: SolverSpec = TRANSPORT,
    initial_guess: np.ndarray | None = None,
    callback: Callable[[np.ndarray], None] | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Solve ``matrix @ x = rhs``.

    Converged means ``|b - A x| <= max(rel_tol * |b|, abs_tol)`` for the
    residual recomputed after the Krylov method returns. With the
    ``CONSTANTS`` nullspace the right-hand side, the initial guess and
    every iterate are kept mean-zero.

    Raises:
        SolverError: no convergence within ``max_iter`` iterations.
    """
    A = sp.csr_matrix(matrix)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"matrix must be square, got {A.shape}")
    b = np.asarray(rhs, dtype=float).copy()
    if b.shape != (n,):
        raise ValueError(f"rhs has shape {b.shape}, expected ({n},)")
    x0 = np.zeros(n) if initial_guess is None else np.asarray(initial_guess, dtype=float).copy()
    if spec.nullspace is Nullspace.CONSTANTS:
        b, x0 = _project(b), _project(x0)
    maxiter = spec.max_iter or 10 * n

    bnorm = float(np.linalg.norm(b))
    target = max(spec.rel_tol * bnorm, spec.abs_tol)
    M = _preconditioner(A, spec)

    def report(x, iters, method):
        r = float(np.linalg.norm(b - A @ x))
        rel = r / bnorm if bnorm > 0 else (0.0 if r == 0 else np.inf)
        return SolveReport(iters, rel, r, r <= target, method.value)

    if bnorm == 0.0 and not np.any(x0):
        return x0, SolveReport(0, 0.0, 0.0, True, spec.method.value)

    first = report(x0, 0, spec.method)
    if first.converged:
        return x0, first

    method, x, total, rep = spec.method, x0, 0, first
    # a few restarts guard against the Krylov recurrence residual drifting from the true one
    for _ in range(4):
        x_new, info, iters = _krylov(method, A, b, x, M, target, maxiter - total, spec.restart, callback)
        total += iters
        if info < 0 and method is Method.BICGSTAB and spec.fallback:
            method = Method.GMRES
            continue
        if np.all(np.isfinite(x_new)):
            x = x_new
        if spec.nullspace is Nullspace.CONSTANTS:
            x = _project(x)
        rep = report(x, total, method)
        if rep.converged or total >= maxiter:
            break
    if not rep.converged:
        raise SolverError(
            f"{method.value} did not converge: relative residual {rep.relative_residual:.3e} "
            f"after {rep.iterations} iterations",
            rep,
        )
    return x, rep
