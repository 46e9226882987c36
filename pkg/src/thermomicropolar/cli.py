"""Command-line entry point.

Subcommands::

    thermomicropolar solve <manifest>
    thermomicropolar convergence <manifest>
    thermomicropolar benchmark <name> [--rayleigh R] [--scheme S] [--h H] [--tau T] [--tend T]
    thermomicropolar check

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace
from typing import Sequence

from . import __version__
from .benchmarks import BenchmarkPreset, extract_profile, load_preset, max_principle_overshoot
from .io import (
    PRESET_ALIASES,
    ManifestError,
    RunManifest,
    format_manifest,
    parse_manifest,
    write_csv,
    write_state_vtk,
)
from .linalg import SolverError
from .manufactured import (
    COLUMNS,
    exact_2d,
    exact_3d,
    manufactured_problem,
    run_convergence_study,
    solution_errors,
)
from .mesh import build_structured_mesh
from .schemes import ElementPair, PhysicalParams, Scheme, SchemeConfig, StepFailure, run_transient

log = logging.getLogger("thermomicropolar")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2

# cell counts and end times used when a manufactured manifest leaves them out
_MS_DEFAULTS = {"ms2d": ((10, 20, 40), 0.1), "ms3d": ((4, 6, 8), 0.5)}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _setup_logging(out_dir: str) -> logging.Handler:
    os.makedirs(out_dir, exist_ok=True)
    handler = logging.FileHandler(os.path.join(out_dir, "run.log"), mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    return handler


def _solver_overrides(config: SchemeConfig, m: RunManifest) -> SchemeConfig:
    max_iter = m.max_iter or None

    def tune(spec):
        return replace(spec, rel_tol=m.rel_tol, max_iter=max_iter)

    return replace(
        config,
        poisson_solver=tune(config.poisson_solver),
        transport_solver=tune(config.transport_solver),
        mass_solver=tune(config.mass_solver),
    )


def _params(m: RunManifest, base: PhysicalParams) -> PhysicalParams:
    return replace(base, **dict(m.physics)) if m.physics else base


def _tau(m: RunManifest, inv_h: int, scheme: Scheme) -> float:
    if m.tau is not None:
        return m.tau
    law = m.tau_law or ("h" if scheme is Scheme.RPC2 else "h2")
    return 1.0 / inv_h if law == "h" else 1.0 / inv_h**2


def _check_dim(m: RunManifest, dim: int) -> None:
    if m.dim is not None and m.dim != dim:
        raise ManifestError(f"key 'dim': problem {m.problem_id} is {dim}D but dim = {m.dim}")


def _log_manifest(m: RunManifest) -> None:
    for key in m.defaults_applied:
        log.info("default applied: %s", key)
    log.info("resolved manifest:\n%s", format_manifest(m))


def _write_profiles(preset: BenchmarkPreset, state, out_dir: str) -> list[str]:
    fields = {"u": state.u, "T": state.T, "w": state.w, "p": state.p}
    written = []
    for name, (fname, comp, start, end) in preset.profiles.items():
        s, vals = extract_profile(fields[fname], start, end, comp)
        path = os.path.join(out_dir, f"profile_{name}.csv")
        write_csv(path, ("s", "value"), zip(s, vals))
        written.append(path)
    return written


def _write_energy(result, out_dir: str) -> None:
    if result.energy:
        write_csv(
            os.path.join(out_dir, "energy_monitor.csv"),
            ("t", "lhs", "rhs", "residual"),
            ((e["t"], e["lhs"], e["rhs"], e["residual"]) for e in result.energy),
        )


def _vtk_callback(out_dir: str, enabled: bool):
    def callback(state, disc):
        if enabled:
            write_state_vtk(os.path.join(out_dir, f"fields_{state.step}.vtk"), state, disc)

    return callback


def _run_preset(preset: BenchmarkPreset, config: SchemeConfig, out_dir: str, every: int, vtk: bool, profiles: bool):
    problem, params, _ = preset.build()
    log.info("preset %s: 1/h=%d tau=%r tend=%r scheme=%s e_hat=%r",
             preset.name.value, preset.inv_h, config.tau, config.end_time, config.scheme.value, params.e_hat)
    log.info("effective parameters: %s", params)
    log.info("effective config: %s", config)
    start = time.perf_counter()
    cb = _vtk_callback(out_dir, vtk)
    result = run_transient(problem, params, config, callback=cb, every=every or 10**9)
    lo, hi = preset.temperature_range
    overshoot = max_principle_overshoot(result.state.T, lo, hi)
    log.info("finished %d steps in %.1f s; temperature overshoot %.3e", result.steps, time.perf_counter() - start, overshoot)
    if profiles:
        for path in _write_profiles(preset, result.state, out_dir):
            log.info("wrote %s", path)
    _write_energy(result, out_dir)
    print(f"{preset.name.value}: {result.steps} steps, temperature overshoot {overshoot:.3e}, output in {out_dir}")
    return result


def _exact(m: RunManifest):
    exact = exact_2d() if m.manufactured == "ms2d" else exact_3d()
    _check_dim(m, exact.dim)
    return exact


def cmd_solve(args) -> int:
    m = _read_manifest(args.manifest)
    _setup_logging(m.out_dir)
    _log_manifest(m)
    scheme = Scheme(m.scheme.upper())
    if m.preset:
        preset = load_preset(PRESET_ALIASES[m.preset], inv_h=m.n[0] if m.n else None, tau=m.tau,
                             end_time=m.tend, scheme=scheme)
        _check_dim(m, preset.dim)
        if m.physics:
            preset = replace(preset, params=_params(m, preset.params))
        if m.tau is None and m.tau_law is not None:
            preset = replace(preset, tau=_tau(m, preset.inv_h, scheme))
        if m.elements:
            preset = replace(preset, elements=ElementPair[m.elements.upper().replace("-", "_")])
        _, _, config = preset.build()
        config = _solver_overrides(replace(config, energy_monitor=True), m)
        _run_preset(preset, config, m.out_dir, m.every, m.vtk, m.profiles)
        return EXIT_OK

    exact = _exact(m)
    ns, tend = _MS_DEFAULTS[m.manufactured]
    inv_h = (m.n or ns)[0]
    params = _params(m, PhysicalParams())
    mesh = build_structured_mesh((0.0,) * exact.dim, (1.0,) * exact.dim, inv_h)
    problem = manufactured_problem(exact, mesh, params)
    config = SchemeConfig(
        scheme=scheme,
        tau=_tau(m, inv_h, scheme),
        end_time=m.tend or tend,
        elements=(m.elements or "p1b-p1").upper().replace("-", "_"),
        energy_monitor=problem.homogeneous,
    )
    config = _solver_overrides(config, m)
    log.info("manufactured %s: 1/h=%d tau=%r tend=%r", m.manufactured, inv_h, config.tau, config.end_time)
    log.info("effective parameters: %s", params)
    log.info("effective config: %s", config)
    result = run_transient(problem, params, config, callback=_vtk_callback(m.out_dir, m.vtk), every=m.every or 10**9)
    errors = solution_errors(result, exact)
    write_csv(os.path.join(m.out_dir, "table.csv"), ("inv_h", *COLUMNS), [(inv_h, *(errors[k] for k in COLUMNS))])
    _write_energy(result, m.out_dir)
    for k in COLUMNS:
        log.info("error %s = %.17g", k, errors[k])
        print(f"{k:>4} {errors[k]:.6e}")
    return EXIT_OK


def cmd_convergence(args) -> int:
    m = _read_manifest(args.manifest)
    if not m.manufactured:
        raise ManifestError("key 'manufactured': a convergence study needs a manufactured solution")
    _setup_logging(m.out_dir)
    _log_manifest(m)
    exact = _exact(m)
    scheme = Scheme(m.scheme.upper())
    ns, tend = _MS_DEFAULTS[m.manufactured]
    if m.tau is not None:
        raise ManifestError("key 'tau': a convergence study ties tau to h; use tau_law")
    law = m.tau_law or ("h" if scheme is Scheme.RPC2 else "h2")
    base = _solver_overrides(SchemeConfig(), m)
    table = run_convergence_study(
        scheme,
        exact,
        m.n or ns,
        tau_law=law,
        end_time=m.tend or tend,
        params=_params(m, PhysicalParams()),
        elements=(m.elements or "p1b-p1").upper().replace("-", "_"),
        poisson_solver=base.poisson_solver,
        transport_solver=base.transport_solver,
        mass_solver=base.mass_solver,
    )
    path = os.path.join(m.out_dir, "table.csv")
    table.to_csv(path)
    text = table.to_text()
    log.info("convergence table:\n%s", text)
    print(text)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    name = PRESET_ALIASES.get(args.name.lower())
    if name is None:
        raise UsageError(f"unknown benchmark {args.name!r}; choose from {', '.join(PRESET_ALIASES)}")
    inv_h = None
    if args.h is not None:
        if args.h <= 0:
            raise UsageError("--h must be positive")
        inv_h = max(1, round(1.0 / args.h))
    for flag in ("tau", "tend"):
        value = getattr(args, flag)
        if value is not None and not value > 0:
            raise UsageError(f"--{flag} must be positive")
    preset = load_preset(name, rayleigh=args.rayleigh, inv_h=inv_h, tau=args.tau, end_time=args.tend,
                         scheme=args.scheme.upper())
    out_dir = args.out or os.path.join("output", args.name.lower())
    _setup_logging(out_dir)
    _, _, config = preset.build()
    config = replace(config, energy_monitor=args.energy)
    _run_preset(preset, config, out_dir, args.every, vtk=True, profiles=True)
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_checks

    results = run_checks()
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERICAL


def _read_manifest(path: str) -> RunManifest:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read manifest {path}: {exc}") from None
    return parse_manifest(text)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="thermomicropolar", description="Thermomicropolar flow solver.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("solve", help="transient run described by a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("convergence", help="manufactured-solution convergence study")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("benchmark", help="run a buoyancy benchmark preset")
    p.add_argument("name", help=", ".join(PRESET_ALIASES))
    p.add_argument("--rayleigh", type=float, help="e_hat coefficient")
    p.add_argument("--scheme", default="rpc1", choices=("spc1", "rpc1", "rpc2"))
    p.add_argument("--h", type=float, help="mesh size")
    p.add_argument("--tau", type=float, help="time step")
    p.add_argument("--tend", type=float, help="final time")
    p.add_argument("--out", help="output directory (default output/<name>)")
    p.add_argument("--every", type=int, default=0, help="VTK cadence in steps (0: initial and final only)")
    p.add_argument("--energy", action=argparse.BooleanOptionalAction, default=True, help="energy monitor")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("check", help="algebraic invariant self-test")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    handlers = list(log.handlers)
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except (UsageError, ManifestError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StepFailure, SolverError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    finally:
        for h in list(log.handlers):
            if h not in handlers:
                log.removeHandler(h)
                h.close()


if __name__ == "__main__":
    sys.exit(main())
