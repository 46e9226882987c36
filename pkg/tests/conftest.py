"""Shared long-running benchmark runs, computed once per session."""

import pytest

from thermomicropolar.benchmarks import boundary_layer_jump, load_preset, run_benchmark

# callback cadence for the cavity runs (tau = 1/900)
JUMP_EVERY = 15


@pytest.fixture(scope="session")
def cavity_runs():
    """Cavity 2D at e_hat = 1e4, h = 1/30, end time 1 for RPC1 and SPC1.

    Returns ``{scheme: (result, [(t, jump), ...])}``.
    """
    out = {}
    for scheme in ("RPC1", "SPC1"):
        history = []

        def record(state, disc, history=history):
            history.append((state.t, boundary_layer_jump(state.p)))

        result = run_benchmark(load_preset("CAVITY_2D", 1e4, scheme=scheme), callback=record, every=JUMP_EVERY)
        out[scheme] = (result, history)
    return out


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def acceptance_report(request, capsys):
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""

    def report(name: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'} {name}: {detail}"
        request.config.acceptance_lines.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return passed

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in config.acceptance_lines:
            terminalreporter.write_line(line)
