"""Command-line interface: ``python -m adeopt <command> ...``.

Exit status is 0 on success, 1 on invalid input and 2 on numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .bounds import bound_report, write_bound_csv
from .errors import AdeoptError, BoundViolation, NumericalError, ValidationError
from .operator import OdeOperator
from .optimizer import (
    ControlProblem,
    greedy_schedule,
    optimize_horizon,
    write_solution_csv,
)
from .scenarios import (
    CONFIG_KEYS,
    ControlMode,
    Phase,
    ScenarioName,
    ScenarioSpec,
    build_fixed_flow_operator,
    build_switching_flow_operator,
    load_config,
    project_initial,
)
from .simulator import (
    TimeGrid,
    check_energy_identity,
    constant_schedule,
    piecewise_schedule,
    simulate,
    switching_schedule,
    write_field_csv,
    write_trajectory_csv,
)
from .spectral import build_coupling_tensors, write_tensor_csv

class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1 (argparse's default is 2)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; flags override its values")
    p.add_argument("--scenario", choices=[s.value for s in ScenarioName])
    p.add_argument("--basis", choices=["sine", "cosine"])
    p.add_argument("--N", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--kappa", type=float)
    p.add_argument("--t-final", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--initial", help="'step' or 'modes:m,n=v;...'")
    p.add_argument("--control", choices=[c.value for c in ControlMode])
    p.add_argument("--constraint", choices=["l2", "h1"])
    p.add_argument("--alpha", help="custom velocity 'k,l=v;...'")
    p.add_argument("--segments", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--dump-modes", action="store_const", const="true")
    p.add_argument("--record-every", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="adeopt", description="Spectral advection-diffusion mixing toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("tensors", help="build and dump coupling tensors")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--basis", choices=["sine", "cosine"], default="sine")
    p.add_argument("--output-dir", default=".")

    p = sub.add_parser("simulate", help="run a scenario and write its trajectory")
    _add_scenario_flags(p)

    p = sub.add_parser("optimize", help="greedy or finite-horizon control")
    _add_scenario_flags(p)
    p.add_argument("--max-iter", type=int, default=50)

    p = sub.add_parser("verify-bounds", help="entrywise advection bound report")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", default=".")

    p = sub.add_parser("benchmark", help="switching flow against pure diffusion")
    _add_scenario_flags(p)

    p = sub.add_parser("verify-energy", help="energy identity residual")
    _add_scenario_flags(p)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def resolve_spec(args: argparse.Namespace, default_scenario: str = "custom") -> ScenarioSpec:
    """Preset defaults, then config file values, then explicit flags."""
    values = load_config(args.config) if args.config else {}
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    scenario = values.pop("scenario", default_scenario)
    return ScenarioSpec.preset(scenario, **values)


def _grid(spec: ScenarioSpec) -> TimeGrid:
    return TimeGrid(0.0, spec.t_final, spec.dt)


def _tensor_operator(spec: ScenarioSpec) -> OdeOperator:
    t = build_coupling_tensors(spec.N, spec.M, spec.basis)
    return OdeOperator(spec.basis, spec.N, spec.kappa, t)


def prescribed_run(spec: ScenarioSpec):
    """Operator and schedule for the scenario's own velocity field."""
    if spec.scenario is ScenarioName.FIXED_FLOW:
        return build_fixed_flow_operator(spec.N, spec.kappa), None
    if spec.scenario is ScenarioName.SWITCHING_FLOW:
        op1 = build_switching_flow_operator(spec.N, spec.kappa, Phase.PART1)
        op2 = build_switching_flow_operator(spec.N, spec.kappa, Phase.PART2)
        return op1, switching_schedule(op1.fixed_advection, op2.fixed_advection)
    op = _tensor_operator(spec)
    return op, constant_schedule(spec.velocity)


def _out(spec_or_dir) -> Path:
    d = Path(spec_or_dir.output_dir if isinstance(spec_or_dir, ScenarioSpec) else spec_or_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _controlled(spec: ScenarioSpec, record_every: int = 1, max_iter: int = 50):
    """Run the scenario under its control mode; returns (trajectory, solution or None, segment bounds)."""
    grid = _grid(spec)
    if spec.control is ControlMode.PRESCRIBED:
        op, schedule = prescribed_run(spec)
        a0 = project_initial(spec.initial_condition, op.basis, op.N)
        return simulate(op, schedule, a0, grid, record_every), None, None

    op = _tensor_operator(spec)
    a0 = project_initial(spec.initial_condition, op.basis, op.N)
    if spec.control is ControlMode.GREEDY:
        sol, traj = greedy_schedule(op, a0, grid, spec.constraint, record_every=record_every)
        times = [grid.time(k) for k in range(len(sol.controls) + 1)]
        return traj, sol, list(zip(times[:-1], times[1:]))

    problem = ControlProblem(op, a0, grid, spec.constraint, spec.segments)
    sol = optimize_horizon(problem, max_iter=max_iter)
    bounds = [problem.segment_bounds(s) for s in range(spec.segments)]
    schedule = piecewise_schedule([b[0] for b in bounds], sol.controls)
    return simulate(op, schedule, a0, grid, record_every), sol, bounds


def cmd_tensors(args) -> int:
    t = build_coupling_tensors(args.N, args.M, args.basis)
    path = _out(args.output_dir) / "tensors.csv"
    write_tensor_csv(t, path)
    print(f"wrote {t.nnz} nonzero entries ({100 * t.nonzero_fraction():.2f}%) to {path}")
    return 0


def _write_run(spec: ScenarioSpec, traj) -> None:
    out = _out(spec)
    write_trajectory_csv(traj, out / "trajectory.csv", dump_modes=spec.dump_modes)
    write_field_csv(traj.final, out / f"field_{traj.times[-1]:g}.csv")


def cmd_simulate(args) -> int:
    spec = resolve_spec(args)
    traj, sol, bounds = _controlled(spec, args.record_every)
    _write_run(spec, traj)
    if sol is not None:
        write_solution_csv(sol, bounds, _out(spec) / "solution.csv")
    print(f"t={traj.times[-1]:g}  Q={traj.Q[-1]:.6g}  V={traj.V[-1]:.6g}")
    return 0


def cmd_optimize(args) -> int:
    spec = resolve_spec(args)
    if spec.control is ControlMode.PRESCRIBED:
        spec.control = ControlMode.GREEDY
    traj, sol, bounds = _controlled(spec, args.record_every, args.max_iter)
    write_solution_csv(sol, bounds, _out(spec) / "solution.csv")
    _write_run(spec, traj)
    print(f"{spec.control.value}: Q(T)={traj.Q[-1]:.6g} after {sol.iterations} iterations")
    return 0


def cmd_verify_bounds(args) -> int:
    try:
        report = bound_report(args.N, args.M, args.trials, args.seed)
    except BoundViolation as exc:
        for mn, ij, v, b in exc.violations[:10]:
            print(f"violation at {mn},{ij}: |{v:.6g}| > {b:.6g}", file=sys.stderr)
        raise
    write_bound_csv(report, _out(args.output_dir) / "bounds.csv")
    for name, value in report.rows():
        print(f"{name:>20s}  {value}")
    return 0


def cmd_benchmark(args) -> int:
    spec = resolve_spec(args, default_scenario="switching")
    if spec.scenario is not ScenarioName.SWITCHING_FLOW:
        raise ValidationError("benchmark runs the switching scenario")
    op, schedule = prescribed_run(spec)
    a0 = project_initial(spec.initial_condition, op.basis, op.N)
    grid = _grid(spec)
    zero = np.zeros((op.size, op.size))
    with ThreadPoolExecutor(max_workers=2) as pool:
        mixed = pool.submit(simulate, op, schedule, a0, grid, args.record_every)
        diffusive = pool.submit(simulate, op, constant_schedule(zero), a0, grid, args.record_every)
        mixed, diffusive = mixed.result(), diffusive.result()
    _write_run(spec, mixed)
    with open(_out(spec) / "benchmark.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "V_switching", "V_diffusion"])
        for t, vm, vd in zip(mixed.times, mixed.V, diffusive.V):
            w.writerow([format(t, ".17g"), format(vm, ".17g"), format(vd, ".17g")])
    print(f"V({mixed.times[-1]:g}): switching {mixed.V[-1]:.6g}, diffusion only {diffusive.V[-1]:.6g}")
    return 0


def cmd_verify_energy(args) -> int:
    spec = resolve_spec(args, default_scenario="fixed")
    traj, _, _ = _controlled(spec, args.record_every)
    res = check_energy_identity(traj, spec.kappa)
    print(f"max normalised energy residual {res:.3e} (tol {args.tol:g})")
    if res > args.tol:
        raise NumericalError(f"energy identity residual {res:.3e} exceeds {args.tol:g}")
    return 0


COMMANDS = {
    "tensors": cmd_tensors,
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "verify-bounds": cmd_verify_bounds,
    "benchmark": cmd_benchmark,
    "verify-energy": cmd_verify_energy,
}


def run_cli(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, OSError) as exc:
        print(f"adeopt: error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, AdeoptError) as exc:
        print(f"adeopt: numerical failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())
