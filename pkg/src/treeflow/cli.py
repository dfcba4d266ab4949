"""Command-line front end.

Exit status: 0 on success, 1 on invalid input (bad flags, malformed or
out-of-range files), 2 when a linear system turns out numerically degenerate.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from . import analytic, auglag, network, topology
from .errors import NumericalDegeneracyError, TreeFlowError, ValidationError
from .flow import OUTLET_FLOWS, OUTLET_PRESSURES, BoundaryConditions, load_bc, solve


class _Parser(argparse.ArgumentParser):
    """Turns usage errors into :class:`ValidationError` so they share exit status 1."""

    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _load_values(path: str, name: str) -> list[float]:
    data = network.load_json(path)
    if isinstance(data, dict):
        if set(data) != {"values"}:
            raise ValidationError(f"{name}: expected a list or an object with only 'values'")
        data = data["values"]
    if not isinstance(data, list):
        raise ValidationError(f"{name}: expected a list of numbers")
    for k, v in enumerate(data):
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
            raise ValidationError(f"{name}[{k}]: expected a finite number, got {v!r}")
    return [float(v) for v in data]


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _branch_rows(geometry, flows, pressures=None):
    for k, branch in enumerate(topology.branch_set(geometry.levels)):
        row = [str(branch), float(geometry.xi[k]), float(flows[k])]
        if pressures is not None:
            row.append(float(pressures[k]))
        yield row


# -- subcommands -------------------------------------------------------------

def _cmd_solve(args) -> str:
    geometry = network.load_geometry(args.geometry)
    if args.bc_file:
        if args.bc or args.flows or args.pressures:
            raise ValidationError("--bc-file cannot be combined with --bc/--flows/--pressures")
        bc = load_bc(args.bc_file)
    elif args.bc == OUTLET_FLOWS:
        if not args.flows or args.phi is not None:
            raise ValidationError("--bc outlet_flows needs --flows (and --p0), not --phi")
        bc = BoundaryConditions.outlet_flows(_load_values(args.flows, "flows"), args.p0 or 0.0)
    elif args.bc == OUTLET_PRESSURES:
        if not args.pressures or args.phi is None or args.p0 is not None:
            raise ValidationError("--bc outlet_pressures needs --pressures and --phi, not --p0")
        bc = BoundaryConditions.outlet_pressures(_load_values(args.pressures, "pressures"),
                                                 args.phi)
    else:
        raise ValidationError("solve: give --bc-file or --bc outlet_flows|outlet_pressures")
    state = solve(geometry, bc)
    if args.format == "csv":
        return _csv(("branch", "xi", "flow", "pressure"),
                    _branch_rows(geometry, state.branch_flows, state.branch_pressures))
    return _json(state.to_dict())


def _cmd_optimize_flows(args) -> str:
    q = _load_values(args.flows, "flows")
    report = analytic.optimal_xi_case1(q, args.lambda_cap, args.r0, p0=args.p0)
    if args.format == "csv":
        state = report.flow_state
        return _csv(("branch", "xi", "flow"), _branch_rows(state.geometry, state.branch_flows))
    return _json(report.to_dict())


def _cmd_optimize_pressures(args) -> str:
    p = np.asarray(_load_values(args.pressures, "pressures"))
    levels = topology.levels_for_outlets(p.size)
    if args.equal_pressure_tol < 0:
        raise ValidationError("--equal-pressure-tol: must be >= 0")
    if float(np.ptp(p)) <= args.equal_pressure_tol:
        report = analytic.equal_pressure_optimum(levels, args.lambda_cap, args.r0, args.phi,
                                                 pressure=float(np.mean(p)))
        out = {"regime": "equal_pressures", "report": report.to_dict()}
        geometry, flows = report.flow_state.geometry, report.flow_state.branch_flows
    else:
        element = analytic.minimizing_sequence_element(
            levels, args.lambda_cap, args.r0, args.phi, p, args.epsilon, outlet=args.outlet)
        out = {"regime": "minimizing_sequence", "outlet": args.outlet,
               **element.to_row(args.lambda_cap),
               "xi": [float(v) for v in element.geometry.xi],
               "flow_state": element.flow_state.to_dict()}
        geometry, flows = element.geometry, element.flow_state.branch_flows
    if args.format == "csv":
        return _csv(("branch", "xi", "flow"), _branch_rows(geometry, flows))
    return _json(out)


def _cmd_sweep(args) -> str:
    p = _load_values(args.pressures, "pressures")
    if len(p) != 2**args.levels:
        raise ValidationError(f"pressures: expected {2**args.levels} values for "
                              f"--levels {args.levels}, got {len(p)}")
    if args.jobs < 1:
        raise ValidationError("--jobs: must be >= 1")
    schedule = analytic.epsilon_schedule(args.levels, args.lambda_cap, eps0=args.eps0,
                                         ratio=args.ratio, steps=args.steps)
    elements = analytic.sweep_epsilon(args.levels, args.lambda_cap, args.r0, args.phi, p,
                                      schedule, jobs=args.jobs)
    if args.format == "json":
        return _json([e.to_row(args.lambda_cap) for e in elements])
    return analytic.sweep_to_csv(elements, args.lambda_cap)


def _cmd_auglag(args) -> str:
    config = auglag.load_config(args.config) if args.config else auglag.AugLagConfig()
    xi0 = _load_values(args.xi0, "xi0") if args.xi0 else None
    if args.case == "flows":
        if not args.flows or args.pressures or args.phi is not None:
            raise ValidationError("auglag --case flows needs --flows only")
        run = auglag.optimize_case1(_load_values(args.flows, "flows"), args.lambda_cap,
                                    args.r0, config, xi0=xi0, p0=args.p0 or 0.0)
    else:
        if not args.pressures or args.phi is None or args.flows:
            raise ValidationError("auglag --case pressures needs --pressures and --phi")
        run = auglag.optimize_case2(_load_values(args.pressures, "pressures"), args.phi,
                                    args.lambda_cap, args.r0, config, xi0=xi0)
    if args.history:
        with open(args.history, "w", newline="") as fh:
            fh.write(run.history_csv())
    if args.format == "csv":
        return run.history_csv()
    return _json(run.to_dict())


def _verify_checks(seed: int):
    rng = np.random.default_rng(seed)

    def a2_example():
        r0 = float(rng.uniform(0.5, 2.0))
        xi = rng.uniform(0.1, 2.0, 6)
        x11, x12, x21, x22, x23, x24 = 1 / xi
        expected = r0 * np.array([
            [1 + x11 + x21, 1 + x11, 1, 1],
            [1 + x11, 1 + x11 + x22, 1, 1],
            [1, 1, 1 + x12 + x23, 1 + x12],
            [1, 1, 1 + x12, 1 + x12 + x24]])
        got = network.resistance_matrix(network.TreeGeometry(2, r0, xi))
        return bool(np.all(np.abs(got - expected) <= 1e-14 * np.abs(expected)))

    def tilde_a1_2():
        target = np.array([[0, 0, 0, 0], [0, 1, 0, 0], [0, 0, 2, 1], [0, 0, 1, 2]], float)
        return bool(np.array_equal(network.tilde_a1(2), target))

    def energy_equivalence():
        for levels in range(1, 7):
            geometry = network.TreeGeometry(levels, 1.0, rng.uniform(0.05, 2.0,
                                                                      topology.n_branches(levels)))
            q = rng.normal(size=2**levels)
            e1 = network.energy_quadratic(q, geometry)
            e2 = network.energy_branchwise(q, geometry)
            if abs(e1 - e2) > 1e-12 * abs(e2):
                return False
        return True

    def ratio_round_trip():
        x = rng.uniform(0.1, 1.0, topology.n_branches(4))
        return bool(np.allclose(topology.x_from_xi(topology.xi_from_x(x)), x,
                                rtol=1e-13, atol=0))

    def flow_round_trip():
        geometry = network.TreeGeometry(3, 1.3, rng.uniform(0.1, 2.0, topology.n_branches(3)))
        q = rng.uniform(0.1, 1.0, 8)
        forward = solve(geometry, BoundaryConditions.outlet_flows(q, p0=5.0))
        back = solve(geometry, BoundaryConditions.outlet_pressures(forward.outlet_pressures,
                                                                   forward.total_flow))
        return bool(np.allclose(back.outlet_flows, q, rtol=1e-10, atol=0)
                    and math.isclose(back.inlet_pressure, 5.0, rel_tol=1e-10))

    def geometry_round_trip():
        geometry = network.TreeGeometry(2, 2.0, rng.uniform(0.1, 2.0, 6), R0=0.01, L0=0.1)
        again = network.TreeGeometry.from_dict(json.loads(json.dumps(geometry.to_dict())))
        return bool(np.array_equal(again.xi, geometry.xi) and again.r0 == geometry.r0)

    return [("a2_example_matrix", a2_example), ("tilde_a1_level2", tilde_a1_2),
            ("energy_equivalence", energy_equivalence), ("ratio_round_trip", ratio_round_trip),
            ("flow_round_trip", flow_round_trip), ("geometry_round_trip", geometry_round_trip)]


def _cmd_verify(args) -> str:
    lines, failed = [], 0
    for name, check in _verify_checks(args.seed):
        ok = check()
        failed += not ok
        lines.append(f"{'PASS' if ok else 'FAIL'} {name}")
    args.exit_status = 1 if failed else 0
    if args.format == "json":
        return _json({line.split()[1]: line.startswith("PASS") for line in lines})
    return "\n".join(lines) + "\n"


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="treeflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, default_format="json"):
        p.add_argument("--format", choices=("json", "csv"), default=default_format)
        p.add_argument("--output", "-o", help="write here instead of stdout")

    def physics(p, phi=True):
        p.add_argument("--lambda", dest="lambda_cap", type=float, required=True,
                       help="volume cap (> 1)")
        p.add_argument("--r0", type=float, default=1.0, help="root resistance")
        if phi:
            p.add_argument("--phi", type=float, required=True, help="inlet flow")

    p = sub.add_parser("solve", help="flows and pressures for a given geometry")
    p.add_argument("--geometry", required=True)
    p.add_argument("--bc", choices=(OUTLET_FLOWS, OUTLET_PRESSURES))
    p.add_argument("--bc-file", help="boundary conditions as one JSON object")
    p.add_argument("--flows")
    p.add_argument("--pressures")
    p.add_argument("--p0", type=float)
    p.add_argument("--phi", type=float)
    common(p)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("optimize-flows", help="closed-form optimum for prescribed outlet flows")
    p.add_argument("--flows", required=True)
    p.add_argument("--p0", type=float, default=0.0)
    physics(p, phi=False)
    common(p)
    p.set_defaults(func=_cmd_optimize_flows)

    p = sub.add_parser("optimize-pressures",
                       help="equal-pressure optimum, or the collapsing geometry at --epsilon")
    p.add_argument("--pressures", required=True)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--outlet", type=int, default=1, help="outlet kept open (1-based)")
    p.add_argument("--equal-pressure-tol", type=float, default=0.0,
                   help="pressures whose spread is within this count as equal (default 0)")
    physics(p)
    common(p)
    p.set_defaults(func=_cmd_optimize_pressures)

    p = sub.add_parser("sweep-epsilon", help="collapsing sequence along a geometric schedule")
    p.add_argument("--levels", type=int, required=True)
    p.add_argument("--pressures", required=True)
    p.add_argument("--eps0", type=float)
    p.add_argument("--ratio", type=float, default=0.5)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--jobs", type=int, default=1)
    physics(p)
    common(p, default_format="csv")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("auglag", help="augmented Lagrangian optimization")
    p.add_argument("--case", choices=("flows", "pressures"), required=True)
    p.add_argument("--flows")
    p.add_argument("--pressures")
    p.add_argument("--phi", type=float)
    p.add_argument("--p0", type=float)
    p.add_argument("--config", help="AugLagConfig as JSON")
    p.add_argument("--xi0", help="starting ratios (JSON list)")
    p.add_argument("--history", help="also write the iterate history CSV here")
    physics(p, phi=False)
    common(p)
    p.set_defaults(func=_cmd_auglag)

    p = sub.add_parser("verify", help="built-in identity checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--output", "-o")
    p.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        args.exit_status = 0
        text = args.func(args)
    except NumericalDegeneracyError as exc:
        print(f"numerical degeneracy: {exc}", file=sys.stderr)
        return 2
    except TreeFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.output:
        with open(args.output, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return args.exit_status


if __name__ == "__main__":
    sys.exit(main())
