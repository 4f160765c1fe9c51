"""Command-line front end: solve benchmark/custom scenarios, export dv
contour grids, and dump time-parameterized trajectories.

Exit codes: 0 success, 1 malformed input or invalid configuration,
2 search completed but found no feasible transfer.
"""

import argparse
import csv
import io
import os
import sys
from dataclasses import replace

from .errors import EmptyResultError, GeodvError, ScenarioFormatError


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="geodv",
        description="minimum-dV two-impulse phase-free transfers via "
                    "Jacobi-metric geodesics")
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="run the planner on a scenario")
    ps.add_argument("--scenario", required=True,
                    help="bundled scenario name or JSON file path")
    ps.add_argument("--backend", choices=["ellipse", "heatflow"],
                    help="override the scenario's geodesic backend")
    ps.add_argument("--mode", choices=["coarse-to-fine", "refine-only"],
                    default="coarse-to-fine")
    ps.add_argument("--seed", type=int, help="override the RNG seed")
    ps.add_argument("--out", help="report JSON path (default: stdout)")

    pc = sub.add_parser("contour", help="export an optimal-dV contour grid")
    pc.add_argument("--scenario", required=True)
    pc.add_argument("--resolution", type=int, required=True)
    pc.add_argument("--out", required=True, help="CSV output path")

    pt = sub.add_parser("trajectory", help="time-sampled states of a solution")
    pt.add_argument("--solution", required=True, help="report JSON from solve")
    pt.add_argument("--n", type=int, default=200)
    pt.add_argument("--out", required=True, help="CSV output path")
    return parser


def _cmd_solve(args) -> int:
    import json

    from . import scenarios
    from .planner import solve

    scn = scenarios.load_scenario(args.scenario)
    cfg = scn.config_for_mode(args.mode)
    if args.backend:
        cfg = replace(cfg, backend=args.backend)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    scn = replace(scn, planner=cfg)
    if cfg.backend == "ellipse" and scn.model.kind.value == "j2":
        raise ScenarioFormatError(
            "ellipse backend cannot be used with an oblate gravity model")

    sol, diag = solve(scn.problem(), cfg, args.mode)
    report = scenarios.report_dict(scn, args.mode, cfg.seed, sol, diag)
    if args.out:
        scenarios.write_json(args.out, report)
        print(f"{scn.name}: total dv = {sol.total_dv:.6f} km/s "
              f"(branch {sol.branch}, tof {sol.tof:.1f} s) -> {args.out}")
    else:
        json.dump(report, sys.stdout, indent=2, sort_keys=True)
        print()
    return 0


def _cmd_contour(args) -> int:
    from . import scenarios
    from .planner import contour_grid

    if args.resolution < 2:
        raise ScenarioFormatError("resolution must be at least 2")
    scn = scenarios.load_scenario(args.scenario)
    if scn.planner.backend != "ellipse":
        raise ScenarioFormatError("contour export requires an ellipse-backend "
                                  "scenario")
    out = contour_grid(scn.problem(), args.resolution, args.resolution,
                       scn.planner)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    for row in out["grid"]:
        writer.writerow(["" if not (cell == cell) else f"{cell:.16e}"
                         for cell in row])
    scenarios._atomic_write(args.out, buf.getvalue())
    sidecar = {
        "scenario": scn.name,
        "rows": "initial-orbit position fraction u0, inclusive 0..1",
        "cols": "target-orbit position fraction uf, inclusive 0..1",
        "u0": out["u0"].tolist(),
        "uf": out["uf"].tolist(),
        "min_dv": out["min_dv"],
        "argmin": list(out["argmin"]),
    }
    scenarios.write_json(os.path.splitext(args.out)[0] + ".meta.json", sidecar)
    print(f"{scn.name}: {args.resolution}x{args.resolution} grid, "
          f"min dv = {out['min_dv']:.6f} km/s -> {args.out}")
    return 0


def _cmd_trajectory(args) -> int:
    from . import scenarios
    from .planner import reconstruct_states

    if args.n < 2:
        raise ScenarioFormatError("need at least 2 samples")
    report = scenarios.load_report(args.solution)
    scn = scenarios.scenario_from_dict(report["scenario"])
    sol = scenarios.solution_from_dict(report["solution"])
    times, r, v = reconstruct_states(scn.model, sol.curve, sol.energy, args.n)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(["t", "x", "y", "z", "vx", "vy", "vz"])
    for k in range(args.n):
        writer.writerow([f"{val:.16e}" for val in
                         (times[k], *r[k], *v[k])])
    scenarios._atomic_write(args.out, buf.getvalue())
    print(f"trajectory: {args.n} samples, tof {times[-1]:.1f} s -> {args.out}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "contour":
            return _cmd_contour(args)
        return _cmd_trajectory(args)
    except EmptyResultError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ScenarioFormatError, GeodvError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
