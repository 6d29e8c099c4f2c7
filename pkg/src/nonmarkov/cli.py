"""Command-line scenario runner.

Exit codes: 0 success, 1 error, 2 a NOT_CP sample was found under
``--require-cp``.
"""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .analytic import f_closed_form
from .laplace_check import verify_resolvent
from .operator_core import Verdict
from .scenario import ScenarioError, load_scenario, solve_scenario
from .volterra import ConvergenceError, SolverError, certify_trajectory

EXIT_OK, EXIT_ERROR, EXIT_NOT_CP = 0, 1, 2


def _resolvent_p_values(sc, override):
    if override:
        return list(override)
    check = sc.outputs.get("resolvent_check")
    if isinstance(check, dict) and "p_values" in check:
        return [float(p) for p in check["p_values"]]
    return [2.0, 4.0, 8.0]


def _resolvent_report(run, p_values, tol):
    report = verify_resolvent(run.trajectory, run.generator, run.kernel, p_values, tol)
    return {"scenario": run.scenario.name, **report.to_dict()}


def run(config_path, out_dir, require_cp=False, seed=0, allow_large=False,
        stride=1) -> int:
    sc = load_scenario(config_path, allow_large=allow_large, seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = solve_scenario(sc)
    traj = result.trajectory
    if sc.outputs.get("trajectory", True):
        io.write_trajectory_csv(traj, out / "trajectory.csv")
    cert = certify_trajectory(traj, stride=stride)
    if sc.outputs.get("certificate", True):
        io.write_json(
            {"scenario": sc.name, "equation": sc.equation, "label": traj.label,
             "stride": stride, **cert.to_dict()},
            out / "certificate.json",
        )
    if sc.outputs.get("resolvent_check"):
        check = sc.outputs["resolvent_check"]
        tol = float(check.get("tol", 1e-3)) if isinstance(check, dict) else 1e-3
        io.write_json(_resolvent_report(result, _resolvent_p_values(sc, None), tol),
                      out / "resolvent.json")
    print(f"{sc.name}: {cert.verdict.value} (min Choi eigenvalue "
          f"{cert.min_choi_eigenvalue:.3e}, first NOT_CP t={cert.first_not_cp_time})")
    if require_cp and cert.verdict is Verdict.NOT_CP:
        return EXIT_NOT_CP
    return EXIT_OK


def _sweep_point(args):
    sc, gamma, stride = args
    res = solve_scenario(sc.with_gamma(gamma))
    cert = certify_trajectory(res.trajectory, stride=stride)
    return gamma, cert.min_choi_eigenvalue, cert.verdict.value, cert.first_not_cp_time


def estimate_threshold(rows):
    """Midpoint between the last NOT_CP gamma and the first CP gamma after it."""
    rows = sorted(rows, key=lambda r: r[0])
    last_bad = None
    for gamma, _, verdict, _ in rows:
        if verdict == Verdict.NOT_CP.value:
            last_bad = gamma
        elif verdict == Verdict.CP.value and last_bad is not None:
            return 0.5 * (last_bad + gamma)
    return None


def sweep(config_path, gamma_range, steps, out_dir, seed=0, allow_large=False,
          stride=1, workers=1) -> int:
    if steps < 3:
        raise ScenarioError("sweep needs at least 3 steps")
    sc = load_scenario(config_path, allow_large=allow_large, seed=seed)
    gammas = np.linspace(gamma_range[0], gamma_range[1], steps)
    jobs = [(sc, float(g), stride) for g in gammas]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_rows(out / "sweep.csv",
                  ["gamma", "min_choi_eigenvalue", "verdict", "first_not_cp_time"],
                  [(g, m, v, "" if t is None else float(t)) for g, m, v, t in rows])
    threshold = estimate_threshold(rows)
    io.write_json({"scenario": sc.name, "gamma_range": list(gamma_range), "steps": steps,
                   "threshold_estimate": threshold}, out / "sweep.json")
    print(f"{sc.name}: CP threshold estimate gamma = {threshold}")
    return EXIT_OK


def analytic_table(kappa, gamma, t_max, n, out_path) -> int:
    if n < 2:
        raise ValueError("n must be >= 2")
    ts = np.linspace(0.0, t_max, n)
    res = f_closed_form(kappa, gamma, ts)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    io.write_rows(out_path, ["t", "f", "branch"],
                  [(float(t), float(v), res.branch.value) for t, v in zip(ts, res.value)])
    return EXIT_OK


def verify_resolvent_cmd(config_path, out_dir, p_values=None, tol=1e-3, seed=0,
                         allow_large=False) -> int:
    sc = load_scenario(config_path, allow_large=allow_large, seed=seed)
    result = solve_scenario(sc)
    report = _resolvent_report(result, _resolvent_p_values(sc, p_values), tol)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(report, out / "resolvent.json")
    print(f"{sc.name}: resolvent check {'PASS' if report['passed'] else 'FAIL'}")
    return EXIT_OK if report["passed"] else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nonmarkov", description="Solve and certify memory master equations."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help="output directory"):
        p.add_argument("--config", required=True,
                       help="scenario TOML path or bundled scenario name")
        p.add_argument("--out", required=True, help=out_help)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--allow-large", action="store_true",
                       help="permit dim > 8")

    p = sub.add_parser("run", help="solve one scenario")
    common(p)
    p.add_argument("--require-cp", action="store_true",
                   help="exit with status 2 if any sample is NOT_CP")
    p.add_argument("--stride", type=int, default=1, help="certify every k-th sample")

    p = sub.add_parser("sweep", help="sweep the kernel gamma parameter")
    common(p)
    p.add_argument("--gamma", nargs=2, type=float, metavar=("LO", "HI"), required=True)
    p.add_argument("--steps", type=int, default=11)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("analytic-table", help="tabulate the closed-form f(t)")
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--t-max", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True, help="CSV path")

    p = sub.add_parser("verify-resolvent", help="check Laplace-domain identities")
    common(p)
    p.add_argument("--p", type=float, nargs="+", dest="p_values")
    p.add_argument("--tol", type=float, default=1e-3)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return run(args.config, args.out, args.require_cp, args.seed,
                       args.allow_large, args.stride)
        if args.command == "sweep":
            return sweep(args.config, tuple(args.gamma), args.steps, args.out, args.seed,
                         args.allow_large, args.stride, args.workers)
        if args.command == "analytic-table":
            return analytic_table(args.kappa, args.gamma, args.t_max, args.n, args.out)
        return verify_resolvent_cmd(args.config, args.out, args.p_values, args.tol,
                                    args.seed, args.allow_large)
    except (ScenarioError, SolverError, ConvergenceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
