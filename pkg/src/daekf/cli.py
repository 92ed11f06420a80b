"""Command-line front end: estimation runs, estimability checks, simulation.

Exit codes: 0 success, 1 usage/config error, 2 estimability refusal
(or a negative estimability answer from the `estimability` command),
3 filter divergence (partial artifacts are kept).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, parse_case
from .runner import (
    SCHEMES,
    EstimabilityError,
    build_setup,
    render_certificate,
    run_case,
    run_estimability,
    run_sweep,
    simulate_truth,
)
from .simulator import sample_pmu


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="daekf",
        description="Dynamic state estimation for power-system areas "
        "with unknown neighboring injections.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser(
        "run",
        help="simulate a case and run the filter over every scan",
        description="Run the estimator on a case file.  One scheme and "
        "seed writes artifacts directly into --out; multiple values "
        "fan out into per-run subdirectories.",
    )
    run.add_argument("config", help="case file path")
    run.add_argument(
        "--scheme",
        action="append",
        choices=list(SCHEMES),
        help="discretization scheme (repeatable; default trapezoidal)",
    )
    run.add_argument(
        "--seed", action="append", type=int,
        help="random seed (repeatable; default 0)",
    )
    run.add_argument("--epsilon", type=float, default=None,
                     help="override the convergence threshold")
    run.add_argument("--max-iter", type=int, default=None,
                     help="override the inner iteration cap")
    run.add_argument("--out", type=Path, default=None,
                     help="artifact directory (no artifacts if omitted)")
    run.add_argument(
        "--override-estimability", action="store_true",
        help="run even if the placement fails the estimability check",
    )
    run.add_argument("--jobs", type=int, default=1,
                     help="worker processes for multi-run sweeps")
    run.add_argument("--no-plots", action="store_true",
                     help="skip figure rendering")

    est = sub.add_parser(
        "estimability",
        help="decide estimability of the configured placement",
    )
    est.add_argument("config", help="case file path")
    est.add_argument("--json", action="store_true",
                     help="print the certificate as JSON")

    sim = sub.add_parser(
        "simulate",
        help="run only the ground-truth simulation and sample the PMUs",
    )
    sim.add_argument("config", help="case file path")
    sim.add_argument("--out", type=Path, required=True,
                     help="directory for truth/measurement CSVs")
    sim.add_argument("--seed", type=int, default=0,
                     help="measurement noise seed")
    return p


def _cmd_run(args) -> int:
    schemes = args.scheme or ["trapezoidal"]
    seeds = args.seed if args.seed is not None else [0]
    common = dict(
        override_estimability=args.override_estimability,
        epsilon=args.epsilon,
        max_iterations=args.max_iter,
        make_plots=args.out is not None and not args.no_plots,
    )
    if len(schemes) == 1 and len(seeds) == 1:
        reports = [run_case(args.config, schemes[0], seeds[0], args.out, **common)]
    else:
        reports = run_sweep(
            args.config, schemes, seeds, args.out, jobs=args.jobs, **common
        )
    print(f"{'scheme':<12s} {'seed':>5s} {'t_avg [ms]':>12s} "
          f"{'t_max [ms]':>12s} {'max iterations':>16s} {'voltage MSE':>14s}")
    rc = 0
    for rep in reports:
        mse = "n/a" if np.isnan(rep.voltage_mse) else f"{rep.voltage_mse:.3e}"
        flag = "  DIVERGED" if rep.diverged else ""
        print(f"{rep.scheme:<12s} {rep.seed:>5d} {rep.t_avg_ms:>12.2f} "
              f"{rep.t_max_ms:>12.2f} {rep.max_iterations:>16d} {mse:>14s}{flag}")
        if rep.diverged:
            print(f"  {rep.divergence_message}", file=sys.stderr)
            rc = 3
    return rc


def _cmd_estimability(args) -> int:
    cert = run_estimability(args.config)
    if args.json:
        print(json.dumps(cert.to_dict(), indent=2))
    else:
        print(render_certificate(cert), end="")
    return 0 if cert.estimable else 2


def _cmd_simulate(args) -> int:
    from .runner import _write_csv

    setup = build_setup(parse_case(args.config))
    sc = setup.cfg.scenario
    traj = simulate_truth(setup)
    stream = sample_pmu(
        traj, setup.network, setup.cfg.pmus, sc.pmu_period, sc.noise_std,
        seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stride = int(round(sc.pmu_period / sc.step))
    keep = np.arange(0, traj.times.size, stride)
    _write_csv(
        out / "truth.csv",
        traj.diff_names + traj.alg_names,
        traj.times[keep],
        np.column_stack([traj.diff[keep], traj.alg[keep]]),
    )
    _write_csv(
        out / "measurements.csv",
        stream.channel_names,
        stream.times,
        stream.values,
    )
    print(f"wrote {out / 'truth.csv'} and {out / 'measurements.csv'} "
          f"({stream.times.size} scans)")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "estimability":
            return _cmd_estimability(args)
        return _cmd_simulate(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except EstimabilityError as exc:
        print(f"refusing to run: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
