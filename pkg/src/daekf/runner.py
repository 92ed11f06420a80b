"""Case orchestration: simulate truth, run the filter, score, write artifacts.

`run_case` is the one-call entry point behind the command line: it
parses a case file, simulates the ground truth, checks that the PMU
placement leaves the area estimable, runs the chosen discretization
scheme through every scan, and writes truth/estimate CSVs plus a JSON
manifest describing the channels and the run metrics.

Everything that costs real time (the truth simulation in particular)
can be injected, so sweeps over schemes and seeds share one trajectory.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import CaseConfig, parse_case
from .descriptor import EstimatorState, FilterNumericalError
from .discretize import (
    BACKWARD_EULER,
    FORWARD_EULER,
    TRAPEZOIDAL,
    DiscretizationScheme,
)
from .estimability import (
    EstimabilityCertificate,
    build_structured_pair,
    check_topological_estimability,
)
from .iekf import FilterConfig, iekf_step
from .machines import SubtransientFleet, TwoAxisFleet
from .network import NetworkModel
from .powerflow import Dispatch, solve_power_flow
from .psmodel import PowerSystemModel, UnknownInjectorSet
from .simulator import Trajectory, initialize_equilibrium, sample_pmu, simulate

SCHEMES = (FORWARD_EULER, BACKWARD_EULER, TRAPEZOIDAL)

# differential states the estimator model shares with the richer truth
# model, used to line up truth channels with estimate channels
_CSV_FLOAT = ".17g"


class EstimabilityError(RuntimeError):
    """Refusal to run: the placement leaves the area not estimable."""

    def __init__(self, certificate: EstimabilityCertificate):
        self.certificate = certificate
        cols = ", ".join(certificate.unmatched) or "<none reported>"
        super().__init__(
            "PMU placement leaves the area not estimable "
            f"(unmatched voltage components: {cols}); "
            "rerun with the estimability override to force the attempt"
        )


@dataclass
class CaseSetup:
    """Everything derived from one parsed case file, ready to run."""

    cfg: CaseConfig
    network: NetworkModel
    dispatch: Dispatch
    s_load: dict[int, complex]
    area: list[int]
    sub_network: NetworkModel
    area_machines: list
    fleet: TwoAxisFleet
    model: PowerSystemModel
    y0_area: np.ndarray          # flattened equilibrium of the area fleet

    @property
    def scan_period(self) -> float:
        return self.cfg.scenario.pmu_period


def build_setup(cfg: CaseConfig) -> CaseSetup:
    """Assemble the estimation-side objects for a parsed case.

    The estimator fleet runs without regulator clamps: the truth plant
    keeps its anti-windup limits, but masked derivatives make the
    filter's relinearization non-smooth, so the estimation model uses
    the unconstrained control dynamics.
    """
    if cfg.scenario is None:
        raise ValueError("case file has no [scenario] section")
    net = NetworkModel(buses=cfg.buses, branches=cfg.branches)
    s_load = {b: v / cfg.base_mva for b, v in cfg.loads_mw.items()}
    slack = [d.bus for d in cfg.dispatch if d.p_mw is None]
    if len(slack) != 1:
        raise ValueError(f"expected exactly one slack unit, found {len(slack)}")
    dispatch = Dispatch(
        slack_bus=slack[0],
        p_set={d.bus: d.p_mw / cfg.base_mva for d in cfg.dispatch
               if d.p_mw is not None},
        v_set={d.bus: d.v_set for d in cfg.dispatch},
    )
    area = sorted(cfg.area_buses)
    sub_net = net.restricted(area)
    area_machines = [m for m in cfg.machines if m.bus_id in cfg.area_buses]
    fleet = TwoAxisFleet(area_machines, cfg.omega_s, enforce_limits=False)

    pf = solve_power_flow(net, dispatch, s_load)
    V_mach = pf.V[[net.bus_index(m.bus_id) for m in area_machines]]
    s_mach = np.array([
        pf.S_injection[net.bus_index(m.bus_id)] + s_load.get(m.bus_id, 0.0)
        for m in area_machines
    ])
    y0_area = fleet.equilibrium(V_mach, s_mach).ravel()

    model = PowerSystemModel(
        sub_net,
        fleet,
        UnknownInjectorSet.of(cfg.unknown_buses),
        cfg.pmus,
        noise=cfg.estimation.noise_model(cfg.scenario.pmu_period),
    )
    return CaseSetup(
        cfg=cfg,
        network=net,
        dispatch=dispatch,
        s_load=s_load,
        area=area,
        sub_network=sub_net,
        area_machines=area_machines,
        fleet=fleet,
        model=model,
        y0_area=y0_area,
    )


def check_estimability(setup: CaseSetup) -> EstimabilityCertificate:
    graph = build_structured_pair(setup.model)
    return check_topological_estimability(graph)


def simulate_truth(setup: CaseSetup) -> Trajectory:
    """Ground-truth transient on the full system.

    The plant model class is a scenario choice: the default richer
    subtransient machine exercises the estimator under honest model
    mismatch, while `truth_model = two_axis` makes truth and estimator
    dynamics coincide for self-consistency runs.
    """
    cfg = setup.cfg
    if cfg.scenario.truth_model == "two_axis":
        fleet = TwoAxisFleet(cfg.machines, cfg.omega_s)
    else:
        fleet = SubtransientFleet(cfg.machines, cfg.omega_s)
    model, y0, v0 = initialize_equilibrium(
        setup.network, fleet, setup.s_load, setup.dispatch,
        power_fraction=cfg.scenario.power_fraction,
    )
    return simulate(model, cfg.scenario, y0, v0)


def initial_state(setup: CaseSetup, seed) -> tuple[np.ndarray, np.ndarray]:
    """Perturbed initial estimate and its covariance.

    Voltages start flat; differential states get 1% relative Gaussian
    error, rotor speeds 0.05% absolute (speeds sit near 0 pu deviation,
    so a relative perturbation would do nothing).
    """
    cfg, fleet = setup.cfg, setup.fleet
    es = cfg.estimation
    n_d, n_a = setup.model.n_diff, setup.model.n_alg
    ns = fleet.n_states
    omega_mask = np.zeros(n_d, dtype=bool)
    for m in range(fleet.n_machines):
        omega_mask[m * ns + fleet.state_index("omega")] = True
    rng = np.random.default_rng(seed)
    pert = rng.normal(size=n_d)
    x0 = np.empty(n_d + n_a)
    x0[:n_d] = np.where(
        omega_mask,
        setup.y0_area + 5e-4 * pert,
        setup.y0_area * (1.0 + 0.01 * pert),
    )
    x0[n_d:] = np.tile([1.0, 0.0], len(setup.area))
    P0 = np.diag(np.concatenate([
        np.where(omega_mask, es.init_cov_speed, es.init_cov_diff),
        np.full(n_a, es.init_cov_alg),
    ]))
    return x0, P0


@dataclass
class RunReport:
    """Everything a caller needs to judge one estimation run."""

    config_path: str
    scheme: str
    seed: int
    n_scans: int
    scans_completed: int
    diverged: bool
    divergence_message: str | None
    mse_window_start: float
    voltage_mse: float
    rotor_rmse: dict[str, float]
    max_iterations: int
    iteration_counts: dict[int, int]
    t_avg_ms: float
    t_max_ms: float
    wall_total_s: float
    output_dir: str | None
    estimability: dict
    # bulky per-scan arrays, kept for in-process callers and plotting
    t_scan: np.ndarray = field(repr=False, default=None)
    x_est: np.ndarray = field(repr=False, default=None)
    truth_channels: np.ndarray = field(repr=False, default=None)
    channel_names: list[str] = field(repr=False, default_factory=list)
    iterations: np.ndarray = field(repr=False, default=None)

    def to_manifest(self) -> dict:
        return {
            "config": self.config_path,
            "scheme": self.scheme,
            "seed": self.seed,
            "scans": {"total": self.n_scans, "completed": self.scans_completed},
            "diverged": self.diverged,
            "divergence_message": self.divergence_message,
            "metrics": {
                "mse_window_start_s": self.mse_window_start,
                "voltage_mse": None if np.isnan(self.voltage_mse)
                else self.voltage_mse,
                "rotor_rmse": self.rotor_rmse,
                "max_iterations": self.max_iterations,
                "iteration_counts": {
                    str(k): v for k, v in sorted(self.iteration_counts.items())
                },
            },
            "timing": {
                "t_avg_ms": self.t_avg_ms,
                "t_max_ms": self.t_max_ms,
                "wall_total_s": self.wall_total_s,
            },
            "estimability": self.estimability,
        }

    def summary_line(self) -> str:
        return (
            f"{self.scheme:<12s} t_avg {self.t_avg_ms:6.2f} ms   "
            f"t_max {self.t_max_ms:6.2f} ms   max iterations {self.max_iterations}"
        )


def _truth_on_scan_grid(setup: CaseSetup, traj: Trajectory) -> tuple[np.ndarray, list[str]]:
    """Truth values for exactly the estimator's channels, per scan."""
    cfg = setup.cfg
    stride = int(round(cfg.scenario.pmu_period / cfg.scenario.step))
    keep = np.arange(0, traj.times.size, stride)
    est_names = setup.model.state_names()

    # map estimator channel -> column of the truth trajectory
    diff_lookup = {name: j for j, name in enumerate(traj.diff_names)}
    alg_lookup = {name: j for j, name in enumerate(traj.alg_names)}
    out = np.empty((keep.size, len(est_names)))
    for c, name in enumerate(est_names):
        if name in diff_lookup:
            out[:, c] = traj.diff[keep, diff_lookup[name]]
        elif name in alg_lookup:
            out[:, c] = traj.alg[keep, alg_lookup[name]]
        else:
            raise KeyError(f"truth trajectory lacks channel {name}")
    return out, list(est_names)


def _voltage_mse(setup, t_scan, x_est, truth, upto, window_start):
    """Windowed mean-square |V| error over the area buses."""
    n_d = setup.model.n_diff
    mask = (t_scan >= window_start) & (np.arange(t_scan.size) <= upto)
    if not mask.any():
        return float("nan")
    ve, te = x_est[mask, n_d:], truth[mask, n_d:]
    vm_e = np.hypot(ve[:, 0::2], ve[:, 1::2])
    vm_t = np.hypot(te[:, 0::2], te[:, 1::2])
    return float(((vm_e - vm_t) ** 2).mean())


def _rotor_rmse(setup, t_scan, x_est, truth, upto, window_start):
    fleet = setup.fleet
    ns = fleet.n_states
    mask = (t_scan >= window_start) & (np.arange(t_scan.size) <= upto)
    out = {}
    if not mask.any():
        return out
    for j, mach in enumerate(setup.area_machines):
        for state in ("delta", "omega"):
            c = j * ns + fleet.state_index(state)
            err = x_est[mask, c] - truth[mask, c]
            out[f"gen{mach.bus_id}.{state}"] = float(np.sqrt((err ** 2).mean()))
    return out


def run_case(
    config_path,
    scheme: str,
    seed: int,
    output_dir=None,
    *,
    override_estimability: bool = False,
    epsilon: float | None = None,
    max_iterations: int | None = None,
    truth: Trajectory | None = None,
    setup: CaseSetup | None = None,
    make_plots: bool = False,
) -> RunReport:
    """Run one (case, scheme, seed) estimation end to end.

    Writes `truth.csv`, `estimate.csv`, `manifest.json` and
    `summary.txt` into `output_dir` (if given); with `make_plots` the
    standard figures land there too.  A filter divergence does not
    raise: the report flags it and the artifacts cover the scans that
    completed.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    if setup is None:
        setup = build_setup(parse_case(config_path))
    cfg = setup.cfg

    cert = check_estimability(setup)
    if not cert.estimable and not override_estimability:
        raise EstimabilityError(cert)

    wall_start = time.perf_counter()
    if truth is None:
        truth = simulate_truth(setup)
    truth_chan, channel_names = _truth_on_scan_grid(setup, truth)

    sc = cfg.scenario
    es = cfg.estimation
    eps = es.epsilon if epsilon is None else epsilon
    cap = es.max_iterations if max_iterations is None else max_iterations
    fcfg = FilterConfig(epsilon=eps, max_iterations=cap)
    dscheme = DiscretizationScheme(scheme, sc.pmu_period)

    # one user seed, two independent streams (measurement noise, init)
    noise_ss, init_ss = np.random.SeedSequence(seed).spawn(2)
    stream = sample_pmu(
        truth, setup.network, cfg.pmus, sc.pmu_period, sc.noise_std,
        seed=noise_ss,
    )
    x0, P0 = initial_state(setup, init_ss)

    n_scans = stream.times.size
    n_state = setup.model.n_diff + setup.model.n_alg
    x_est = np.full((n_scans, n_state), np.nan)
    x_est[0] = x0
    iterations = np.zeros(n_scans, dtype=int)
    per_scan = np.zeros(n_scans)
    state = EstimatorState(x_hat=x0, P=P0, k=0)
    diverged = False
    message = None
    completed = n_scans - 1
    for k in range(1, n_scans):
        tic = time.perf_counter()
        try:
            result = iekf_step(setup.model, dscheme, state, stream.values[k], fcfg)
        except (FilterNumericalError, ValueError) as exc:
            diverged = True
            message = f"scan {k} (t = {stream.times[k]:.3f} s): {exc}"
            completed = k - 1
            break
        per_scan[k] = time.perf_counter() - tic
        state = result.state
        iterations[k] = result.iterations
        x_est[k] = state.x_hat

    used = per_scan[1:completed + 1]
    counts = np.bincount(iterations[1:completed + 1]) if completed else np.array([])
    report = RunReport(
        config_path=str(config_path),
        scheme=scheme,
        seed=seed,
        n_scans=n_scans,
        scans_completed=completed,
        diverged=diverged,
        divergence_message=message,
        mse_window_start=es.mse_window_start,
        voltage_mse=_voltage_mse(
            setup, stream.times, x_est, truth_chan, completed, es.mse_window_start
        ),
        rotor_rmse=_rotor_rmse(
            setup, stream.times, x_est, truth_chan, completed, es.mse_window_start
        ),
        max_iterations=int(iterations.max()) if n_scans > 1 else 0,
        iteration_counts={
            int(i): int(c) for i, c in enumerate(counts) if c and i
        },
        t_avg_ms=float(used.mean() * 1e3) if used.size else float("nan"),
        t_max_ms=float(used.max() * 1e3) if used.size else float("nan"),
        wall_total_s=time.perf_counter() - wall_start,
        output_dir=str(output_dir) if output_dir is not None else None,
        estimability=cert.to_dict(),
        t_scan=stream.times.copy(),
        x_est=x_est,
        truth_channels=truth_chan,
        channel_names=channel_names,
        iterations=iterations,
    )
    if output_dir is not None:
        _write_artifacts(Path(output_dir), setup, report)
        if make_plots:
            from .plots import render_run_figures
            render_run_figures(report, setup, Path(output_dir))
    return report


def _write_artifacts(out: Path, setup: CaseSetup, report: RunReport):
    out.mkdir(parents=True, exist_ok=True)
    upto = report.scans_completed
    _write_csv(
        out / "truth.csv",
        report.channel_names,
        report.t_scan[: upto + 1],
        report.truth_channels[: upto + 1],
    )
    _write_csv(
        out / "estimate.csv",
        report.channel_names + ["iterations"],
        report.t_scan[: upto + 1],
        np.column_stack([
            report.x_est[: upto + 1],
            report.iterations[: upto + 1].astype(float),
        ]),
    )
    manifest = report.to_manifest()
    manifest["channels"] = _channel_manifest(setup)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (out / "summary.txt").write_text(_summary_text(report))


def _summary_text(report: RunReport) -> str:
    lines = [
        f"case:   {report.config_path}",
        f"scheme: {report.scheme}   seed: {report.seed}",
        f"scans:  {report.scans_completed}/{report.n_scans - 1} completed"
        + ("  [DIVERGED]" if report.diverged else ""),
        "",
        f"{'scheme':<12s} {'t_avg [ms]':>12s} {'t_max [ms]':>12s} "
        f"{'max iterations':>16s}",
        f"{report.scheme:<12s} {report.t_avg_ms:>12.2f} {report.t_max_ms:>12.2f} "
        f"{report.max_iterations:>16d}",
        "",
        f"voltage MSE (t >= {report.mse_window_start:g} s): "
        f"{report.voltage_mse:.6e}",
    ]
    if report.diverged:
        lines.append(f"divergence: {report.divergence_message}")
    return "\n".join(lines) + "\n"


def _channel_manifest(setup: CaseSetup) -> list[dict]:
    fleet = setup.fleet
    entries = []
    for name in setup.model.state_names():
        if name.startswith("bus"):
            comp = "real" if name.endswith(".vre") else "imaginary"
            entries.append({
                "channel": name,
                "kind": "algebraic",
                "description": f"{comp} part of the bus voltage phasor (pu)",
            })
        else:
            state = name.split(".", 1)[1]
            entries.append({
                "channel": name,
                "kind": "differential",
                "description": _STATE_DESCRIPTIONS.get(state, state),
            })
    entries.append({
        "channel": "iterations",
        "kind": "diagnostic",
        "description": "inner filter iterations used by this scan",
    })
    return entries


_STATE_DESCRIPTIONS = {
    "delta": "rotor angle (rad)",
    "omega": "rotor speed deviation (pu)",
    "eq_p": "q-axis transient voltage (pu)",
    "ed_p": "d-axis transient voltage (pu)",
    "efd": "field voltage (pu)",
    "rf": "exciter rate feedback (pu)",
    "vr": "regulator output (pu)",
    "gov1": "governor valve state (pu)",
    "gov2": "turbine lead-lag state (pu)",
}


def _write_csv(path: Path, channels: list[str], t: np.ndarray, rows: np.ndarray):
    with open(path, "w", newline="\n") as f:
        f.write(",".join(["time_s", *channels]) + "\n")
        for ti, row in zip(t, rows):
            f.write(format(float(ti), _CSV_FLOAT))
            for v in row:
                f.write("," + format(float(v), _CSV_FLOAT))
            f.write("\n")


# ---------------------------------------------------------------------------
# sweeps and the estimability entry point


def _run_one(args):
    config_path, scheme, seed, out_dir, kwargs = args
    return run_case(config_path, scheme, seed, out_dir, **kwargs)


def run_sweep(
    config_path,
    schemes,
    seeds,
    output_dir=None,
    jobs: int = 1,
    **kwargs,
) -> list[RunReport]:
    """Fan out (scheme, seed) runs, sharing one truth simulation.

    With `jobs > 1` the runs go to worker processes; the parent still
    simulates truth once and ships the trajectory to every worker.
    """
    setup = build_setup(parse_case(config_path))
    truth = kwargs.pop("truth", None)
    if truth is None:
        truth = simulate_truth(setup)
    combos = [
        (
            config_path,
            scheme,
            seed,
            None if output_dir is None
            else Path(output_dir) / f"{scheme}_seed{seed}",
            {**kwargs, "truth": truth},
        )
        for scheme in schemes
        for seed in seeds
    ]
    if jobs <= 1:
        return [
            run_case(c, sch, sd, od, setup=setup, **kw)
            for c, sch, sd, od, kw in combos
        ]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, combos))


def run_estimability(config_path) -> EstimabilityCertificate:
    """Estimability decision for a case file's area and placement."""
    setup = build_setup(parse_case(config_path))
    return check_estimability(setup)


def render_certificate(cert: EstimabilityCertificate) -> str:
    lines = [
        "estimable: " + ("yes" if cert.estimable else "NO"),
        f"voltage components matched: {cert.matched_cols}/{cert.n_cols}",
    ]
    if cert.unmatched:
        lines.append("unmatched components: " + ", ".join(cert.unmatched))
    if cert.injector_routes:
        lines.append("disjoint injector-to-PMU routes:")
        for r in cert.injector_routes:
            path = " - ".join(str(b) for b in r.bus_path)
            lines.append(f"  bus {r.injector_bus}: {path}  ({r.pmu_label})")
    if cert.route_assignment_note:
        lines.append("note: " + cert.route_assignment_note)
    return "\n".join(lines) + "\n"
