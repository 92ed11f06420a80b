"""Ground-truth transient simulation and synthetic PMU sampling.

The plant model is deliberately richer than what the estimator assumes:
subtransient machines, and loads composed of a constant-power part and
a constant-impedance part anchored at the predisturbance operating
point.  Integration is fixed-step trapezoidal with a Newton corrector;
network switching events (faults, line trips, load steps) are restarted
consistently by re-solving the algebraic equations at the switch time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .machines import _FleetBase
from .network import Branch, NetworkModel, expand_complex
from .psmodel import PmuSpec, build_measurement_matrix

DEFAULT_FAULT_ADMITTANCE = -1e4j


class SimulationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# events and scenario


@dataclass(frozen=True)
class FaultEvent:
    """Shunt fault on a line, at `fraction` of the way from the from bus."""

    time: float
    from_bus: int
    to_bus: int
    fraction: float = 0.5
    admittance: complex = DEFAULT_FAULT_ADMITTANCE


@dataclass(frozen=True)
class ClearEvent:
    """Fault clearing by opening the affected line at both ends."""

    time: float
    from_bus: int
    to_bus: int


@dataclass(frozen=True)
class LoadStepEvent:
    """Scale the load at one bus by (1 + delta)."""

    time: float
    bus: int
    delta: float


Event = FaultEvent | ClearEvent | LoadStepEvent


@dataclass
class Scenario:
    """Timing, events and sampling setup of one simulation run."""

    duration: float
    step: float = 1e-3
    pmu_period: float = 0.02
    noise_std: float = 1e-3
    power_fraction: float = 0.5
    truth_model: str = "subtransient"
    events: list[Event] = field(default_factory=list)

    def __post_init__(self):
        if self.duration <= 0 or self.step <= 0:
            raise ValueError("duration and step must be positive")
        if self.truth_model not in ("subtransient", "two_axis"):
            raise ValueError(
                f"truth_model must be 'subtransient' or 'two_axis', "
                f"got {self.truth_model!r}"
            )
        if not 0.0 <= self.power_fraction <= 1.0:
            raise ValueError("power_fraction must lie in [0, 1]")
        ratio = self.pmu_period / self.step
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("pmu_period must be an integer multiple of step")
        self.events = sorted(self.events, key=lambda e: e.time)
        for ev in self.events:
            if not 0.0 < ev.time <= self.duration:
                raise ValueError(f"event time {ev.time} outside (0, duration]")
            steps = ev.time / self.step
            if abs(steps - round(steps)) > 1e-6:
                raise ValueError(
                    f"event at t={ev.time} does not land on the integration grid"
                )
        pending: set[tuple[int, int]] = set()
        for ev in self.events:
            if isinstance(ev, FaultEvent):
                pending.add((ev.from_bus, ev.to_bus))
            elif isinstance(ev, ClearEvent):
                if (ev.from_bus, ev.to_bus) not in pending:
                    raise ValueError(
                        f"clear event on {ev.from_bus}-{ev.to_bus} without prior fault"
                    )
                pending.discard((ev.from_bus, ev.to_bus))


# ---------------------------------------------------------------------------
# load bank


class LoadBank:
    """Vectorized bus loads: constant-power plus constant-impedance parts.

    Below `v_break` the constant-power part degrades gracefully into an
    impedance characteristic frozen at the break voltage, which keeps
    the algebraic equations solvable through deep voltage dips.
    """

    def __init__(self, cols, p_pow, q_pow, g_imp, b_imp, v_break=0.6):
        self.cols = np.asarray(cols, dtype=int)          # vre positions
        self.p_pow = np.asarray(p_pow, dtype=float)
        self.q_pow = np.asarray(q_pow, dtype=float)
        self.g_imp = np.asarray(g_imp, dtype=float)
        self.b_imp = np.asarray(b_imp, dtype=float)
        self.v_break = v_break

    @classmethod
    def from_powers(cls, net, s_load, v_solution, power_fraction):
        """Anchor load composition at the solved operating point.

        s_load: dict bus id -> complex consumed power (pu).
        v_solution: complex bus voltages of the predisturbance solution.
        """
        cols, p_pow, q_pow, g_imp, b_imp = [], [], [], [], []
        for bus, s in sorted(s_load.items()):
            i = net.bus_index(bus)
            vm2 = abs(v_solution[i]) ** 2
            s_p = power_fraction * s
            # equivalent admittance of the impedance share at the anchor
            # voltage; inductive loads yield a negative susceptance
            y = np.conj((1.0 - power_fraction) * s) / vm2
            cols.append(2 * i)
            p_pow.append(s_p.real)
            q_pow.append(s_p.imag)
            g_imp.append(y.real)
            b_imp.append(y.imag)
        return cls(cols, p_pow, q_pow, g_imp, b_imp)

    def scaled(self, net, bus, factor) -> "LoadBank":
        i = 2 * net.bus_index(bus)
        sel = self.cols == i
        if not np.any(sel):
            raise ValueError(f"no load at bus {bus} to scale")
        return LoadBank(
            self.cols,
            np.where(sel, self.p_pow * factor, self.p_pow),
            np.where(sel, self.q_pow * factor, self.q_pow),
            np.where(sel, self.g_imp * factor, self.g_imp),
            np.where(sel, self.b_imp * factor, self.b_imp),
            self.v_break,
        )

    def injections(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        vx = v[self.cols]
        vy = v[self.cols + 1]
        v2 = vx**2 + vy**2
        v2_eff = np.maximum(v2, self.v_break**2)
        P, Q = self.p_pow, self.q_pow
        ix = -(P * vx + Q * vy) / v2_eff
        iy = -(P * vy - Q * vx) / v2_eff
        ix += -(self.g_imp * vx - self.b_imp * vy)
        iy += -(self.b_imp * vx + self.g_imp * vy)
        return ix, iy

    def jacobian_blocks(self, v: np.ndarray) -> np.ndarray:
        """(n_load, 2, 2) partials of injected current wrt (vx, vy)."""
        vx = v[self.cols]
        vy = v[self.cols + 1]
        v2 = vx**2 + vy**2
        P, Q = self.p_pow, self.q_pow
        out = np.zeros((self.cols.size, 2, 2))
        low = v2 < self.v_break**2
        v2_eff = np.where(low, self.v_break**2, v2)
        # constant-power part (plain quotient rule; derivative of the
        # clamped denominator vanishes in the low-voltage branch)
        num_x = P * vx + Q * vy
        num_y = P * vy - Q * vx
        dd_x = np.where(low, 0.0, 2 * vx)
        dd_y = np.where(low, 0.0, 2 * vy)
        out[:, 0, 0] = -(P * v2_eff - num_x * dd_x) / v2_eff**2
        out[:, 0, 1] = -(Q * v2_eff - num_x * dd_y) / v2_eff**2
        out[:, 1, 0] = -(-Q * v2_eff - num_y * dd_x) / v2_eff**2
        out[:, 1, 1] = -(P * v2_eff - num_y * dd_y) / v2_eff**2
        # impedance part
        out[:, 0, 0] += -self.g_imp
        out[:, 0, 1] += self.b_imp
        out[:, 1, 0] += -self.b_imp
        out[:, 1, 1] += -self.g_imp
        return out


# ---------------------------------------------------------------------------
# plant model


class GroundTruthModel:
    """Square DAE model of the full system for simulation.

    The admittance matrix is carried separately from the nominal
    network so switching events can swap it without touching topology
    bookkeeping.  Satisfies the same continuous-model protocol as the
    estimation model, for any fleet order.
    """

    def __init__(
        self,
        network: NetworkModel,
        fleet: _FleetBase,
        loads: LoadBank,
        ybus: np.ndarray | None = None,
    ):
        self.network = network
        self.fleet = fleet
        self.loads = loads
        self._Y = network.ybus().copy() if ybus is None else ybus
        self._N = expand_complex(self._Y)
        self._mach_cols = np.array(
            [2 * network.bus_index(b) for b in fleet.bus_ids], dtype=int
        )
        self.n_diff = fleet.n_machines * fleet.n_states
        self.n_alg = 2 * network.n_bus
        self.n_eq = self.n_alg

    # -- event variants --

    def with_fault(
        self,
        from_bus: int,
        to_bus: int,
        fraction: float = 0.5,
        admittance: complex = DEFAULT_FAULT_ADMITTANCE,
    ) -> "GroundTruthModel":
        """Apply a mid-line shunt fault by eliminating the fault node.

        The faulted line is split at `fraction` of its length; the
        virtual split node carries the fault shunt and is reduced away,
        so the bus count is unchanged.
        """
        br = _plain_line(self.network, from_bus, to_bus)
        if not 0.0 < fraction < 1.0:
            raise ValueError("fault fraction must be strictly inside (0, 1)")
        f = self.network.bus_index(br.from_bus)
        t = self.network.bus_index(br.to_bus)
        Y = self._Y.copy()
        y = br.y_series
        ysh = 0.5j * br.b
        # remove the intact line
        Y[f, f] -= y + ysh
        Y[t, t] -= y + ysh
        Y[f, t] += y
        Y[t, f] += y
        # insert the two half-lines and reduce the split node
        ya = 1.0 / (fraction * complex(br.r, br.x))
        yb = 1.0 / ((1.0 - fraction) * complex(br.r, br.x))
        sha = 0.5j * br.b * fraction
        shb = 0.5j * br.b * (1.0 - fraction)
        Y[f, f] += ya + sha
        Y[t, t] += yb + shb
        ymm = ya + sha + yb + shb + admittance
        Y[f, f] -= ya * ya / ymm
        Y[f, t] -= ya * yb / ymm
        Y[t, f] -= yb * ya / ymm
        Y[t, t] -= yb * yb / ymm
        return GroundTruthModel(self.network, self.fleet, self.loads, ybus=Y)

    def with_line_removed(self, from_bus: int, to_bus: int) -> "GroundTruthModel":
        br = _plain_line(self.network, from_bus, to_bus, any_kind=True)
        f = self.network.bus_index(br.from_bus)
        t = self.network.bus_index(br.to_bus)
        yff, yft, ytf, ytt = br.two_port()
        # rebuild from the nominal matrix so a fault variant is dropped too
        Y = self.network.ybus().copy()
        Y[f, f] -= yff
        Y[f, t] -= yft
        Y[t, f] -= ytf
        Y[t, t] -= ytt
        return GroundTruthModel(self.network, self.fleet, self.loads, ybus=Y)

    def with_load_step(self, bus: int, delta: float) -> "GroundTruthModel":
        loads = self.loads.scaled(self.network, bus, 1.0 + delta)
        return GroundTruthModel(self.network, self.fleet, loads, ybus=self._Y)

    # -- DAE protocol --

    def differential_rhs(self, y: np.ndarray, v: np.ndarray) -> np.ndarray:
        fl = self.fleet
        st = y.reshape(fl.n_machines, fl.n_states)
        return fl.rhs(st, v[self._mach_cols], v[self._mach_cols + 1]).ravel()

    def algebraic_residual(self, y: np.ndarray, v: np.ndarray) -> np.ndarray:
        fl = self.fleet
        st = y.reshape(fl.n_machines, fl.n_states)
        inj = np.zeros(self.n_alg)
        Ix, Iy = fl.injections(st, v[self._mach_cols], v[self._mach_cols + 1])
        np.add.at(inj, self._mach_cols, Ix)
        np.add.at(inj, self._mach_cols + 1, Iy)
        lx, ly = self.loads.injections(v)
        np.add.at(inj, self.loads.cols, lx)
        np.add.at(inj, self.loads.cols + 1, ly)
        return inj - self._N @ v

    def jacobians(self, y, v):
        fl = self.fleet
        st = y.reshape(fl.n_machines, fl.n_states)
        vx = v[self._mach_cols]
        vy = v[self._mach_cols + 1]
        n_d, n_a = self.n_diff, self.n_alg
        Fy = np.zeros((n_d, n_d))
        Fv = np.zeros((n_d, n_a))
        Gy = np.zeros((n_a, n_d))
        Gv = -self._N.copy()
        dF_dY, dF_dV = fl.jacobians(st, vx, vy)
        dI_dY, dI_dV = fl.injection_jacobians(st, vx, vy)
        ns = fl.n_states
        for m in range(fl.n_machines):
            sl = slice(m * ns, (m + 1) * ns)
            c = self._mach_cols[m]
            Fy[sl, sl] = dF_dY[m]
            Fv[sl, c : c + 2] = dF_dV[m]
            Gy[c : c + 2, sl] = dI_dY[m]
            Gv[c : c + 2, c : c + 2] += dI_dV[m]
        blocks = self.loads.jacobian_blocks(v)
        for i, c in enumerate(self.loads.cols):
            Gv[c : c + 2, c : c + 2] += blocks[i]
        return Fy, Fv, Gy, Gv


def _plain_line(net: NetworkModel, from_bus: int, to_bus: int, any_kind=False) -> Branch:
    hits = [
        br
        for br in net.branches
        if {br.from_bus, br.to_bus} == {from_bus, to_bus}
    ]
    if not hits:
        raise ValueError(f"no branch between {from_bus} and {to_bus}")
    if len(hits) > 1:
        raise ValueError(f"parallel branches between {from_bus} and {to_bus}")
    br = hits[0]
    if not any_kind and br.ratio != 1.0:
        raise ValueError(
            f"branch {from_bus}-{to_bus} is a transformer; mid-line faults "
            "are only supported on plain lines"
        )
    return br


# ---------------------------------------------------------------------------
# equilibrium


def initialize_equilibrium(
    network: NetworkModel,
    fleet: _FleetBase,
    s_load: dict[int, complex],
    dispatch,
    power_fraction: float = 0.5,
) -> tuple[GroundTruthModel, np.ndarray, np.ndarray]:
    """Build the plant at its predisturbance steady state.

    Solves the power flow, back-solves the machine states and set
    points, and anchors the load composition at the solved voltages.

    Returns:
        (model, y0, v0) with `model.algebraic_residual(y0, v0)` and the
        fleet derivatives vanishing to solver precision.
    """
    from .powerflow import solve_power_flow

    pf = solve_power_flow(network, dispatch, s_load)
    mach_idx = np.array([network.bus_index(b) for b in fleet.bus_ids], dtype=int)
    V_mach = pf.V[mach_idx]
    s_mach = pf.S_injection[mach_idx].copy()
    for m, bus in enumerate(fleet.bus_ids):
        if bus in s_load:
            # the unit supplies the local load on top of the net injection
            s_mach[m] += s_load[bus]

    st = fleet.equilibrium(V_mach, s_mach)
    loads = LoadBank.from_powers(network, s_load, pf.V, power_fraction)
    model = GroundTruthModel(network, fleet, loads)
    y0 = st.ravel()
    v0 = np.empty(2 * network.n_bus)
    v0[0::2] = pf.V.real
    v0[1::2] = pf.V.imag
    return model, y0, v0


# ---------------------------------------------------------------------------
# integration


@dataclass
class Trajectory:
    """Dense simulation output on the integration grid."""

    times: np.ndarray
    diff: np.ndarray            # (n_t, n_diff)
    alg: np.ndarray             # (n_t, n_alg)
    diff_names: list[str]
    alg_names: list[str]
    step: float

    def index_at(self, t: float) -> int:
        k = int(round(t / self.step))
        if not (0 <= k < self.times.size) or abs(self.times[k] - t) > 1e-9:
            raise ValueError(f"time {t} not on the trajectory grid")
        return k

    def interleaved_voltage(self, k: int) -> np.ndarray:
        return self.alg[k]


def solve_algebraic(
    model, y: np.ndarray, v0: np.ndarray, tol: float = 1e-10, max_iter: int = 60
) -> np.ndarray:
    """Newton solve of g(y, v) = 0 in v with simple step damping."""
    v = v0.copy()
    g = model.algebraic_residual(y, v)
    norm = np.max(np.abs(g))
    for _ in range(max_iter):
        if norm < tol:
            return v
        _, _, _, Gv = model.jacobians(y, v)
        try:
            dv = np.linalg.solve(Gv, -g)
        except np.linalg.LinAlgError as exc:
            raise SimulationError("singular algebraic Jacobian") from exc
        scale = 1.0
        for _ in range(30):
            v_try = v + scale * dv
            g_try = model.algebraic_residual(y, v_try)
            n_try = np.max(np.abs(g_try))
            if n_try < norm:
                v, g, norm = v_try, g_try, n_try
                break
            scale *= 0.5
        else:
            raise SimulationError("algebraic restart failed to make progress")
    raise SimulationError("algebraic restart did not converge")


def _clamp_states(fleet: _FleetBase, y: np.ndarray):
    st = y.reshape(fleet.n_machines, fleet.n_states)
    i_vr = fleet.state_index("vr")
    i_g1 = fleet.state_index("gov1")
    np.clip(st[:, i_vr], fleet.vr_min, fleet.vr_max, out=st[:, i_vr])
    np.clip(st[:, i_g1], fleet.gate_min, fleet.gate_max, out=st[:, i_g1])


def _trapezoid_step(model, y0, v0, h, tol=1e-9, max_iter=12):
    """One implicit trapezoidal step with a simplified-Newton corrector.

    The Jacobian is built once per step at the starting point and
    refreshed only if the corrector stalls.
    """
    n_d = model.n_diff
    f0 = model.differential_rhs(y0, v0)
    y = y0.copy()
    v = v0.copy()
    lu = None
    refreshed = False
    for it in range(max_iter):
        f1 = model.differential_rhs(y, v)
        rd = y - y0 - 0.5 * h * (f0 + f1)
        ra = model.algebraic_residual(y, v)
        norm = max(np.max(np.abs(rd)), np.max(np.abs(ra)))
        if norm < tol and it > 0:
            return y, v, it
        if lu is None or (it >= 4 and not refreshed):
            Fy, Fv, Gy, Gv = model.jacobians(y, v)
            J = np.empty((n_d + model.n_alg, n_d + model.n_alg))
            J[:n_d, :n_d] = np.eye(n_d) - 0.5 * h * Fy
            J[:n_d, n_d:] = -0.5 * h * Fv
            J[n_d:, :n_d] = Gy
            J[n_d:, n_d:] = Gv
            try:
                lu = sla.lu_factor(J, check_finite=False)
            except (np.linalg.LinAlgError, ValueError) as exc:
                raise SimulationError("singular integration Jacobian") from exc
            if it >= 4:
                refreshed = True
        dx = sla.lu_solve(lu, -np.concatenate([rd, ra]), check_finite=False)
        y = y + dx[:n_d]
        v = v + dx[n_d:]
    raise SimulationError(
        f"trapezoidal corrector did not converge (residual {norm:.2e})"
    )


def _apply_event(model: GroundTruthModel, ev: Event) -> GroundTruthModel:
    if isinstance(ev, FaultEvent):
        return model.with_fault(ev.from_bus, ev.to_bus, ev.fraction, ev.admittance)
    if isinstance(ev, ClearEvent):
        return model.with_line_removed(ev.from_bus, ev.to_bus)
    return model.with_load_step(ev.bus, ev.delta)


def simulate(
    model: GroundTruthModel,
    scenario: Scenario,
    y0: np.ndarray,
    v0: np.ndarray,
) -> Trajectory:
    """Integrate the plant over the scenario horizon.

    Events are applied after the state at their time stamp has been
    recorded; the algebraic variables are then re-solved so integration
    restarts from a consistent point.
    """
    h = scenario.step
    n_steps = int(round(scenario.duration / h))
    times = np.arange(n_steps + 1) * h
    diff = np.empty((n_steps + 1, model.n_diff))
    alg = np.empty((n_steps + 1, model.n_alg))
    diff_names = [
        f"gen{bus}.{s}"
        for bus in model.fleet.bus_ids
        for s in model.fleet.state_names
    ]
    alg_names = []
    for bus in model.network.bus_ids:
        alg_names.extend((f"bus{bus}.vre", f"bus{bus}.vim"))

    event_steps = {
        k: [ev for ev in scenario.events if int(round(ev.time / h)) == k]
        for k in {int(round(ev.time / h)) for ev in scenario.events}
    }

    y, v = y0.copy(), v0.copy()
    diff[0], alg[0] = y, v
    active = model
    for k in range(n_steps):
        if k in event_steps:
            for ev in event_steps[k]:
                active = _apply_event(active, ev)
            v = solve_algebraic(active, y, v)
        try:
            y, v, _ = _trapezoid_step(active, y, v, h)
        except SimulationError as exc:
            raise SimulationError(f"integration failed at t={times[k + 1]:.4f}s: {exc}")
        _clamp_states(active.fleet, y)
        diff[k + 1] = y
        alg[k + 1] = v
    # events scheduled exactly at the horizon end are ignored by design
    return Trajectory(
        times=times, diff=diff, alg=alg,
        diff_names=diff_names, alg_names=alg_names, step=h,
    )


# ---------------------------------------------------------------------------
# PMU sampling


@dataclass
class MeasurementStream:
    """Noisy synchrophasor samples on the scan grid."""

    times: np.ndarray
    values: np.ndarray          # (n_scans, n_channels)
    channel_names: list[str]
    noise_std: float
    seed: int

    @property
    def n_scans(self) -> int:
        return self.times.size


def sample_pmu(
    traj: Trajectory,
    network: NetworkModel,
    pmus: list[PmuSpec],
    period: float,
    noise_std: float,
    seed: int,
) -> MeasurementStream:
    """Sample the trajectory at the scan rate and add Gaussian noise.

    The measurement map is rebuilt from the nominal network, so samples
    taken while a fault modifies the grid still reflect what a physical
    device on the unfaulted portion would meter, as long as the metered
    branches themselves are untouched by the events.
    """
    stride = period / traj.step
    if abs(stride - round(stride)) > 1e-9:
        raise ValueError("scan period must be an integer multiple of the sim step")
    stride = int(round(stride))
    C = build_measurement_matrix(network, pmus)
    idx = np.arange(0, traj.times.size, stride)
    clean = traj.alg[idx] @ C.T
    rng = np.random.default_rng(seed)
    noisy = clean + rng.normal(0.0, noise_std, size=clean.shape)
    names = []
    for pmu in pmus:
        names.extend(pmu.channel_names)
    return MeasurementStream(
        times=traj.times[idx], values=noisy, channel_names=names,
        noise_std=noise_std, seed=seed,
    )
