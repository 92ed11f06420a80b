"""Estimation-area power system model exposed as a descriptor DAE.

The differential states are the machine fleet states; the algebraic
states are rectangular bus voltages, interleaved (re, im) per bus in
network order.  Current-balance equations are written only at buses
whose injection is fully modeled; buses carrying an unknown injector
contribute no algebraic equations, which is precisely what makes the
descriptor pair rectangular and the estimation problem interesting.

Measurements are synchrophasors: bus voltage components and/or branch
current components, both linear in the algebraic states.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .machines import TwoAxisFleet
from .network import NetworkModel, branch_current_coefficients


@dataclass(frozen=True)
class UnknownInjectorSet:
    """Buses whose net injection has no model and is left unconstrained."""

    bus_ids: frozenset[int]

    @classmethod
    def of(cls, ids) -> "UnknownInjectorSet":
        return cls(frozenset(int(i) for i in ids))

    def __contains__(self, bus_id: int) -> bool:
        return bus_id in self.bus_ids

    def __len__(self) -> int:
        return len(self.bus_ids)

    def __iter__(self):
        return iter(sorted(self.bus_ids))


@dataclass(frozen=True)
class VoltagePmu:
    bus_id: int

    @property
    def channel_names(self) -> tuple[str, str]:
        return (f"V{self.bus_id}.re", f"V{self.bus_id}.im")


@dataclass(frozen=True)
class CurrentPmu:
    """Branch current phasor measurement.

    `end` selects which terminal's current is metered; `assigned_bus`
    is the terminal the device is associated with for estimability
    accounting and defaults to the metered end.
    """

    from_bus: int
    to_bus: int
    end: str = "from"
    assigned_bus: int | None = None

    def __post_init__(self):
        if self.end not in ("from", "to"):
            raise ValueError(f"current PMU end must be 'from' or 'to', got {self.end!r}")
        if self.assigned_bus is None:
            object.__setattr__(
                self, "assigned_bus",
                self.from_bus if self.end == "from" else self.to_bus,
            )
        if self.assigned_bus not in (self.from_bus, self.to_bus):
            raise ValueError(
                f"current PMU on {self.from_bus}-{self.to_bus} cannot be assigned "
                f"to bus {self.assigned_bus}"
            )

    @property
    def channel_names(self) -> tuple[str, str]:
        return (
            f"I{self.from_bus}-{self.to_bus}.re",
            f"I{self.from_bus}-{self.to_bus}.im",
        )


PmuSpec = VoltagePmu | CurrentPmu


@dataclass(frozen=True)
class ConstantLoad:
    """Known load: shunt admittance part plus constant-current part.

    Consumption enters the bus balance as negative injection, so the
    admittance part contributes -(g + jb) V and the constant part the
    fixed injection (ix + j iy).
    """

    bus_id: int
    g: float = 0.0
    b: float = 0.0
    ix: float = 0.0
    iy: float = 0.0


@dataclass(frozen=True)
class NoiseModel:
    """Noise magnitudes for the estimator.

    The differential-row covariance scales linearly with the scan step;
    the quoted diagonals apply at `reference_h`.  Algebraic rows are
    per-sample and do not scale.  All values are variances except
    `r_std`, which is the per-channel measurement standard deviation.
    """

    qd: float = 1e-8
    qd_speed: float = 1e-10
    qa: float = 1e-8
    r_std: float = 1e-3
    reference_h: float = 0.02

    def q_diagonal(self, h: float, speed_mask: np.ndarray, n_eq: int) -> np.ndarray:
        n_d = speed_mask.size
        diag = np.empty(n_d + n_eq)
        diag[:n_d] = np.where(speed_mask, self.qd_speed, self.qd) * (h / self.reference_h)
        diag[n_d:] = self.qa
        return diag

    def r_matrix(self, n_meas: int) -> np.ndarray:
        return np.eye(n_meas) * self.r_std**2


class StateIndexMap:
    """Bijection between named physical quantities and vector positions."""

    def __init__(self, fleet: TwoAxisFleet | None, bus_ids: list[int]):
        diff_names: list[str] = []
        self._machine_offset: dict[int, int] = {}
        if fleet is not None:
            ns = fleet.n_states
            for m, bus in enumerate(fleet.bus_ids):
                self._machine_offset[bus] = m * ns
                diff_names.extend(f"gen{bus}.{s}" for s in fleet.state_names)
        alg_names: list[str] = []
        self._bus_offset: dict[int, int] = {}
        for i, bus in enumerate(bus_ids):
            self._bus_offset[bus] = 2 * i
            alg_names.append(f"bus{bus}.vre")
            alg_names.append(f"bus{bus}.vim")
        self.diff_names = tuple(diff_names)
        self.alg_names = tuple(alg_names)
        self._fleet_states = fleet.state_names if fleet is not None else ()

    @property
    def n_diff(self) -> int:
        return len(self.diff_names)

    @property
    def n_alg(self) -> int:
        return len(self.alg_names)

    def diff_index(self, bus_id: int, state: str) -> int:
        return self._machine_offset[bus_id] + self._fleet_states.index(state)

    def alg_index(self, bus_id: int, component: str) -> int:
        off = {"vre": 0, "vim": 1}[component]
        return self._bus_offset[bus_id] + off

    def machine_slice(self, bus_id: int) -> slice:
        off = self._machine_offset[bus_id]
        return slice(off, off + len(self._fleet_states))


class PowerSystemModel:
    """Area model implementing the filter's descriptor-DAE protocol."""

    def __init__(
        self,
        network: NetworkModel,
        fleet: TwoAxisFleet | None,
        unknown: UnknownInjectorSet,
        pmus: list[PmuSpec],
        noise: NoiseModel = NoiseModel(),
        known_loads: list[ConstantLoad] | None = None,
    ):
        self.network = network
        self.fleet = fleet
        self.unknown = unknown
        self.pmus = list(pmus)
        self.noise = noise
        self.known_loads = list(known_loads or [])

        bus_set = set(network.bus_ids)
        stray = set(unknown.bus_ids) - bus_set
        if stray:
            raise ValueError(f"unknown-injector buses not in network: {sorted(stray)}")
        for load in self.known_loads:
            if load.bus_id not in bus_set:
                raise ValueError(f"known load references unknown bus {load.bus_id}")
        if fleet is not None:
            for bus in fleet.bus_ids:
                if bus not in bus_set:
                    raise ValueError(f"machine bus {bus} not in network")

        self.index = StateIndexMap(fleet, network.bus_ids)
        self.n_diff = self.index.n_diff
        self.n_alg = self.index.n_alg

        rows = []
        for i, bus in enumerate(network.bus_ids):
            if bus not in unknown:
                rows.extend((2 * i, 2 * i + 1))
        self._modeled_rows = np.array(rows, dtype=int)
        self.n_eq = self._modeled_rows.size

        self._N = network.real_ybus()
        self._C2 = build_measurement_matrix(network, self.pmus)
        self.n_meas = self._C2.shape[0]

        if fleet is not None:
            self._mach_cols = np.array(
                [2 * network.bus_index(b) for b in fleet.bus_ids], dtype=int
            )
        else:
            self._mach_cols = np.zeros(0, dtype=int)

        mask = np.zeros(self.n_diff, dtype=bool)
        if fleet is not None:
            ns = fleet.n_states
            mask[fleet.state_index("omega") :: ns] = True
        self._speed_mask = mask

    # ---- protocol surface ----

    def differential_rhs(self, y: np.ndarray, v: np.ndarray) -> np.ndarray:
        if self.fleet is None:
            return np.zeros(0)
        st = y.reshape(self.fleet.n_machines, self.fleet.n_states)
        vx = v[self._mach_cols]
        vy = v[self._mach_cols + 1]
        return self.fleet.rhs(st, vx, vy).ravel()

    def algebraic_residual(self, y: np.ndarray, v: np.ndarray) -> np.ndarray:
        inj = np.zeros(2 * self.network.n_bus)
        if self.fleet is not None:
            st = y.reshape(self.fleet.n_machines, self.fleet.n_states)
            vx = v[self._mach_cols]
            vy = v[self._mach_cols + 1]
            Ix, Iy = self.fleet.injections(st, vx, vy)
            np.add.at(inj, self._mach_cols, Ix)
            np.add.at(inj, self._mach_cols + 1, Iy)
        for load in self.known_loads:
            c = 2 * self.network.bus_index(load.bus_id)
            inj[c] += -(load.g * v[c] - load.b * v[c + 1]) + load.ix
            inj[c + 1] += -(load.b * v[c] + load.g * v[c + 1]) + load.iy
        residual = inj - self._N @ v
        return residual[self._modeled_rows]

    def jacobians(self, y, v):
        n_d, n_a = self.n_diff, self.n_alg
        Fy = np.zeros((n_d, n_d))
        Fv = np.zeros((n_d, n_a))
        Gy_full = np.zeros((2 * self.network.n_bus, n_d))
        Gv_full = -self._N.copy()

        if self.fleet is not None:
            fl = self.fleet
            st = y.reshape(fl.n_machines, fl.n_states)
            vx = v[self._mach_cols]
            vy = v[self._mach_cols + 1]
            dF_dY, dF_dV = fl.jacobians(st, vx, vy)
            dI_dY, dI_dV = fl.injection_jacobians(st, vx, vy)
            ns = fl.n_states
            for m in range(fl.n_machines):
                sl = slice(m * ns, (m + 1) * ns)
                c = self._mach_cols[m]
                Fy[sl, sl] = dF_dY[m]
                Fv[sl, c : c + 2] = dF_dV[m]
                Gy_full[c : c + 2, sl] = dI_dY[m]
                Gv_full[c : c + 2, c : c + 2] += dI_dV[m]

        for load in self.known_loads:
            c = 2 * self.network.bus_index(load.bus_id)
            Gv_full[c, c] += -load.g
            Gv_full[c, c + 1] += load.b
            Gv_full[c + 1, c] += -load.b
            Gv_full[c + 1, c + 1] += -load.g

        return Fy, Fv, Gy_full[self._modeled_rows], Gv_full[self._modeled_rows]

    def measurement_matrix(self) -> np.ndarray:
        return self._C2

    def noise_covariances(self, h: float) -> tuple[np.ndarray, np.ndarray]:
        diag = self.noise.q_diagonal(h, self._speed_mask, self.n_eq)
        return np.diag(diag), self.noise.r_matrix(self.n_meas)

    # ---- construction helpers ----

    def measurement_names(self) -> list[str]:
        names: list[str] = []
        for pmu in self.pmus:
            names.extend(pmu.channel_names)
        return names

    def state_names(self) -> list[str]:
        return list(self.index.diff_names) + list(self.index.alg_names)

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x[: self.n_diff], x[self.n_diff :]

    @staticmethod
    def to_complex(v: np.ndarray) -> np.ndarray:
        return v[0::2] + 1j * v[1::2]

    @staticmethod
    def from_complex(V: np.ndarray) -> np.ndarray:
        v = np.empty(2 * V.size)
        v[0::2] = V.real
        v[1::2] = V.imag
        return v


def build_measurement_matrix(net: NetworkModel, pmus: list[PmuSpec]) -> np.ndarray:
    """Linear map from interleaved bus voltages to PMU channels.

    Voltage devices contribute unit rows; branch-current devices
    contribute the real expansion of the branch two-port coefficients
    at the metered end.
    """
    rows: list[np.ndarray] = []
    bus_set = set(net.bus_ids)
    for pmu in pmus:
        if isinstance(pmu, VoltagePmu):
            if pmu.bus_id not in bus_set:
                raise ValueError(f"voltage PMU at unknown bus {pmu.bus_id}")
            c = 2 * net.bus_index(pmu.bus_id)
            for off in (0, 1):
                row = np.zeros(2 * net.n_bus)
                row[c + off] = 1.0
                rows.append(row)
        else:
            branch = _find_branch(net, pmu.from_bus, pmu.to_bus)
            # map the PMU's chosen end onto the branch orientation
            phys_end = pmu.end
            if branch.from_bus != pmu.from_bus:
                phys_end = "to" if pmu.end == "from" else "from"
            a, b = branch_current_coefficients(branch, phys_end)
            cf = 2 * net.bus_index(branch.from_bus)
            ct = 2 * net.bus_index(branch.to_bus)
            block = np.zeros((2, 2 * net.n_bus))
            for coef, col in ((a, cf), (b, ct)):
                block[0, col] += coef.real
                block[0, col + 1] += -coef.imag
                block[1, col] += coef.imag
                block[1, col + 1] += coef.real
            rows.append(block[0])
            rows.append(block[1])
    if not rows:
        return np.zeros((0, 2 * net.n_bus))
    return np.vstack(rows)


def _find_branch(net: NetworkModel, from_bus: int, to_bus: int):
    hits = [
        br
        for br in net.branches
        if {br.from_bus, br.to_bus} == {from_bus, to_bus}
    ]
    if not hits:
        raise ValueError(f"no branch between buses {from_bus} and {to_bus}")
    if len(hits) > 1:
        raise ValueError(
            f"parallel branches between {from_bus} and {to_bus}; "
            "current PMU placement is ambiguous"
        )
    return hits[0]
