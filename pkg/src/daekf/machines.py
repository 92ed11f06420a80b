"""Synchronous machine fleets with excitation and turbine-governor controls.

Two model orders are provided over a shared parameter set:

* `TwoAxisFleet`: transient (two-axis) machine, 9 states per unit.
  This is the order used by the estimator.
* `SubtransientFleet`: adds the subtransient EMF pair, 11 states per
  unit.  Used by the ground-truth simulator so that the estimator runs
  against a deliberately richer plant.

Controls on every unit: a rotating DC exciter with rate feedback
(3 states, no saturation) and a droop-governed steam turbine with a
single lead-lag reheater stage (2 states).  Regulator output and valve
position carry non-windup clamps.

All quantities are per unit on the system MVA base; rotor speed is the
deviation from synchronous in pu.  Machine rotor quantities use the
generator convention with the q axis leading, so network-to-rotor
rotation of a phasor (re, im) at rotor angle d is

    comp_d = re*sin(d) - im*cos(d),  comp_q = re*cos(d) + im*sin(d).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_AXIS_STATES = (
    "delta", "omega", "eq_p", "ed_p", "efd", "rf", "vr", "gov1", "gov2",
)
SUBTRANSIENT_STATES = (
    "delta", "omega", "eq_p", "ed_p", "eq_pp", "ed_pp",
    "efd", "rf", "vr", "gov1", "gov2",
)


@dataclass
class MachineParams:
    """Per-unit electrical and control parameters of one machine."""

    bus_id: int
    rating_mva: float
    H: float
    D: float
    xd: float
    xq: float
    xdp: float
    xqp: float
    Td0p: float
    Tq0p: float
    Rs: float = 0.0
    # subtransient extension; populated from the transient values when
    # the data file does not list them explicitly
    xdpp: float | None = None
    xqpp: float | None = None
    Td0pp: float | None = None
    Tq0pp: float | None = None
    # exciter
    KA: float = 20.0
    TA: float = 0.2
    KE: float = 1.0
    TE: float = 0.314
    KF: float = 0.063
    TF: float = 0.35
    vr_max: float = 10.0
    vr_min: float = -10.0
    # governor
    droop: float = 0.05
    T1: float = 0.5
    T2: float = 2.1
    T3: float = 7.0
    Dt: float = 0.0
    gate_max: float = 15.0
    gate_min: float = 0.0

    def validate(self):
        if self.H <= 0:
            raise ValueError(f"machine at bus {self.bus_id}: H must be positive")
        for name in ("Td0p", "Tq0p", "TA", "TE", "TF", "T1", "T3"):
            if getattr(self, name) <= 0:
                raise ValueError(
                    f"machine at bus {self.bus_id}: time constant {name} must be positive"
                )
        if not (self.xd >= self.xdp > 0):
            raise ValueError(
                f"machine at bus {self.bus_id}: need xd >= xdp > 0"
            )
        if not (self.xq >= self.xqp > 0):
            raise ValueError(
                f"machine at bus {self.bus_id}: need xq >= xqp > 0"
            )
        if self.droop <= 0:
            raise ValueError(f"machine at bus {self.bus_id}: droop must be positive")


class _FleetBase:
    """Parameter arrays plus the shared exciter/governor equations."""

    state_names: tuple[str, ...] = ()

    def __init__(self, params: list[MachineParams], omega_s: float,
                 enforce_limits: bool = True):
        if not params:
            raise ValueError("fleet needs at least one machine")
        for p in params:
            p.validate()
        self.params = params
        self.omega_s = omega_s
        # Plant models keep the regulator/gate anti-windup limits; an
        # estimator-side fleet is better off without them, since the
        # masked derivatives are discontinuous and derail the filter's
        # relinearization whenever an iterate brushes a limit.
        self.enforce_limits = enforce_limits
        self.bus_ids = [p.bus_id for p in params]
        arr = lambda name: np.array([getattr(p, name) for p in params], dtype=float)
        self.H = arr("H")
        self.D = arr("D")
        self.xd = arr("xd")
        self.xq = arr("xq")
        self.xdp = arr("xdp")
        self.xqp = arr("xqp")
        self.Td0p = arr("Td0p")
        self.Tq0p = arr("Tq0p")
        self.Rs = arr("Rs")
        self.KA = arr("KA")
        self.TA = arr("TA")
        self.KE = arr("KE")
        self.TE = arr("TE")
        self.KF = arr("KF")
        self.TF = arr("TF")
        self.vr_max = arr("vr_max")
        self.vr_min = arr("vr_min")
        self.droop = arr("droop")
        self.T1 = arr("T1")
        self.T2 = arr("T2")
        self.T3 = arr("T3")
        self.Dt = arr("Dt")
        self.gate_max = arr("gate_max")
        self.gate_min = arr("gate_min")
        # voltage and power set points, fixed by the equilibrium solve;
        # NaN until then so premature use fails loudly
        self.vref = np.full(len(params), np.nan)
        self.pref = np.full(len(params), np.nan)

    @property
    def n_machines(self) -> int:
        return len(self.params)

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    def state_index(self, name: str) -> int:
        return self.state_names.index(name)

    # ---- stator interface: which EMF pair and reactances close the
    # stator loop differs between the two model orders ----

    def _stator_emf(self, st: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def _stator_x(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def _stator_emf_idx(self) -> tuple[int, int]:
        raise NotImplementedError

    def _currents(self, st, vx, vy):
        """Machine currents in rotor coordinates plus all their partials.

        Returns a dict of arrays keyed by quantity; partials are with
        respect to (delta, e_d, e_q, vx, vy) where (e_d, e_q) is the
        stator-closing EMF pair of the concrete model.
        """
        delta = st[:, 0]
        e_d, e_q = self._stator_emf(st)
        xds, xqs = self._stator_x()
        Rs = self.Rs
        sd, cd = np.sin(delta), np.cos(delta)
        vd = vx * sd - vy * cd
        vq = vx * cd + vy * sd
        den = Rs**2 + xds * xqs
        gd = e_d - vd
        gq = e_q - vq
        Id = (Rs * gd + xqs * gq) / den
        Iq = (-xds * gd + Rs * gq) / den

        dId = {
            "delta": (-Rs * vq + xqs * vd) / den,
            "ed": Rs / den,
            "eq": xqs / den,
            "vx": (-Rs * sd - xqs * cd) / den,
            "vy": (Rs * cd - xqs * sd) / den,
        }
        dIq = {
            "delta": (xds * vq + Rs * vd) / den,
            "ed": -xds / den,
            "eq": Rs / den,
            "vx": (xds * sd - Rs * cd) / den,
            "vy": (-xds * cd - Rs * sd) / den,
        }
        return {
            "sd": sd, "cd": cd, "vd": vd, "vq": vq,
            "e_d": e_d, "e_q": e_q, "Id": Id, "Iq": Iq,
            "dId": dId, "dIq": dIq,
        }

    def _torque(self, cur):
        """Electrical torque and partials in the same key convention."""
        xds, xqs = self._stator_x()
        e_d, e_q, Id, Iq = cur["e_d"], cur["e_q"], cur["Id"], cur["Iq"]
        dId, dIq = cur["dId"], cur["dIq"]
        xg = xqs - xds
        Te = e_d * Id + e_q * Iq + xg * Id * Iq
        tId = e_d + xg * Iq
        tIq = e_q + xg * Id
        dTe = {k: tId * dId[k] + tIq * dIq[k] for k in ("delta", "vx", "vy")}
        dTe["ed"] = Id + tId * dId["ed"] + tIq * dIq["ed"]
        dTe["eq"] = Iq + tId * dId["eq"] + tIq * dIq["eq"]
        return Te, dTe

    def injections(self, st, vx, vy):
        """Injected current components at the machine buses."""
        cur = self._currents(st, vx, vy)
        sd, cd, Id, Iq = cur["sd"], cur["cd"], cur["Id"], cur["Iq"]
        Ix = Id * sd + Iq * cd
        Iy = Iq * sd - Id * cd
        return Ix, Iy

    def _vm(self, vx, vy):
        vm = np.hypot(vx, vy)
        if np.any(vm < 1e-6):
            bad = [self.bus_ids[i] for i in np.nonzero(vm < 1e-6)[0]]
            raise ValueError(
                f"terminal voltage magnitude vanishes at buses {bad}; "
                "exciter feedback is undefined"
            )
        return vm

    def _control_rhs(self, st, vm, idx):
        """Exciter and governor derivatives; idx maps state names to columns."""
        if np.isnan(self.vref).any() or np.isnan(self.pref).any():
            raise RuntimeError(
                "fleet set points are unset; call equilibrium() (or assign "
                "vref/pref directly) before evaluating the dynamics"
            )
        omega = st[:, 1]
        efd = st[:, idx["efd"]]
        rf = st[:, idx["rf"]]
        vr = st[:, idx["vr"]]
        g1 = st[:, idx["gov1"]]
        g2 = st[:, idx["gov2"]]

        f_efd = (vr - self.KE * efd) / self.TE
        f_rf = (-rf + (self.KF / self.TF) * efd) / self.TF
        raw_vr = (
            -vr + self.KA * rf - (self.KA * self.KF / self.TF) * efd
            + self.KA * (self.vref - vm)
        ) / self.TA
        if self.enforce_limits:
            vr_hi = (vr >= self.vr_max) & (raw_vr > 0)
            vr_lo = (vr <= self.vr_min) & (raw_vr < 0)
            vr_clamped = vr_hi | vr_lo
        else:
            vr_clamped = np.zeros(vr.shape, dtype=bool)
        f_vr = np.where(vr_clamped, 0.0, raw_vr)

        raw_g1 = (self.pref - omega / self.droop - g1) / self.T1
        if self.enforce_limits:
            g1_hi = (g1 >= self.gate_max) & (raw_g1 > 0)
            g1_lo = (g1 <= self.gate_min) & (raw_g1 < 0)
            g1_clamped = g1_hi | g1_lo
        else:
            g1_clamped = np.zeros(g1.shape, dtype=bool)
        f_g1 = np.where(g1_clamped, 0.0, raw_g1)

        kT = self.T2 / self.T3
        f_g2 = ((1.0 - kT) * g1 - g2) / self.T3
        pm = g2 + kT * g1 - self.Dt * omega
        return {
            "f_efd": f_efd, "f_rf": f_rf, "f_vr": f_vr,
            "f_g1": f_g1, "f_g2": f_g2, "pm": pm,
            "vr_clamped": vr_clamped, "g1_clamped": g1_clamped,
        }

    def _control_jacobian(self, blocks, vx, vy, vm, ctl, idx):
        """Fill exciter/governor rows of the per-machine Jacobian blocks."""
        dF_dY, dF_dV = blocks
        i_efd, i_rf, i_vr = idx["efd"], idx["rf"], idx["vr"]
        i_g1, i_g2 = idx["gov1"], idx["gov2"]

        dF_dY[:, i_efd, i_efd] = -self.KE / self.TE
        dF_dY[:, i_efd, i_vr] = 1.0 / self.TE
        dF_dY[:, i_rf, i_rf] = -1.0 / self.TF
        dF_dY[:, i_rf, i_efd] = self.KF / self.TF**2

        live = ~ctl["vr_clamped"]
        dF_dY[:, i_vr, i_vr] = np.where(live, -1.0 / self.TA, 0.0)
        dF_dY[:, i_vr, i_rf] = np.where(live, self.KA / self.TA, 0.0)
        dF_dY[:, i_vr, i_efd] = np.where(
            live, -self.KA * self.KF / (self.TF * self.TA), 0.0
        )
        dF_dV[:, i_vr, 0] = np.where(live, -self.KA * vx / (vm * self.TA), 0.0)
        dF_dV[:, i_vr, 1] = np.where(live, -self.KA * vy / (vm * self.TA), 0.0)

        live1 = ~ctl["g1_clamped"]
        dF_dY[:, i_g1, i_g1] = np.where(live1, -1.0 / self.T1, 0.0)
        dF_dY[:, i_g1, 1] = np.where(live1, -1.0 / (self.droop * self.T1), 0.0)
        kT = self.T2 / self.T3
        dF_dY[:, i_g2, i_g1] = (1.0 - kT) / self.T3
        dF_dY[:, i_g2, i_g2] = -1.0 / self.T3

    def _swing_partials(self, dF_dY, dF_dV, dTe, idx):
        """Rotor rows shared by both model orders."""
        i_ed, i_eq = self._stator_emf_idx()
        kT = self.T2 / self.T3
        twoH = 2.0 * self.H
        dF_dY[:, 0, 1] = self.omega_s
        dF_dY[:, 1, 0] = -dTe["delta"] / twoH
        dF_dY[:, 1, 1] = -(self.D + self.Dt) / twoH
        dF_dY[:, 1, i_ed] = -dTe["ed"] / twoH
        dF_dY[:, 1, i_eq] = -dTe["eq"] / twoH
        dF_dY[:, 1, idx["gov1"]] = kT / twoH
        dF_dY[:, 1, idx["gov2"]] = 1.0 / twoH
        dF_dV[:, 1, 0] = -dTe["vx"] / twoH
        dF_dV[:, 1, 1] = -dTe["vy"] / twoH

    def _injection_partials(self, cur):
        """d(Ix, Iy)/d(delta, ed, eq, vx, vy) as a key-indexed dict."""
        sd, cd, Id, Iq = cur["sd"], cur["cd"], cur["Id"], cur["Iq"]
        dId, dIq = cur["dId"], cur["dIq"]
        dIx = {k: dId[k] * sd + dIq[k] * cd for k in ("ed", "eq", "vx", "vy")}
        dIy = {k: dIq[k] * sd - dId[k] * cd for k in ("ed", "eq", "vx", "vy")}
        dIx["delta"] = dId["delta"] * sd + Id * cd + dIq["delta"] * cd - Iq * sd
        dIy["delta"] = dIq["delta"] * sd + Iq * cd - dId["delta"] * cd + Id * sd
        return dIx, dIy

    def injection_jacobians(self, st, vx, vy):
        """Per-machine blocks d(Ix,Iy)/d(states) and d(Ix,Iy)/d(vx,vy)."""
        cur = self._currents(st, vx, vy)
        dIx, dIy = self._injection_partials(cur)
        n, ns = self.n_machines, self.n_states
        i_ed, i_eq = self._stator_emf_idx()
        dI_dY = np.zeros((n, 2, ns))
        dI_dV = np.zeros((n, 2, 2))
        dI_dY[:, 0, 0] = dIx["delta"]
        dI_dY[:, 0, i_ed] = dIx["ed"]
        dI_dY[:, 0, i_eq] = dIx["eq"]
        dI_dY[:, 1, 0] = dIy["delta"]
        dI_dY[:, 1, i_ed] = dIy["ed"]
        dI_dY[:, 1, i_eq] = dIy["eq"]
        dI_dV[:, 0, 0] = dIx["vx"]
        dI_dV[:, 0, 1] = dIx["vy"]
        dI_dV[:, 1, 0] = dIy["vx"]
        dI_dV[:, 1, 1] = dIy["vy"]
        return dI_dY, dI_dV

    # ---- equilibrium ----

    def equilibrium(self, V: np.ndarray, S: np.ndarray) -> np.ndarray:
        """Back-solve steady machine states from terminal conditions.

        Args:
            V: complex terminal voltages at the machine buses.
            S: complex injected powers (generation positive).

        Also fixes the voltage and power set points so that the solved
        point is an exact equilibrium of the fleet equations.
        """
        I = np.conj(S / V)
        e_th = V + (self.Rs + 1j * self.xq) * I
        delta = np.angle(e_th)
        sd, cd = np.sin(delta), np.cos(delta)
        vd = V.real * sd - V.imag * cd
        vq = V.real * cd + V.imag * sd
        Id = I.real * sd - I.imag * cd
        Iq = I.real * cd + I.imag * sd

        eq_p = vq + self.Rs * Iq + self.xdp * Id
        ed_p = vd + self.Rs * Id - self.xqp * Iq
        efd = eq_p + (self.xd - self.xdp) * Id
        vr = self.KE * efd
        rf = (self.KF / self.TF) * efd
        vm = np.abs(V)
        self.vref = vm + vr / self.KA

        if np.any(vr > self.vr_max) or np.any(vr < self.vr_min):
            bad = [
                self.bus_ids[i]
                for i in np.nonzero((vr > self.vr_max) | (vr < self.vr_min))[0]
            ]
            raise ValueError(f"equilibrium regulator output outside limits at buses {bad}")

        st = np.zeros((self.n_machines, self.n_states))
        st[:, 0] = delta
        st[:, self.state_index("eq_p")] = eq_p
        st[:, self.state_index("ed_p")] = ed_p
        self._equilibrium_extra(st, vd, vq, Id, Iq)

        cur = self._currents(st, V.real, V.imag)
        Te, _ = self._torque(cur)
        kT = self.T2 / self.T3
        st[:, self.state_index("efd")] = efd
        st[:, self.state_index("rf")] = rf
        st[:, self.state_index("vr")] = vr
        st[:, self.state_index("gov1")] = Te
        st[:, self.state_index("gov2")] = Te * (1.0 - kT)
        self.pref = Te.copy()
        if np.any(Te > self.gate_max) or np.any(Te < self.gate_min):
            bad = [
                self.bus_ids[i]
                for i in np.nonzero((Te > self.gate_max) | (Te < self.gate_min))[0]
            ]
            raise ValueError(f"equilibrium gate position outside limits at buses {bad}")
        return st

    def _equilibrium_extra(self, st, vd, vq, Id, Iq):
        pass


class TwoAxisFleet(_FleetBase):
    """Transient-order machine fleet; the estimator's generator model."""

    state_names = TWO_AXIS_STATES

    def _stator_emf(self, st):
        return st[:, 3], st[:, 2]

    def _stator_x(self):
        return self.xdp, self.xqp

    def _stator_emf_idx(self):
        # (d-axis EMF column, q-axis EMF column)
        return 3, 2

    def _idx(self):
        return {n: i for i, n in enumerate(self.state_names)}

    def rhs(self, st, vx, vy):
        idx = self._idx()
        vm = self._vm(vx, vy)
        cur = self._currents(st, vx, vy)
        Te, _ = self._torque(cur)
        ctl = self._control_rhs(st, vm, idx)
        omega = st[:, 1]
        eq_p, ed_p = st[:, 2], st[:, 3]
        efd = st[:, idx["efd"]]
        Id, Iq = cur["Id"], cur["Iq"]

        out = np.zeros_like(st)
        out[:, 0] = self.omega_s * omega
        # turbine damping Dt is already inside pm
        out[:, 1] = (ctl["pm"] - Te - self.D * omega) / (2 * self.H)
        out[:, 2] = (-eq_p - (self.xd - self.xdp) * Id + efd) / self.Td0p
        out[:, 3] = (-ed_p + (self.xq - self.xqp) * Iq) / self.Tq0p
        out[:, idx["efd"]] = ctl["f_efd"]
        out[:, idx["rf"]] = ctl["f_rf"]
        out[:, idx["vr"]] = ctl["f_vr"]
        out[:, idx["gov1"]] = ctl["f_g1"]
        out[:, idx["gov2"]] = ctl["f_g2"]
        return out

    def jacobians(self, st, vx, vy):
        idx = self._idx()
        vm = self._vm(vx, vy)
        cur = self._currents(st, vx, vy)
        _, dTe = self._torque(cur)
        ctl = self._control_rhs(st, vm, idx)
        n, ns = self.n_machines, self.n_states
        dF_dY = np.zeros((n, ns, ns))
        dF_dV = np.zeros((n, ns, 2))

        self._swing_partials(dF_dY, dF_dV, dTe, idx)

        dId, dIq = cur["dId"], cur["dIq"]
        xdg = self.xd - self.xdp
        xqg = self.xq - self.xqp
        # eq_p row: d/dt eq_p = (-eq_p - xdg*Id + efd)/Td0p
        dF_dY[:, 2, 0] = -xdg * dId["delta"] / self.Td0p
        dF_dY[:, 2, 2] = (-1.0 - xdg * dId["eq"]) / self.Td0p
        dF_dY[:, 2, 3] = -xdg * dId["ed"] / self.Td0p
        dF_dY[:, 2, idx["efd"]] = 1.0 / self.Td0p
        dF_dV[:, 2, 0] = -xdg * dId["vx"] / self.Td0p
        dF_dV[:, 2, 1] = -xdg * dId["vy"] / self.Td0p
        # ed_p row: d/dt ed_p = (-ed_p + xqg*Iq)/Tq0p
        dF_dY[:, 3, 0] = xqg * dIq["delta"] / self.Tq0p
        dF_dY[:, 3, 2] = xqg * dIq["eq"] / self.Tq0p
        dF_dY[:, 3, 3] = (-1.0 + xqg * dIq["ed"]) / self.Tq0p
        dF_dV[:, 3, 0] = xqg * dIq["vx"] / self.Tq0p
        dF_dV[:, 3, 1] = xqg * dIq["vy"] / self.Tq0p

        self._control_jacobian((dF_dY, dF_dV), vx, vy, vm, ctl, idx)
        return dF_dY, dF_dV


class SubtransientFleet(_FleetBase):
    """Subtransient-order fleet used as the simulation ground truth."""

    state_names = SUBTRANSIENT_STATES

    def __init__(self, params, omega_s):
        super().__init__(params, omega_s)
        # default subtransient constants derived from the transient ones
        xdpp = [p.xdpp if p.xdpp is not None else 0.9 * p.xdp for p in params]
        xqpp = [p.xqpp if p.xqpp is not None else 0.9 * p.xqp for p in params]
        td = [p.Td0pp if p.Td0pp is not None else p.Td0p / 100.0 for p in params]
        tq = [p.Tq0pp if p.Tq0pp is not None else p.Tq0p / 100.0 for p in params]
        self.xdpp = np.array(xdpp)
        self.xqpp = np.array(xqpp)
        self.Td0pp = np.array(td)
        self.Tq0pp = np.array(tq)
        if np.any(self.Td0pp <= 0) or np.any(self.Tq0pp <= 0):
            raise ValueError("subtransient time constants must be positive")
        if np.any(self.xdpp >= self.xdp) or np.any(self.xqpp >= self.xqp):
            raise ValueError("subtransient reactances must lie below transient ones")

    def _stator_emf(self, st):
        return st[:, 5], st[:, 4]

    def _stator_x(self):
        return self.xdpp, self.xqpp

    def _stator_emf_idx(self):
        return 5, 4

    def _idx(self):
        return {n: i for i, n in enumerate(self.state_names)}

    def rhs(self, st, vx, vy):
        idx = self._idx()
        vm = self._vm(vx, vy)
        cur = self._currents(st, vx, vy)
        Te, _ = self._torque(cur)
        ctl = self._control_rhs(st, vm, idx)
        omega = st[:, 1]
        eq_p, ed_p = st[:, 2], st[:, 3]
        eq_pp, ed_pp = st[:, 4], st[:, 5]
        efd = st[:, idx["efd"]]
        Id, Iq = cur["Id"], cur["Iq"]

        out = np.zeros_like(st)
        out[:, 0] = self.omega_s * omega
        out[:, 1] = (ctl["pm"] - Te - self.D * omega) / (2 * self.H)
        out[:, 2] = (-eq_p - (self.xd - self.xdp) * Id + efd) / self.Td0p
        out[:, 3] = (-ed_p + (self.xq - self.xqp) * Iq) / self.Tq0p
        out[:, 4] = (eq_p - eq_pp - (self.xdp - self.xdpp) * Id) / self.Td0pp
        out[:, 5] = (ed_p - ed_pp + (self.xqp - self.xqpp) * Iq) / self.Tq0pp
        out[:, idx["efd"]] = ctl["f_efd"]
        out[:, idx["rf"]] = ctl["f_rf"]
        out[:, idx["vr"]] = ctl["f_vr"]
        out[:, idx["gov1"]] = ctl["f_g1"]
        out[:, idx["gov2"]] = ctl["f_g2"]
        return out

    def jacobians(self, st, vx, vy):
        idx = self._idx()
        vm = self._vm(vx, vy)
        cur = self._currents(st, vx, vy)
        _, dTe = self._torque(cur)
        ctl = self._control_rhs(st, vm, idx)
        n, ns = self.n_machines, self.n_states
        dF_dY = np.zeros((n, ns, ns))
        dF_dV = np.zeros((n, ns, 2))

        self._swing_partials(dF_dY, dF_dV, dTe, idx)

        dId, dIq = cur["dId"], cur["dIq"]
        xdg = self.xd - self.xdp
        xqg = self.xq - self.xqp
        xdg2 = self.xdp - self.xdpp
        xqg2 = self.xqp - self.xqpp
        # transient EMF rows; currents depend on the subtransient pair
        dF_dY[:, 2, 0] = -xdg * dId["delta"] / self.Td0p
        dF_dY[:, 2, 2] = -1.0 / self.Td0p
        dF_dY[:, 2, 4] = -xdg * dId["eq"] / self.Td0p
        dF_dY[:, 2, 5] = -xdg * dId["ed"] / self.Td0p
        dF_dY[:, 2, idx["efd"]] = 1.0 / self.Td0p
        dF_dV[:, 2, 0] = -xdg * dId["vx"] / self.Td0p
        dF_dV[:, 2, 1] = -xdg * dId["vy"] / self.Td0p

        dF_dY[:, 3, 0] = xqg * dIq["delta"] / self.Tq0p
        dF_dY[:, 3, 3] = -1.0 / self.Tq0p
        dF_dY[:, 3, 4] = xqg * dIq["eq"] / self.Tq0p
        dF_dY[:, 3, 5] = xqg * dIq["ed"] / self.Tq0p
        dF_dV[:, 3, 0] = xqg * dIq["vx"] / self.Tq0p
        dF_dV[:, 3, 1] = xqg * dIq["vy"] / self.Tq0p

        # subtransient EMF rows
        dF_dY[:, 4, 0] = -xdg2 * dId["delta"] / self.Td0pp
        dF_dY[:, 4, 2] = 1.0 / self.Td0pp
        dF_dY[:, 4, 4] = (-1.0 - xdg2 * dId["eq"]) / self.Td0pp
        dF_dY[:, 4, 5] = -xdg2 * dId["ed"] / self.Td0pp
        dF_dV[:, 4, 0] = -xdg2 * dId["vx"] / self.Td0pp
        dF_dV[:, 4, 1] = -xdg2 * dId["vy"] / self.Td0pp

        dF_dY[:, 5, 0] = xqg2 * dIq["delta"] / self.Tq0pp
        dF_dY[:, 5, 3] = 1.0 / self.Tq0pp
        dF_dY[:, 5, 4] = xqg2 * dIq["eq"] / self.Tq0pp
        dF_dY[:, 5, 5] = (-1.0 + xqg2 * dIq["ed"]) / self.Tq0pp
        dF_dV[:, 5, 0] = xqg2 * dIq["vx"] / self.Tq0pp
        dF_dV[:, 5, 1] = xqg2 * dIq["vy"] / self.Tq0pp

        self._control_jacobian((dF_dY, dF_dV), vx, vy, vm, ctl, idx)
        return dF_dY, dF_dV

    def _equilibrium_extra(self, st, vd, vq, Id, Iq):
        st[:, 4] = vq + self.Rs * Iq + self.xdpp * Id
        st[:, 5] = vd + self.Rs * Id - self.xqpp * Iq
