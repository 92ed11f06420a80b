"""Newton-Raphson power flow in polar coordinates.

Used to anchor every dynamic study: the solved operating point seeds
the machine equilibria and fixes the load compositions.  Dense algebra
throughout; the systems of interest here have tens of buses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import NetworkModel


class PowerFlowError(RuntimeError):
    pass


@dataclass
class Dispatch:
    """Generator schedule: slack bus plus PV buses with P and V targets.

    p_set maps PV bus id to scheduled active injection of the unit (pu);
    v_set maps every generator bus, slack included, to its voltage
    magnitude target.
    """

    slack_bus: int
    p_set: dict[int, float] = field(default_factory=dict)
    v_set: dict[int, float] = field(default_factory=dict)


@dataclass
class PowerFlowResult:
    V: np.ndarray              # complex bus voltages, network order
    S_injection: np.ndarray    # complex net injections V * conj(Y V)
    iterations: int

    def complex_at(self, net: NetworkModel, bus_id: int) -> complex:
        return self.V[net.bus_index(bus_id)]


def solve_power_flow(
    net: NetworkModel,
    dispatch: Dispatch,
    s_load: dict[int, complex],
    tol: float = 1e-11,
    max_iter: int = 30,
) -> PowerFlowResult:
    """Solve the AC power flow for the given schedule and loads.

    Args:
        net: network with admittance data.
        dispatch: slack/PV schedule; PV injections are the unit outputs,
            the bus load (if any) is subtracted internally.
        s_load: complex consumed power per bus id (pu); missing buses
            draw nothing.

    Returns:
        PowerFlowResult with the converged voltage phasors.
    """
    n = net.n_bus
    Y = net.ybus()
    idx = {b: i for i, b in enumerate(net.bus_ids)}
    if dispatch.slack_bus not in idx:
        raise PowerFlowError(f"slack bus {dispatch.slack_bus} not in network")

    s_spec = np.zeros(n, dtype=complex)
    for bus, s in s_load.items():
        s_spec[idx[bus]] -= s
    for bus, p in dispatch.p_set.items():
        s_spec[idx[bus]] += p

    slack = idx[dispatch.slack_bus]
    pv = sorted(idx[b] for b in dispatch.v_set if idx[b] != slack)
    pq = sorted(set(range(n)) - set(pv) - {slack})
    pvpq = pv + pq

    vm = np.ones(n)
    va = np.zeros(n)
    for bus, v in dispatch.v_set.items():
        vm[idx[bus]] = v

    for iteration in range(1, max_iter + 1):
        V = vm * np.exp(1j * va)
        Ibus = Y @ V
        S = V * np.conj(Ibus)
        dP = (s_spec.real - S.real)[pvpq]
        dQ = (s_spec.imag - S.imag)[pq]
        mismatch = np.concatenate([dP, dQ])
        if np.max(np.abs(mismatch)) < tol:
            return PowerFlowResult(V=V, S_injection=S, iterations=iteration)

        diagV = np.diag(V)
        diagI = np.diag(Ibus)
        diagVn = np.diag(V / np.abs(V))
        dS_dVa = 1j * diagV @ np.conj(diagI - Y @ diagV)
        dS_dVm = diagVn @ np.conj(diagI) + diagV @ np.conj(Y @ diagVn)

        J11 = dS_dVa.real[np.ix_(pvpq, pvpq)]
        J12 = dS_dVm.real[np.ix_(pvpq, pq)]
        J21 = dS_dVa.imag[np.ix_(pq, pvpq)]
        J22 = dS_dVm.imag[np.ix_(pq, pq)]
        J = np.block([[J11, J12], [J21, J22]])

        try:
            dx = np.linalg.solve(J, mismatch)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError("singular power flow Jacobian") from exc
        va[pvpq] += dx[: len(pvpq)]
        vm[pq] += dx[len(pvpq):]
        if np.any(vm <= 0):
            raise PowerFlowError("voltage magnitude collapsed below zero")

    raise PowerFlowError(f"power flow did not converge in {max_iter} iterations")
