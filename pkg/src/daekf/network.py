"""Static network model: buses, branches, admittance matrix.

Branches use the standard pi equivalent with an off-nominal turns ratio
on the from side.  All quantities are per unit on the system base; bus
voltages are handled in rectangular coordinates throughout the package,
with the algebraic vector interleaved as (re, im) per bus.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Bus:
    """Network node with optional fixed shunt (pu admittance)."""

    bus_id: int
    g_shunt: float = 0.0
    b_shunt: float = 0.0


@dataclass(frozen=True)
class Branch:
    """Pi-model branch from_bus -> to_bus.

    r, x: series impedance.  b: total charging susceptance.  tap: turns
    ratio on the from side; 0 or 1 means a plain line.
    """

    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0
    tap: float = 1.0

    def __post_init__(self):
        if self.x == 0.0 and self.r == 0.0:
            raise ValueError(
                f"branch {self.from_bus}-{self.to_bus} has zero series impedance"
            )

    @property
    def ratio(self) -> float:
        return self.tap if self.tap not in (0.0,) else 1.0

    @property
    def y_series(self) -> complex:
        return 1.0 / complex(self.r, self.x)

    def two_port(self) -> tuple[complex, complex, complex, complex]:
        """(Yff, Yft, Ytf, Ytt) of the branch admittance two-port."""
        y = self.y_series
        ysh = 0.5j * self.b
        t = self.ratio
        return (y + ysh) / t**2, -y / t, -y / t, y + ysh


@dataclass
class NetworkModel:
    """Bus/branch collection with a cached complex admittance matrix."""

    buses: list[Bus]
    branches: list[Branch]
    _index: dict[int, int] = field(init=False, repr=False)
    _ybus: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        ids = [b.bus_id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate bus ids in network")
        self._index = {bid: i for i, bid in enumerate(ids)}
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in self._index:
                    raise ValueError(f"branch references unknown bus {end}")

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_index(self, bus_id: int) -> int:
        return self._index[bus_id]

    @property
    def bus_ids(self) -> list[int]:
        return [b.bus_id for b in self.buses]

    def ybus(self) -> np.ndarray:
        """Complex bus admittance matrix (cached)."""
        if self._ybus is None:
            n = self.n_bus
            Y = np.zeros((n, n), dtype=complex)
            for br in self.branches:
                f = self._index[br.from_bus]
                t = self._index[br.to_bus]
                yff, yft, ytf, ytt = br.two_port()
                Y[f, f] += yff
                Y[f, t] += yft
                Y[t, f] += ytf
                Y[t, t] += ytt
            for bus in self.buses:
                i = self._index[bus.bus_id]
                Y[i, i] += complex(bus.g_shunt, bus.b_shunt)
            self._ybus = Y
        return self._ybus

    def real_ybus(self) -> np.ndarray:
        """Real 2x2-block expansion of the admittance matrix.

        Maps the interleaved rectangular voltage vector to interleaved
        injected-current components: each complex entry G + jB becomes
        [[G, -B], [B, G]].
        """
        return expand_complex(self.ybus())

    def restricted(self, bus_ids: list[int]) -> "NetworkModel":
        """Subnetwork on the given buses with fully interior branches."""
        keep = set(bus_ids)
        missing = keep - set(self._index)
        if missing:
            raise ValueError(f"unknown buses in restriction: {sorted(missing)}")
        buses = [b for b in self.buses if b.bus_id in keep]
        # preserve requested ordering
        order = {bid: i for i, bid in enumerate(bus_ids)}
        buses.sort(key=lambda b: order[b.bus_id])
        branches = [
            br for br in self.branches if br.from_bus in keep and br.to_bus in keep
        ]
        return NetworkModel(buses=buses, branches=branches)


def expand_complex(M: np.ndarray) -> np.ndarray:
    """Interleaved real expansion of a complex matrix."""
    n, m = M.shape
    out = np.zeros((2 * n, 2 * m))
    G, B = M.real, M.imag
    out[0::2, 0::2] = G
    out[0::2, 1::2] = -B
    out[1::2, 0::2] = B
    out[1::2, 1::2] = G
    return out


def branch_current_coefficients(
    branch: Branch, end: str = "from"
) -> tuple[complex, complex]:
    """Linear coefficients (a, b) of the measured branch current.

    The current flowing into the branch at the chosen end ('from' or
    'to') is a * V[from_bus] + b * V[to_bus] in complex terms, with the
    buses in branch orientation regardless of the chosen end.
    """
    yff, yft, ytf, ytt = branch.two_port()
    if end == "from":
        return yff, yft
    if end == "to":
        return ytf, ytt
    raise ValueError(f"branch end must be 'from' or 'to', got {end!r}")
