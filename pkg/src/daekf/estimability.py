"""Decide whether unknown injections leave the area state estimable.

The algebraic Jacobian rows of modeled buses, padded with zero rows for
buses whose injection is unknown, form a square structured matrix; the
measurement rows sit below it.  Estimability of the operating point is
generically equivalent to full column rank of that stacked pattern,
which in turn is equivalent to a bipartite matching that saturates all
columns.  The matching decomposes into loops among balance equations
and chains that terminate in a measurement row; chains necessarily
start at the columns of unknown-injection buses, which is the formal
version of the rule of thumb that every unknown injector needs its own
path to a PMU.

Two independent routes to the same answer are kept deliberately: the
combinatorial decision here, and a randomized numeric rank probe of the
same pattern.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .network import branch_current_coefficients
from .psmodel import CurrentPmu, PmuSpec, PowerSystemModel, VoltagePmu

_STRUCT_TOL = 1e-12


@dataclass
class StructuredPairGraph:
    """Boolean pattern of the padded algebraic block and measurement rows.

    Columns are interleaved (re, im) bus-voltage components.  The first
    `n_cols` rows are balance equations in the same order as the
    columns (all-zero for unknown-injection buses); the remaining rows
    are measurement channels.
    """

    E_pat: np.ndarray                  # bool, (n_cols, n_cols)
    C_pat: np.ndarray                  # bool, (n_meas, n_cols)
    col_labels: list[str]
    meas_labels: list[str]
    bus_of_col: list[int] | None = None
    unknown_buses: list[int] = field(default_factory=list)
    bus_edges: set[frozenset[int]] = field(default_factory=set)
    # per measurement pair: (label, configured bus, candidate buses)
    meas_targets: list[tuple[str, int, tuple[int, ...]]] = field(default_factory=list)

    def __post_init__(self):
        self.E_pat = np.asarray(self.E_pat, dtype=bool)
        self.C_pat = np.asarray(self.C_pat, dtype=bool)
        n = self.E_pat.shape[0]
        if self.E_pat.shape != (n, n):
            raise ValueError("padded algebraic pattern must be square")
        if self.C_pat.shape[1] != n:
            raise ValueError("measurement pattern column count mismatch")
        if len(self.col_labels) != n:
            raise ValueError("need one label per column")

    @property
    def n_cols(self) -> int:
        return self.E_pat.shape[0]

    @property
    def n_meas(self) -> int:
        return self.C_pat.shape[0]

    @classmethod
    def from_patterns(cls, E_pat, C_pat) -> "StructuredPairGraph":
        """Bare pattern constructor for hand-built examples."""
        E_pat = np.asarray(E_pat, dtype=bool)
        C_pat = np.atleast_2d(np.asarray(C_pat, dtype=bool))
        n = E_pat.shape[0]
        labels = [f"x{j+1}" for j in range(n)]
        meas = [f"z{i+1}" for i in range(C_pat.shape[0])]
        return cls(E_pat=E_pat, C_pat=C_pat, col_labels=labels, meas_labels=meas)

    def stacked(self) -> np.ndarray:
        return np.vstack([self.E_pat, self.C_pat])


@dataclass
class InjectorRoute:
    """Bus-level path certifying coverage of one unknown injector."""

    injector_bus: int
    bus_path: list[int]
    target_bus: int
    pmu_label: str


@dataclass
class EstimabilityCertificate:
    """Outcome of the structural decision with a human-auditable witness."""

    estimable: bool
    n_cols: int
    matched_cols: int
    loops: list[list[str]]
    chains: list[tuple[list[str], str]]
    unmatched: list[str]
    injector_routes: list[InjectorRoute] | None = None
    route_assignment_note: str | None = None

    def to_dict(self) -> dict:
        out = {
            "estimable": self.estimable,
            "columns": self.n_cols,
            "matched_columns": self.matched_cols,
            "loops": self.loops,
            "chains": [{"columns": c, "measurement": m} for c, m in self.chains],
            "unmatched_columns": self.unmatched,
        }
        if self.injector_routes is not None:
            out["injector_routes"] = [
                {
                    "injector": r.injector_bus,
                    "path": r.bus_path,
                    "pmu_bus": r.target_bus,
                    "pmu": r.pmu_label,
                }
                for r in self.injector_routes
            ]
        if self.route_assignment_note:
            out["assignment_note"] = self.route_assignment_note
        return out


def build_structured_pair(
    model: PowerSystemModel, pmus: list[PmuSpec] | None = None
) -> StructuredPairGraph:
    """Structural pattern of the model's algebraic and measurement rows.

    Entries are marked from the structure of the data, not from any
    operating point: branch conductance couples like components, branch
    susceptance couples cross components, and every device with a
    voltage-dependent injection marks its full 2x2 terminal block.
    """
    net = model.network
    pmus = model.pmus if pmus is None else pmus
    n_bus = net.n_bus
    n = 2 * n_bus
    E = np.zeros((n, n), dtype=bool)
    edges: set[frozenset[int]] = set()

    diag_G = np.zeros(n_bus, dtype=bool)
    diag_B = np.zeros(n_bus, dtype=bool)

    def mark(row_bus: int, col_bus: int, coef: complex):
        r, c = 2 * net.bus_index(row_bus), 2 * net.bus_index(col_bus)
        if abs(coef.real) > _STRUCT_TOL:
            E[r, c] = E[r + 1, c + 1] = True
        if abs(coef.imag) > _STRUCT_TOL:
            E[r, c + 1] = E[r + 1, c] = True

    for br in net.branches:
        yff, yft, ytf, ytt = br.two_port()
        mark(br.from_bus, br.to_bus, yft)
        mark(br.to_bus, br.from_bus, ytf)
        fi, ti = net.bus_index(br.from_bus), net.bus_index(br.to_bus)
        diag_G[fi] |= abs(yff.real) > _STRUCT_TOL
        diag_B[fi] |= abs(yff.imag) > _STRUCT_TOL
        diag_G[ti] |= abs(ytt.real) > _STRUCT_TOL
        diag_B[ti] |= abs(ytt.imag) > _STRUCT_TOL
        edges.add(frozenset((br.from_bus, br.to_bus)))

    for bus in net.buses:
        i = net.bus_index(bus.bus_id)
        diag_G[i] |= abs(bus.g_shunt) > _STRUCT_TOL
        diag_B[i] |= abs(bus.b_shunt) > _STRUCT_TOL

    device_buses = set()
    if model.fleet is not None:
        device_buses.update(model.fleet.bus_ids)
    for load in model.known_loads:
        if abs(load.g) > _STRUCT_TOL or abs(load.b) > _STRUCT_TOL:
            device_buses.add(load.bus_id)

    for i in range(n_bus):
        r = 2 * i
        if diag_G[i]:
            E[r, r] = E[r + 1, r + 1] = True
        if diag_B[i]:
            E[r, r + 1] = E[r + 1, r] = True
    for bus in device_buses:
        r = 2 * net.bus_index(bus)
        E[r : r + 2, r : r + 2] = True

    # pad: unknown-injection buses contribute no balance equations
    for bus in model.unknown:
        r = 2 * net.bus_index(bus)
        E[r : r + 2, :] = False

    C_rows: list[np.ndarray] = []
    meas_labels: list[str] = []
    meas_targets: list[tuple[str, int, tuple[int, ...]]] = []
    for pmu in pmus:
        if isinstance(pmu, VoltagePmu):
            c = 2 * net.bus_index(pmu.bus_id)
            for off in (0, 1):
                row = np.zeros(n, dtype=bool)
                row[c + off] = True
                C_rows.append(row)
            meas_labels.extend(pmu.channel_names)
            meas_targets.append(
                (f"V{pmu.bus_id}", pmu.bus_id, (pmu.bus_id,))
            )
        else:
            branch = next(
                br for br in net.branches
                if {br.from_bus, br.to_bus} == {pmu.from_bus, pmu.to_bus}
            )
            phys_end = pmu.end
            if branch.from_bus != pmu.from_bus:
                phys_end = "to" if pmu.end == "from" else "from"
            a, b = branch_current_coefficients(branch, phys_end)
            block = np.zeros((2, n), dtype=bool)
            for coef, bus in ((a, branch.from_bus), (b, branch.to_bus)):
                c = 2 * net.bus_index(bus)
                if abs(coef.real) > _STRUCT_TOL:
                    block[0, c] = block[1, c + 1] = True
                if abs(coef.imag) > _STRUCT_TOL:
                    block[0, c + 1] = block[1, c] = True
            C_rows.append(block[0])
            C_rows.append(block[1])
            meas_labels.extend(pmu.channel_names)
            meas_targets.append(
                (
                    f"I{pmu.from_bus}-{pmu.to_bus}",
                    int(pmu.assigned_bus),
                    (pmu.from_bus, pmu.to_bus),
                )
            )

    C = np.vstack(C_rows) if C_rows else np.zeros((0, n), dtype=bool)
    col_labels = []
    bus_of_col = []
    for b in net.bus_ids:
        col_labels.extend((f"bus{b}.re", f"bus{b}.im"))
        bus_of_col.extend((b, b))
    return StructuredPairGraph(
        E_pat=E,
        C_pat=C,
        col_labels=col_labels,
        meas_labels=meas_labels,
        bus_of_col=bus_of_col,
        unknown_buses=sorted(model.unknown),
        bus_edges=edges,
        meas_targets=meas_targets,
    )


def check_topological_estimability(
    graph: StructuredPairGraph, find_routes: bool = True
) -> EstimabilityCertificate:
    """Generic-rank decision by column-saturating bipartite matching.

    A matching that covers every column is rendered as loops plus
    measurement-terminated chains; when bus metadata is available the
    chains are additionally projected onto node-disjoint bus routes
    from each unknown injector to a PMU terminal.
    """
    n = graph.n_cols
    stacked = graph.stacked()
    if n == 0:
        return EstimabilityCertificate(True, 0, 0, [], [], [])
    bi = csr_matrix(stacked)
    match = maximum_bipartite_matching(bi, perm_type="row")
    # match[j] = row matched to column j, or -1

    unmatched = [graph.col_labels[j] for j in range(n) if match[j] < 0]
    if unmatched:
        return EstimabilityCertificate(
            estimable=False,
            n_cols=n,
            matched_cols=n - len(unmatched),
            loops=[],
            chains=[],
            unmatched=unmatched,
        )

    # matched row < n points back to a column vertex, otherwise to a sink
    next_col = np.full(n, -1, dtype=int)
    sink_of = {}
    indeg = np.zeros(n, dtype=int)
    for j in range(n):
        row = int(match[j])
        if row < n:
            next_col[j] = row
            indeg[row] += 1
        else:
            sink_of[j] = row - n
    loops: list[list[str]] = []
    chains: list[tuple[list[str], str]] = []
    seen = np.zeros(n, dtype=bool)
    for j in range(n):
        if indeg[j] == 0:
            path = []
            cur = j
            while True:
                path.append(cur)
                seen[cur] = True
                if cur in sink_of:
                    chains.append(
                        (
                            [graph.col_labels[p] for p in path],
                            graph.meas_labels[sink_of[cur]],
                        )
                    )
                    break
                cur = next_col[cur]
    for j in range(n):
        if not seen[j]:
            cyc = []
            cur = j
            while not seen[cur]:
                seen[cur] = True
                cyc.append(cur)
                cur = next_col[cur]
            loops.append([graph.col_labels[p] for p in cyc])

    routes = None
    note = None
    if find_routes and graph.bus_of_col is not None and graph.unknown_buses:
        routes, note = _disjoint_injector_routes(graph)
    return EstimabilityCertificate(
        estimable=True,
        n_cols=n,
        matched_cols=n,
        loops=loops,
        chains=chains,
        unmatched=[],
        injector_routes=routes,
        route_assignment_note=note,
    )


def _disjoint_injector_routes(graph: StructuredPairGraph):
    """Node-disjoint bus routes from injectors to PMU terminals.

    Tries the configured terminal assignment of every branch-current
    device first and falls back to searching the other assignment
    combinations.  Purely a reporting aid: the rank decision does not
    depend on terminal assignment.
    """
    sources = list(graph.unknown_buses)
    adjacency: dict[int, set[int]] = {}
    for edge in graph.bus_edges:
        a, b = tuple(edge)
        adjacency.setdefault(a, set()).add(b)
        adjacency.setdefault(b, set()).add(a)

    configured = [(label, (bus,)) for label, bus, _ in graph.meas_targets]
    alternates = [
        (label, candidates) for label, _, candidates in graph.meas_targets
    ]

    def attempt(target_choices: list[tuple[str, int]]):
        targets = {}
        for label, bus in target_choices:
            targets.setdefault(bus, label)
        return _route_search(sources, targets, adjacency, set(graph.unknown_buses))

    first = attempt([(label, buses[0]) for label, buses in configured])
    if first is not None:
        return first, None
    for combo in itertools.product(
        *[[(label, b) for b in buses] for label, buses in alternates]
    ):
        found = attempt(list(combo))
        if found is not None:
            return found, "routes required reassigning a branch PMU terminal"
    return None, "no node-disjoint route set exists for any terminal assignment"


def _route_search(sources, targets, adjacency, unknown_set):
    """Backtracking search for vertex-disjoint source-to-target paths."""
    routes: list[InjectorRoute] = []
    used: set[int] = set()

    def extend(source_idx: int) -> bool:
        if source_idx == len(sources):
            return True
        src = sources[source_idx]
        # depth-first over simple paths whose interior avoids used and
        # unknown buses (those have no balance equations to consume)
        stack = [(src, [src])]
        tried: set[tuple[int, ...]] = set()
        while stack:
            node, path = stack.pop()
            key = tuple(path)
            if key in tried:
                continue
            tried.add(key)
            if node in targets and node not in used and all(
                p not in used for p in path
            ):
                routes.append(
                    InjectorRoute(
                        injector_bus=src,
                        bus_path=path,
                        target_bus=node,
                        pmu_label=targets[node],
                    )
                )
                used.update(path)
                if extend(source_idx + 1):
                    return True
                used.difference_update(path)
                routes.pop()
            for nxt in sorted(adjacency.get(node, ())):
                if nxt in path or nxt in used:
                    continue
                if nxt in unknown_set and nxt != src:
                    continue
                stack.append((nxt, path + [nxt]))
        return False

    if extend(0):
        return routes
    return None


@dataclass
class NumericRankResult:
    full_rank: bool
    rank: int
    n_cols: int
    trials: int


def check_numeric_rank(
    graph: StructuredPairGraph,
    trials: int = 3,
    seed: int = 0,
    tol: float = 1e-8,
) -> NumericRankResult:
    """Randomized instantiation of the structural pattern.

    Every marked entry receives an independent value with magnitude
    uniform in [0.5, 1.5] and random sign; the rank is read off the
    singular values with a relative threshold.  Reports the best rank
    over the trials, which almost surely equals the generic rank.
    """
    pattern = graph.stacked()
    n = graph.n_cols
    if n == 0:
        return NumericRankResult(True, 0, 0, trials)
    rng = np.random.default_rng(seed)
    best = 0
    for _ in range(max(1, trials)):
        vals = np.zeros(pattern.shape)
        nz = np.nonzero(pattern)
        mags = rng.uniform(0.5, 1.5, size=nz[0].size)
        signs = rng.choice((-1.0, 1.0), size=nz[0].size)
        vals[nz] = mags * signs
        sv = np.linalg.svd(vals, compute_uv=False)
        if sv.size == 0:
            continue
        rank = int(np.sum(sv > tol * sv[0]))
        best = max(best, rank)
        if best == n:
            break
    return NumericRankResult(best == n, best, n, trials)
