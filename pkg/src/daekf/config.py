"""Plain-text case file parsing.

A case file is a line-oriented description of the full system, the
estimation area, the instrumentation and the disturbance scenario.  See
docs/case_format.md for the schema.  Files may pull in shared blocks
with an `include <relative path>` directive.  All parse failures raise
ConfigError with the file and line number of the offending field.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .machines import MachineParams
from .network import Branch, Bus
from .psmodel import CurrentPmu, NoiseModel, PmuSpec, VoltagePmu
from .simulator import ClearEvent, Event, FaultEvent, LoadStepEvent, Scenario

_SECTIONS = {
    "system", "buses", "branches", "machines", "exciters", "governors",
    "loads", "dispatch", "area", "unknown", "pmus", "estimation", "scenario",
}


class ConfigError(ValueError):
    def __init__(self, path: str, line: int, message: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


@dataclass
class ExciterRecord:
    bus: int
    KA: float
    TA: float
    KE: float
    TE: float
    KF: float
    TF: float
    vr_min: float
    vr_max: float


@dataclass
class GovernorRecord:
    bus: int
    droop: float
    T1: float
    T2: float
    T3: float
    Dt: float
    gate_min: float
    gate_max: float


@dataclass
class DispatchRecord:
    bus: int
    p_mw: float | None     # None marks the slack unit
    v_set: float


@dataclass
class EstimationSettings:
    """Estimator tuning knobs exposed through the case file."""

    process_noise: float = 1e-8
    process_noise_speed: float = 1e-10
    algebraic_noise: float = 1e-8
    measurement_std: float = 1e-3
    init_cov_diff: float = 1e-4
    init_cov_speed: float = 1e-6
    init_cov_alg: float = 0.04
    epsilon: float = 1e-4
    max_iterations: int = 10
    mse_window_start: float = 7.5

    def noise_model(self, pmu_period: float) -> NoiseModel:
        return NoiseModel(
            qd=self.process_noise,
            qd_speed=self.process_noise_speed,
            qa=self.algebraic_noise,
            r_std=self.measurement_std,
            reference_h=pmu_period,
        )


@dataclass
class CaseConfig:
    """Everything a run needs, straight from the text description."""

    base_mva: float = 100.0
    frequency_hz: float = 60.0
    buses: list[Bus] = field(default_factory=list)
    branches: list[Branch] = field(default_factory=list)
    machines: list[MachineParams] = field(default_factory=list)
    loads_mw: dict[int, complex] = field(default_factory=dict)
    dispatch: list[DispatchRecord] = field(default_factory=list)
    area_buses: list[int] = field(default_factory=list)
    unknown_buses: list[int] = field(default_factory=list)
    pmus: list[PmuSpec] = field(default_factory=list)
    estimation: EstimationSettings = field(default_factory=EstimationSettings)
    scenario: Scenario | None = None

    @property
    def omega_s(self) -> float:
        return 2.0 * 3.141592653589793 * self.frequency_hz


def _floats(parts, n_min, n_max, path, line, what):
    if not (n_min <= len(parts) <= n_max):
        raise ConfigError(
            path, line,
            f"{what}: expected {n_min}"
            + (f" to {n_max}" if n_max != n_min else "")
            + f" fields, got {len(parts)}",
        )
    out = []
    for i, p in enumerate(parts):
        try:
            out.append(float(p))
        except ValueError:
            raise ConfigError(path, line, f"{what}: field {i + 1} ({p!r}) is not a number")
    return out


def _int(token, path, line, what):
    try:
        return int(token)
    except ValueError:
        raise ConfigError(path, line, f"{what}: {token!r} is not an integer")


def _read_lines(path: Path, seen: set[Path]):
    """Physical lines with include expansion, tagged by origin."""
    path = path.resolve()
    if path in seen:
        raise ConfigError(str(path), 0, "circular include")
    seen = seen | {path}
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), 0, f"cannot read file: {exc}")
    out = []
    for no, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if stripped.startswith("include"):
            target = stripped[len("include"):].strip()
            if not target:
                raise ConfigError(str(path), no, "include needs a path")
            out.extend(_read_lines(path.parent / target, seen))
        else:
            out.append((str(path), no, stripped))
    return out


def parse_case(path: str | Path) -> CaseConfig:
    """Parse a case file (plus includes) into a CaseConfig."""
    lines = _read_lines(Path(path), set())
    cfg = CaseConfig()
    exciters: dict[int, ExciterRecord] = {}
    governors: dict[int, GovernorRecord] = {}
    machine_rows: list[tuple[str, int, list]] = []
    scenario_kv: dict[str, float] = {}
    events: list[Event] = []
    section = None

    for fpath, no, text in lines:
        if not text:
            continue
        if text.startswith("[") and text.endswith("]"):
            section = text[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise ConfigError(fpath, no, f"unknown section [{section}]")
            continue
        if section is None:
            raise ConfigError(fpath, no, f"content before any section: {text!r}")

        if section == "system":
            key, val = _keyval(text, fpath, no)
            if key == "base_mva":
                cfg.base_mva = _num(val, fpath, no, key)
            elif key == "frequency_hz":
                cfg.frequency_hz = _num(val, fpath, no, key)
            else:
                raise ConfigError(fpath, no, f"unknown system key {key!r}")

        elif section == "buses":
            parts = text.split()
            bus = _int(parts[0], fpath, no, "bus id")
            vals = _floats(parts[1:], 0, 2, fpath, no, f"bus {bus} shunt")
            g = vals[0] if len(vals) > 0 else 0.0
            b = vals[1] if len(vals) > 1 else 0.0
            cfg.buses.append(Bus(bus_id=bus, g_shunt=g, b_shunt=b))

        elif section == "branches":
            parts = text.split()
            if len(parts) < 4:
                raise ConfigError(fpath, no, "branch needs: from to r x [b] [tap]")
            f = _int(parts[0], fpath, no, "branch from bus")
            t = _int(parts[1], fpath, no, "branch to bus")
            vals = _floats(parts[2:], 2, 4, fpath, no, f"branch {f}-{t}")
            r, x = vals[0], vals[1]
            b = vals[2] if len(vals) > 2 else 0.0
            tap = vals[3] if len(vals) > 3 else 1.0
            try:
                cfg.branches.append(Branch(f, t, r, x, b, tap))
            except ValueError as exc:
                raise ConfigError(fpath, no, str(exc))

        elif section == "machines":
            parts = text.split()
            bus = _int(parts[0], fpath, no, "machine bus")
            vals = _floats(parts[1:], 9, 10, fpath, no, f"machine at bus {bus}")
            machine_rows.append((fpath, no, [bus] + vals))

        elif section == "exciters":
            parts = text.split()
            bus = _int(parts[0], fpath, no, "exciter bus")
            vals = _floats(parts[1:], 8, 8, fpath, no, f"exciter at bus {bus}")
            exciters[bus] = ExciterRecord(bus, *vals)

        elif section == "governors":
            parts = text.split()
            bus = _int(parts[0], fpath, no, "governor bus")
            vals = _floats(parts[1:], 7, 7, fpath, no, f"governor at bus {bus}")
            governors[bus] = GovernorRecord(bus, *vals)

        elif section == "loads":
            parts = text.split()
            bus = _int(parts[0], fpath, no, "load bus")
            vals = _floats(parts[1:], 2, 2, fpath, no, f"load at bus {bus}")
            cfg.loads_mw[bus] = complex(vals[0], vals[1])

        elif section == "dispatch":
            parts = text.split()
            if len(parts) != 3:
                raise ConfigError(fpath, no, "dispatch needs: bus P_mw|slack v_set")
            bus = _int(parts[0], fpath, no, "dispatch bus")
            p = None if parts[1].lower() == "slack" else _num(
                parts[1], fpath, no, "dispatch P"
            )
            v = _num(parts[2], fpath, no, "dispatch v_set")
            cfg.dispatch.append(DispatchRecord(bus, p, v))

        elif section in ("area", "unknown"):
            key, val = _keyval(text, fpath, no)
            if key != "buses":
                raise ConfigError(fpath, no, f"unknown {section} key {key!r}")
            ids = [_int(tok, fpath, no, f"{section} bus") for tok in val.split()]
            if section == "area":
                cfg.area_buses = ids
            else:
                cfg.unknown_buses = ids

        elif section == "pmus":
            parts = text.split()
            kind = parts[0].lower()
            if kind == "voltage":
                if len(parts) != 2:
                    raise ConfigError(fpath, no, "voltage PMU needs: voltage BUS")
                cfg.pmus.append(VoltagePmu(_int(parts[1], fpath, no, "PMU bus")))
            elif kind == "current":
                if len(parts) < 3:
                    raise ConfigError(
                        fpath, no, "current PMU needs: current FROM TO [end=..] [assign=..]"
                    )
                f = _int(parts[1], fpath, no, "PMU from bus")
                t = _int(parts[2], fpath, no, "PMU to bus")
                end, assign = "from", None
                for opt in parts[3:]:
                    if opt.startswith("end="):
                        end = opt[4:]
                    elif opt.startswith("assign="):
                        assign = _int(opt[7:], fpath, no, "PMU assignment")
                    else:
                        raise ConfigError(fpath, no, f"unknown PMU option {opt!r}")
                try:
                    cfg.pmus.append(CurrentPmu(f, t, end=end, assigned_bus=assign))
                except ValueError as exc:
                    raise ConfigError(fpath, no, str(exc))
            else:
                raise ConfigError(fpath, no, f"unknown PMU kind {kind!r}")

        elif section == "estimation":
            key, val = _keyval(text, fpath, no)
            est = cfg.estimation
            if key == "max_iterations":
                est.max_iterations = _int(val, fpath, no, key)
            elif hasattr(est, key):
                setattr(est, key, _num(val, fpath, no, key))
            else:
                raise ConfigError(fpath, no, f"unknown estimation key {key!r}")

        elif section == "scenario":
            key, val = _keyval(text, fpath, no)
            if key == "event":
                events.append(_parse_event(val, fpath, no))
            elif key == "truth_model":
                scenario_kv[key] = val.lower()
            elif key in (
                "duration", "step", "pmu_period", "noise_std", "power_fraction"
            ):
                scenario_kv[key] = _num(val, fpath, no, key)
            else:
                raise ConfigError(fpath, no, f"unknown scenario key {key!r}")

    _assemble_machines(cfg, machine_rows, exciters, governors)
    if scenario_kv or events:
        if "duration" not in scenario_kv:
            raise ConfigError(str(path), 0, "scenario section lacks duration")
        try:
            cfg.scenario = Scenario(events=events, **scenario_kv)
        except ValueError as exc:
            raise ConfigError(str(path), 0, f"scenario: {exc}")
    _cross_validate(cfg, str(path))
    return cfg


def _keyval(text, path, no):
    if "=" not in text:
        raise ConfigError(path, no, f"expected key = value, got {text!r}")
    key, val = text.split("=", 1)
    return key.strip().lower(), val.strip()


def _num(token, path, no, what):
    try:
        return float(token)
    except ValueError:
        raise ConfigError(path, no, f"{what}: {token!r} is not a number")


def _parse_event(val, path, no):
    parts = val.split()
    kind = parts[0].lower() if parts else ""
    try:
        if kind == "fault":
            t = float(parts[1]); f = int(parts[2]); b = int(parts[3])
            frac = float(parts[4]) if len(parts) > 4 else 0.5
            if len(parts) > 5:
                # optional fault severity: shunt susceptance magnitude in pu
                return FaultEvent(time=t, from_bus=f, to_bus=b, fraction=frac,
                                  admittance=-1j * float(parts[5]))
            return FaultEvent(time=t, from_bus=f, to_bus=b, fraction=frac)
        if kind == "clear":
            return ClearEvent(time=float(parts[1]), from_bus=int(parts[2]), to_bus=int(parts[3]))
        if kind == "load_step":
            return LoadStepEvent(time=float(parts[1]), bus=int(parts[2]), delta=float(parts[3]))
    except (IndexError, ValueError):
        raise ConfigError(path, no, f"malformed event {val!r}")
    raise ConfigError(path, no, f"unknown event kind {kind!r}")


def _assemble_machines(cfg, machine_rows, exciters, governors):
    for fpath, no, row in machine_rows:
        bus = row[0]
        rating, H, D, xd, xq, xdp, xqp, td0p, tq0p = row[1:10]
        rs = row[10] if len(row) > 10 else 0.0
        kwargs = dict(
            bus_id=bus, rating_mva=rating, H=H, D=D,
            xd=xd, xq=xq, xdp=xdp, xqp=xqp, Td0p=td0p, Tq0p=tq0p, Rs=rs,
        )
        if bus not in exciters:
            raise ConfigError(fpath, no, f"machine at bus {bus} has no exciter record")
        if bus not in governors:
            raise ConfigError(fpath, no, f"machine at bus {bus} has no governor record")
        e, g = exciters[bus], governors[bus]
        kwargs.update(
            KA=e.KA, TA=e.TA, KE=e.KE, TE=e.TE, KF=e.KF, TF=e.TF,
            vr_min=e.vr_min, vr_max=e.vr_max,
            droop=g.droop, T1=g.T1, T2=g.T2, T3=g.T3, Dt=g.Dt,
            gate_min=g.gate_min, gate_max=g.gate_max,
        )
        m = MachineParams(**kwargs)
        try:
            m.validate()
        except ValueError as exc:
            raise ConfigError(fpath, no, str(exc))
        cfg.machines.append(m)


def _cross_validate(cfg: CaseConfig, path: str):
    bus_ids = {b.bus_id for b in cfg.buses}
    def need(bus, what):
        if bus not in bus_ids:
            raise ConfigError(path, 0, f"{what} references undefined bus {bus}")
    for br in cfg.branches:
        need(br.from_bus, f"branch {br.from_bus}-{br.to_bus}")
        need(br.to_bus, f"branch {br.from_bus}-{br.to_bus}")
    for m in cfg.machines:
        need(m.bus_id, "machine")
    for bus in cfg.loads_mw:
        need(bus, "load")
    for d in cfg.dispatch:
        need(d.bus, "dispatch")
    for bus in cfg.area_buses:
        need(bus, "area list")
    machine_buses = {m.bus_id for m in cfg.machines}
    area = set(cfg.area_buses)
    for bus in cfg.unknown_buses:
        need(bus, "unknown-injector list")
        if area and bus not in area:
            raise ConfigError(path, 0, f"unknown-injector bus {bus} is outside the area")
    if area:
        unknown = set(cfg.unknown_buses)
        for bus in sorted(area):
            if bus in unknown or bus in machine_buses:
                continue
            if bus in cfg.loads_mw and abs(cfg.loads_mw[bus]) > 1e-9:
                raise ConfigError(
                    path, 0,
                    f"area bus {bus} carries a load but is neither a machine bus "
                    "nor listed as an unknown injector; the estimator would "
                    "assume zero injection there",
                )
    if cfg.dispatch:
        slacks = [d for d in cfg.dispatch if d.p_mw is None]
        if len(slacks) != 1:
            raise ConfigError(path, 0, f"need exactly one slack unit, found {len(slacks)}")
        dispatch_buses = {d.bus for d in cfg.dispatch}
        if dispatch_buses != machine_buses:
            raise ConfigError(
                path, 0,
                "dispatch buses must match machine buses "
                f"(dispatch only: {sorted(dispatch_buses - machine_buses)}, "
                f"machines only: {sorted(machine_buses - dispatch_buses)})",
            )
