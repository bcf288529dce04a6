"""Scenario configuration and the quasi-steady-state time loop."""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .faults import (
    FaultSpec,
    NetworkSolver,
    SeriesInjection,
    device_voltage_drop,
    prepare_fault,
    relay_point_quantities,
)
from .grid import GridModel, load_grid, shipped_grid_text
from .ipfc import (
    PRESET_MODES,
    IpfcConfig,
    IpfcSetpoints,
    LineMeasurement,
    dc_link_step,
    initial_state,
    master_step,
    preset_step,
    slave_step,
    vsc_terminal_power,
)
from .relay import (
    RelaySettings,
    RelayTrace,
    ReachVerdict,
    UnmeasurableLoop,
    apparent_impedance,
    classify_reach,
    injected_impedance,
    loop_quantities,
    zone1_check,
)

log = logging.getLogger(__name__)

IPFC_MODES = ("off", "closed_loop", *PRESET_MODES, "freeze_on_fault")

LOG_COLUMNS = (
    "t_s", "m1", "alpha1_deg", "m2", "alpha2_deg", "vdc_pu",
    "pse1_pu", "pse2_pu", "pnet1_pu", "qnet1_pu", "pnet2_pu",
)


class ScenarioError(ValueError):
    """Invalid scenario description (maps to exit code 2)."""


class SimulationError(ArithmeticError):
    """Numerical failure during a run (maps to exit code 3)."""

    def __init__(self, step: int, cause: str):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class Scenario:
    grid_file: str = "builtin:grid8"
    ipfc_mode: str = "off"
    fault: FaultSpec = field(default_factory=lambda: FaultSpec("three_phase", "5", 0.8, 0.0))
    t_fault: float = 3.0
    t_end: float = 3.5
    dt: float = 0.001
    ipfc: IpfcConfig = field(default_factory=IpfcConfig)
    relay_branch: str = "5"
    relay_end: str = "from"
    zone1_fraction: float = 0.8
    current_floor: float = 1e-6
    reach_tolerance: float = 0.02
    settle_window: float = 0.2
    freeze_on_fault: bool = False
    seed: int = 0
    name: str = "scenario"

    def __post_init__(self) -> None:
        if self.ipfc_mode not in IPFC_MODES:
            raise ScenarioError(f"ipfc_mode must be one of {IPFC_MODES}, got {self.ipfc_mode!r}")
        if not self.dt > 0:
            raise ScenarioError("dt must be positive")
        if not 0 < self.t_fault < self.t_end:
            raise ScenarioError("need 0 < t_fault < t_end")
        if self.dt > (self.t_end - self.t_fault) / 50 * (1 + 1e-12):
            raise ScenarioError("dt too coarse: need at least 50 post-fault samples")
        if self.relay_end not in ("from", "to"):
            raise ScenarioError("relay end must be 'from' or 'to'")

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.t_end / self.dt + 1e-9))

    @property
    def fault_step(self) -> int:
        return int(math.ceil(self.t_fault / self.dt - 1e-9))

    @property
    def freezes(self) -> bool:
        return self.freeze_on_fault or self.ipfc_mode == "freeze_on_fault"

    def without_ipfc_fields(self) -> dict:
        d = asdict(self)
        for k in ("ipfc_mode", "ipfc", "freeze_on_fault", "name"):
            d.pop(k)
        return d

    def canonical(self) -> str:
        return json.dumps(_jsonable(asdict(self)), sort_keys=True, separators=(",", ":"))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


@dataclass(frozen=True, eq=False)
class RunResult:
    scenario: Scenario
    trace: RelayTrace
    ipfc_log: np.ndarray  # (n_steps, len(LOG_COLUMNS))
    settings: RelaySettings
    z_injected: np.ndarray  # z - n*Z1 per sample
    z_device: np.ndarray  # converter loop drop over relaying current per sample
    provenance: dict
    verdict: ReachVerdict | None = None
    baseline: "RunResult | None" = None

    def column(self, name: str) -> np.ndarray:
        return self.ipfc_log[:, LOG_COLUMNS.index(name)]


def _grid_text(grid_file: str) -> str:
    if grid_file == "builtin:grid8":
        return shipped_grid_text()
    return Path(grid_file).read_text(encoding="utf-8")


def provenance(s: Scenario) -> dict:
    h = hashlib.sha256()
    h.update(s.canonical().encode())
    h.update(_grid_text(s.grid_file).encode())
    return {"config_sha256": h.hexdigest(), "tool_version": __version__, "seed": s.seed}


def _relay_sample(sol, s: Scenario, settings: RelaySettings, device: bool):
    v, i = relay_point_quantities(sol, s.relay_branch, s.relay_end)
    try:
        meas = apparent_impedance(v, i, settings, s.fault.kind)
    except UnmeasurableLoop:
        nan = complex(math.nan, math.nan)
        return nan, nan, nan, nan
    z_dev = 0j
    if device:
        vpq, _, _ = loop_quantities(
            device_voltage_drop(sol, s.relay_branch), i, settings, s.fault.kind
        )
        z_dev = vpq / meas.i_relay
    return meas.v_s, meas.i_relay, meas.z_apparent, z_dev


def run_scenario(s: Scenario, model: GridModel | None = None) -> RunResult:
    """Time-step the controller around the network solver and record the relay trace."""
    model = model if model is not None else load_grid(s.grid_file)
    cfg = s.ipfc
    on = s.ipfc_mode != "off"
    for b in (s.relay_branch, s.fault.branch_id, *((cfg.master_branch, cfg.slave_branch) if on else ())):
        if not model.has_branch(b):
            raise ScenarioError(f"unknown branch {b!r}")
    devices = {cfg.master_branch: cfg.series_x, cfg.slave_branch: cfg.series_x} if on else {}
    probe = [SeriesInjection(b, 0j) for b in devices]
    try:
        fmodel, fbus = prepare_fault(model, s.fault, probe)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    solver = NetworkSolver(fmodel, devices)
    settings = RelaySettings.for_branch(
        model, s.relay_branch, zone1_fraction=s.zone1_fraction,
        relay_end=s.relay_end, current_floor=s.current_floor,
    )

    state = initial_state(cfg)
    sp = cfg.setpoints
    if on:
        sol0 = solver.solve(probe)
        _, i1 = relay_point_quantities(sol0, cfg.master_branch, "from")
        _, i2 = relay_point_quantities(sol0, cfg.slave_branch, "from")
        state = replace(state, ref1=i1.pos / abs(i1.pos), ref2=i2.pos / abs(i2.pos))

    n, kf, dt = s.n_steps, s.fault_step, s.dt
    t = np.arange(n) * dt
    tv = np.empty(n, dtype=complex)
    ti = np.empty(n, dtype=complex)
    tz = np.empty(n, dtype=complex)
    logm = np.zeros((n, len(LOG_COLUMNS)))
    preset = s.ipfc_mode in PRESET_MODES
    if s.fault.branch_id == s.relay_branch:
        n_rel = s.fault.n if s.relay_end == "from" else 1.0 - s.fault.n
    else:
        n_rel = math.nan
    # converters sit at the from-end, so only a from-end relay has one in its loop
    device = on and s.relay_end == "from" and s.relay_branch in (cfg.master_branch, cfg.slave_branch)
    tzd = np.zeros(n, dtype=complex)

    for k in range(n):
        faulted = k >= kf
        inj = (
            [SeriesInjection(cfg.master_branch, state.v_inject1),
             SeriesInjection(cfg.slave_branch, state.v_inject2)]
            if on else []
        )
        sol = solver.solve(
            inj, fault=s.fault if faulted else None, fault_bus=fbus if faulted else None,
            timestamp=float(t[k]),
        )
        tv[k], ti[k], tz[k], tzd[k] = _relay_sample(sol, s, settings, device)

        v1, i1 = relay_point_quantities(sol, cfg.master_branch, "from")
        v2, i2 = relay_point_quantities(sol, cfg.slave_branch, "from")
        meas1 = LineMeasurement.at(v1.pos, i1.pos)
        meas2 = LineMeasurement.at(v2.pos, i2.pos)
        if on:
            pse1 = vsc_terminal_power(state.v_inject1, i1.pos)[0]
            pse2 = vsc_terminal_power(state.v_inject2, i2.pos)[0]
            state = replace(state, pse1=pse1, pse2=pse2)
        logm[k] = (
            t[k], state.m1, state.alpha1, state.m2, state.alpha2, state.vdc,
            state.pse1, state.pse2, meas1.p_net, meas1.q_net, meas2.p_net,
        )
        if not on or (faulted and s.freezes):
            if on:
                state = dc_link_step(state, dt)
        else:
            if preset:
                # slave idles so the relay sees the master injection alone
                state = preset_step(state, s.ipfc_mode, cfg.preset_magnitude, meas1)
            else:
                state = master_step(state, sp, meas1, dt)
                state = slave_step(state, sp, meas2, dt)
            state = dc_link_step(state, dt)
        if on and state.collapsed:
            raise SimulationError(k, f"DC-link voltage collapsed to the floor {state.vdc_floor} p.u.")
        if not np.all(np.isfinite(sol.v)):
            raise SimulationError(k, "non-finite network solution")

    in_zone = np.array([zone1_check(complex(z), settings) for z in tz])
    trace = RelayTrace(t=t, v=tv, i=ti, z=tz, in_zone1=in_zone, t_fault=s.t_fault)
    return RunResult(
        scenario=s, trace=trace, ipfc_log=logm, settings=settings,
        z_injected=injected_impedance(tz, n_rel, settings.line_z1), z_device=tzd,
        provenance=provenance(s),
    )


def check_pairable(baseline: Scenario, variant: Scenario) -> None:
    a, b = baseline.without_ipfc_fields(), variant.without_ipfc_fields()
    diff = sorted(k for k in a if a[k] != b[k])
    if diff:
        raise ScenarioError(f"paired scenarios differ outside the IPFC settings: {diff}")


def run_pair(baseline: Scenario, variant: Scenario, model: GridModel | None = None) -> RunResult:
    check_pairable(baseline, variant)
    model = model if model is not None else load_grid(baseline.grid_file)
    base = run_scenario(baseline, model)
    var = run_scenario(variant, model)
    verdict = classify_reach(
        base.trace, var.trace, var.settings,
        tolerance=variant.reach_tolerance, window=variant.settle_window,
    )
    return replace(var, verdict=verdict, baseline=base)


# ---------------------------------------------------------------------------
# scenario config files

def _get(cp, sec, key, conv, default):
    if sec not in cp or key not in cp[sec]:
        return default
    raw = cp[sec][key].strip()
    try:
        return conv(raw)
    except ValueError:
        raise ScenarioError(f"[{sec}] {key} = {raw!r} is invalid") from None


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def _pair(raw: str) -> tuple[float, float]:
    parts = [float(p) for p in raw.replace(",", " ").split()]
    if len(parts) != 2:
        raise ValueError(raw)
    return parts[0], parts[1]


KNOWN_KEYS = {
    "scenario": {"name", "grid_file", "ipfc_mode", "t_fault", "t_end", "dt", "seed", "freeze_on_fault"},
    "fault": {"kind", "branch", "n", "rf"},
    "ipfc": {
        "master_branch", "slave_branch", "p_ref1", "q_ref1", "p_ref2", "vdc_ref",
        "gains_p1", "gains_q1", "gains_vdc", "gains_p2", "m_max", "c_dc", "vdc_floor",
        "series_x", "preset_magnitude",
    },
    "relay": {"branch", "end", "zone1_fraction", "current_floor", "tolerance", "window"},
}


def parse_scenario(text: str, base_dir: Path | None = None) -> Scenario:
    """Parse an INI-style scenario description; missing keys take the defaults."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(f"malformed scenario config: {exc}") from None
    for sec in cp.sections():
        if sec not in KNOWN_KEYS:
            raise ScenarioError(f"unknown section [{sec}]")
        extra = set(cp[sec]) - KNOWN_KEYS[sec]
        if extra:
            raise ScenarioError(f"[{sec}] unknown keys {sorted(extra)}")

    d = Scenario()
    dc = d.ipfc
    grid = _get(cp, "scenario", "grid_file", str, d.grid_file)
    if grid != "builtin:grid8" and base_dir is not None and not Path(grid).is_absolute():
        grid = str((base_dir / grid).resolve())
    try:
        fault = FaultSpec(
            kind=_get(cp, "fault", "kind", str, d.fault.kind),
            branch_id=_get(cp, "fault", "branch", str, d.fault.branch_id),
            n=_get(cp, "fault", "n", float, d.fault.n),
            rf=_get(cp, "fault", "rf", float, d.fault.rf),
        )
        sp = IpfcSetpoints(
            p_ref1=_get(cp, "ipfc", "p_ref1", float, dc.setpoints.p_ref1),
            q_ref1=_get(cp, "ipfc", "q_ref1", float, dc.setpoints.q_ref1),
            p_ref2=_get(cp, "ipfc", "p_ref2", float, dc.setpoints.p_ref2),
            vdc_ref=_get(cp, "ipfc", "vdc_ref", float, dc.setpoints.vdc_ref),
        )
        ipfc = IpfcConfig(
            master_branch=_get(cp, "ipfc", "master_branch", str, dc.master_branch),
            slave_branch=_get(cp, "ipfc", "slave_branch", str, dc.slave_branch),
            gains_p1=_get(cp, "ipfc", "gains_p1", _pair, dc.gains_p1),
            gains_q1=_get(cp, "ipfc", "gains_q1", _pair, dc.gains_q1),
            gains_vdc=_get(cp, "ipfc", "gains_vdc", _pair, dc.gains_vdc),
            gains_p2=_get(cp, "ipfc", "gains_p2", _pair, dc.gains_p2),
            m_max=_get(cp, "ipfc", "m_max", float, dc.m_max),
            c_dc=_get(cp, "ipfc", "c_dc", float, dc.c_dc),
            vdc_floor=_get(cp, "ipfc", "vdc_floor", float, dc.vdc_floor),
            series_x=_get(cp, "ipfc", "series_x", float, dc.series_x),
            preset_magnitude=_get(cp, "ipfc", "preset_magnitude", float, dc.preset_magnitude),
            setpoints=sp,
        )
        return Scenario(
            name=_get(cp, "scenario", "name", str, d.name),
            grid_file=grid,
            ipfc_mode=_get(cp, "scenario", "ipfc_mode", str, d.ipfc_mode),
            fault=fault,
            t_fault=_get(cp, "scenario", "t_fault", float, d.t_fault),
            t_end=_get(cp, "scenario", "t_end", float, d.t_end),
            dt=_get(cp, "scenario", "dt", float, d.dt),
            seed=_get(cp, "scenario", "seed", int, d.seed),
            freeze_on_fault=_get(cp, "scenario", "freeze_on_fault", _bool, d.freeze_on_fault),
            ipfc=ipfc,
            relay_branch=_get(cp, "relay", "branch", str, d.relay_branch),
            relay_end=_get(cp, "relay", "end", str, d.relay_end),
            zone1_fraction=_get(cp, "relay", "zone1_fraction", float, d.zone1_fraction),
            current_floor=_get(cp, "relay", "current_floor", float, d.current_floor),
            reach_tolerance=_get(cp, "relay", "tolerance", float, d.reach_tolerance),
            settle_window=_get(cp, "relay", "window", float, d.settle_window),
        )
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(encoding="utf-8"), base_dir=path.parent)


def scenario_to_text(s: Scenario) -> str:
    """Inverse of :func:`parse_scenario` (round-trips every field)."""
    c = s.ipfc
    sp = c.setpoints
    g = lambda pair: f"{pair[0]!r} {pair[1]!r}"  # noqa: E731
    return "\n".join([
        "[scenario]",
        f"name = {s.name}",
        f"grid_file = {s.grid_file}",
        f"ipfc_mode = {s.ipfc_mode}",
        f"t_fault = {s.t_fault!r}",
        f"t_end = {s.t_end!r}",
        f"dt = {s.dt!r}",
        f"seed = {s.seed}",
        f"freeze_on_fault = {str(s.freeze_on_fault).lower()}",
        "",
        "[fault]",
        f"kind = {s.fault.kind}",
        f"branch = {s.fault.branch_id}",
        f"n = {s.fault.n!r}",
        f"rf = {s.fault.rf!r}",
        "",
        "[ipfc]",
        f"master_branch = {c.master_branch}",
        f"slave_branch = {c.slave_branch}",
        f"p_ref1 = {sp.p_ref1!r}",
        f"q_ref1 = {sp.q_ref1!r}",
        f"p_ref2 = {sp.p_ref2!r}",
        f"vdc_ref = {sp.vdc_ref!r}",
        f"gains_p1 = {g(c.gains_p1)}",
        f"gains_q1 = {g(c.gains_q1)}",
        f"gains_vdc = {g(c.gains_vdc)}",
        f"gains_p2 = {g(c.gains_p2)}",
        f"m_max = {c.m_max!r}",
        f"c_dc = {c.c_dc!r}",
        f"vdc_floor = {c.vdc_floor!r}",
        f"series_x = {c.series_x!r}",
        f"preset_magnitude = {c.preset_magnitude!r}",
        "",
        "[relay]",
        f"branch = {s.relay_branch}",
        f"end = {s.relay_end}",
        f"zone1_fraction = {s.zone1_fraction!r}",
        f"current_floor = {s.current_floor!r}",
        f"tolerance = {s.reach_tolerance!r}",
        f"window = {s.settle_window!r}",
        "",
    ])


def with_field(s: Scenario, dotted: str, value) -> Scenario:
    """Copy of ``s`` with one field replaced; ``dotted`` uses config names like ``fault.n``."""
    sec, _, key = dotted.partition(".")
    text = scenario_to_text(s)
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    if sec not in KNOWN_KEYS or key not in KNOWN_KEYS[sec]:
        raise ScenarioError(f"unknown field {dotted!r}")
    cp[sec][key] = str(value)
    out = []
    for name in cp.sections():
        out.append(f"[{name}]")
        out.extend(f"{k} = {v}" for k, v in cp[name].items())
        out.append("")
    return parse_scenario("\n".join(out))

