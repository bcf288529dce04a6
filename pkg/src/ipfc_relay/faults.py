"""Prefault and faulted phasor solutions in the sequence frame.

The three sequence networks are solved as bus-sized nodal systems.  A fault
at a bus is applied by superposition: the prefault solution (which already
contains the series converter injections) is corrected by the fault currents
obtained from the Thevenin impedances at the fault bus and the usual
sequence-network interconnection for each fault kind.

Series converter voltages are balanced positive-sequence sources in series
with the from-end of a branch, stamped as a Norton current pair through that
branch's series admittance.  ``v_inject`` is the voltage *rise* from the bus
into the line, so the power the converter delivers to the line is
``v_inject * conj(i_line)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .grid import (
    GridModel,
    build_sequence_admittance,
    series_admittances,
    snap_fraction,
    split_branch,
)
from .phasor import SequenceSet, ThreePhaseSet, seq_012_to_abc

FAULT_KINDS = ("three_phase", "single_line_ground", "line_line", "double_line_ground")


@dataclass(frozen=True)
class FaultSpec:
    kind: str
    branch_id: str
    n: float
    rf: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"unsupported fault kind {self.kind!r}; expected one of {FAULT_KINDS}")
        if not 0.0 <= self.n <= 1.0:
            raise ValueError(f"fault distance n must lie in [0, 1], got {self.n}")
        if not self.rf >= 0.0:
            raise ValueError(f"fault resistance must be >= 0, got {self.rf}")


@dataclass(frozen=True)
class SeriesInjection:
    branch_id: str
    v_inject: complex  # positive sequence only


@dataclass(frozen=True, eq=False)
class NetworkSolution:
    model: GridModel
    v: np.ndarray  # (nbus, 3), columns pos/neg/zero
    branch_currents: Mapping[str, np.ndarray]  # id -> (2, 3): from-end, to-end, into the element
    injections: Mapping[str, complex]  # resolved segment id -> v_inject
    devices: Mapping[str, float] = field(default_factory=dict)
    fault: FaultSpec | None = None
    fault_bus: str | None = None
    fault_current: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=complex))
    timestamp: float = 0.0

    def bus_voltage(self, bus: str) -> SequenceSet:
        return SequenceSet(*self.v[self.model.bus_index[bus]])

    def phase_voltages(self, bus: str) -> ThreePhaseSet:
        return seq_012_to_abc(self.bus_voltage(bus))

    def branch_current(self, branch_id: str, end: str = "from") -> SequenceSet:
        """Sequence current at ``end`` of a branch, flowing into the branch."""
        seg = branch_id if branch_id in self.branch_currents else self.model.segment(branch_id, end)
        row = 0 if end == "from" else 1
        return SequenceSet(*self.branch_currents[seg][row])

    @property
    def fault_currents(self) -> SequenceSet:
        return SequenceSet(*self.fault_current)


class NetworkSolver:
    """Factorised sequence networks for one topology.

    ``devices`` maps branch ids that host a series converter to the coupling
    transformer leakage reactance in series with that branch.
    """

    def __init__(self, model: GridModel, devices: Mapping[str, float] | None = None):
        self.model = model
        self.devices = {model.segment(b, "from"): x for b, x in (devices or {}).items()}
        adm = build_sequence_admittance(model, self.devices)
        self._lu1 = lu_factor(adm.y_pos)
        self._lu0 = lu_factor(adm.y_zero)
        idx = model.bus_index
        self._idx = idx
        self._elements = [
            (eid, idx[f], idx[t], y1, y0) for eid, f, t, y1, y0 in series_admittances(model, self.devices)
        ]
        self._y1 = {eid: y1 for eid, _, _, y1, _ in self._elements}
        self._ends = {eid: (i, j) for eid, i, j, _, _ in self._elements}
        self._j_src = np.zeros(len(model.buses), dtype=complex)
        for s in model.sources:
            self._j_src[idx[s.bus]] += s.emf / (1j * s.x_internal)
        self._thevenin: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _zcols(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        if k not in self._thevenin:
            e = np.zeros(len(self.model.buses), dtype=complex)
            e[k] = 1.0
            self._thevenin[k] = (lu_solve(self._lu1, e), lu_solve(self._lu0, e))
        return self._thevenin[k]

    def resolve(self, injections: Iterable[SeriesInjection]) -> dict[str, complex]:
        out: dict[str, complex] = {}
        for inj in injections:
            try:
                seg = self.model.segment(inj.branch_id, "from")
            except KeyError:
                raise KeyError(f"injection on unknown branch {inj.branch_id!r}") from None
            out[seg] = out.get(seg, 0j) + complex(inj.v_inject)
        return out

    def solve(
        self,
        injections: Iterable[SeriesInjection] = (),
        fault: FaultSpec | None = None,
        fault_bus: str | None = None,
        timestamp: float = 0.0,
    ) -> NetworkSolution:
        inj = self.resolve(injections)
        j1 = self._j_src.copy()
        for seg, v in inj.items():
            i, j = self._ends[seg]
            jn = self._y1[seg] * v
            j1[i] -= jn
            j1[j] += jn
        nb = len(self.model.buses)
        v = np.zeros((nb, 3), dtype=complex)
        v[:, 0] = lu_solve(self._lu1, j1)
        i_f = np.zeros(3, dtype=complex)
        if fault is not None:
            if fault_bus is None:
                raise ValueError("fault_bus is required with a fault")
            k = self._idx[fault_bus]
            z1col, z0col = self._zcols(k)
            i_f = fault_sequence_currents(fault.kind, v[k, 0], z1col[k], z1col[k], z0col[k], fault.rf)
            v[:, 0] -= z1col * i_f[0]
            v[:, 1] = -z1col * i_f[1]
            v[:, 2] = -z0col * i_f[2]
        currents = {}
        for eid, i, j, y1, y0 in self._elements:
            dv = v[i] - v[j]
            cur = np.array([y1 * dv[0], y1 * dv[1], y0 * dv[2]])
            if eid in inj:
                cur[0] += y1 * inj[eid]
            currents[eid] = np.stack([cur, -cur])
        return NetworkSolution(
            model=self.model, v=v, branch_currents=currents, injections=inj,
            devices=self.devices, fault=fault, fault_bus=fault_bus,
            fault_current=i_f, timestamp=timestamp,
        )


def fault_sequence_currents(
    kind: str, vf: complex, z1: complex, z2: complex, z0: complex, rf: float
) -> np.ndarray:
    """Sequence currents (pos, neg, zero) flowing from the network into the fault.

    Phase a is the reference: the SLG fault involves phase a, the LL and LLG
    faults involve phases b and c.
    """
    if kind == "three_phase":
        i1 = vf / (z1 + rf)
        return np.array([i1, 0j, 0j])
    if kind == "single_line_ground":
        i0 = vf / (z1 + z2 + z0 + 3.0 * rf)
        return np.array([i0, i0, i0])
    if kind == "line_line":
        i1 = vf / (z1 + z2 + rf)
        return np.array([i1, -i1, 0j])
    if kind == "double_line_ground":
        zg = z0 + 3.0 * rf
        i1 = vf / (z1 + z2 * zg / (z2 + zg))
        return np.array([i1, -i1 * zg / (z2 + zg), -i1 * z2 / (z2 + zg)])
    raise ValueError(f"unsupported fault kind {kind!r}")


def solve_prefault(
    model: GridModel,
    injections: Iterable[SeriesInjection] = (),
    devices: Mapping[str, float] | None = None,
) -> NetworkSolution:
    """Balanced prefault solution; negative and zero sequence are identically zero."""
    return NetworkSolver(model, devices).solve(injections)


def prepare_fault(
    model: GridModel,
    fault: FaultSpec,
    injections: Iterable[SeriesInjection] = (),
) -> tuple[GridModel, str]:
    """Split the faulted branch and return ``(split_model, fault_bus)``."""
    injections = list(injections)
    if snap_fraction(fault.n) == 0.0 and any(i.branch_id == fault.branch_id for i in injections):
        raise ValueError(
            "a fault at n=0 sits on the converter terminal of the same branch; "
            "use a small positive n instead"
        )
    return split_branch(model, fault.branch_id, fault.n)


def apply_fault(
    model: GridModel,
    fault: FaultSpec,
    injections: Iterable[SeriesInjection] = (),
    devices: Mapping[str, float] | None = None,
) -> NetworkSolution:
    injections = list(injections)
    split, fbus = prepare_fault(model, fault, injections)
    return NetworkSolver(split, devices).solve(injections, fault=fault, fault_bus=fbus)


def relay_point_quantities(
    sol: NetworkSolution, relay_branch: str, relay_end: str = "from"
) -> tuple[SequenceSet, SequenceSet]:
    """Bus voltage and line current (into the protected line) at a relay terminal."""
    seg = sol.model.segment(relay_branch, relay_end)
    br = sol.model.branch(seg)
    bus = br.from_bus if relay_end == "from" else br.to_bus
    return sol.bus_voltage(bus), sol.branch_current(seg, relay_end)


def device_voltage_drop(sol: NetworkSolution, branch_id: str) -> SequenceSet:
    """Sequence voltage from the bus to the line side of a series converter.

    This is the relay-loop term that the converter adds in series with the
    line: minus the injected rise, plus the leakage drop if modelled.
    """
    seg = sol.model.segment(branch_id, "from")
    v = sol.injections.get(seg, 0j)
    x = sol.devices.get(seg, 0.0)
    i = sol.branch_current(seg, "from")
    return SequenceSet(-v + 1j * x * i.pos, 1j * x * i.neg, 1j * x * i.zero)


def relay_segment_residuals(
    sol: NetworkSolution, line_z1: complex, line_z0: complex
) -> dict[str, np.ndarray]:
    """Voltage-balance residuals along the relay-to-fault segment of the faulted line.

    ``"segment"``: per-sequence ``V_s - (V_pq + n Z I_s + V_F)`` with ``V_F``
    the solved fault-point sequence voltage; valid for every fault kind.
    ``"rf_form"``: the same balance with ``V_F`` replaced by ``rf * I_f``
    per sequence, which only holds for the balanced fault.
    ``"phase_a"``: the phase-a balance
    ``V_a - (n Z1 I_a + n (Z0 - Z1) I_0 + V_pq,a + rf I_fa)``; holds for the
    balanced and phase-a-to-ground faults.
    """
    if sol.fault is None or sol.fault_bus is None:
        raise ValueError("solution has no fault")
    f = sol.fault
    vs, is_ = relay_point_quantities(sol, f.branch_id, "from")
    vpq = np.array(device_voltage_drop(sol, f.branch_id))
    vs_a, is_a = np.array(vs), np.array(is_)
    z = np.array([line_z1, line_z1, line_z0])
    vf = np.array(sol.bus_voltage(sol.fault_bus))
    seg = vs_a - (vpq + f.n * z * is_a + vf)
    rf_form = vs_a - (vpq + f.n * z * is_a + f.rf * sol.fault_current)
    phase_a = vs_a.sum() - (
        f.n * line_z1 * is_a.sum()
        + f.n * (line_z0 - line_z1) * is_a[2]
        + vpq.sum()
        + f.rf * sol.fault_current.sum()
    )
    return {"segment": seg, "rf_form": rf_form, "phase_a": np.array([phase_a])}


def kcl_mismatch(sol: NetworkSolution) -> float:
    """Largest sequence current mismatch over buses without a source."""
    m = sol.model
    idx = m.bus_index
    acc = np.zeros((len(m.buses), 3), dtype=complex)
    for eid, cur in sol.branch_currents.items():
        try:
            e = m.branch(eid)
        except KeyError:
            e = next(t for t in m.transformers if t.id == eid)
        acc[idx[e.from_bus]] += cur[0]
        acc[idx[e.to_bus]] += cur[1]
    for ld in m.loads:
        k = idx[ld.bus]
        acc[k, :2] += ld.admittance * sol.v[k, :2]
    for t in m.transformers:
        if t.zero_sequence_path == "grounded_through":
            k = idx[t.to_bus]
            acc[k, 2] += sol.v[k, 2] / (1j * t.x_leakage)
    if sol.fault_bus is not None:
        acc[idx[sol.fault_bus]] += sol.fault_current
    src = {s.bus for s in m.sources}
    rows = [k for b, k in idx.items() if b not in src]
    return float(np.abs(acc[rows]).max()) if rows else 0.0


def source_currents(sol: NetworkSolution) -> dict[str, complex]:
    """Positive-sequence current delivered by each source into its bus."""
    return {
        s.id: (s.emf - sol.v[sol.model.bus_index[s.bus], 0]) / (1j * s.x_internal)
        for s in sol.model.sources
    }
