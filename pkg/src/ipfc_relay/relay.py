"""Distance relay measurement, Zone-1 impedance circle and reach classification."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .phasor import SequenceSet, seq_012_to_abc

REACH_CLASSES = ("nominal", "over_reach_tendency", "under_reach_tendency")

# Tie-break guard so that z == zone1_fraction * Z1 stays inside despite rounding.
_BOUNDARY_RTOL = 1e-12


class UnmeasurableLoop(ValueError):
    """Relay current below the measuring floor."""


@dataclass(frozen=True)
class RelaySettings:
    protected_branch: str
    line_z1: complex
    line_z0: complex
    zone1_fraction: float = 0.8
    characteristic: str = "impedance_circle"
    relay_end: str = "from"
    current_floor: float = 1e-6

    def __post_init__(self) -> None:
        if not 0 < self.zone1_fraction <= 1:
            raise ValueError("zone1_fraction must lie in (0, 1]")
        if abs(self.line_z1) == 0:
            raise ValueError("line_z1 must be non-zero")
        if self.characteristic != "impedance_circle":
            raise ValueError(f"unsupported characteristic {self.characteristic!r}")

    @property
    def k0(self) -> complex:
        """Zero-sequence compensation factor (Z0 - Z1) / Z1."""
        return (self.line_z0 - self.line_z1) / self.line_z1

    @property
    def zone1_reach(self) -> float:
        return self.zone1_fraction * abs(self.line_z1)

    @classmethod
    def for_branch(cls, model, branch_id: str, **kw) -> "RelaySettings":
        br = model.branch(branch_id)
        return cls(protected_branch=branch_id, line_z1=br.z1, line_z0=br.z0, **kw)


@dataclass(frozen=True)
class RelayMeasurement:
    v_s: complex
    i_s: complex
    i_0: complex
    i_relay: complex
    z_apparent: complex

    @property
    def r(self) -> float:
        return self.z_apparent.real

    @property
    def x(self) -> float:
        return self.z_apparent.imag


def measuring_loop(fault_kind: str) -> str:
    """Measuring loop the relay evaluates for a fault kind: ``"ag"``, ``"ab"`` or ``"bc"``."""
    if fault_kind == "single_line_ground":
        return "ag"
    if fault_kind == "three_phase":
        return "ab"
    if fault_kind in ("line_line", "double_line_ground"):
        return "bc"
    raise ValueError(f"unknown fault kind {fault_kind!r}")


def loop_quantities(
    v: SequenceSet, i: SequenceSet, settings: RelaySettings, fault_kind: str
) -> tuple[complex, complex, complex]:
    """``(loop voltage, loop current, relaying current)`` for the loop of ``fault_kind``."""
    va, vb, vc = seq_012_to_abc(v)
    ia, ib, ic = seq_012_to_abc(i)
    loop = measuring_loop(fault_kind)
    if loop == "ag":
        return va, ia, ia + settings.k0 * i.zero
    if loop == "ab":
        return va - vb, ia - ib, ia - ib
    return vb - vc, ib - ic, ib - ic


def apparent_impedance(
    v: SequenceSet, i: SequenceSet, settings: RelaySettings, fault_kind: str
) -> RelayMeasurement:
    """Apparent impedance of the loop selected for ``fault_kind``.

    Ground loop: ``Va / (Ia + k0*I0)``.  Phase loops: ``(Vx - Vy) / (Ix - Iy)``.
    """
    v_s, i_s, i_relay = loop_quantities(v, i, settings, fault_kind)
    if abs(i_relay) <= settings.current_floor:
        raise UnmeasurableLoop(f"relay current {abs(i_relay):.3g} p.u. below floor")
    return RelayMeasurement(v_s, i_s, i.zero, i_relay, v_s / i_relay)


def injected_impedance(z_apparent: complex, n: float, line_z1: complex) -> complex:
    """Series-device share of the apparent impedance: ``z - n*Z1``."""
    return z_apparent - n * line_z1


def zone1_check(z: complex, settings: RelaySettings) -> bool:
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        return False
    return abs(z) <= settings.zone1_reach * (1.0 + _BOUNDARY_RTOL)


@dataclass(frozen=True, eq=False)
class RelayTrace:
    """Per-step relay record; unmeasurable samples carry ``nan`` impedance."""

    t: np.ndarray
    v: np.ndarray  # loop voltage
    i: np.ndarray  # relaying current
    z: np.ndarray
    in_zone1: np.ndarray
    t_fault: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("trace timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def samples(self) -> Iterator[tuple[float, complex, bool]]:
        return zip(self.t.tolist(), self.z.tolist(), self.in_zone1.tolist())

    def settled_window(self, fraction: float = 0.2) -> np.ndarray:
        """Impedances over the last ``fraction`` of the post-fault samples."""
        z = self.z
        if self.t_fault is not None:
            z = z[self.t >= self.t_fault - 1e-12]
        z = z[np.isfinite(z)]
        k = int(math.ceil(fraction * len(z)))
        if k < 1 or len(z) < 5:
            raise ValueError("trace too short for a settled post-fault window")
        return z[-k:]


@dataclass(frozen=True)
class ReachVerdict:
    classification: str
    z_baseline: complex
    z_with_ipfc: complex
    zone_decision_baseline: bool
    zone_decision_ipfc: bool
    relative_change: float

    @property
    def delta_r(self) -> float:
        return self.z_with_ipfc.real - self.z_baseline.real

    @property
    def delta_x(self) -> float:
        return self.z_with_ipfc.imag - self.z_baseline.imag


def _settled(trace: RelayTrace, fraction: float) -> tuple[complex, float]:
    w = trace.settled_window(fraction)
    return complex(np.median(w.real), np.median(w.imag)), float(np.median(np.abs(w)))


def classify_reach(
    baseline: RelayTrace,
    with_ipfc: RelayTrace,
    settings: RelaySettings,
    tolerance: float = 0.02,
    window: float = 0.2,
) -> ReachVerdict:
    """Compare settled post-fault |z| of a run against its no-IPFC baseline.

    A drop of more than ``tolerance`` (relative) is an over-reach tendency,
    a rise of more than ``tolerance`` an under-reach tendency.
    """
    zb, mb = _settled(baseline, window)
    zw, mw = _settled(with_ipfc, window)
    rel = (mw - mb) / mb
    if rel < -tolerance:
        cls = "over_reach_tendency"
    elif rel > tolerance:
        cls = "under_reach_tendency"
    else:
        cls = "nominal"
    return ReachVerdict(cls, zb, zw, zone1_check(zb, settings), zone1_check(zw, settings), rel)
