"""Brute-force phase-frame (abc) nodal solve used as a cross-check.

Every element is expanded to a 3x3 phase admittance block and the fault is
written as explicit phase constraints appended to the nodal equations, so no
sequence-network interconnection is involved.  Slow but independent of the
Thevenin superposition in :mod:`ipfc_relay.faults`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .grid import GridModel, split_branch

_a = np.exp(2j * np.pi / 3)
# columns: positive, negative, zero sequence
_T = np.array([[1, 1, 1], [_a**2, _a, 1], [_a, _a**2, 1]], dtype=complex)
_T_INV = np.linalg.inv(_T)


def phase_block(y1: complex, y2: complex, y0: complex) -> np.ndarray:
    """3x3 phase admittance of an element with the given sequence admittances."""
    return _T @ np.diag([y1, y2, y0]) @ _T_INV


@dataclass(frozen=True, eq=False)
class PhaseSolution:
    buses: tuple[str, ...]
    v_abc: np.ndarray  # (nbus, 3)
    i_fault_abc: np.ndarray  # (3,), network into fault

    def voltage(self, bus: str) -> np.ndarray:
        return self.v_abc[self.buses.index(bus)]


def _stamp(y: np.ndarray, i: int, j: int | None, blk: np.ndarray) -> None:
    si = slice(3 * i, 3 * i + 3)
    y[si, si] += blk
    if j is not None:
        sj = slice(3 * j, 3 * j + 3)
        y[sj, sj] += blk
        y[si, sj] -= blk
        y[sj, si] -= blk


def solve_phase_domain(
    model: GridModel,
    fault=None,
    injections: Iterable = (),
    devices: Mapping[str, float] | None = None,
) -> PhaseSolution:
    """Solve the network directly in phase quantities.

    ``fault`` is a :class:`~ipfc_relay.faults.FaultSpec` or ``None``;
    ``injections`` are balanced positive-sequence series sources at the
    from-end of their branches.
    """
    fbus = None
    if fault is not None:
        model, fbus = split_branch(model, fault.branch_id, fault.n)
    idx = model.bus_index
    nb = len(model.buses)
    nf = 3 if fault is not None else 0
    y = np.zeros((3 * nb + nf, 3 * nb + nf), dtype=complex)
    rhs = np.zeros(3 * nb + nf, dtype=complex)
    pos_set = np.array([1, _a**2, _a])

    dev = {model.segment(b, "from"): x for b, x in (devices or {}).items()}
    blocks = {}
    for b in model.branches:
        extra = 1j * dev.get(b.id, 0.0)
        y1 = 1 / (b.z1 + extra)
        blk = phase_block(y1, y1, 1 / (b.z0 + extra))
        blocks[b.id] = (idx[b.from_bus], idx[b.to_bus], blk)
        _stamp(y, idx[b.from_bus], idx[b.to_bus], blk)
    for t in model.transformers:
        yl = 1 / (1j * t.x_leakage)
        _stamp(y, idx[t.from_bus], idx[t.to_bus], phase_block(yl, yl, 0))
        if t.zero_sequence_path == "grounded_through":
            _stamp(y, idx[t.to_bus], None, phase_block(0, 0, yl))
    for s in model.sources:
        ys = 1 / (1j * s.x_internal)
        k = idx[s.bus]
        _stamp(y, k, None, phase_block(ys, ys, ys))
        rhs[3 * k:3 * k + 3] += s.emf * ys * pos_set
    for ld in model.loads:
        _stamp(y, idx[ld.bus], None, phase_block(ld.admittance, ld.admittance, 0))

    for inj in injections:
        seg = model.segment(inj.branch_id, "from")
        i, j, blk = blocks[seg]
        jn = blk @ (complex(inj.v_inject) * pos_set)
        rhs[3 * i:3 * i + 3] -= jn
        rhs[3 * j:3 * j + 3] += jn

    if fault is not None:
        k = idx[fbus]
        base, f0 = 3 * k, 3 * nb
        # fault currents leave the network at the fault bus
        for p in range(3):
            y[base + p, f0 + p] += 1
        va, vb, vc = base, base + 1, base + 2
        ia, ib, ic = f0, f0 + 1, f0 + 2
        rf = fault.rf
        rows = y[f0:f0 + 3]
        if fault.kind == "three_phase":
            for p in range(3):
                rows[p, base + p] = 1
                rows[p, f0 + p] = -rf
        elif fault.kind == "single_line_ground":
            rows[0, va], rows[0, ia] = 1, -rf
            rows[1, ib] = 1
            rows[2, ic] = 1
        elif fault.kind == "line_line":
            rows[0, ia] = 1
            rows[1, ib], rows[1, ic] = 1, 1
            rows[2, vb], rows[2, vc], rows[2, ib] = 1, -1, -rf
        elif fault.kind == "double_line_ground":
            rows[0, ia] = 1
            rows[1, vb], rows[1, ib], rows[1, ic] = 1, -rf, -rf
            rows[2, vc], rows[2, ib], rows[2, ic] = 1, -rf, -rf
        else:
            raise ValueError(f"unsupported fault kind {fault.kind!r}")

    x = np.linalg.solve(y, rhs)
    return PhaseSolution(model.buses, x[:3 * nb].reshape(nb, 3), x[3 * nb:] if nf else np.zeros(3, complex))
