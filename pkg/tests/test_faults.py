import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings
from hypothesis import strategies as st

from ipfc_relay.faults import (
    FAULT_KINDS,
    FaultSpec,
    NetworkSolver,
    SeriesInjection,
    apply_fault,
    fault_sequence_currents,
    kcl_mismatch,
    prepare_fault,
    relay_point_quantities,
    relay_segment_residuals,
    solve_prefault,
    source_currents,
)
from ipfc_relay.grid import parse_grid, shipped_grid_text, split_branch, SPLIT_SNAP
from ipfc_relay.phase_domain import phase_block, solve_phase_domain
from ipfc_relay.phasor import SEQ_TO_ABC, SequenceSet

fault_kind = st.sampled_from(FAULT_KINDS)
branch_id = st.sampled_from([str(k) for k in range(1, 8)])
frac = st.floats(0.01, 0.99)
rf = st.floats(0.0, 0.05)


def _abc(v):
    return v @ SEQ_TO_ABC.T


class TestFaultSpec:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            FaultSpec("arc", "5", 0.5)
        with pytest.raises(ValueError):
            FaultSpec("three_phase", "5", 1.5)
        with pytest.raises(ValueError):
            FaultSpec("three_phase", "5", 0.5, -0.1)

    def test_n_zero_on_converter_branch_rejected(self, grid):
        with pytest.raises(ValueError):
            prepare_fault(grid, FaultSpec("three_phase", "5", 0.0), [SeriesInjection("5", 0j)])
        _, bus = prepare_fault(grid, FaultSpec("three_phase", "5", 0.0))
        assert bus == "4"


class TestPrefault:
    def test_no_load_equal_sources_is_flat(self, grid):
        flat = replace(
            grid, loads=(), sources=tuple(replace(s, voltage_setpoint=1.0, angle=0.0) for s in grid.sources)
        )
        sol = solve_prefault(flat)
        assert np.abs(sol.v[:, 0] - 1).max() < 1e-12
        assert np.abs(sol.v[:, 1:]).max() == 0
        assert max(np.abs(c).max() for c in sol.branch_currents.values()) < 1e-10

    def test_power_balance(self, grid):
        sol = solve_prefault(grid)
        idx = grid.bus_index
        src = sum(
            (sol.v[idx[s.bus], 0] * np.conj(i)).real for s, i in zip(grid.sources, source_currents(sol).values())
        )
        load = sum(ld.p * abs(sol.v[idx[ld.bus], 0]) ** 2 for ld in grid.loads)
        loss = 0.0
        for b in grid.branches:
            loss += abs(sol.branch_current(b.id).pos) ** 2 * b.r1
        assert abs(src - load - loss) < 1e-9
        assert kcl_mismatch(sol) < 1e-9

    def test_quadrature_injection_raises_line_flow(self, grid):
        base = solve_prefault(grid)
        i0 = base.branch_current("5").pos
        u = i0 / abs(i0)
        sol = solve_prefault(grid, [SeriesInjection("5", 0.01j * u)])

        def p(s):
            v, i = relay_point_quantities(s, "5")
            return (v.pos * np.conj(i.pos)).real

        assert p(sol) > p(base)

    def test_relay_point_matches_branch_current(self, grid):
        sol = solve_prefault(grid)
        v, i = relay_point_quantities(sol, "5", "from")
        assert i == sol.branch_current("5", "from")
        _, i_to = relay_point_quantities(sol, "5", "to")
        assert abs(i_to.pos + i.pos) < 1e-14

    def test_unknown_injection_branch(self, grid):
        with pytest.raises(KeyError):
            solve_prefault(grid, [SeriesInjection("nope", 0.01)])

    def test_delivered_power_sign(self, grid):
        # in-phase injection on the line current delivers real power
        i = solve_prefault(grid).branch_current("5").pos
        v = 0.01 * i / abs(i)
        sol = solve_prefault(grid, [SeriesInjection("5", v)])
        assert (v * np.conj(sol.branch_current("5").pos)).real > 0


class TestFault:
    def test_bolted_three_phase_ratio(self, grid):
        sol = apply_fault(grid, FaultSpec("three_phase", "5", 0.8))
        v, i = relay_point_quantities(sol, "5")
        assert abs(v.pos / i.pos - (0.00176 + 0.016j)) < 1e-12
        assert abs(v.neg) < 1e-10 and abs(v.zero) < 1e-10
        assert abs(i.neg) < 1e-10 and abs(i.zero) < 1e-10

    def test_bolted_slg_zeroes_phase_a(self, grid):
        sol = apply_fault(grid, FaultSpec("single_line_ground", "3", 0.5))
        va = sol.phase_voltages(sol.fault_bus).a
        assert abs(va) < 1e-9
        _, i = relay_point_quantities(sol, "3")
        assert abs(i.zero) > 1e-3

    def test_slg_line3_matches_phase_oracle(self, grid):
        f = FaultSpec("single_line_ground", "3", 0.5)
        sol = apply_fault(grid, f)
        ora = solve_phase_domain(grid, f)
        assert np.abs(_abc(sol.v) - ora.v_abc).max() < 1e-8
        assert np.abs(SEQ_TO_ABC @ sol.fault_current - ora.i_fault_abc).max() < 1e-8

    @settings(max_examples=40, deadline=None)
    @given(fault_kind, branch_id, frac, rf)
    def test_matches_phase_oracle_with_injections(self, grid, kind, bid, n, r):
        f = FaultSpec(kind, bid, n, r)
        inj = [SeriesInjection("5", 0.01 + 0.02j), SeriesInjection("6", -0.015j)]
        dev = {"5": 0.05, "6": 0.05}
        sol = apply_fault(grid, f, inj, dev)
        ora = solve_phase_domain(grid, f, inj, dev)
        assert np.abs(_abc(sol.v) - ora.v_abc).max() < 1e-8

    @settings(max_examples=30, deadline=None)
    @given(fault_kind, branch_id, frac, rf)
    def test_kcl(self, grid, kind, bid, n, r):
        sol = apply_fault(grid, FaultSpec(kind, bid, n, r), [SeriesInjection("5", 0.02j)])
        assert kcl_mismatch(sol) < 1e-9

    @settings(max_examples=30, deadline=None)
    @given(fault_kind, frac, rf)
    def test_superposition(self, grid, kind, n, r):
        f = FaultSpec(kind, "5", n, r)
        inj = [SeriesInjection("5", 0.01 - 0.02j)]
        a = apply_fault(grid, f, inj)
        doubled = replace(grid, sources=tuple(replace(s, voltage_setpoint=2 * s.voltage_setpoint) for s in grid.sources))
        b = apply_fault(doubled, f, [SeriesInjection("5", 0.02 - 0.04j)])
        assert np.abs(b.v - 2 * a.v).max() < 1e-10

    @settings(max_examples=30, deadline=None)
    @given(frac, rf)
    def test_three_phase_has_no_unbalance(self, grid, n, r):
        sol = apply_fault(grid, FaultSpec("three_phase", "2", n, r), [SeriesInjection("5", 0.02j)])
        assert np.abs(sol.v[:, 1:]).max() < 1e-10

    @settings(max_examples=40, deadline=None)
    @given(fault_kind, frac, rf, st.complex_numbers(max_magnitude=0.05))
    def test_segment_residuals(self, grid, kind, n, r, v):
        f = FaultSpec(kind, "5", n, r)
        sol = apply_fault(grid, f, [SeriesInjection("5", v)], {"5": 0.05})
        br = grid.branch("5")
        res = relay_segment_residuals(sol, br.z1, br.z0)
        assert np.abs(res["segment"]).max() < 1e-8
        if kind == "three_phase":
            assert np.abs(res["rf_form"]).max() < 1e-8
        if kind in ("three_phase", "single_line_ground"):
            assert np.abs(res["phase_a"]).max() < 1e-8

    def test_fault_sequence_currents_known_values(self):
        i = fault_sequence_currents("single_line_ground", 1.0, 0.1j, 0.1j, 0.3j, 0.0)
        assert np.allclose(i, [1 / 0.5j] * 3)
        i = fault_sequence_currents("line_line", 1.0, 0.1j, 0.1j, 0.3j, 0.0)
        assert np.allclose(i, [5 / 1j, -5 / 1j, 0])
        i = fault_sequence_currents("double_line_ground", 1.0, 0.1j, 0.1j, 0.1j, 0.0)
        assert np.allclose(i, [1 / 0.15j, -0.5 / 0.15j, -0.5 / 0.15j])
        with pytest.raises(ValueError):
            fault_sequence_currents("arc", 1.0, 1j, 1j, 1j, 0.0)

    def test_solver_reuse_matches_fresh_solve(self, grid):
        f = FaultSpec("double_line_ground", "5", 0.3, 0.01)
        split, fbus = prepare_fault(grid, f)
        solver = NetworkSolver(split)
        for v in (0.01, 0.02j):
            a = solver.solve([SeriesInjection("6", v)], f, fbus)
            b = apply_fault(grid, f, [SeriesInjection("6", v)])
            assert np.abs(a.v - b.v).max() < 1e-13

    def test_snapped_split_near_terminal(self, grid):
        f = FaultSpec("three_phase", "2", SPLIT_SNAP / 2)
        sol = apply_fault(grid, f)
        assert sol.fault_bus == "2"


def test_phase_block_of_balanced_element_is_circulant():
    blk = phase_block(2 - 1j, 2 - 1j, 0.5)
    assert np.allclose(blk, blk.T)
    assert np.allclose(np.diag(blk), blk[0, 0])


def test_parse_round_trip_of_shipped_grid(grid):
    assert parse_grid(shipped_grid_text()) == grid
    m, aux = split_branch(grid, "5", 0.25)
    assert aux in m.buses
