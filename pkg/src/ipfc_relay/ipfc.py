"""Master/slave control of a two-converter IPFC in discrete time.

Each converter's command is a (d, q) pair in a frame locked to its own line
current ``u = I / |I|``.  The axis orientation differs between the two
converters so that every loop has a positive, diagonally dominant gain:

* master: d = ``j*u`` (quadrature, leading), q = ``u`` (in phase).  The line
  P error drives vd1 through series reactive compensation; the Q error drives
  vq1 through the in-phase component.
* slave: d = ``-u`` (in phase, absorbing), q = ``j*u``.  The DC voltage error
  drives vd2, which draws real power from line 2 when positive; the P error of
  line 2 drives the quadrature component vq2.

``(m, alpha)`` is the polar form of ``(vd, vq)`` in that frame.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, replace

from .phasor import rect_to_polar

MASTER_AXES = (1j, 1.0 + 0j)
SLAVE_AXES = (-1.0 + 0j, 1j)

PRESET_MODES = ("preset_q_inject", "preset_q_absorb", "preset_p_inject", "preset_p_absorb")


class DcLinkCollapse(ArithmeticError):
    """DC-link voltage fell to the configured floor."""


@dataclass(frozen=True)
class PiState:
    """PI controller: ``u = kp*e + ki*integrator`` with ``integrator = sum(e*dt)``.

    When the output saturates the integrator is recomputed so that the output
    sits exactly on the limit (back-calculation), which lets the output leave
    the limit on the first step after the error changes sign.
    """

    kp: float
    ki: float
    integrator: float = 0.0
    output_limits: tuple[float, float] = (-math.inf, math.inf)

    def __post_init__(self) -> None:
        if self.kp < 0 or self.ki < 0:
            raise ValueError("PI gains must be non-negative")
        lo, hi = self.output_limits
        if lo > hi:
            raise ValueError(f"bad output limits {self.output_limits}")

    @property
    def output(self) -> float:
        """Output for zero instantaneous error."""
        return self.ki * self.integrator

    def step(self, error: float, dt: float) -> tuple["PiState", float]:
        integ = self.integrator + error * dt
        u = self.kp * error + self.ki * integ
        lo, hi = self.output_limits
        if u > hi or u < lo:
            u = min(max(u, lo), hi)
            if self.ki > 0:
                integ = (u - self.kp * error) / self.ki
        return replace(self, integrator=integ), u

    def rebased(self, output: float, error: float) -> "PiState":
        """State whose output for ``error`` equals ``output`` (used after vector limiting)."""
        if self.ki == 0:
            return self
        return replace(self, integrator=(output - self.kp * error) / self.ki)


@dataclass(frozen=True)
class IpfcSetpoints:
    p_ref1: float
    q_ref1: float
    p_ref2: float
    vdc_ref: float = 1.0

    def __post_init__(self) -> None:
        vals = (self.p_ref1, self.q_ref1, self.p_ref2, self.vdc_ref)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("setpoints must be finite")
        if not self.vdc_ref > 0:
            raise ValueError("vdc_ref must be positive")


@dataclass(frozen=True)
class LineMeasurement:
    p_net: float
    q_net: float
    i_line: complex
    v_line: complex

    @classmethod
    def at(cls, v_line: complex, i_line: complex) -> "LineMeasurement":
        s = v_line * i_line.conjugate()
        return cls(s.real, s.imag, i_line, v_line)


@dataclass(frozen=True)
class IpfcState:
    master_pi_p: PiState
    master_pi_q: PiState
    slave_pi_vdc: PiState
    slave_pi_p: PiState
    vdc: float = 1.0
    vd1: float = 0.0
    vq1: float = 0.0
    vd2: float = 0.0
    vq2: float = 0.0
    m1: float = 0.0
    alpha1: float = 0.0
    m2: float = 0.0
    alpha2: float = 0.0
    pse1: float = 0.0
    pse2: float = 0.0
    # unit phasors of the line currents the control frames are locked to
    ref1: complex = 1.0 + 0j
    ref2: complex = 1.0 + 0j
    m_max: float = 0.15
    c_dc: float = 1.0
    vdc_floor: float = 0.1
    collapsed: bool = False

    @property
    def v_inject1(self) -> complex:
        return frame_to_phasor(self.vd1, self.vq1, self.ref1, MASTER_AXES)

    @property
    def v_inject2(self) -> complex:
        return frame_to_phasor(self.vd2, self.vq2, self.ref2, SLAVE_AXES)


@dataclass(frozen=True)
class IpfcConfig:
    """Controller parameters; gains are (kp, ki) per loop."""

    master_branch: str = "5"
    slave_branch: str = "6"
    gains_p1: tuple[float, float] = (0.002, 2.0)
    gains_q1: tuple[float, float] = (0.002, 2.0)
    gains_vdc: tuple[float, float] = (2.0, 20.0)
    gains_p2: tuple[float, float] = (0.005, 5.0)
    m_max: float = 0.15
    c_dc: float = 1.0
    vdc_floor: float = 0.1
    series_x: float = 0.0
    preset_magnitude: float = 0.02
    setpoints: IpfcSetpoints = field(default_factory=lambda: IpfcSetpoints(0.6, 0.15, 0.25, 1.0))

    def __post_init__(self) -> None:
        if not self.m_max > 0:
            raise ValueError("m_max must be positive")
        if not self.c_dc > 0:
            raise ValueError("c_dc must be positive")
        if not 0 <= self.preset_magnitude <= self.m_max:
            raise ValueError("preset_magnitude must lie in [0, m_max]")
        if self.series_x < 0:
            raise ValueError("series_x must be >= 0")


def initial_state(cfg: IpfcConfig) -> IpfcState:
    lim = (-cfg.m_max, cfg.m_max)

    def pi(g):
        return PiState(g[0], g[1], 0.0, lim)

    return IpfcState(
        master_pi_p=pi(cfg.gains_p1), master_pi_q=pi(cfg.gains_q1),
        slave_pi_vdc=pi(cfg.gains_vdc), slave_pi_p=pi(cfg.gains_p2),
        vdc=cfg.setpoints.vdc_ref, m_max=cfg.m_max, c_dc=cfg.c_dc, vdc_floor=cfg.vdc_floor,
    )


def frame_to_phasor(vd: float, vq: float, ref: complex, axes=MASTER_AXES) -> complex:
    d_ax, q_ax = axes
    return (vd * d_ax + vq * q_ax) * ref


def _unit(i: complex, fallback: complex) -> complex:
    mag = abs(i)
    return i / mag if mag > 0 else fallback


def _vector_limit(pd: PiState, pq: PiState, ud: float, uq: float, ed: float, eq: float, m_max: float):
    m = math.hypot(ud, uq)
    if m > m_max:
        k = m_max / m
        ud, uq = ud * k, uq * k
        pd, pq = pd.rebased(ud, ed), pq.rebased(uq, eq)
    return pd, pq, ud, uq


def master_step(state: IpfcState, sp: IpfcSetpoints, meas1: LineMeasurement, dt: float) -> IpfcState:
    """PI update of the master converter from line-1 P and Q errors."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    ep = sp.p_ref1 - meas1.p_net
    eq = sp.q_ref1 - meas1.q_net
    pp, vd = state.master_pi_p.step(ep, dt)
    pq, vq = state.master_pi_q.step(eq, dt)
    pp, pq, vd, vq = _vector_limit(pp, pq, vd, vq, ep, eq, state.m_max)
    m, alpha = rect_to_polar(vd, vq)
    return replace(
        state, master_pi_p=pp, master_pi_q=pq, vd1=vd, vq1=vq, m1=m, alpha1=alpha,
        ref1=_unit(meas1.i_line, state.ref1),
    )


def slave_step(
    state: IpfcState, sp: IpfcSetpoints, meas2: LineMeasurement, dt: float,
    regulate_p: bool = True,
) -> IpfcState:
    """PI update of the slave: DC voltage on the d axis, line-2 P on the q axis.

    With ``regulate_p=False`` the q command is held at zero so the slave only
    balances real power.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    ed = sp.vdc_ref - state.vdc
    pd, vd = state.slave_pi_vdc.step(ed, dt)
    if regulate_p:
        eq = sp.p_ref2 - meas2.p_net
        pq, vq = state.slave_pi_p.step(eq, dt)
    else:
        eq, pq, vq = 0.0, replace(state.slave_pi_p, integrator=0.0), 0.0
    pd, pq, vd, vq = _vector_limit(pd, pq, vd, vq, ed, eq, state.m_max)
    m, alpha = rect_to_polar(vd, vq)
    return replace(
        state, slave_pi_vdc=pd, slave_pi_p=pq, vd2=vd, vq2=vq, m2=m, alpha2=alpha,
        ref2=_unit(meas2.i_line, state.ref2),
    )


def preset_step(state: IpfcState, mode: str, magnitude: float, meas1: LineMeasurement) -> IpfcState:
    """Fixed quadrature-only or in-phase-only master injection, bypassing the P/Q loops."""
    vd, vq = {
        "preset_q_inject": (magnitude, 0.0),
        "preset_q_absorb": (-magnitude, 0.0),
        "preset_p_inject": (0.0, magnitude),
        "preset_p_absorb": (0.0, -magnitude),
    }[mode]
    m, alpha = rect_to_polar(vd, vq)
    return replace(
        state, vd1=vd, vq1=vq, m1=m, alpha1=alpha, ref1=_unit(meas1.i_line, state.ref1),
    )


def dc_link_step(state: IpfcState, dt: float) -> IpfcState:
    """Integrate the DC capacitor energy over one step.

    ``pse1`` and ``pse2`` are the real powers the converters deliver to their
    lines, so the stored energy ``c_dc * vdc**2 / 2`` falls at their sum:
    ``d(vdc**2)/dt = -2 (pse1 + pse2) / c_dc``.  The update is exact for powers
    held constant over the step.  At the floor the voltage is clamped and the
    state is flagged ``collapsed``.
    """
    if not state.vdc > 0:
        raise ValueError("vdc must be positive")
    v2 = state.vdc ** 2 - 2.0 * (state.pse1 + state.pse2) * dt / state.c_dc
    floor = state.vdc_floor
    if v2 <= floor ** 2:
        return replace(state, vdc=floor, collapsed=True)
    return replace(state, vdc=math.sqrt(v2))


def vsc_terminal_power(v_inject: complex, i_line: complex) -> tuple[float, float]:
    """Real and reactive power a series converter delivers to its line."""
    s = v_inject * i_line.conjugate()
    return s.real, s.imag


def decompose_injection(v_inject: complex, i_line: complex) -> tuple[float, float]:
    """In-phase and leading-quadrature components of ``v_inject`` w.r.t. ``i_line``."""
    if abs(i_line) == 0:
        raise ValueError("line current is zero; in-phase/quadrature split is undefined")
    u = i_line / abs(i_line)
    w = v_inject * u.conjugate()
    return w.real, w.imag


def recompose_injection(v_p: float, v_q: float, i_line: complex) -> complex:
    u = i_line / abs(i_line)
    return v_p * u + v_q * 1j * u


def polar_injection(m: float, alpha_deg: float, ref: complex, axes=MASTER_AXES) -> complex:
    """Injection phasor from ``(m, alpha)`` in a converter frame."""
    w = cmath.rect(m, math.radians(alpha_deg))
    return frame_to_phasor(w.real, w.imag, ref, axes)
