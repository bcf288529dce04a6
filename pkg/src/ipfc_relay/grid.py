"""Transmission network description, config loading and sequence Y-bus assembly."""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

ZERO_SEQ_PATHS = ("blocked", "grounded_through")


class GridConfigError(ValueError):
    """Base class for invalid grid descriptions."""


class SchemaError(GridConfigError):
    pass


class DuplicateIdError(GridConfigError):
    pass


class DisconnectedGridError(GridConfigError):
    pass


class InvalidParameterError(GridConfigError):
    pass


class SingularNetworkError(ArithmeticError):
    """Nodal matrix has no usable ground reference."""


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    r1: float
    x1: float
    r0: float
    x0: float
    rating_kv: float = 0.0

    @property
    def z1(self) -> complex:
        return complex(self.r1, self.x1)

    @property
    def z0(self) -> complex:
        return complex(self.r0, self.x0)

    def validate(self) -> None:
        if not self.x1 > 0:
            raise InvalidParameterError(f"branch {self.id}: x1 must be > 0 (got {self.x1})")
        if self.r1 < 0 or self.r0 < 0:
            raise InvalidParameterError(f"branch {self.id}: negative resistance")
        if not self.x0 > 0:
            raise InvalidParameterError(f"branch {self.id}: x0 must be > 0 (got {self.x0})")
        # Split segments carry scaled copies of both impedances, so compare
        # with a relative guard instead of exactly.
        if abs(self.z0) < abs(self.z1) * (1 - 1e-12):
            raise InvalidParameterError(f"branch {self.id}: |Z0| smaller than |Z1|")


@dataclass(frozen=True)
class TransformerLink:
    """Two-winding transformer.

    ``zero_sequence_path="grounded_through"`` means a delta winding on the
    ``from_bus`` side and a solidly grounded star on the ``to_bus`` side, so
    zero-sequence current at ``to_bus`` returns to ground through the leakage
    reactance without crossing the transformer.  ``"blocked"`` gives no
    zero-sequence path at all.
    """

    id: str
    from_bus: str
    to_bus: str
    x_leakage: float
    zero_sequence_path: str = "grounded_through"

    def validate(self) -> None:
        if not self.x_leakage > 0:
            raise InvalidParameterError(f"transformer {self.id}: x must be > 0")
        if self.zero_sequence_path not in ZERO_SEQ_PATHS:
            raise SchemaError(
                f"transformer {self.id}: zero_sequence must be one of {ZERO_SEQ_PATHS}"
            )


@dataclass(frozen=True)
class Source:
    """Voltage behind subtransient reactance."""

    id: str
    bus: str
    x_internal: float
    voltage_setpoint: float = 1.0
    angle: float = 0.0  # degrees

    @property
    def emf(self) -> complex:
        return self.voltage_setpoint * complex(
            math.cos(math.radians(self.angle)), math.sin(math.radians(self.angle))
        )

    def validate(self) -> None:
        if not self.x_internal > 0:
            raise InvalidParameterError(f"source {self.id}: x must be > 0")
        if not self.voltage_setpoint > 0:
            raise InvalidParameterError(f"source {self.id}: voltage must be > 0")


@dataclass(frozen=True)
class Load:
    """Constant-impedance load, specified by its power at 1 p.u. voltage."""

    id: str
    bus: str
    p: float
    q: float

    @property
    def admittance(self) -> complex:
        return complex(self.p, -self.q)

    def validate(self) -> None:
        if self.p < 0:
            raise InvalidParameterError(f"load {self.id}: p must be >= 0")


@dataclass(frozen=True)
class GridModel:
    buses: tuple[str, ...]
    branches: tuple[Branch, ...]
    transformers: tuple[TransformerLink, ...] = ()
    sources: tuple[Source, ...] = ()
    loads: tuple[Load, ...] = ()
    base_mva: float = 100.0
    base_kv: float = 150.0
    frequency_hz: float = 50.0
    bus_names: Mapping[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        _unique(self.buses, "bus")
        _unique([b.id for b in self.branches], "branch")
        _unique([t.id for t in self.transformers], "transformer")
        _unique([s.id for s in self.sources], "source")
        _unique([ld.id for ld in self.loads], "load")
        known = set(self.buses)
        for elem in (*self.branches, *self.transformers):
            elem.validate()
            for b in (elem.from_bus, elem.to_bus):
                if b not in known:
                    raise SchemaError(f"{elem.id}: unknown bus {b!r}")
            if elem.from_bus == elem.to_bus:
                raise SchemaError(f"{elem.id}: both ends on bus {elem.from_bus!r}")
        for elem in (*self.sources, *self.loads):
            elem.validate()
            if elem.bus not in known:
                raise SchemaError(f"{elem.id}: unknown bus {elem.bus!r}")
        if not self.base_mva > 0 or not self.base_kv > 0:
            raise InvalidParameterError("base_mva and base_kv must be positive")
        self._check_connected()

    def _check_connected(self) -> None:
        if not self.buses:
            raise SchemaError("grid has no buses")
        adj: dict[str, set[str]] = {b: set() for b in self.buses}
        for e in (*self.branches, *self.transformers):
            adj[e.from_bus].add(e.to_bus)
            adj[e.to_bus].add(e.from_bus)
        seen = {self.buses[0]}
        stack = [self.buses[0]]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        missing = [b for b in self.buses if b not in seen]
        if missing:
            raise DisconnectedGridError(f"buses not connected to the grid: {missing}")

    @property
    def bus_index(self) -> dict[str, int]:
        return {b: k for k, b in enumerate(self.buses)}

    def branch(self, branch_id: str) -> Branch:
        for b in self.branches:
            if b.id == branch_id:
                return b
        raise KeyError(f"unknown branch {branch_id!r}")

    def has_branch(self, branch_id: str) -> bool:
        return any(b.id == branch_id for b in self.branches)

    def segment(self, branch_id: str, end: str = "from") -> str:
        """Id of the branch (or split segment) touching ``end`` of ``branch_id``."""
        if end not in ("from", "to"):
            raise ValueError(f"end must be 'from' or 'to', got {end!r}")
        if self.has_branch(branch_id):
            return branch_id
        seg = f"{branch_id}/{'a' if end == 'from' else 'b'}"
        if self.has_branch(seg):
            return seg
        # n=0 / n=1 splits keep only one segment
        other = f"{branch_id}/{'b' if end == 'from' else 'a'}"
        if self.has_branch(other):
            return other
        raise KeyError(f"unknown branch {branch_id!r}")


def _unique(ids: Iterable[str], what: str) -> None:
    seen: set[str] = set()
    for i in ids:
        if i in seen:
            raise DuplicateIdError(f"duplicate {what} id {i!r}")
        seen.add(i)


# Split points closer than this to a terminal are moved onto it; a shorter
# segment makes the nodal matrix too stiff for 1e-10 agreement.
SPLIT_SNAP = 1e-6


def snap_fraction(n: float) -> float:
    if n < SPLIT_SNAP:
        return 0.0
    if n > 1.0 - SPLIT_SNAP:
        return 1.0
    return n


def aux_bus_id(branch_id: str, n: float) -> str:
    return f"{branch_id}@{n:.6g}"


def split_branch(model: GridModel, branch_id: str, n: float) -> tuple[GridModel, str]:
    """Insert a bus at fraction ``n`` of ``branch_id`` measured from its from-bus.

    Returns the new model and the id of the bus at the split point.  The
    segments are named ``<id>/a`` (from side, ``n*Z``) and ``<id>/b``
    (to side, ``(1-n)*Z``).  At ``n == 0`` or ``n == 1`` the split point
    coincides with a terminal bus and only the non-degenerate segment exists;
    fractions within ``SPLIT_SNAP`` of a terminal are treated the same way.
    """
    if not (0.0 <= n <= 1.0) or math.isnan(n):
        raise ValueError(f"split fraction must lie in [0, 1], got {n}")
    n = snap_fraction(n)
    br = model.branch(branch_id)
    others = tuple(b for b in model.branches if b.id != branch_id)

    def seg(suffix: str, frm: str, to: str, k: float) -> Branch:
        return replace(
            br, id=f"{branch_id}/{suffix}", from_bus=frm, to_bus=to,
            r1=k * br.r1, x1=k * br.x1, r0=k * br.r0, x0=k * br.x0,
        )

    if n == 0.0:
        new = replace(model, branches=others + (seg("b", br.from_bus, br.to_bus, 1.0),))
        return new, br.from_bus
    if n == 1.0:
        new = replace(model, branches=others + (seg("a", br.from_bus, br.to_bus, 1.0),))
        return new, br.to_bus
    aux = aux_bus_id(branch_id, n)
    new = replace(
        model,
        buses=model.buses + (aux,),
        branches=others + (
            seg("a", br.from_bus, aux, n),
            seg("b", aux, br.to_bus, 1.0 - n),
        ),
    )
    return new, aux


@dataclass(frozen=True, eq=False)
class SequenceAdmittance:
    buses: tuple[str, ...]
    y_pos: np.ndarray
    y_neg: np.ndarray
    y_zero: np.ndarray

    def matrices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.y_pos, self.y_neg, self.y_zero


def series_admittances(
    model: GridModel, devices: Mapping[str, float] | None = None
) -> list[tuple[str, str, str, complex, complex]]:
    """Per-element ``(id, from, to, y1, y0)`` series admittances.

    ``devices`` maps branch ids hosting a series converter to the coupling
    transformer's leakage reactance, which adds to that branch's impedance.
    Transformers appear with ``y0 = 0`` (no zero-sequence transfer).
    """
    devices = devices or {}
    out = []
    for b in model.branches:
        extra = 1j * devices.get(b.id, 0.0)
        out.append((b.id, b.from_bus, b.to_bus, 1.0 / (b.z1 + extra), 1.0 / (b.z0 + extra)))
    for t in model.transformers:
        out.append((t.id, t.from_bus, t.to_bus, 1.0 / (1j * t.x_leakage), 0j))
    return out


def shunt_admittances(model: GridModel) -> list[tuple[str, complex, complex]]:
    """Per-element ``(bus, y1, y0)`` shunt admittances (y1 applies to neg seq too)."""
    out = []
    for s in model.sources:
        # Zero-sequence term only grounds the machine terminal, which sits
        # behind a delta winding and cannot influence the grid side.
        y = 1.0 / (1j * s.x_internal)
        out.append((s.bus, y, y))
    for t in model.transformers:
        if t.zero_sequence_path == "grounded_through":
            out.append((t.to_bus, 0j, 1.0 / (1j * t.x_leakage)))
    for ld in model.loads:
        out.append((ld.bus, ld.admittance, 0j))
    return out


def build_sequence_admittance(
    model: GridModel, devices: Mapping[str, float] | None = None
) -> SequenceAdmittance:
    idx = model.bus_index
    nb = len(model.buses)
    y1 = np.zeros((nb, nb), dtype=complex)
    y0 = np.zeros((nb, nb), dtype=complex)
    for _, f, t, ys1, ys0 in series_admittances(model, devices):
        i, j = idx[f], idx[t]
        for y, ys in ((y1, ys1), (y0, ys0)):
            y[i, i] += ys
            y[j, j] += ys
            y[i, j] -= ys
            y[j, i] -= ys
    grounded = np.zeros((2, nb), bool)
    for bus, ysh1, ysh0 in shunt_admittances(model):
        k = idx[bus]
        y1[k, k] += ysh1
        y0[k, k] += ysh0
        grounded[:, k] |= (ysh1 != 0, ysh0 != 0)
    for name, y, g in (("positive", y1, grounded[0]), ("zero", y0, grounded[1])):
        floating = _ungrounded_buses(y, g)
        if floating:
            raise SingularNetworkError(
                f"{name}-sequence network has no ground reference at buses {floating}"
            )
    return SequenceAdmittance(model.buses, y1, y1.copy(), y0)


def _ungrounded_buses(y: np.ndarray, shunt: np.ndarray) -> list[int]:
    """Buses whose connected island carries no shunt path to ground."""
    nb = y.shape[0]
    seen = np.zeros(nb, bool)
    out = []
    for start in range(nb):
        if seen[start]:
            continue
        island, stack = [start], [start]
        seen[start] = True
        while stack:
            k = stack.pop()
            for j in np.flatnonzero(y[k] != 0):
                if not seen[j]:
                    seen[j] = True
                    island.append(j)
                    stack.append(j)
        if not shunt[island].any():
            out.extend(island)
    return sorted(int(k) for k in out)


# ---------------------------------------------------------------------------
# config loading

SHIPPED_GRID = "grid8.conf"


def _float(sec: configparser.SectionProxy, key: str, default: float | None = None) -> float:
    if key not in sec:
        if default is None:
            raise SchemaError(f"[{sec.name}] missing key {key!r}")
        return default
    try:
        return float(sec[key])
    except ValueError:
        raise SchemaError(f"[{sec.name}] {key} = {sec[key]!r} is not a number") from None


def _str(sec: configparser.SectionProxy, key: str) -> str:
    if key not in sec or not sec[key].strip():
        raise SchemaError(f"[{sec.name}] missing key {key!r}")
    return sec[key].strip()


def parse_grid(text: str) -> GridModel:
    """Parse grid config text (see ``data/grid8.conf`` for the schema)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise SchemaError(f"malformed grid config: {exc}") from None

    if "system" not in cp:
        raise SchemaError("missing [system] section")
    sysec = cp["system"]
    base_mva = _float(sysec, "base_mva")
    base_kv = _float(sysec, "base_kv")
    freq = _float(sysec, "frequency_hz", 50.0)

    if "bus" not in cp:
        raise SchemaError("missing [bus] section")
    buses = tuple(k.strip() for k in cp["bus"])
    names = {k.strip(): v.strip() for k, v in cp["bus"].items()}

    branches, trafos, sources, loads = [], [], [], []
    for name in cp.sections():
        kind, _, ident = name.partition(".")
        sec = cp[name]
        if kind in ("system", "bus"):
            if ident:
                raise SchemaError(f"section [{name}] takes no id")
            continue
        if not ident:
            raise SchemaError(f"section [{name}] needs an id, e.g. [{kind}.1]")
        if kind == "branch":
            r1, x1 = _float(sec, "r1"), _float(sec, "x1")
            branches.append(Branch(
                id=ident, from_bus=_str(sec, "from"), to_bus=_str(sec, "to"),
                r1=r1, x1=x1,
                r0=_float(sec, "r0", 3.0 * r1), x0=_float(sec, "x0", 3.0 * x1),
                rating_kv=_float(sec, "rating_kv", base_kv),
            ))
        elif kind == "transformer":
            trafos.append(TransformerLink(
                id=ident, from_bus=_str(sec, "from"), to_bus=_str(sec, "to"),
                x_leakage=_float(sec, "x"),
                zero_sequence_path=sec.get("zero_sequence", "grounded_through").strip(),
            ))
        elif kind == "source":
            sources.append(Source(
                id=ident, bus=_str(sec, "bus"), x_internal=_float(sec, "x"),
                voltage_setpoint=_float(sec, "v", 1.0), angle=_float(sec, "angle_deg", 0.0),
            ))
        elif kind == "load":
            loads.append(Load(id=ident, bus=_str(sec, "bus"), p=_float(sec, "p"), q=_float(sec, "q", 0.0)))
        else:
            raise SchemaError(f"unknown section [{name}]")

    return GridModel(
        buses=buses, branches=tuple(branches), transformers=tuple(trafos),
        sources=tuple(sources), loads=tuple(loads),
        base_mva=base_mva, base_kv=base_kv, frequency_hz=freq, bus_names=names,
    )


def shipped_grid_text() -> str:
    return resources.files("ipfc_relay").joinpath("data").joinpath(SHIPPED_GRID).read_text(encoding="utf-8")


def load_grid(source: str | Path | None = None) -> GridModel:
    """Load a grid from a config path; ``None`` or ``"builtin:grid8"`` gives the shipped 8-bus system."""
    if source is None or str(source) == "builtin:grid8":
        return parse_grid(shipped_grid_text())
    if str(source) == SHIPPED_GRID and not Path(source).exists():
        return parse_grid(shipped_grid_text())
    return parse_grid(Path(source).read_text(encoding="utf-8"))
