"""Phasor helpers and the symmetrical-component (Fortescue) transform.

Phasors are plain Python ``complex`` values in per-unit.  Angles are given in
degrees wherever they cross the public API.  Sequence order everywhere in this
package is (positive, negative, zero).
"""

from __future__ import annotations

import cmath
import math
from typing import NamedTuple

import numpy as np

A = cmath.exp(2j * math.pi / 3)
A2 = A * A

# Rows map (a, b, c) to (pos, neg, zero).
ABC_TO_SEQ = np.array(
    [
        [1.0, A, A2],
        [1.0, A2, A],
        [1.0, 1.0, 1.0],
    ],
    dtype=complex,
) / 3.0

# Columns are (pos, neg, zero).
SEQ_TO_ABC = np.array(
    [
        [1.0, 1.0, 1.0],
        [A2, A, 1.0],
        [A, A2, 1.0],
    ],
    dtype=complex,
)


class ThreePhaseSet(NamedTuple):
    a: complex
    b: complex
    c: complex


class SequenceSet(NamedTuple):
    pos: complex
    neg: complex
    zero: complex


def polar(magnitude: float, angle_deg: float) -> complex:
    """Build a phasor from magnitude and angle in degrees."""
    return cmath.rect(magnitude, math.radians(angle_deg))


def magnitude(p: complex) -> float:
    return abs(p)


def angle_deg(p: complex) -> float:
    """Angle of ``p`` in degrees, normalised to (-180, 180]."""
    if p == 0:
        return 0.0
    ang = math.degrees(math.atan2(p.imag, p.real))
    if ang <= -180.0:
        ang += 360.0
    return ang


def rect_to_polar(d: float, q: float) -> tuple[float, float]:
    """Return ``(magnitude, angle_deg)`` of the rectangular pair ``(d, q)``.

    ``(0, 0)`` maps to ``(0, 0)``.
    """
    if not (math.isfinite(d) and math.isfinite(q)):
        raise ValueError(f"non-finite rectangular components ({d!r}, {q!r})")
    return math.hypot(d, q), angle_deg(complex(d, q))


def _check_finite(values, what: str) -> None:
    for v in values:
        if not cmath.isfinite(v):
            raise ValueError(f"non-finite {what} component: {v!r}")


def abc_to_012(p: ThreePhaseSet) -> SequenceSet:
    """Fortescue transform with the 1/3-scaled forward matrix."""
    _check_finite(p, "phase")
    va, vb, vc = p
    return SequenceSet(
        (va + A * vb + A2 * vc) / 3.0,
        (va + A2 * vb + A * vc) / 3.0,
        (va + vb + vc) / 3.0,
    )


def seq_012_to_abc(s: SequenceSet) -> ThreePhaseSet:
    """Inverse Fortescue transform."""
    _check_finite(s, "sequence")
    v1, v2, v0 = s
    return ThreePhaseSet(
        v0 + v1 + v2,
        v0 + A2 * v1 + A * v2,
        v0 + A * v1 + A2 * v2,
    )


def balanced(v: complex) -> ThreePhaseSet:
    """Positive-sequence balanced set with phase-a phasor ``v``."""
    return ThreePhaseSet(v, A2 * v, A * v)
