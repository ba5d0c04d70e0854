"""Entanglement certification from partial-transpose moments.

A separable state has a positive semidefinite partial transpose, and a
PSD spectrum has nonnegative elementary symmetric polynomials (ESPs).
Estimated moments ``p_k = sum(lambda**k)`` therefore certify
entanglement as soon as any derived ``e_k`` is negative; the smallest
such order is the cheapest witness the moments can offer.

ESPs follow from power sums via the Newton-Girard recurrence

    k e_k = sum_{j=1}^{k} (-1)**(j-1) p_j e_{k-j},      e_0 = 1.

Because the characteristic polynomial of a Hermitian matrix has only
real roots, Descartes' rule applied to the ESP sign sequence bounds and
parity-matches the number of negative eigenvalues, which refines the
verdict beyond a single violated order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "EspVector",
    "newton_girard",
    "hierarchy_check",
    "DescartesBound",
    "descartes_bound",
    "MomentConstraint",
    "low_order_constraints",
    "CertificationVerdict",
    "certification_verdict",
]

# Magnitudes below this are treated as exact zeros when counting sign
# variations; estimated ESPs this small carry no usable sign.
ZERO_TOLERANCE = 1e-14


@dataclass(frozen=True)
class EspVector:
    """Elementary symmetric polynomials ``e_0 .. e_k`` with provenance.

    ``source`` records whether the values came from estimated moments
    or from an exact spectrum; downstream reporting keeps the two apart.
    """

    values: np.ndarray
    source: str = "estimated"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("an ESP vector needs at least the order-0 entry")
        if values[0] != 1.0:
            raise ValueError(f"e_0 must be exactly 1, got {values[0]}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def max_order(self) -> int:
        return self.values.size - 1

    def __getitem__(self, k: int) -> float:
        return float(self.values[k])


def newton_girard(power_sums: Sequence[float], source: str = "estimated") -> EspVector:
    """Convert power sums ``[p_1, p_2, ..., p_K]`` into ``e_0 .. e_K``.

    For trace moments of a unit-trace operator the first entry is 1,
    but the recurrence itself does not require that.
    """
    p = np.asarray(power_sums, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError(f"power sums must be a flat sequence, got shape {p.shape}")
    K = p.size
    e = np.empty(K + 1)
    e[0] = 1.0
    for k in range(1, K + 1):
        acc = 0.0
        for j in range(1, k + 1):
            term = p[j - 1] * e[k - j]
            acc += term if j % 2 else -term
        e[k] = acc / k
    return EspVector(e, source=source)


def hierarchy_check(esp: EspVector, tolerance: float = 0.0) -> int | None:
    """Smallest order ``k >= 1`` with ``e_k < -tolerance``, or None.

    A hit means the underlying spectrum cannot be PSD, i.e. the state
    is entangled across the transposed cut.
    """
    if tolerance < 0:
        raise ValueError(f"tolerance must be nonnegative, got {tolerance}")
    for k in range(1, esp.max_order + 1):
        if esp.values[k] < -tolerance:
            return k
    return None


class DescartesBound(NamedTuple):
    variations: int
    parity: int


def descartes_bound(esp: EspVector, zero_tolerance: float = ZERO_TOLERANCE) -> DescartesBound:
    """Sign-variation bound on the number of negative eigenvalues.

    Entries within ``zero_tolerance`` of zero are deleted, then sign
    changes of consecutive survivors are counted.  For a full ESP
    sequence of a real spectrum the negative-eigenvalue count is at
    most ``variations`` and has the same parity.
    """
    signs = [1.0]
    for value in esp.values[1:]:
        if abs(value) > zero_tolerance:
            signs.append(1.0 if value > 0 else -1.0)
    variations = sum(1 for a, b in zip(signs, signs[1:]) if a != b)
    return DescartesBound(variations, variations % 2)


@dataclass(frozen=True)
class MomentConstraint:
    """One closed-form moment inequality: its order, slack and verdict.

    ``slack`` is ``k * e_k`` expressed directly in the moments, so it is
    positive when the constraint holds with room to spare.
    """

    order: int
    slack: float
    satisfied: bool


def low_order_constraints(
    power_sums: Sequence[float], tolerance: float = 0.0
) -> list[MomentConstraint]:
    """Closed-form PSD constraints on ``p_2 .. p_5`` (as many as supplied).

    ``power_sums`` starts at the second moment and assumes a unit trace
    (``p_1 = 1``).  The inequalities are algebraically identical to
    ``e_k >= 0`` for ``k = 2..5``; order k is reported satisfied when
    its slack ``k * e_k`` stays above ``-k * tolerance``, matching a
    hierarchy check at the same tolerance.
    """
    p = [float(x) for x in power_sums]
    if not 1 <= len(p) <= 4:
        raise ValueError(f"expected between one (p_2) and four (p_2..p_5) moments, got {len(p)}")
    if tolerance < 0:
        raise ValueError(f"tolerance must be nonnegative, got {tolerance}")
    p2 = p[0]
    slacks = {2: 1.0 - p2}
    if len(p) > 1:
        p3 = p[1]
        slacks[3] = p3 - (3.0 * p2 - 1.0) / 2.0
    if len(p) > 2:
        p4 = p[2]
        slacks[4] = (1.0 - 6.0 * p2 + 3.0 * p2**2 + 8.0 * p3) / 6.0 - p4
    if len(p) > 3:
        p5 = p[3]
        slacks[5] = p5 - (-1.0 + 10.0 * p2 - 15.0 * p2**2 - 20.0 * p3 + 20.0 * p2 * p3 + 30.0 * p4) / 24.0
    return [
        MomentConstraint(k, slack, slack >= -k * tolerance)
        for k, slack in sorted(slacks.items())
    ]


@dataclass(frozen=True)
class CertificationVerdict:
    """Combined verdict from one ESP vector."""

    entangled: bool
    first_violated_order: int | None
    negative_count_bound: int
    negative_count_parity: int
    source: str


def certification_verdict(esp: EspVector, tolerance: float = 0.0) -> CertificationVerdict:
    """Assemble the hierarchy and Descartes readings of one ESP vector."""
    first = hierarchy_check(esp, tolerance)
    bound = descartes_bound(esp)
    return CertificationVerdict(
        entangled=first is not None,
        first_violated_order=first,
        negative_count_bound=bound.variations,
        negative_count_parity=bound.parity,
        source=esp.source,
    )
