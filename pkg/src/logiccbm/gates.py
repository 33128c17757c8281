"""The 16 real-valued binary logic gates and their exact derivatives.

Every gate is a bilinear polynomial z = k0 + ka*A + kb*B + kab*A*B that
agrees with the corresponding boolean connective on the four corners of
the unit square. Gate ids are ordered so that the corner values
(00, 01, 10, 11) spell the id in binary, which makes id and 15 - id
real-valued complements.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import DuplicateGateId, EmptySubset, InputOutOfRange, UnknownGateId

N_GATES = 16
RANGE_TOL = 1e-9

# id -> (k0, ka, kb, kab)
_COEFFS = np.array(
    [
        (0, 0, 0, 0),    # 0   False
        (0, 0, 0, 1),    # 1   A and B
        (0, 1, 0, -1),   # 2   not(A implies B)
        (0, 1, 0, 0),    # 3   A
        (0, 0, 1, -1),   # 4   not(A if B)
        (0, 0, 1, 0),    # 5   B
        (0, 1, 1, -2),   # 6   A xor B
        (0, 1, 1, -1),   # 7   A or B
        (1, -1, -1, 1),  # 8   not(A or B)
        (1, -1, -1, 2),  # 9   not(A xor B)
        (1, 0, -1, 0),   # 10  not B
        (1, 0, -1, 1),   # 11  A if B
        (1, -1, 0, 0),   # 12  not A
        (1, -1, 0, 1),   # 13  A implies B
        (1, 0, 0, -1),   # 14  not(A and B)
        (1, 0, 0, 0),    # 15  True
    ],
    dtype=np.float64,
)

# Token used in the prefix formula syntax, and display symbol.
_NAMES = [
    "FALSE", "AND", "NIMPLIES", "A", "NCONVERSE", "B", "XOR", "OR",
    "NOR", "XNOR", "NOTB", "CONVERSE", "NOTA", "IMPLIES", "NAND", "TRUE",
]
_SYMBOLS = [
    "False", "A ∧ B", "¬(A ⇒ B)", "A", "¬(A ⇐ B)", "B", "A ⊕ B", "A ∨ B",
    "¬(A ∨ B)", "¬(A ⊕ B)", "¬B", "A ⇐ B", "¬A", "A ⇒ B", "¬(A ∧ B)", "True",
]
_POLYNOMIALS = [
    "0", "A*B", "A - A*B", "A", "B - A*B", "B", "A + B - 2*A*B", "A + B - A*B",
    "1 - (A + B - A*B)", "1 - (A + B - 2*A*B)", "1 - B", "1 - B + A*B",
    "1 - A", "1 - A + A*B", "1 - A*B", "1",
]

SIMPLE8_IDS = (0, 1, 3, 5, 7, 10, 12, 15)


@dataclass(frozen=True)
class GateDescriptor:
    id: int
    name: str
    symbol: str
    polynomial: str
    truth_corners: tuple[int, int, int, int]  # values at inputs 00, 01, 10, 11

    @property
    def coefficients(self) -> tuple[float, float, float, float]:
        return tuple(_COEFFS[self.id])


@dataclass(frozen=True)
class GateSubset:
    ids: tuple[int, ...]
    name: str

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def coefficients(self) -> np.ndarray:
        """(q, 4) coefficient rows for the member gates."""
        return _COEFFS[list(self.ids)]


def _check_gate_id(gate_id: int) -> int:
    gate_id = int(gate_id)
    if not 0 <= gate_id < N_GATES:
        raise UnknownGateId(f"gate id {gate_id} outside [0, {N_GATES - 1}]")
    return gate_id


def _check_unit(value: float, label: str) -> float:
    if not np.isfinite(value) or value < -RANGE_TOL or value > 1.0 + RANGE_TOL:
        raise InputOutOfRange(f"{label}={value!r} outside [0, 1]")
    return min(max(float(value), 0.0), 1.0)


def gate_eval(gate_id: int, a: float, b: float) -> float:
    """Evaluate one gate's polynomial at activations a, b in [0, 1]."""
    gate_id = _check_gate_id(gate_id)
    a = _check_unit(a, "a")
    b = _check_unit(b, "b")
    k0, ka, kb, kab = _COEFFS[gate_id]
    return float(k0 + ka * a + kb * b + kab * a * b)


def gate_grad(gate_id: int, a: float, b: float) -> tuple[float, float]:
    """Exact (dz/da, dz/db) of the gate polynomial at (a, b)."""
    gate_id = _check_gate_id(gate_id)
    a = _check_unit(a, "a")
    b = _check_unit(b, "b")
    _, ka, kb, kab = _COEFFS[gate_id]
    return float(ka + kab * b), float(kb + kab * a)


def _corners(gate_id: int) -> tuple[int, int, int, int]:
    k0, ka, kb, kab = _COEFFS[gate_id]
    return tuple(int(round(k0 + ka * a + kb * b + kab * a * b)) for a, b in ((0, 0), (0, 1), (1, 0), (1, 1)))


_TABLE = tuple(
    GateDescriptor(
        id=i,
        name=_NAMES[i],
        symbol=_SYMBOLS[i],
        polynomial=_POLYNOMIALS[i],
        truth_corners=_corners(i),
    )
    for i in range(N_GATES)
)

_NAME_TO_ID = {d.name: d.id for d in _TABLE}


def gate_table() -> tuple[GateDescriptor, ...]:
    """All 16 gate descriptors, ordered by id."""
    return _TABLE


def gate_name_to_id(name: str) -> int:
    try:
        return _NAME_TO_ID[name.upper()]
    except KeyError:
        raise UnknownGateId(f"unknown gate name {name!r}") from None


def gate_subset(spec: Union[str, Iterable[int]]) -> GateSubset:
    """Resolve "full16", "simple8", or an explicit id list into a GateSubset."""
    if isinstance(spec, str):
        if spec == "full16":
            return GateSubset(tuple(range(N_GATES)), "full16")
        if spec == "simple8":
            return GateSubset(SIMPLE8_IDS, "simple8")
        raise UnknownGateId(f"unknown subset name {spec!r}")
    ids = tuple(_check_gate_id(i) for i in spec)
    if not ids:
        raise EmptySubset("gate subset must contain at least one gate")
    if len(set(ids)) != len(ids):
        raise DuplicateGateId(f"duplicate gate ids in {ids}")
    return GateSubset(ids, "custom")


def eval_gates_batch(coeffs: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Evaluate a (q, 4) coefficient block at broadcastable a, b arrays.

    Returns an array of shape a.shape + (q,). No range validation; callers
    clamp. Used by the logic layer's vectorized forward pass.
    """
    ab = a * b
    return (
        coeffs[:, 0]
        + coeffs[:, 1] * a[..., None]
        + coeffs[:, 2] * b[..., None]
        + coeffs[:, 3] * ab[..., None]
    )
