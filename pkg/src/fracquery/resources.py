"""Resource counters and the modeled gate-cost table.

Only slopes of these tallies are ever compared against anything, so the
constants below are bookkeeping conventions rather than circuit claims:

* a controlled ``M(gamma)`` rotation or any single-qubit rotation costs 1;
* adding, subtracting or comparing two ``b``-bit registers costs ``5 b``;
* flipping one qubit costs 1;
* swapping two ``b``-qubit registers costs ``3 b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

ROTATION_COST = 1
ADD_COST_PER_BIT = 5
FLIP_COST = 1
SWAP_COST_PER_QUBIT = 3

COST_MODEL = {
    "rotation": ROTATION_COST,
    "add_per_bit": ADD_COST_PER_BIT,
    "flip": FLIP_COST,
    "swap_per_qubit": SWAP_COST_PER_QUBIT,
}


def bits_for(dim: int) -> int:
    """Qubits needed to hold values ``0 .. dim-1``."""
    return max(1, math.ceil(math.log2(dim))) if dim > 1 else 1


def adder_cost(dim: int) -> int:
    return ADD_COST_PER_BIT * bits_for(dim)


@dataclass
class ResourceTally:
    queries: int = 0
    modeled_gates: int = 0
    registers_high_water: int = 0
    correction_attempts: int = 0
    # fixed, data-independent queries used to invert known errors during undo attempts
    error_undo_queries: int = 0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be nonnegative")

    def add_queries(self, n: int) -> None:
        self.queries += int(n)

    def add_gates(self, n: int) -> None:
        self.modeled_gates += int(n)

    def note_qubits(self, n: int) -> None:
        self.registers_high_water = max(self.registers_high_water, int(n))

    def absorb(self, other: "ResourceTally") -> "ResourceTally":
        """Sequential composition: counts add, high-water marks take the max."""
        self.queries += other.queries
        self.modeled_gates += other.modeled_gates
        self.correction_attempts += other.correction_attempts
        self.error_undo_queries += other.error_undo_queries
        self.registers_high_water = max(self.registers_high_water, other.registers_high_water)
        return self

    def copy(self) -> "ResourceTally":
        return ResourceTally(**{f.name: getattr(self, f.name) for f in fields(self)})

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def preparation_cost(n: int, k: int, q: int) -> tuple[int, int]:
    """Modeled (gates, qubits) of the compressed preparation on a block of ``n`` positions.

    Covers: sentinel-to-zero flips, the exponential-state cascades, prefix
    sums, weight detection, the register-(h+1) offset, inverse cascades with
    the flag swap, zero-to-sentinel flips, and weight uncomputation.
    """
    slots = k + 1
    r = int(math.log2(q))
    phi_qubits = r + 1
    work_dim = max(n + q + 2, 2 * q)
    add = adder_cost(work_dim)
    weight_bits = bits_for(k + 2)
    cascade = ROTATION_COST * (1 + r)
    gates = 0
    gates += slots * FLIP_COST  # |n> -> |0>
    gates += slots * cascade  # prepare phi_q on every slot
    gates += k * add  # prefix sums
    gates += slots * add + slots * weight_bits  # locate first slot above n
    gates += slots * add  # undo prefix sums, offset register h+1
    gates += slots * cascade + SWAP_COST_PER_QUBIT * phi_qubits  # inverse cascades, flag swap
    gates += slots * FLIP_COST  # |0> -> |n>
    gates += slots * add + slots * weight_bits  # uncompute weight
    qubits = slots * bits_for(work_dim) + phi_qubits + weight_bits
    return gates, qubits


def phase_cost(n: int, k: int) -> int:
    """Weight count into an ancilla, ``i**h`` phases, and uncount."""
    return 2 * (k + 1) * adder_cost(n + 1) + bits_for(k + 2)


def drive_query_cost(n: int, k: int, q: int, k_prime: int, gate_cost: int) -> int:
    """Prefix sums in and out, ``k' + 1`` controlled drives and ``k'`` controlled queries."""
    add = adder_cost(n + q + 2)
    return 2 * k * add + (k_prime + 1) * gate_cost + k_prime * ROTATION_COST


def split_cost(n: int, k: int) -> int:
    return 2 * (k + 1) * adder_cost(n + 1)


def measurement_step_cost(n: int, k: int, q: int) -> int:
    """``U~_n`` dagger, the zero test on every slot plus flag, and ``U~_n`` again."""
    prep, _ = preparation_cost(n, k, q)
    return 2 * prep + (k + 1) * adder_cost(n + 1) + bits_for(2 * q)
