"""Dense pure-state simulation over ordered registers of mixed dimension.

Amplitudes are indexed mixed-radix over the layout order (first register is
the most significant digit).  States are immutable from the caller's point of
view: every operation returns a new :class:`PureState`.

Post-measurement branches are *not* renormalised.  Their norm is carried in
``norm_tag`` so that branch weights stay available to the caller.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_TOTAL_DIM = 2**22

ROLES = frozenset(
    {
        "control-compressed",
        "control-uncompressed",
        "target",
        "time",
        "ancilla",
        "error-flag",
        "result-tag",
    }
)


class DimensionError(ValueError):
    """Raised when register dimensions or digits do not match."""


class ProjectorError(ValueError):
    """Raised when a projector set is invalid."""


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator (Philox) used everywhere sampling happens.

    ``seed`` may be an int, a :class:`numpy.random.SeedSequence`, or an
    existing Generator (returned unchanged).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class Register:
    name: str
    dim: int
    role: str = "ancilla"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown register role {self.role!r}")
        if int(self.dim) < 2:
            raise DimensionError(f"register {self.name!r} needs dim >= 2, got {self.dim}")


@dataclass(frozen=True)
class RegisterLayout:
    registers: tuple[Register, ...]

    def __post_init__(self):
        names = [r.name for r in self.registers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate register names in {names}")
        if not self.registers:
            raise ValueError("layout needs at least one register")
        if self.total_dim > MAX_TOTAL_DIM:
            raise DimensionError(
                f"layout dimension {self.total_dim} exceeds desk-scale cap {MAX_TOTAL_DIM}"
            )

    @classmethod
    def of(cls, *specs) -> "RegisterLayout":
        """Build from ``(name, dim)`` or ``(name, dim, role)`` tuples."""
        return cls(tuple(Register(*s) for s in specs))

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(r.dim for r in self.registers)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(r.name for r in self.registers)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64))

    def axis(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DimensionError(f"no register named {name!r}") from None

    def axes(self, names: Iterable[str]) -> list[int]:
        return [self.axis(n) for n in names]

    def flat_index(self, digits: Sequence[int]) -> int:
        if len(digits) != len(self.registers):
            raise DimensionError(f"expected {len(self.registers)} digits, got {len(digits)}")
        for d, r in zip(digits, self.registers):
            if not 0 <= d < r.dim:
                raise DimensionError(f"digit {d} out of range for register {r.name!r} (dim {r.dim})")
        return int(np.ravel_multi_index(tuple(digits), self.dims))


@dataclass(frozen=True)
class PureState:
    layout: RegisterLayout
    amps: np.ndarray
    norm_tag: float = 1.0

    def __post_init__(self):
        amps = np.asarray(self.amps, dtype=complex).reshape(-1)
        if amps.size != self.layout.total_dim:
            raise DimensionError(
                f"amplitude vector has length {amps.size}, layout needs {self.layout.total_dim}"
            )
        amps = amps.copy()
        amps.flags.writeable = False
        object.__setattr__(self, "amps", amps)
        norm = float(np.linalg.norm(amps))
        if abs(norm - self.norm_tag) > 1e-12 * max(1.0, norm):
            raise ValueError(f"norm_tag {self.norm_tag} does not match amplitude norm {norm}")

    @classmethod
    def from_amps(cls, layout: RegisterLayout, amps) -> "PureState":
        amps = np.asarray(amps, dtype=complex)
        return cls(layout, amps, float(np.linalg.norm(amps)))

    def tensor(self) -> np.ndarray:
        return self.amps.reshape(self.layout.dims)

    def normalized(self) -> "PureState":
        if self.norm_tag == 0:
            raise ValueError("cannot normalise a zero branch")
        return PureState(self.layout, self.amps / self.norm_tag, 1.0)


@dataclass(frozen=True)
class UnitarySpec:
    acting_registers: tuple[str, ...]
    matrix: np.ndarray = field(repr=False)
    atol: float = 1e-10

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"unitary must be square, got shape {m.shape}")
        if not np.allclose(m.conj().T @ m, np.eye(m.shape[0]), atol=self.atol, rtol=0):
            raise ValueError("matrix is not unitary within tolerance")
        object.__setattr__(self, "acting_registers", tuple(self.acting_registers))
        object.__setattr__(self, "matrix", m)

    def dagger(self) -> "UnitarySpec":
        return UnitarySpec(self.acting_registers, self.matrix.conj().T, self.atol)


@dataclass(frozen=True)
class ProjectorSpec:
    acting_registers: tuple[str, ...]
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.asarray(self.matrix, dtype=complex)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise DimensionError(f"projector must be square, got shape {p.shape}")
        if not np.allclose(p, p.conj().T, atol=1e-10, rtol=0):
            raise ProjectorError("projector is not Hermitian")
        if not np.allclose(p @ p, p, atol=1e-10, rtol=0):
            raise ProjectorError("projector is not idempotent")
        object.__setattr__(self, "acting_registers", tuple(self.acting_registers))
        object.__setattr__(self, "matrix", p)


def init_basis(layout: RegisterLayout, digits: Sequence[int]) -> PureState:
    amps = np.zeros(layout.total_dim, dtype=complex)
    amps[layout.flat_index(digits)] = 1.0
    return PureState(layout, amps, 1.0)


def apply_local(tensor: np.ndarray, axes: Sequence[int], matrix: np.ndarray) -> np.ndarray:
    """Apply ``matrix`` to the given tensor axes (row index = output digits)."""
    axes = list(axes)
    moved = np.moveaxis(tensor, axes, range(len(axes)))
    front = moved.shape[: len(axes)]
    flat = moved.reshape(int(np.prod(front)), -1)
    out = (matrix @ flat).reshape(moved.shape)
    return np.moveaxis(out, range(len(axes)), axes)


def _check_block(layout: RegisterLayout, names: Sequence[str], size: int) -> list[int]:
    axes = layout.axes(names)
    if len(set(axes)) != len(axes):
        raise DimensionError("repeated register in operator")
    expected = int(np.prod([layout.dims[a] for a in axes]))
    if expected != size:
        raise DimensionError(
            f"operator of size {size} does not match registers {list(names)} (dim {expected})"
        )
    return axes


def apply_unitary(state: PureState, u: UnitarySpec) -> PureState:
    axes = _check_block(state.layout, u.acting_registers, u.matrix.shape[0])
    out = apply_local(state.tensor(), axes, u.matrix)
    return PureState(state.layout, out.reshape(-1), state.norm_tag)


def branch_probabilities(state: PureState, projectors: Sequence[ProjectorSpec]) -> tuple[list[float], list[np.ndarray]]:
    """Exact (unsampled) probabilities and un-normalised branches of a measurement."""
    if not projectors:
        raise ProjectorError("empty projector set")
    names = projectors[0].acting_registers
    if any(p.acting_registers != names for p in projectors):
        raise ProjectorError("all projectors must act on the same registers")
    size = projectors[0].matrix.shape[0]
    total = sum(p.matrix for p in projectors)
    if not np.allclose(total, np.eye(size), atol=1e-10, rtol=0):
        raise ProjectorError("projectors do not sum to the identity")
    axes = _check_block(state.layout, names, size)
    denom = state.norm_tag**2
    probs, branches = [], []
    for p in projectors:
        b = apply_local(state.tensor(), axes, p.matrix).reshape(-1)
        branches.append(b)
        probs.append(float(np.vdot(b, b).real) / denom if denom > 0 else 0.0)
    return probs, branches


def measure(state: PureState, projectors: Sequence[ProjectorSpec], rng_seed) -> tuple[int, PureState, float]:
    """Sample one outcome.

    Sampling draws a single uniform variate from the Philox stream and walks
    the cumulative distribution in projector order, so a fixed seed always
    yields the same outcome.
    """
    probs, branches = branch_probabilities(state, projectors)
    rng = make_rng(rng_seed)
    r = rng.random()
    acc = 0.0
    outcome = len(probs) - 1
    for i, p in enumerate(probs):
        acc += p
        if r < acc:
            outcome = i
            break
    b = branches[outcome]
    return outcome, PureState(state.layout, b, float(np.linalg.norm(b))), probs[outcome]


def reduced_density(state: PureState, keep: Sequence[str]) -> np.ndarray:
    if not keep:
        raise DimensionError("keep set must be non-empty")
    layout = state.layout
    keep_axes = sorted(set(layout.axes(keep)))
    rest = [a for a in range(len(layout.dims)) if a not in keep_axes]
    t = np.moveaxis(state.tensor(), keep_axes + rest, range(len(layout.dims)))
    dk = int(np.prod([layout.dims[a] for a in keep_axes]))
    flat = t.reshape(dk, -1)
    return flat @ flat.conj().T


def _hermitian_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    for m in (a, b):
        if not np.allclose(m, m.conj().T, atol=1e-8, rtol=0):
            raise ValueError("density matrix is not Hermitian")
    d = a - b
    return (d + d.conj().T) / 2


def trace_norm(a: np.ndarray, b: np.ndarray | None = None) -> float:
    """Unhalved trace norm ``||a - b||_1`` (``b`` defaults to zero)."""
    if b is None:
        b = np.zeros_like(a)
    return float(np.sum(np.abs(np.linalg.eigvalsh(_hermitian_diff(a, b)))))


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Halved convention: ``0.5 * ||a - b||_1``."""
    return 0.5 * trace_norm(a, b)


def fidelity_pure(a: np.ndarray, b: np.ndarray) -> float:
    """|<a|b>|^2 for normalised vectors (global phase ignored)."""
    a = np.asarray(a, dtype=complex).reshape(-1)
    b = np.asarray(b, dtype=complex).reshape(-1)
    return float(abs(np.vdot(a / np.linalg.norm(a), b / np.linalg.norm(b))) ** 2)
