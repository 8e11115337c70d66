"""Query oracle (discrete, fractional, Hamiltonian) and driving evolutions.

The oracle Hamiltonian is ``H_Q = diag(x_j)`` and the discrete query is
``Q = diag((-1)**x_j) = I - 2 H_Q``.  Dropping the global phase
``exp(-i t / 2)``, evolution under ``H_Q`` for time ``t`` is
``cos(t/2) I + i sin(t/2) Q``; :func:`oracle_evolution` applies exactly that
operator, so it equals ``expm(-1j * H_Q * t)`` only up to that phase.

Driving evolutions follow the controlled start/finish-time semantics: a pair
of time registers holding grid indices selects the window, and the target
evolves under the driving Hamiltonian over that window.  Windows with
``t_s > t_f`` are a contract violation.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from .statevector import DimensionError, PureState, apply_local

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

MAX_EXACT_DIM = 64


class ContractViolation(RuntimeError):
    """Raised when a controlled drive sees a window with t_s > t_f."""


@dataclass(frozen=True)
class OracleString:
    bits: tuple[int, ...]

    def __post_init__(self):
        bits = self.bits
        if isinstance(bits, str):
            bits = tuple(int(c) for c in bits)
        bits = tuple(int(b) for b in bits)
        if not bits:
            raise ValueError("oracle string must be non-empty")
        if any(b not in (0, 1) for b in bits):
            raise ValueError(f"oracle bits must be 0/1, got {bits}")
        object.__setattr__(self, "bits", bits)

    @property
    def L(self) -> int:
        return len(self.bits)

    @property
    def x(self) -> np.ndarray:
        return np.array(self.bits, dtype=float)

    def query_diag(self) -> np.ndarray:
        return 1.0 - 2.0 * self.x

    def hamiltonian(self) -> np.ndarray:
        return np.diag(self.x).astype(complex)

    def query_matrix(self) -> np.ndarray:
        return np.diag(self.query_diag()).astype(complex)

    def __str__(self) -> str:
        return "".join(map(str, self.bits))


def _diag_on_register(state: PureState, target_register: str, diag: np.ndarray) -> PureState:
    axis = state.layout.axis(target_register)
    if state.layout.dims[axis] != diag.size:
        raise DimensionError(
            f"target register {target_register!r} has dim {state.layout.dims[axis]}, oracle has L={diag.size}"
        )
    shape = [1] * len(state.layout.dims)
    shape[axis] = diag.size
    out = state.tensor() * diag.reshape(shape)
    return PureState(state.layout, out.reshape(-1), state.norm_tag)


def apply_query(state: PureState, oracle: OracleString, target_register: str) -> PureState:
    return _diag_on_register(state, target_register, oracle.query_diag().astype(complex))


def fractional_query_matrix(oracle: OracleString, lam: float) -> np.ndarray:
    return np.diag(np.exp(1j * np.pi * lam * oracle.x))


def apply_fractional_query(state: PureState, oracle: OracleString, target_register: str, lam: float) -> PureState:
    if not 0 < lam <= 1:
        raise ValueError(f"fractional query power must lie in (0, 1], got {lam}")
    return _diag_on_register(state, target_register, np.exp(1j * np.pi * lam * oracle.x))


def oracle_evolution_matrix(oracle: OracleString, t: float) -> np.ndarray:
    return math.cos(t / 2) * np.eye(oracle.L) + 1j * math.sin(t / 2) * oracle.query_matrix()


def oracle_evolution(state: PureState, oracle: OracleString, target_register: str, t: float) -> PureState:
    diag = math.cos(t / 2) + 1j * math.sin(t / 2) * oracle.query_diag()
    return _diag_on_register(state, target_register, diag)


@dataclass(frozen=True)
class TimeWindow:
    t_start: int
    t_finish: int

    def __post_init__(self):
        if self.t_start > self.t_finish:
            raise ContractViolation(f"window start {self.t_start} after finish {self.t_finish}")


@dataclass(frozen=True)
class DriveError:
    """A fixed unitary perturbation of operator norm ``eps`` applied after each
    non-trivial drive window.

    The perturbation is ``expm(-i theta K)`` with ``K`` a seeded random
    Hermitian matrix rescaled to spectral norm 1 and
    ``theta = 2 asin(eps / 2)``, so ``||U' - U|| = eps`` exactly.
    """

    eps: float
    seed: int = 0

    def matrix(self, dim: int) -> np.ndarray:
        rng = np.random.Generator(np.random.Philox(self.seed))
        a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        k = (a + a.conj().T) / 2
        k /= np.max(np.abs(np.linalg.eigvalsh(k)))
        theta = 2 * math.asin(min(self.eps, 2.0) / 2)
        return expm(-1j * theta * k)


@dataclass(eq=False)
class DrivingSpec:
    """Driving Hamiltonian ``H(t)`` on the target space.

    ``time_grid`` is the number of representable times per unit interval;
    time registers hold integer grid indices ``n`` meaning ``t = n / time_grid``.
    ``breakpoints`` marks where a piecewise-constant ``H`` may jump; when the
    Hamiltonian is known to be constant, ``constant`` short-cuts evolution to
    a single matrix exponential.
    """

    hamiltonian: Callable[[float], np.ndarray]
    norm_bound: float
    total_time: float
    gate_cost: int = 1
    time_grid: int = 1
    dim: int | None = None
    constant: bool = False
    breakpoints: tuple[float, ...] = ()
    error: DriveError | None = None
    name: str = "custom"
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        h0 = np.asarray(self.hamiltonian(0.0), dtype=complex)
        if self.dim is None:
            self.dim = h0.shape[0]
        for t in np.linspace(0.0, self.total_time, 9):
            h = np.asarray(self.hamiltonian(float(t)), dtype=complex)
            if h.shape != (self.dim, self.dim):
                raise DimensionError(f"H({t}) has shape {h.shape}, expected {(self.dim, self.dim)}")
            if not np.allclose(h, h.conj().T, atol=1e-10, rtol=0):
                raise ValueError(f"H({t}) is not Hermitian")
            if np.linalg.norm(h, 2) > self.norm_bound + 1e-10:
                raise ValueError(f"||H({t})|| exceeds norm_bound {self.norm_bound}")

    def with_error(self, error: DriveError | None) -> "DrivingSpec":
        return DrivingSpec(
            self.hamiltonian, self.norm_bound, self.total_time, self.gate_cost,
            self.time_grid, self.dim, self.constant, self.breakpoints, error, self.name,
        )

    def with_grid(self, time_grid: int) -> "DrivingSpec":
        return DrivingSpec(
            self.hamiltonian, self.norm_bound, self.total_time, self.gate_cost,
            time_grid, self.dim, self.constant, self.breakpoints, self.error, self.name,
        )

    def ideal_propagator(self, t_s: float, t_f: float, precision: float = 1e-10) -> np.ndarray:
        """Time-ordered ``T exp(-i int H dt)`` from ``t_s`` to ``t_f``."""
        if t_s > t_f + 1e-15:
            raise ContractViolation(f"evolution from {t_s} back to {t_f}")
        key = (round(t_s, 14), round(t_f, 14), precision)
        if key in self._cache:
            return self._cache[key]
        if t_f - t_s <= 1e-15:
            u = np.eye(self.dim, dtype=complex)
        elif self.constant:
            u = expm(-1j * np.asarray(self.hamiltonian(t_s), dtype=complex) * (t_f - t_s))
        else:
            cuts = [t_s] + [b for b in self.breakpoints if t_s < b < t_f] + [t_f]
            u = np.eye(self.dim, dtype=complex)
            for a, b in zip(cuts[:-1], cuts[1:]):
                u = _time_ordered(self.hamiltonian, a, b, precision, piecewise=bool(self.breakpoints)) @ u
        self._cache[key] = u
        return u

    def propagator(self, t_s: float, t_f: float, precision: float = 1e-10) -> np.ndarray:
        """Implemented window evolution, including any injected error."""
        u = self.ideal_propagator(t_s, t_f, precision)
        if self.error is not None and t_f - t_s > 1e-15:
            u = self.error.matrix(self.dim) @ u
        return u


def _time_ordered(hamiltonian, a: float, b: float, precision: float, piecewise: bool) -> np.ndarray:
    if piecewise:
        return expm(-1j * np.asarray(hamiltonian((a + b) / 2), dtype=complex) * (b - a))

    def midpoint(n: int) -> np.ndarray:
        dt = (b - a) / n
        u = None
        for j in range(n):
            step = expm(-1j * np.asarray(hamiltonian(a + (j + 0.5) * dt), dtype=complex) * dt)
            u = step if u is None else step @ u
        return u

    n = 4
    coarse = midpoint(n)
    while True:
        n *= 2
        fine = midpoint(n)
        if np.linalg.norm(fine - coarse, 2) <= precision / 2 or n > 2**16:
            return fine
        coarse = fine


def controlled_drive(
    state: PureState,
    time_registers: tuple[str, str],
    target_register: str,
    driving: DrivingSpec,
    precision: float = 1e-10,
    t_offset: float = 0.0,
) -> PureState:
    """Block-diagonal drive controlled by start/finish time registers.

    Basis value ``n`` of a time register means ``t_offset + n / time_grid``.
    """
    layout = state.layout
    s_ax, f_ax = layout.axes(time_registers)
    tgt = layout.axis(target_register)
    if layout.dims[tgt] != driving.dim:
        raise DimensionError("target register does not match the driving Hamiltonian dimension")
    t = state.tensor()
    out = np.array(t, copy=True)
    grid = driving.time_grid
    for ts in range(layout.dims[s_ax]):
        for tf in range(layout.dims[f_ax]):
            idx = [slice(None)] * t.ndim
            idx[s_ax], idx[f_ax] = ts, tf
            block = t[tuple(idx)]
            if not np.any(np.abs(block) > 0):
                continue
            if ts > tf:
                raise ContractViolation(f"time registers hold t_s={ts} > t_f={tf}")
            u = driving.propagator(t_offset + ts / grid, t_offset + tf / grid, precision)
            # the target axis index shifts down once for each removed axis before it
            ax = tgt - (s_ax < tgt) - (f_ax < tgt)
            out[tuple(idx)] = apply_local(block, [ax], u)
    return PureState(layout, out.reshape(-1), state.norm_tag)


def exact_total_propagator(
    driving: DrivingSpec, oracle: OracleString, duration: float, tol: float = 1e-9
) -> np.ndarray:
    """``T exp(-i int (H(t) + H_Q) dt)`` over ``[0, duration]`` as a dense matrix."""
    if driving.dim > MAX_EXACT_DIM:
        raise DimensionError(f"target dimension {driving.dim} exceeds dense cap {MAX_EXACT_DIM}")
    if oracle.L != driving.dim:
        raise DimensionError("oracle length and driving dimension differ")
    if duration > driving.total_time + 1e-12:
        raise ValueError(f"duration {duration} exceeds total time {driving.total_time}")
    hq = oracle.hamiltonian()
    if duration <= 0:
        return np.eye(driving.dim, dtype=complex)
    if driving.constant:
        return expm(-1j * (np.asarray(driving.hamiltonian(0.0), dtype=complex) + hq) * duration)
    cuts = [0.0] + [b for b in driving.breakpoints if 0 < b < duration] + [duration]
    u = np.eye(driving.dim, dtype=complex)
    for a, b in zip(cuts[:-1], cuts[1:]):
        u = _time_ordered(lambda t: driving.hamiltonian(t) + hq, a, b, tol, bool(driving.breakpoints)) @ u
    return u


def exact_total_evolution(
    initial: PureState,
    driving: DrivingSpec,
    oracle: OracleString,
    duration: float,
    target_register: str | None = None,
) -> PureState:
    if target_register is None:
        target_register = initial.layout.names[0]
    u = exact_total_propagator(driving, oracle, duration)
    out = apply_local(initial.tensor(), [initial.layout.axis(target_register)], u)
    return PureState(initial.layout, out.reshape(-1), initial.norm_tag)


# -- built-in driving Hamiltonians -------------------------------------------------


def constant_random_driving(
    dim: int, norm: float = 1.0, seed: int = 0, total_time: float = 1.0, gate_cost: int = 8
) -> DrivingSpec:
    rng = np.random.Generator(np.random.Philox(seed))
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    h = (a + a.conj().T) / 2
    h *= norm / np.linalg.norm(h, 2)
    return DrivingSpec(lambda t: h, norm, total_time, gate_cost, dim=dim, constant=True, name="random")


def diagonal_driving(values: Sequence[float], total_time: float = 1.0, gate_cost: int = 4) -> DrivingSpec:
    h = np.diag(np.asarray(values, dtype=float)).astype(complex)
    norm = float(np.max(np.abs(values))) if len(values) else 0.0
    return DrivingSpec(lambda t: h, max(norm, 1e-300), total_time, gate_cost, dim=len(values),
                       constant=True, name="diagonal")


def walk_driving(strength: float = 1.0, total_time: float = 1.0, gate_cost: int = 2) -> DrivingSpec:
    """Two-level hopping Hamiltonian ``strength * X``."""
    h = strength * np.array([[0, 1], [1, 0]], dtype=complex)
    return DrivingSpec(lambda t: h, abs(strength), total_time, gate_cost, dim=2, constant=True, name="walk")


def zero_driving(dim: int, total_time: float = 1.0) -> DrivingSpec:
    h = np.zeros((dim, dim), dtype=complex)
    return DrivingSpec(lambda t: h, 0.0, total_time, 0, dim=dim, constant=True, name="zero")


def piecewise_driving(pieces: Sequence[tuple[float, np.ndarray]], total_time: float, gate_cost: int = 8) -> DrivingSpec:
    """``pieces`` is a list of ``(start_time, H)`` sorted by start time; the first starts at 0."""
    starts = [float(s) for s, _ in pieces]
    mats = [np.asarray(h, dtype=complex) for _, h in pieces]
    if not starts or starts[0] != 0.0 or sorted(starts) != starts:
        raise ValueError("pieces must start at 0 and be sorted")

    def h(t: float) -> np.ndarray:
        i = int(np.searchsorted(starts, t, side="right")) - 1
        return mats[max(i, 0)]

    norm = max(float(np.linalg.norm(m, 2)) for m in mats)
    return DrivingSpec(h, norm, total_time, gate_cost, dim=mats[0].shape[0],
                       breakpoints=tuple(starts[1:]), name="piecewise")


def _matrix_from_entries(dim: int, entries) -> np.ndarray:
    h = np.zeros((dim, dim), dtype=complex)
    seen = np.zeros((dim, dim), dtype=bool)
    for e in entries:
        if len(e) != 4:
            raise ValueError(f"matrix entry must be (row, col, re, im), got {e}")
        r, c, re, im = int(e[0]), int(e[1]), float(e[2]), float(e[3])
        if not (0 <= r < dim and 0 <= c < dim):
            raise ValueError(f"entry ({r}, {c}) outside a {dim}x{dim} matrix")
        h[r, c] = re + 1j * im
        seen[r, c] = True
    # entries given on one side only are mirrored to make H Hermitian
    mirror = seen.T & ~seen
    h[mirror] = h.T.conj()[mirror]
    if not np.allclose(h, h.conj().T, atol=1e-10, rtol=0):
        raise ValueError("matrix entries are not Hermitian")
    return h


DRIVING_KEYS = {"dim", "entries", "pieces", "norm_bound", "total_time", "gate_cost", "time_grid", "name"}


def driving_from_mapping(cfg: dict) -> DrivingSpec:
    unknown = set(cfg) - DRIVING_KEYS
    if unknown:
        raise ValueError(f"unknown driving keys: {sorted(unknown)}")
    dim = int(cfg["dim"])
    total_time = float(cfg.get("total_time", 1.0))
    gate_cost = int(cfg.get("gate_cost", 8))
    if "pieces" in cfg:
        pieces = [(float(p["start"]), _matrix_from_entries(dim, p["entries"])) for p in cfg["pieces"]]
        spec = piecewise_driving(pieces, total_time, gate_cost)
    else:
        h = _matrix_from_entries(dim, cfg.get("entries", []))
        spec = DrivingSpec(lambda t: h, float(np.linalg.norm(h, 2)), total_time, gate_cost, dim=dim,
                           constant=True, name=str(cfg.get("name", "file")))
    if "norm_bound" in cfg:
        bound = float(cfg["norm_bound"])
        spec = DrivingSpec(spec.hamiltonian, bound, total_time, gate_cost, dim=dim,
                           constant=spec.constant, breakpoints=spec.breakpoints, name=str(cfg.get("name", spec.name)))
    return spec.with_grid(int(cfg.get("time_grid", 1)))


def load_driving(path: str | Path) -> DrivingSpec:
    """Load a driving Hamiltonian from a TOML file with a ``[driving]`` table."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return driving_from_mapping(data.get("driving", data))
