"""Conversion of the exponential product state into the succinct encoding.

Two independent routes produce the same ``(legal key, flag value)`` amplitude
table:

* :func:`cleanup_convert` runs the six reversible register steps literally on
  a sparse list of basis rows (prefix sums, weight detection, offset of
  register ``h+1``, inverse cascades plus flag swap, ``0 <-> n`` flips, weight
  uncomputation).  It is exponential in ``k`` and only practical for small
  ``q``.
* :func:`prepare_compressed_init` (default route) uses the class structure of
  the product state: every weight-``h`` class leaves register ``h+1`` holding
  ``phi_{q-t}``, so its flag ends in ``V^dagger phi_{q-t}`` and everything else
  is fixed.  Cost is polynomial, so it scales to ``q`` in the thousands.

The flag register has ``2q`` levels: the inverse cascade maps ``phi_{q-t}``
onto all ``r + 1`` qubits, not only onto levels ``0..q``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .encoding import (
    CompressionParams,
    apply_cascade,
    exponential_state,
    legal_sector,
    nu_prime_amplitude,
    overlap_phi,
)
from .resources import ResourceTally, preparation_cost
from .statevector import MAX_TOTAL_DIM, DimensionError, PureState, Register, RegisterLayout

PRUNE = 1e-15


class SectorLeakError(RuntimeError):
    """Amplitude found outside the legal sector (an encoder bug)."""


@lru_cache(maxsize=64)
def _inverse_cascade_columns(q: int, alpha: float) -> np.ndarray:
    """Column ``v`` is ``V^dagger |v>`` for ``v = 0..q``."""
    basis = np.zeros((2 * q, q + 1))
    basis[np.arange(q + 1), np.arange(q + 1)] = 1.0
    return apply_cascade(basis, q, alpha, inverse=True).real


def flag_table(n: int, q: int, alpha: float, beta: float) -> np.ndarray:
    """Row ``t`` is the flag content ``V^dagger phi_{q-t}`` for ``t = 0..n``."""
    rows = np.zeros((2 * q, n + 1))
    for t in range(n + 1):
        rows[: q - t + 1, t] = exponential_state(q - t, alpha, beta)
    return apply_cascade(rows, q, alpha, inverse=True).real.T


@dataclass(frozen=True)
class MeasurementVectors:
    """What a measurement step needs from ``U~_n``: the flag-zero component
    ``zero`` of ``U~_n |C 0> |0>`` and vectors ``junk`` whose outer products
    sum to the flag-traced remainder."""

    zero: np.ndarray
    junk: np.ndarray

    def junk_trace(self) -> float:
        return float(np.sum(np.abs(self.junk) ** 2))

    def with_flag_leak(self, eps: float) -> "MeasurementVectors":
        """Compose with an extra flag rotation that moves weight ``eps`` of the
        flag-zero branch onto a fresh flag level."""
        if eps <= 0:
            return self
        extra = math.sqrt(eps) * self.zero[None, :]
        return MeasurementVectors(math.sqrt(1 - eps) * self.zero, np.vstack([self.junk, extra]))


@dataclass(frozen=True)
class PreparedInit:
    """Output of the compressed preparation on an ``n``-position block.

    The state is ``sum_i coeff_i |key_i> (x) flag_i`` where ``flag_i`` is row
    ``t_i`` of ``table`` for weight <= k keys and ``|0>`` for the weight-(k+1)
    tail keys (``t_i = -1``).
    """

    n: int
    k: int
    q: int
    alpha: float
    beta: float
    coeff: np.ndarray = field(repr=False)
    key_t: np.ndarray = field(repr=False)
    table: np.ndarray = field(repr=False)

    @property
    def sector(self):
        return legal_sector(self.n, self.k)

    @property
    def flag_dim(self) -> int:
        return 2 * self.q

    def flag_column(self, level: int) -> np.ndarray:
        col = np.where(self.key_t >= 0, self.table[np.maximum(self.key_t, 0), level], 0.0)
        if level == 0:
            col = np.where(self.key_t < 0, 1.0, col)
        return self.coeff * col

    def zero_vector(self) -> np.ndarray:
        return self.flag_column(0)

    def dense(self) -> np.ndarray:
        """Full ``(keys, 2q)`` amplitude table."""
        out = np.zeros((self.sector.size, self.flag_dim))
        kept = self.key_t >= 0
        out[kept] = self.coeff[kept, None] * self.table[self.key_t[kept]]
        out[~kept, 0] = self.coeff[~kept]
        return out

    def measurement_vectors(self, cutoff: float = 1e-30) -> MeasurementVectors:
        """Flag-zero vector and an eigen-factorisation of the traced junk."""
        n_t = self.n + 1
        groups = np.zeros((self.sector.size, n_t))
        kept = np.nonzero(self.key_t >= 0)[0]
        groups[kept, self.key_t[kept]] = self.coeff[kept]
        junk_rows = self.table[:, 1:]
        gram = junk_rows @ junk_rows.T
        lam, vecs = np.linalg.eigh(gram)
        keep = lam > cutoff
        junk = (groups @ (vecs[:, keep] * np.sqrt(lam[keep]))).T
        return MeasurementVectors(self.zero_vector(), junk)

    def flag_one_probability(self) -> float:
        return float(1.0 - np.sum(self.zero_vector() ** 2))

    def to_pure_state(self) -> PureState:
        """Dense ``PureState`` over ``k+1`` slot registers plus the flag.

        Raises when the layout exceeds the dense cap."""
        n, k = self.n, self.k
        total = (n + 1) ** (k + 1) * self.flag_dim
        if total > MAX_TOTAL_DIM:
            raise DimensionError(f"dense layout of dimension {total} exceeds cap {MAX_TOTAL_DIM}")
        regs = [Register(f"slot{i + 1}", n + 1, "control-compressed") for i in range(k + 1)]
        regs.append(Register("flag", self.flag_dim, "error-flag"))
        layout = RegisterLayout(tuple(regs))
        amps = np.zeros(layout.dims)
        dense = self.dense()
        for i, key in enumerate(self.sector.keys):
            amps[key] = dense[i]
        return PureState.from_amps(layout, amps.reshape(-1))


def _class_structure(n: int, k: int, alpha: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
    sec = legal_sector(n, k)
    coeff = np.zeros(sec.size)
    key_t = np.zeros(sec.size, dtype=np.int64)
    for i, pos in enumerate(sec.positions):
        w = len(pos)
        if w <= k:
            coeff[i] = alpha ** (n - w) * beta**w
            key_t[i] = n - (pos[-1] if pos else 0)
        else:
            coeff[i] = nu_prime_amplitude(pos, k, alpha, beta)
            key_t[i] = -1
    return coeff, key_t


def prepare_classwise(n: int, k: int, q: int, alpha: float, beta: float) -> PreparedInit:
    if q < n:
        raise ValueError("need q >= n")
    coeff, key_t = _class_structure(n, k, alpha, beta)
    return PreparedInit(n, k, q, alpha, beta, coeff, key_t, flag_table(n, q, alpha, beta))


_PREP_CACHE: dict = {}


def prepared_block(n: int, k: int, q: int, alpha: float, beta: float) -> PreparedInit:
    key = (n, k, q, round(alpha, 15), round(beta, 15))
    if key not in _PREP_CACHE:
        _PREP_CACHE[key] = prepare_classwise(n, k, q, alpha, beta)
    return _PREP_CACHE[key]


def prepare_compressed_init(params: CompressionParams, n: int | None = None,
                            method: str = "classwise") -> tuple[PreparedInit, ResourceTally]:
    """Map ``|n>^{(x) k+1}`` to the succinct form of ``(alpha|0> + beta|1>)^{(x) n}``
    with an error flag, and tally the modeled cost."""
    n = params.m if n is None else n
    if method == "classwise":
        prep = prepared_block(n, params.k, params.q, params.alpha, params.beta)
    elif method == "literal":
        dense = literal_preparation(n, params.k, params.q, params.alpha, params.beta)
        coeff, key_t = _class_structure(n, params.k, params.alpha, params.beta)
        prep = PreparedInit(n, params.k, params.q, params.alpha, params.beta, coeff, key_t,
                            flag_table(n, params.q, params.alpha, params.beta))
        if np.max(np.abs(prep.dense() - dense)) > 1e-10:
            raise AssertionError("literal and class-wise preparations disagree")
    else:
        raise ValueError(f"unknown preparation method {method!r}")
    gates, qubits = preparation_cost(n, params.k, params.q)
    tally = ResourceTally()
    tally.add_gates(gates)
    tally.note_qubits(qubits)
    return prep, tally


# -- literal register-level route -------------------------------------------------


def _merge(rows: np.ndarray, amps: np.ndarray, radix: list[int]) -> tuple[np.ndarray, np.ndarray]:
    if math.prod(radix) >= 2**62:
        raise DimensionError("sparse row key space too large")
    codes = np.ravel_multi_index(tuple(rows.T), radix)
    uniq, inv = np.unique(codes, return_inverse=True)
    summed = np.zeros(uniq.size, dtype=amps.dtype)
    np.add.at(summed, inv, amps)
    keep = np.abs(summed) > PRUNE
    rows = np.stack(np.unravel_index(uniq[keep], radix), axis=1)
    return rows, summed[keep]


def cleanup_convert(slot_rows: np.ndarray, amps: np.ndarray, n: int, k: int, q: int, alpha: float
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run the six clean-up steps on a sparse state.

    ``slot_rows`` has shape ``(N, k+1)`` with B-phase slot values in ``0..q``;
    the flag starts in ``|0>``.  Returns ``(c_rows, flag, amps)`` after the
    conversion, with ``c_rows`` holding slot values in ``0..n``.
    """
    slots = k + 1
    rows = np.asarray(slot_rows, dtype=np.int64).copy()
    amps = np.asarray(amps, dtype=complex).copy()
    if rows.ndim != 2 or rows.shape[1] != slots:
        raise DimensionError(f"expected rows of {slots} slots")
    if rows.min(initial=0) < 0 or rows.max(initial=0) > q:
        raise SectorLeakError("B-phase slot values must lie in 0..q")
    modulus = n + q + 2
    reg_dim = max(modulus, 2 * q)

    # 1. prefix sums, computed modulo n + q + 2
    sums = (np.cumsum(rows, axis=1) + np.arange(1, slots + 1)) % modulus
    # 2. h = index of the first register above n (k+1 when none is)
    above = sums > n
    h = np.where(above.any(axis=1), np.argmax(above, axis=1), slots)
    # 3. undo prefix sums from the last register down, offsetting register h+1 by n+1
    out = np.empty_like(sums)
    for c in range(slots - 1, -1, -1):
        prev = sums[:, c - 1] if c > 0 else 0
        ordinary = (sums[:, c] - prev - 1) % modulus
        out[:, c] = np.where(h == c, sums[:, c] - (n + 1), ordinary)
    live = h < slots
    if np.any(out[live, h[live]] < 0) or np.any(out[live, h[live]] > q):
        raise SectorLeakError("register h+1 left the range 0..q after the offset")
    rows = out
    flag = np.zeros(rows.shape[0], dtype=np.int64)

    # 4. inverse cascade on registers h+1..k+1, then swap register h+1 into the flag
    vdag = _inverse_cascade_columns(q, alpha)
    radix = [reg_dim] * slots + [slots + 1, 2 * q]
    for c in range(slots - 1, -1, -1):
        sel = h <= c
        if not np.any(sel):
            continue
        vals = rows[sel, c]
        if vals.max() > q:
            raise SectorLeakError("inverse cascade input above level q")
        blown_rows = np.repeat(rows[sel], 2 * q, axis=0)
        blown_rows[:, c] = np.tile(np.arange(2 * q), vals.size)
        blown_amps = (amps[sel][:, None] * vdag[:, vals].T).reshape(-1)
        full = np.concatenate([np.column_stack([rows[~sel], h[~sel], flag[~sel]]),
                               np.column_stack([blown_rows, np.repeat(h[sel], 2 * q), np.repeat(flag[sel], 2 * q)])])
        merged, amps = _merge(full, np.concatenate([amps[~sel], blown_amps]), radix)
        rows, h, flag = merged[:, :slots], merged[:, slots], merged[:, slots + 1]
    live = h < slots
    if np.any(flag != 0):
        raise SectorLeakError("flag was not clean before the swap")
    idx = np.nonzero(live)[0]
    flag[idx] = rows[idx, h[idx]]
    rows[idx, h[idx]] = 0
    # 5. registers h+1..k+1 now hold |0>; flip each to the sentinel
    cols = np.arange(slots)[None, :] >= h[:, None]
    if np.any(rows[cols] != 0):
        raise SectorLeakError("inverse cascade did not reset the trailing registers")
    rows[cols] = n
    # 6. uncompute h: the first register holding the sentinel
    is_sentinel = rows == n
    h_again = np.where(is_sentinel.any(axis=1), np.argmax(is_sentinel, axis=1), slots)
    if np.any(h_again != h):
        raise SectorLeakError("weight ancilla could not be uncomputed")
    return rows, flag, amps


def literal_preparation(n: int, k: int, q: int, alpha: float, beta: float) -> np.ndarray:
    """Dense ``(keys, 2q)`` table from the literal route applied to ``phi_q^{(x) k+1}``."""
    slots = k + 1
    if (q + 1) ** slots * 2 * q > 5e7:
        raise DimensionError("literal clean-up is limited to small q and k")
    phi = exponential_state(q, alpha, beta)
    grids = np.stack(np.meshgrid(*[np.arange(q + 1)] * slots, indexing="ij"), axis=-1).reshape(-1, slots)
    amps = np.prod(phi[grids], axis=1)
    rows, flag, out_amps = cleanup_convert(grids, amps, n, k, q, alpha)
    return scatter_to_sector(rows, flag, out_amps, n, k, q)


def scatter_to_sector(rows: np.ndarray, flag: np.ndarray, amps: np.ndarray, n: int, k: int, q: int) -> np.ndarray:
    sec = legal_sector(n, k)
    out = np.zeros((sec.size, 2 * q), dtype=complex)
    for row, f, a in zip(map(tuple, rows), flag, amps):
        i = sec.index.get(row)
        if i is None:
            if abs(a) > 1e-10:
                raise SectorLeakError(f"amplitude {a:.3g} on illegal key {row}")
            continue
        out[i, f] += a
    if np.max(np.abs(out.imag)) > 1e-12:
        raise AssertionError("clean-up produced complex amplitudes from a real input")
    return out.real


def flag_zero_distance(prep: PreparedInit, ideal: np.ndarray) -> float:
    """Euclidean distance between the flag-zero branch and the ideal succinct vector."""
    return float(np.linalg.norm(prep.zero_vector() - ideal))


def deficit_bound(n: int, q: int, alpha: float, beta: float) -> float:
    return 1.0 - overlap_phi(q, n, alpha, beta)
