"""Succinct encodings of low-weight control strings.

A bit string ``x`` of length ``n`` with ones at 1-indexed positions
``p_1 < p_2 < ...`` is stored as ``k + 1`` slots holding the run lengths
``s_i = p_i - p_{i-1} - 1`` of the first ``k + 1`` ones, padded with the
sentinel value ``n``.  Strings of weight ``k + 1`` are still represented
exactly; heavier strings keep only their first ``k + 1`` ones.

The legal sector of a block is the set of slot tuples for strings of weight
at most ``k + 1``.  :func:`legal_sector` fixes a canonical ordering of it so
that state vectors over the sector are plain arrays.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .statevector import PureState, Register, RegisterLayout, UnitarySpec


def _bits(x) -> tuple[int, ...]:
    if isinstance(x, str):
        return tuple(int(c) for c in x)
    return tuple(int(b) for b in x)


def ones_positions(x) -> tuple[int, ...]:
    """1-indexed positions of the ones of ``x``."""
    return tuple(i + 1 for i, b in enumerate(_bits(x)) if b)


def encode_c(x, k: int) -> tuple[int, ...]:
    """Slot tuple of ``x``; the block length is ``len(x)``."""
    bits = _bits(x)
    n = len(bits)
    slots = []
    prev = 0
    for p in ones_positions(bits)[: k + 1]:
        slots.append(p - prev - 1)
        prev = p
    slots.extend([n] * (k + 1 - len(slots)))
    return tuple(slots)


def slot_positions(slots: Sequence[int], n: int) -> tuple[int, ...]:
    """1-indexed positions named by a slot tuple (stops at the first sentinel)."""
    out = []
    pos = 0
    for s in slots:
        if s == n:
            break
        if not 0 <= s < n:
            raise ValueError(f"slot value {s} is neither a run length nor the sentinel {n}")
        pos += s + 1
        if pos > n:
            raise ValueError(f"slots {tuple(slots)} run past the block end {n}")
        out.append(pos)
    return tuple(out)


def decode_c(slots: Sequence[int], n: int) -> tuple[int, ...]:
    bits = [0] * n
    for p in slot_positions(slots, n):
        bits[p - 1] = 1
    return tuple(bits)


def slot_weight(slots: Sequence[int], n: int) -> int:
    """Number of non-sentinel slots."""
    return len(slot_positions(slots, n))


@dataclass(frozen=True)
class LegalSector:
    """Canonically ordered slot tuples for all strings of weight <= k+1."""

    n: int
    k: int
    keys: tuple[tuple[int, ...], ...]
    index: dict = field(repr=False, compare=False)
    positions: tuple[tuple[int, ...], ...] = field(repr=False, compare=False)
    weights: np.ndarray = field(repr=False, compare=False)

    @property
    def size(self) -> int:
        return len(self.keys)

    @property
    def zero_index(self) -> int:
        return self.index[(self.n,) * (self.k + 1)]


@lru_cache(maxsize=None)
def legal_sector(n: int, k: int) -> LegalSector:
    if n < 1 or k < 0:
        raise ValueError("block length must be >= 1 and cutoff >= 0")
    keys, positions = [], []
    for w in range(0, min(k + 1, n) + 1):
        for pos in itertools.combinations(range(1, n + 1), w):
            slots, prev = [], 0
            for p in pos:
                slots.append(p - prev - 1)
                prev = p
            slots.extend([n] * (k + 1 - w))
            keys.append(tuple(slots))
            positions.append(pos)
    weights = np.array([len(p) for p in positions], dtype=int)
    return LegalSector(n, k, tuple(keys), {key: i for i, key in enumerate(keys)}, tuple(positions), weights)


# -- splitting an encoded block into its two halves ----------------------------


def split_slots(slots: Sequence[int], n: int, k: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Split the encoding of ``x1 x2`` into the encodings of ``x1`` and ``x2``.

    Works on slot values directly: running positions are accumulated and each
    one is routed to the half it falls in; the first one of the right half
    has its run length re-based to the half boundary.
    """
    if n < 2 or n & (n - 1):
        raise ValueError(f"block length must be a power of two >= 2, got {n}")
    half = n // 2
    left, right = [], []
    pos = 0
    for s in slots:
        if s == n:
            break
        pos += s + 1
        if pos <= half:
            left.append(s)
        elif not right:
            right.append(pos - half - 1)
        else:
            right.append(s)
    left.extend([half] * (k + 1 - len(left)))
    right.extend([half] * (k + 1 - len(right)))
    return tuple(left), tuple(right)


@lru_cache(maxsize=None)
def split_index_map(n: int, k: int) -> np.ndarray:
    """Row ``i`` holds the (left, right) child-sector indices of parent key ``i``."""
    parent = legal_sector(n, k)
    child = legal_sector(n // 2, k)
    out = np.empty((parent.size, 2), dtype=np.int64)
    for i, key in enumerate(parent.keys):
        a, b = split_slots(key, n, k)
        out[i] = child.index[a], child.index[b]
    return out


def split(amps: np.ndarray, n: int, k: int) -> np.ndarray:
    """Map a vector (or leading axis) over the ``n``-block sector to a
    ``(left, right)`` pair of half-block sector axes.  Exact and isometric."""
    amps = np.asarray(amps)
    idx = split_index_map(n, k)
    child = legal_sector(n // 2, k).size
    out = np.zeros((child, child) + amps.shape[1:], dtype=amps.dtype)
    out[idx[:, 0], idx[:, 1]] = amps
    return out


# -- register arithmetic -------------------------------------------------------


def prefix_sums(slots: Sequence[int], modulus: int) -> tuple[int, ...]:
    """Slot ``i`` becomes ``s_1 + ... + s_i + i`` (mod ``modulus``)."""
    out, acc = [], 0
    for i, s in enumerate(slots, start=1):
        acc += s
        out.append((acc + i) % modulus)
    return tuple(out)


def inverse_prefix_sums(sums: Sequence[int], modulus: int) -> tuple[int, ...]:
    out, prev = [], 0
    for v in sums:
        out.append((v - prev - 1) % modulus)
        prev = v
    return tuple(out)


# -- control-qubit parameters --------------------------------------------------


def pinned_beta(m: int) -> float:
    """beta with beta^2 / alpha^2 = tan(1 / (8 m)) exactly."""
    tn = math.tan(1.0 / (8 * m))
    return math.sqrt(tn / (1.0 + tn))


def binomial_tail(m: int, p: float, k: int) -> float:
    """P(Binomial(m, p) > k), summed exactly term by term."""
    return float(sum(math.comb(m, w) * p**w * (1 - p) ** (m - w) for w in range(k + 1, m + 1)))


@dataclass(frozen=True)
class TailDecomposition:
    """Split of ``(alpha|0> + beta|1>)^{(x) m}`` into weight <= k amplitudes and the omitted tail."""

    m: int
    k: int
    alpha: float
    beta: float
    mu_sq: float
    kept_weights: dict = field(repr=False)

    @classmethod
    def build(cls, m: int, k: int, alpha: float, beta: float, enumerate_kept: bool = True) -> "TailDecomposition":
        mu_sq = binomial_tail(m, beta**2, k)
        kept = {}
        if enumerate_kept:
            for w in range(0, min(k, m) + 1):
                amp = alpha ** (m - w) * beta**w
                for pos in itertools.combinations(range(1, m + 1), w):
                    kept[pos] = amp
        return cls(m, k, alpha, beta, mu_sq, kept)

    def kept_norm_sq(self) -> float:
        if self.kept_weights:
            return float(sum(a * a for a in self.kept_weights.values()))
        return 1.0 - self.mu_sq


def nu_prime_amplitude(positions: Sequence[int], k: int, alpha: float, beta: float) -> float:
    """Amplitude of a weight-(k+1) key in the tail component of phi_q^{(x) k+1}."""
    return alpha ** (positions[-1] - (k + 1)) * beta ** (k + 1)


def ideal_succinct_vector(n: int, k: int, alpha: float, beta: float) -> np.ndarray:
    """Target state over the legal sector: alpha^{n-|x|} beta^{|x|} on weight <= k keys,
    plus the tail keys carried over unchanged from the exponential product state."""
    sec = legal_sector(n, k)
    out = np.zeros(sec.size)
    for i, pos in enumerate(sec.positions):
        w = len(pos)
        if w <= k:
            out[i] = alpha ** (n - w) * beta**w
        else:
            out[i] = nu_prime_amplitude(pos, k, alpha, beta)
    return out


# -- exponential state and the cascade that prepares it --------------------------


def m_gamma(gamma: float, register: str = "qubit") -> UnitarySpec:
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    mat = np.array([[1.0, -gamma], [gamma, 1.0]]) / math.sqrt(1 + gamma * gamma)
    return UnitarySpec((register,), mat)


def _check_q(q: int) -> int:
    if q < 1 or q & (q - 1):
        raise ValueError(f"q must be a power of two, got {q}")
    return int(math.log2(q))


def exponential_state(q: int, alpha: float, beta: float) -> np.ndarray:
    """Closed form sum_{s<q} beta alpha^s |s> + alpha^q |q> on q+1 levels."""
    s = np.arange(q + 1, dtype=float)
    out = beta * alpha**s
    out[q] = alpha**q
    return out


def _cascade_gates(q: int, alpha: float) -> list[tuple[str, int, np.ndarray]]:
    """Gate list on r+1 qubits (axis 0 is the top qubit, weight q).

    ``("top", 0, U)`` is an unconditional gate on the top qubit;
    ``("ctrl", a, U)`` acts on qubit axis ``a`` when the top qubit is 0.
    """
    r = _check_q(q)
    aq = alpha**q
    c = math.sqrt(max(0.0, 1.0 - aq * aq))
    gates = [("top", 0, np.array([[c, -aq], [aq, c]]))]
    for j in range(r):
        axis = r - j  # low bit j lives on axis r - j
        gates.append(("ctrl", axis, m_gamma(alpha ** (2**j)).matrix.real))
    return gates


def apply_cascade(vectors: np.ndarray, q: int, alpha: float, inverse: bool = False) -> np.ndarray:
    """Apply the exponential-state preparation (or its inverse) to the columns
    of ``vectors`` (shape ``(2q, ...)``), gate by gate."""
    r = _check_q(q)
    vectors = np.asarray(vectors)
    trailing = vectors.shape[1:]
    t = vectors.reshape((2,) * (r + 1) + (-1,)).astype(complex)
    gates = _cascade_gates(q, alpha)
    if inverse:
        gates = [(kind, a, u.T) for kind, a, u in reversed(gates)]
    for kind, axis, u in gates:
        if kind == "top":
            t = np.tensordot(u, t, axes=([1], [0]))
        else:
            sub = t[0]
            moved = np.moveaxis(sub, axis - 1, 0)
            moved = np.tensordot(u, moved, axes=([1], [0]))
            t = t.copy()
            t[0] = np.moveaxis(moved, 0, axis - 1)
    return t.reshape((2 * q,) + trailing)


def prepare_phi(q: int, alpha: float, beta: float) -> PureState:
    """Exponential state built by the rotation-plus-cascade circuit on r+1 qubits,
    checked against the closed form and returned on one (q+1)-level register."""
    _check_q(q)
    if abs(alpha * alpha + beta * beta - 1) > 1e-12:
        raise ValueError("alpha^2 + beta^2 must equal 1")
    start = np.zeros(2 * q)
    start[0] = 1.0
    full = apply_cascade(start, q, alpha)
    if np.max(np.abs(full[q + 1 :]), initial=0.0) > 1e-12:
        raise AssertionError("cascade produced support above level q")
    vec = full[: q + 1]
    if np.max(np.abs(vec - exponential_state(q, alpha, beta))) > 1e-12:
        raise AssertionError("cascade output disagrees with the closed form")
    layout = RegisterLayout((Register("phi", q + 1, "ancilla"),))
    return PureState.from_amps(layout, vec)


def overlap_phi(q: int, t: int, alpha: float, beta: float) -> float:
    """<phi_{q-t} | phi_q> in closed form."""
    if not 0 <= t <= q:
        raise ValueError(f"need 0 <= t <= q, got t={t}, q={q}")
    if t == 0:
        return 1.0
    return 1.0 - (1.0 - beta) * alpha ** (2 * (q - t))


def q_lower_bound(m: int, beta: float, eps: float) -> float:
    return m + math.log2(1.0 / eps) / beta**2


def smallest_q(m: int, beta: float, eps: float) -> int:
    """Smallest power of two meeting the exponential-state size bound."""
    bound = q_lower_bound(m, beta, eps)
    return 1 << max(0, math.ceil(math.log2(bound)))


# -- B encoding ------------------------------------------------------------------


def encode_b_factors(x, q: int, k: int, alpha: float, beta: float) -> list[np.ndarray]:
    """Per-slot vectors (length q+1) whose tensor product is the B encoding of ``x``."""
    bits = _bits(x)
    m = len(bits)
    if q < m:
        raise ValueError("B encoding needs q >= m")
    pos = ones_positions(bits)
    h = len(pos)
    if h > k:
        raise ValueError(f"B encoding defined for weight <= k={k}, got {h}")
    slots = encode_c(bits, k)[:h]
    t = m - (pos[-1] if pos else 0)
    factors = []
    for s in slots:
        v = np.zeros(q + 1)
        v[s] = 1.0
        factors.append(v)
    shifted = np.zeros(q + 1)
    j = np.arange(q - t)
    shifted[j + t] = alpha**j * beta
    shifted[q] = alpha ** (q - t)
    factors.append(shifted)
    phi = exponential_state(q, alpha, beta)
    factors.extend([phi] * (k - h))
    return factors


def kron_all(factors: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones(1)
    for f in factors:
        out = np.kron(out, f)
    return out


def encode_b(x, q: int, k: int, alpha: float, beta: float) -> np.ndarray:
    return kron_all(encode_b_factors(x, q, k, alpha, beta))


# -- parameter bundle -------------------------------------------------------------


@dataclass(frozen=True)
class CompressionParams:
    m: int
    k: int
    k_prime: int
    q: int
    alpha: float
    beta: float
    eps: float
    eps_prime: float

    def __post_init__(self):
        if self.m < 1 or self.m & (self.m - 1):
            raise ValueError(f"m must be a power of two, got {self.m}")
        _check_q(self.q)
        if self.q < self.m:
            raise ValueError(f"q={self.q} must be at least m={self.m}")
        if self.k < 1 or self.k_prime < 1:
            raise ValueError("k and k_prime must both be >= 1")
        if abs(self.alpha**2 + self.beta**2 - 1) > 1e-12 or self.alpha <= 0 or self.beta < 0:
            raise ValueError("need alpha > 0, beta >= 0 and alpha^2 + beta^2 = 1")
        if not (0 < self.eps < 1 and 0 < self.eps_prime < 1):
            raise ValueError("eps and eps_prime must lie in (0, 1)")

    @classmethod
    def build(cls, m: int, k: int, k_prime: int, eps: float, eps_prime: float | None = None,
              q: int | None = None, beta: float | None = None) -> "CompressionParams":
        beta = pinned_beta(m) if beta is None else beta
        alpha = math.sqrt(1 - beta * beta)
        q = smallest_q(m, beta, eps) if q is None else q
        return cls(m, k, k_prime, q, alpha, beta, eps, eps if eps_prime is None else eps_prime)

    def meets_q_bound(self) -> bool:
        return self.q >= q_lower_bound(self.m, self.beta, self.eps)

    def max_phi_deficit(self, n: int | None = None) -> float:
        """Largest 1 - <phi_{q-t}|phi_q> over t <= n (defaults to m)."""
        n = self.m if n is None else n
        return 1.0 - overlap_phi(self.q, n, self.alpha, self.beta)


def exact_q(m: int, beta: float, deficit: float = 1e-13) -> int:
    """Smallest power of two q >= m whose worst exponential-state overlap deficit is below ``deficit``."""
    alpha = math.sqrt(1 - beta * beta)
    q = 1
    while q < m or 1.0 - overlap_phi(q, m, alpha, beta) >= deficit:
        q *= 2
    return q
