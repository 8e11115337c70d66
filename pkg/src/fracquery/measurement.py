"""Recursive zero-test measurement over control blocks.

A block of ``n`` control positions is tested against its "all zeros" vector:
outcome 0 projects onto it, outcome 1 onto the complement.  On outcome 1 a
block longer than one position is split into halves, which are tested left
to right.  The search stops once ``k_prime`` ones are located.

Block models supply what one test needs:

* :class:`UncompressedBlock` -- ``2**n`` bit strings; the zero vector is
  ``(alpha, beta)^{(x) n}`` (the ``R``-rotated all-zero string).
* :class:`CompressedBlock` -- the legal succinct sector; the zero vector is
  the flag-clean output of the compressed preparation and ``junk`` its
  flag-dirty remainder, which lands on both outcomes.

Two backends hold the joint state of all open blocks plus a trailing
"rest" axis (the target): :class:`PureJoint` (state vector) and
:class:`MixedJoint` (density tensor).  Only the mixed backend keeps the
flag-dirty remainder exactly; the pure backend either samples it or, in
exhaustive mode, requires it to vanish.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .cleanup import MeasurementVectors, prepared_block
from .encoding import legal_sector, split_index_map

PRUNE_PROBABILITY = 1e-14
EXACT_JUNK_TOL = 1e-12


# -- block models ---------------------------------------------------------------------


@lru_cache(maxsize=128)
def _product_zero(n: int, alpha: float, beta: float) -> np.ndarray:
    v = np.ones(1)
    for _ in range(n):
        v = np.kron(v, np.array([alpha, beta]))
    return v


@dataclass(frozen=True)
class UncompressedBlock:
    n: int
    offset: int
    alpha: float
    beta: float

    @property
    def size(self) -> int:
        return 2**self.n

    def vectors(self) -> MeasurementVectors:
        return MeasurementVectors(_product_zero(self.n, self.alpha, self.beta), np.zeros((0, self.size)))

    def children(self) -> tuple["UncompressedBlock", "UncompressedBlock"]:
        h = self.n // 2
        return (UncompressedBlock(h, self.offset, self.alpha, self.beta),
                UncompressedBlock(h, self.offset + h, self.alpha, self.beta))

    def split_axis(self, tensor: np.ndarray, axis: int) -> np.ndarray:
        # bit strings are indexed with position 1 as the most significant bit
        h = 2 ** (self.n // 2)
        shape = tensor.shape[:axis] + (h, h) + tensor.shape[axis + 1:]
        return tensor.reshape(shape)


@dataclass(frozen=True)
class CompressedBlock:
    n: int
    offset: int
    k: int
    q: int
    alpha: float
    beta: float
    leak: float = 0.0

    @property
    def size(self) -> int:
        return legal_sector(self.n, self.k).size

    def vectors(self) -> MeasurementVectors:
        return _compressed_vectors(self.n, self.k, self.q, self.alpha, self.beta, self.leak)

    def children(self) -> tuple["CompressedBlock", "CompressedBlock"]:
        h = self.n // 2
        return (CompressedBlock(h, self.offset, self.k, self.q, self.alpha, self.beta, self.leak),
                CompressedBlock(h, self.offset + h, self.k, self.q, self.alpha, self.beta, self.leak))

    def split_axis(self, tensor: np.ndarray, axis: int) -> np.ndarray:
        idx = split_index_map(self.n, self.k)
        child = legal_sector(self.n // 2, self.k).size
        moved = np.moveaxis(tensor, axis, 0)
        out = np.zeros((child, child) + moved.shape[1:], dtype=tensor.dtype)
        out[idx[:, 0], idx[:, 1]] = moved
        return np.moveaxis(out, (0, 1), (axis, axis + 1))


@lru_cache(maxsize=256)
def _compressed_vectors(n, k, q, alpha, beta, leak) -> MeasurementVectors:
    return prepared_block(n, k, q, alpha, beta).measurement_vectors().with_flag_leak(leak)


# -- backends --------------------------------------------------------------------------------


def _insert(vec: np.ndarray, rest: np.ndarray, axis: int) -> np.ndarray:
    """Outer product ``vec (x) rest`` with ``vec`` placed at ``axis``."""
    out = np.multiply.outer(vec, rest)
    return np.moveaxis(out, 0, axis)


class PureJoint:
    """State vector over ``blocks`` (one axis each) followed by one rest axis."""

    def __init__(self, tensor: np.ndarray, blocks: list):
        self.tensor = np.asarray(tensor, dtype=complex)
        self.blocks = list(blocks)
        if self.tensor.ndim != len(self.blocks) + 1:
            raise ValueError("need one axis per block plus a rest axis")
        for ax, b in enumerate(self.blocks):
            if self.tensor.shape[ax] != b.size:
                raise ValueError(f"axis {ax} has size {self.tensor.shape[ax]}, block needs {b.size}")

    def copy(self) -> "PureJoint":
        return PureJoint(self.tensor.copy(), list(self.blocks))

    def weight(self) -> float:
        return float(np.vdot(self.tensor, self.tensor).real)

    def branches(self, block, exact: bool = True):
        """Both outcomes of a zero test as ``[(d, prob, joint, flag_dirty)]``.

        With ``exact=True`` the flag-dirty remainder must be negligible and is
        dropped; otherwise it is returned as extra ``flag_dirty`` branches,
        one per junk vector."""
        ax = self.blocks.index(block)
        mv = block.vectors()
        c = np.tensordot(mv.zero.conj(), self.tensor, axes=([0], [ax]))
        zero_part = _insert(mv.zero, c, ax)
        cc = float(np.vdot(c, c).real)
        junk_w = cc * mv.junk_trace()
        out = [(0, float(np.vdot(zero_part, zero_part).real), PureJoint(zero_part, self.blocks), False)]
        one_part = self.tensor - zero_part
        out.append((1, float(np.vdot(one_part, one_part).real), PureJoint(one_part, self.blocks), False))
        if exact:
            if junk_w > EXACT_JUNK_TOL * max(1.0, self.weight()):
                raise AssertionError(f"flag-dirty weight {junk_w:.3g} in exact mode")
            return out
        for g in mv.junk:
            part = _insert(g, c, ax)
            w = float(np.vdot(part, part).real)
            out.append((0, w, PureJoint(part, self.blocks), True))
            out.append((1, w, PureJoint(part.copy(), self.blocks), True))
        return out

    def split(self, block):
        ax = self.blocks.index(block)
        left, right = block.children()
        t = block.split_axis(self.tensor, ax)
        return PureJoint(t, self.blocks[:ax] + [left, right] + self.blocks[ax + 1:]), left, right

    def rest_density(self) -> np.ndarray:
        flat = self.tensor.reshape(-1, self.tensor.shape[-1])
        return flat.T @ flat.conj()

    def collapse_blocks(self, rng) -> "PureJoint":
        """Sample a basis value on every open block (used after an abandoned search)."""
        t = self.tensor
        blocks = list(self.blocks)
        while len(blocks):
            flat = t.reshape(t.shape[0], -1)
            probs = np.sum(np.abs(flat) ** 2, axis=1)
            i = int(rng.choice(len(probs), p=probs / probs.sum()))
            t = t[i] * math.sqrt(probs.sum() / probs[i])
            blocks.pop(0)
        return PureJoint(t, [])


class MixedJoint:
    """Density tensor with ket axes (blocks, rest) then matching bra axes."""

    def __init__(self, tensor: np.ndarray, blocks: list):
        self.tensor = np.asarray(tensor, dtype=complex)
        self.blocks = list(blocks)
        if self.tensor.ndim != 2 * (len(self.blocks) + 1):
            raise ValueError("density tensor needs ket and bra axes for every block plus rest")

    @classmethod
    def from_pure(cls, pj: PureJoint) -> "MixedJoint":
        return cls(np.multiply.outer(pj.tensor, pj.tensor.conj()), pj.blocks)

    @classmethod
    def from_components(cls, components, blocks: list) -> "MixedJoint":
        rho = None
        for v in components:
            term = np.multiply.outer(v, v.conj())
            rho = term if rho is None else rho + term
        return cls(rho, blocks)

    @property
    def half(self) -> int:
        return len(self.blocks) + 1

    def copy(self) -> "MixedJoint":
        return MixedJoint(self.tensor.copy(), list(self.blocks))

    def weight(self) -> float:
        n = self.half
        dim = int(np.prod(self.tensor.shape[:n]))
        return float(np.trace(self.tensor.reshape(dim, dim)).real)

    def branches(self, block, exact: bool = False):
        ax = self.blocks.index(block)
        bra = ax + self.half
        mv = block.vectors()
        z = mv.zero
        # X = <z| rho |z> on the remaining axes
        left = np.tensordot(z.conj(), self.tensor, axes=([0], [ax]))
        x = np.tensordot(left, z, axes=([bra - 1], [0]))
        reduced_half = self.half - 1
        local = np.outer(z, z.conj())
        if len(mv.junk):
            local = local + mv.junk.T @ mv.junk.conj()
        zero_block = self._insert_pair(local, x, ax, reduced_half)
        z_rho = _insert(z, left, ax)
        rho_z = np.moveaxis(np.multiply.outer(np.tensordot(self.tensor, z, axes=([bra], [0])), z.conj()), -1, bra)
        one_block = self.tensor - z_rho - rho_z + zero_block
        return [
            (0, _trace(zero_block, self.half), MixedJoint(zero_block, self.blocks), False),
            (1, _trace(one_block, self.half), MixedJoint(one_block, self.blocks), False),
        ]

    @staticmethod
    def _insert_pair(local: np.ndarray, x: np.ndarray, ax: int, reduced_half: int) -> np.ndarray:
        # axes of the outer product: ket_b, bra_b, ket rest..., bra rest...
        out = np.multiply.outer(local, x)
        ndim = out.ndim
        order = list(range(2, ndim))
        ket_axes = order[:reduced_half]
        bra_axes = order[reduced_half:]
        ket_axes.insert(ax, 0)
        bra_axes.insert(ax, 1)
        return np.transpose(out, ket_axes + bra_axes)

    def split(self, block):
        ax = self.blocks.index(block)
        left, right = block.children()
        t = block.split_axis(self.tensor, ax)
        t = block.split_axis(t, ax + self.half + 1)
        return MixedJoint(t, self.blocks[:ax] + [left, right] + self.blocks[ax + 1:]), left, right

    def rest_density(self) -> np.ndarray:
        n = self.half
        shape = self.tensor.shape
        rest = shape[n - 1]
        dim = int(np.prod(shape[: n - 1]))
        t = self.tensor.reshape(dim, rest, dim, rest)
        return np.einsum("iaib->ab", t)


def _trace(tensor: np.ndarray, half: int) -> float:
    dim = int(np.prod(tensor.shape[:half]))
    return float(np.trace(tensor.reshape(dim, dim)).real)


# -- recursion ------------------------------------------------------------------------------


@dataclass
class MeasurementTrace:
    """Outcome of one recursive search.

    ``truncated`` means the ``k_prime`` cap on located ones was reached;
    ``step_capped`` means the step budget ran out first.
    """

    ones: frozenset
    d_sequence: tuple[int, ...]
    steps: int
    truncated: bool = False
    flag_dirty: bool = False
    step_capped: bool = False


def step_cap(n: int, k_prime: int) -> int:
    return 1 + 2 * k_prime * max(1, int(math.log2(n)))


@dataclass
class _Path:
    joint: object
    pending: list
    ones: tuple = ()
    d_seq: tuple = ()
    flag_dirty: bool = False
    prob: float = 1.0


def sample_recursive(joint: PureJoint, rng, k_prime: int, max_steps: int | None = None) -> MeasurementTrace:
    """Sample one search on the (single) top block of ``joint``; ``joint`` is
    updated in place to the post-measurement state (normalised)."""
    top = joint.blocks[0]
    max_steps = step_cap(top.n, k_prime) if max_steps is None else max_steps
    pending = [top]
    ones, d_seq = [], []
    flag_dirty = truncated = capped = False
    state = joint.copy()
    norm = state.weight()
    state.tensor /= math.sqrt(norm)
    while pending:
        if len(ones) >= k_prime:
            truncated = True
            break
        if len(d_seq) >= max_steps:
            capped = True
            break
        block = pending.pop(0)
        options = state.branches(block, exact=False)
        probs = np.array([o[1] for o in options])
        i = int(rng.choice(len(options), p=probs / probs.sum()))
        d, p, state, dirty = options[i]
        state.tensor /= math.sqrt(p)
        flag_dirty |= dirty
        d_seq.append(d)
        if d == 0:
            continue
        if block.n == 1:
            ones.append(block.offset + 1)
            continue
        state, left, right = state.split(block)
        pending[:0] = [left, right]
    if pending:
        state = state.collapse_blocks(rng) if isinstance(state, PureJoint) else state
    joint.tensor, joint.blocks = state.tensor, state.blocks
    return MeasurementTrace(frozenset(ones), tuple(d_seq), len(d_seq), truncated, flag_dirty, capped)


@dataclass
class Ensemble:
    """Outcome-labelled subnormalised rest densities from exhaustive enumeration."""

    densities: dict
    dropped: float = 0.0
    max_steps_seen: int = 0
    step_violations: int = 0

    def probability(self, label) -> float:
        return float(np.trace(self.densities[label]).real)


def enumerate_recursive(joint, k_prime: int, exact: bool = True, max_steps: int | None = None,
                        prune: float = PRUNE_PROBABILITY) -> Ensemble:
    """Every search path with its exact weight; densities are summed per set of located ones."""
    top = joint.blocks[0]
    max_steps = step_cap(top.n, k_prime) if max_steps is None else max_steps
    total = joint.weight()
    densities: dict = {}
    dropped = 0.0
    longest = 0
    violations = 0
    stack = [_Path(joint, [top])]
    while stack:
        path = stack.pop()
        done = not path.pending or len(path.ones) >= k_prime or len(path.d_seq) >= max_steps
        if done:
            label = frozenset(path.ones)
            rho = path.joint.rest_density()
            densities[label] = densities.get(label, 0) + rho
            longest = max(longest, len(path.d_seq))
            if len(path.d_seq) > 1 + 2 * len(path.ones) * max(1, int(math.log2(top.n))):
                violations += 1
            continue
        block = path.pending[0]
        rest = path.pending[1:]
        for d, p, state, dirty in path.joint.branches(block, exact=exact):
            if p < prune * total:
                dropped += p
                continue
            if d == 1 and block.n > 1:
                state, left, right = state.split(block)
                pending = [left, right] + rest
                ones = path.ones
            else:
                pending = rest
                ones = path.ones + ((block.offset + 1,) if d == 1 else ())
            stack.append(_Path(state, pending, ones, path.d_seq + (d,), path.flag_dirty or dirty))
    return Ensemble(densities, dropped / total if total else 0.0, longest, violations)
