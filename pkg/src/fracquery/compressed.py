"""Compressed segment: succinct controls, capped queries, recursive readout.

The control register of a segment holds the succinct encoding of an ``m``-bit
string instead of ``m`` qubits.  One attempt runs

1. the compressed preparation (flag-clean part ``zero``, flag-dirty ``junk``),
2. the phase ``(i d)^h`` on weight-``h`` keys (``d = +1`` forward, ``-1`` inverse),
3. drives between consecutive encoded positions with one query per position,
   capped at the first ``k_prime`` positions,
4. the recursive zero-test search on the encoded block.

Joint states are arrays of shape ``(keys, target_dim)``; keys are indexed by
:func:`~fracquery.encoding.legal_sector`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .cleanup import prepare_compressed_init
from .encoding import (
    CompressionParams,
    binomial_tail,
    encode_c,
    legal_sector,
    pinned_beta,
    slot_positions,
    smallest_q,
)
from .measurement import (
    CompressedBlock,
    Ensemble,
    MixedJoint,
    PureJoint,
    UncompressedBlock,
    enumerate_recursive,
    sample_recursive,
)
from .oracle import DrivingSpec, OracleString
from .resources import (
    ResourceTally,
    drive_query_cost,
    measurement_step_cost,
    phase_cost,
    split_cost,
)
from .statevector import PureState, make_rng, trace_norm
from .uncompressed import (
    SEGMENT_LENGTH,
    AttemptPlan,
    FullRunResult,
    SegmentParams,
    SegmentResult,
    correction_walk,
    realized_factors,
    segment_count,
)

MAX_SIMULATED_M = 16
M_CAP = 32


class InfeasibleParams(ValueError):
    """Requested parameters exceed what can be simulated here."""


class QueryCapViolation(AssertionError):
    pass


# -- phase and drive ---------------------------------------------------------------------


def apply_phase_compressed(joint: np.ndarray, n: int, k: int, direction: int = 1) -> np.ndarray:
    """Multiply each encoded key by ``(i d)^h`` with ``h`` its number of non-sentinel slots."""
    sec = legal_sector(n, k)
    phases = (1j * direction) ** sec.weights
    joint = np.asarray(joint)
    return phases.reshape((-1,) + (1,) * (joint.ndim - 1)) * joint


def key_query_positions(n: int, k: int, k_prime: int) -> list[tuple[int, ...]]:
    """Attempt-order positions that trigger a query for each key (first ``k_prime`` ones)."""
    sec = legal_sector(n, k)
    out = []
    for key in sec.keys:
        pos = slot_positions(key, n)  # raises on non-monotone or out-of-range slots
        out.append(pos[:k_prime])
    return out


def apply_drive_queries_compressed(joint: np.ndarray, n: int, k: int, k_prime: int,
                                   plan: AttemptPlan) -> tuple[np.ndarray, int]:
    """Apply, per key, drives between consecutive encoded positions and one
    query per position (sentinels mean "drive to the segment end").

    Returns the new joint and the number of controlled queries issued.
    """
    if plan.m != n:
        raise ValueError("plan and block length differ")
    joint = np.asarray(joint, dtype=complex)
    out = np.empty_like(joint)
    cache: dict = {}
    for i, pos in enumerate(key_query_positions(n, k, k_prime)):
        if pos not in cache:
            cache[pos] = plan.string_operator(pos)
        out[i] = cache[pos] @ joint[i]
    return out, min(k_prime, k + 1)


# -- one compressed attempt ----------------------------------------------------------------


def segment_params_for(params: CompressionParams, t0: float = 0.0) -> SegmentParams:
    pinned = abs(params.beta - pinned_beta(params.m)) < 1e-14
    return SegmentParams(params.m, params.alpha, params.beta, t0, SEGMENT_LENGTH, pinned)


def attempt_gate_cost(params: CompressionParams, gate_cost: int, steps: int, splits: int) -> int:
    prep = prepare_compressed_init(params)[1].modeled_gates
    return (prep + phase_cost(params.m, params.k)
            + drive_query_cost(params.m, params.k, params.q, params.k_prime, gate_cost)
            + steps * measurement_step_cost(params.m, params.k, params.q)
            + splits * split_cost(params.m, params.k))


def run_segment_compressed(target: PureState, params: CompressionParams, driving: DrivingSpec,
                           oracle: OracleString, rng_seed, t0: float = 0.0, direction: int = 1,
                           corrections: dict | None = None, leak: float = 0.0) -> SegmentResult:
    if params.m > MAX_SIMULATED_M:
        raise InfeasibleParams(f"compressed simulation limited to m <= {MAX_SIMULATED_M}")
    if len(target.layout.registers) != 1:
        raise ValueError("run_segment_compressed takes a target-only state")
    rng = make_rng(rng_seed)
    m, k = params.m, params.k
    seg = segment_params_for(params, t0)
    plan = AttemptPlan(seg, driving, oracle, direction, corrections)
    top = CompressedBlock(m, 0, k, params.q, params.alpha, params.beta, leak)
    mv = top.vectors()

    # the preparation flag is never touched again, so it can be read out first
    p_clean = float(np.vdot(mv.zero, mv.zero).real)
    flag_dirty = False
    if rng.random() < p_clean:
        block = mv.zero / math.sqrt(p_clean)
    else:
        w = np.sum(np.abs(mv.junk) ** 2, axis=1)
        block = mv.junk[int(rng.choice(len(w), p=w / w.sum()))]
        block = block / np.linalg.norm(block)
        flag_dirty = True

    zeta = target.amps / target.norm_tag
    joint = block[:, None] * zeta[None, :]
    joint = apply_phase_compressed(joint, m, k, direction)
    joint, queries = apply_drive_queries_compressed(joint, m, k, params.k_prime, plan)
    if queries > params.k_prime:
        raise QueryCapViolation(f"{queries} queries in one attempt, cap {params.k_prime}")

    pj = PureJoint(joint, [top])
    trace = sample_recursive(pj, rng, params.k_prime)
    # the discarded control blocks are read out in their basis; with an
    # imperfect preparation the target is otherwise left slightly mixed
    vec = pj.collapse_blocks(rng).tensor
    post = PureState.from_amps(target.layout, vec).normalized()

    b = [0] * m
    for r in trace.ones:
        b[plan.original_position(r) - 1] = 1
    splits = sum(trace.d_sequence)  # every d = 1 above the leaves splits once, leaves bound it
    tally = ResourceTally(queries=queries)
    tally.add_gates(attempt_gate_cost(params, driving.gate_cost, trace.steps, splits))
    tally.error_undo_queries += len(plan.corrections)
    prep_qubits = prepare_compressed_init(params)[1].registers_high_water
    tally.note_qubits(prep_qubits + math.ceil(math.log2(max(2, oracle.L))))
    dirty = flag_dirty or trace.flag_dirty
    success = not trace.ones and not dirty and not trace.truncated and not trace.step_capped
    return SegmentResult(tuple(b), post, success, tally, direction, realized_factors(plan, b),
                         dirty, trace.truncated, trace.step_capped, trace)


def compressed_attempt_fn(params: CompressionParams, driving: DrivingSpec, oracle: OracleString,
                          t0: float, leak: float = 0.0):
    def attempt(state, direction, corrections, rng):
        return run_segment_compressed(state, params, driving, oracle, rng, t0, direction, corrections, leak)
    return attempt


def run_full_compressed(initial: PureState, driving: DrivingSpec, oracle: OracleString,
                        total_time: float, eps_tot: float, rng_seed, params: CompressionParams | None = None,
                        leak: float = 0.0, max_attempts: int = 64) -> FullRunResult:
    """Chain ``4T`` compressed segments, each repaired by the correction walk.

    ``failed_segments`` counts segments whose walk ran out of attempts;
    ``budget_events`` counts attempts that were truncated, step-capped or
    flag-dirty (their repair is not exact)."""
    n_seg = segment_count(total_time)
    if params is None:
        params = choose_params(total_time, driving.norm_bound, eps_tot).params
    rng = make_rng(rng_seed)
    state = initial
    tally = ResourceTally()
    failures = 0
    events = 0
    attempts_log = []
    max_queries = 0
    for s in range(n_seg):
        t0 = s * SEGMENT_LENGTH
        base = compressed_attempt_fn(params, driving, oracle, t0, leak)
        seen = []

        def attempt(st, direction, corrections, r, base=base, seen=seen):
            res = base(st, direction, corrections, r)
            seen.append(res)
            return res

        first = attempt(state, 1, None, rng)
        tally.absorb(first.resources)
        state = first.post_state
        extra = 0
        if not first.success:
            seg = segment_params_for(params, t0)
            state, extra, walk_tally, ok = correction_walk(state, attempt, first, seg, rng, max_attempts)
            tally.absorb(walk_tally)
            failures += not ok
        events += sum(r.truncated or r.step_capped or r.flag_dirty for r in seen)
        max_queries = max(max_queries, max(r.resources.queries for r in seen))
        attempts_log.append(1 + extra)
    return FullRunResult(state, tally, failures, attempts_log, events, max_queries)


# -- parameter choice -----------------------------------------------------------------------


@dataclass(frozen=True)
class ParamChoice:
    params: CompressionParams
    n_segments: int
    m_raw: float


def choose_params(total_time: float, norm_h: float, eps_tot: float, m_cap: int = M_CAP) -> ParamChoice:
    """Pick ``m, k, k', q, eps, eps'`` for total time ``T`` and error budget ``eps_tot``.

    * ``m``: power of two >= ``T ||H|| / (2 eps_tot)``, at least 4
    * ``eps' = eps_tot / (2 * 4T)``, ``eps = eps' / log2 m``
    * ``k``: smallest with exact tail ``P(Bin(m, beta^2) > k) <= eps``
    * ``k'``: smallest with ``P(Bin(m, 2 alpha^2 beta^2) > k') <= eps'``
    * ``q``: smallest power of two >= ``m + log2(1/eps) / beta^2``
    """
    if total_time <= 0 or norm_h < 0 or not 0 < eps_tot < 1:
        raise ValueError("need T > 0, ||H|| >= 0 and 0 < eps_tot < 1")
    n_seg = segment_count(total_time)
    m_raw = total_time * norm_h / (2 * eps_tot)
    m = 4
    while m < m_raw:
        m *= 2
    if m > m_cap:
        raise InfeasibleParams(f"m = {m} exceeds the cap {m_cap} (raw {m_raw:.3g})")
    beta = pinned_beta(m)
    alpha = math.sqrt(1 - beta * beta)
    eps_prime = eps_tot / (2 * n_seg)
    eps = eps_prime / math.log2(m)
    k = 1
    while binomial_tail(m, beta**2, k) > eps:
        k += 1
    p_one = 2 * alpha**2 * beta**2
    k_prime = 1
    while binomial_tail(m, p_one, k_prime) > eps_prime:
        k_prime += 1
    if eps > 1.0 / (k_prime * math.log2(m)):
        raise InfeasibleParams("eps exceeds 1/(k' log2 m)")
    q = smallest_q(m, beta, eps)
    return ParamChoice(CompressionParams(m, k, k_prime, q, alpha, beta, eps, eps_prime), n_seg, m_raw)


# -- exact ensembles and error metrics -----------------------------------------------------


@dataclass(frozen=True)
class ErrorMetrics:
    d_av: float
    delta_p: float
    d_bar: float


def compute_error_metrics(ens_u: dict, ens_c: dict) -> ErrorMetrics:
    """Outcome-weighted deviations between two ``label -> p * rho`` ensembles.

    ``d_av`` and ``delta_p`` use unhalved trace norms; ``d_bar`` weights the
    halved trace distance of the normalised states by the compressed
    probability (distance 1 where the reference outcome has probability 0).
    """
    if set(ens_u) != set(ens_c):
        raise ValueError("ensembles are over different outcome alphabets")
    d_av = delta_p = d_bar = 0.0
    for label in ens_u:
        su = np.asarray(ens_u[label], dtype=complex)
        sc = np.asarray(ens_c[label], dtype=complex)
        pu = float(np.trace(su).real)
        pc = float(np.trace(sc).real)
        d_av += trace_norm(su, sc)
        delta_p += abs(pu - pc)
        if pc > 0:
            dist = 1.0 if pu <= 0 else 0.5 * trace_norm(su / pu, sc / pc)
            d_bar += pc * dist
    return ErrorMetrics(d_av, delta_p, d_bar)


def outcome_alphabet(m: int, k_prime: int) -> list:
    return [frozenset(c) for w in range(min(k_prime, m) + 1) for c in itertools.combinations(range(1, m + 1), w)]


def fill_alphabet(ensemble: Ensemble, alphabet, dim: int) -> dict:
    extra = set(ensemble.densities) - set(alphabet)
    if extra:
        raise ValueError(f"labels outside the alphabet: {sorted(map(sorted, extra))[:3]}")
    return {a: ensemble.densities.get(a, np.zeros((dim, dim), dtype=complex)) for a in alphabet}


def string_index(bits) -> int:
    return int("".join(str(b) for b in bits), 2) if len(bits) else 0


def compress_joint(joint_strings: np.ndarray, m: int, k: int) -> np.ndarray:
    """Re-index a ``(2**m, rest)`` joint over bit strings onto the legal sector.

    Strings outside the sector (weight > k+1) must carry no amplitude."""
    sec = legal_sector(m, k)
    out = np.zeros((sec.size,) + joint_strings.shape[1:], dtype=complex)
    for x in range(2**m):
        bits = tuple(int(c) for c in np.binary_repr(x, width=m))
        if sum(bits) > k + 1:
            if np.any(np.abs(joint_strings[x]) > 1e-12):
                raise ValueError("amplitude on a string outside the legal sector")
            continue
        out[sec.index[encode_c(bits, k)]] = joint_strings[x]
    return out


def measurement_ensembles(joint_strings: np.ndarray, m: int, k: int, q: int, alpha: float, beta: float,
                          k_prime: int | None = None):
    """Exhaustive reference and compressed searches on the same joint state
    (exact preparation, pure backend).  Returns ``(ens_u, ens_c)``."""
    k_prime = m if k_prime is None else k_prime
    joint_strings = np.asarray(joint_strings, dtype=complex)
    ens_u = enumerate_recursive(PureJoint(joint_strings, [UncompressedBlock(m, 0, alpha, beta)]), k_prime)
    comp = compress_joint(joint_strings, m, k)
    ens_c = enumerate_recursive(PureJoint(comp, [CompressedBlock(m, 0, k, q, alpha, beta)]), k_prime)
    return ens_u, ens_c


def segment_ensembles(target: np.ndarray, params: CompressionParams, driving: DrivingSpec,
                      oracle: OracleString, leak: float = 0.0, t0: float = 0.0):
    """Exact-branch ensembles of one forward attempt, reference and compressed.

    Both sides issue queries for the first ``k_prime`` ones only and stop the
    search at ``k_prime`` located ones.  The compressed side runs on the mixed
    backend so that flag-dirty weight (including ``leak``) is kept exactly.
    Returns ``(ens_u, ens_c, alphabet, raw_u, raw_c)``: the first two map every
    label of the alphabet to a matrix, the raw :class:`Ensemble` objects keep
    the pruning and step statistics."""
    m, k, kp = params.m, params.k, params.k_prime
    seg = segment_params_for(params, t0)
    plan = AttemptPlan(seg, driving, oracle)
    zeta = np.asarray(target, dtype=complex).reshape(-1)
    zeta = zeta / np.linalg.norm(zeta)
    dim = zeta.size

    joint_u = np.zeros((2**m, dim), dtype=complex)
    for x in range(2**m):
        bits = tuple(int(c) for c in np.binary_repr(x, width=m))
        pos = tuple(j + 1 for j, v in enumerate(bits) if v)
        w = len(pos)
        amp = params.alpha ** (m - w) * params.beta**w * (1j) ** w
        joint_u[x] = amp * (plan.string_operator(pos[:kp]) @ zeta)
    ens_u = enumerate_recursive(PureJoint(joint_u, [UncompressedBlock(m, 0, params.alpha, params.beta)]), kp)

    top = CompressedBlock(m, 0, k, params.q, params.alpha, params.beta, leak)
    mv = top.vectors()
    comps = []
    for v in [mv.zero, *mv.junk]:
        j = v[:, None] * zeta[None, :]
        j = apply_phase_compressed(j, m, k, 1)
        j, _ = apply_drive_queries_compressed(j, m, k, kp, plan)
        comps.append(j)
    mixed = MixedJoint.from_components(comps, [top])
    ens_c = enumerate_recursive(mixed, kp, exact=False)
    alphabet = outcome_alphabet(m, kp)
    return fill_alphabet(ens_u, alphabet, dim), fill_alphabet(ens_c, alphabet, dim), alphabet, ens_u, ens_c
