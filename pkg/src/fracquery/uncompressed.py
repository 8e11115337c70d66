"""Reference segment construction with explicit control qubits.

A segment covers ``[t0, t0 + 1/4]`` split into ``m`` windows of length
``1/(4m)``.  Each control qubit starts in ``alpha|0> + i beta|1>`` (``R`` then
``P``), triggers one query after its drive window, and is read out after a
final ``R``.  With ``Q`` diagonal, the target sees one of two operators per
control qubit, each proportional to a unitary:

* outcome 0: ``alpha^2 I + i beta^2 Q``
* outcome 1: ``alpha beta (I - i Q)``

so the control outcomes are independent Bernoulli draws and the segment can
be simulated one control at a time (:func:`run_segment_uncompressed`, default
``method="sequential"``).  ``method="dense"`` builds all ``m`` control qubits
explicitly and is used to cross-check the sequential route.

Time runs on a grid ``g = 0..m`` with ``t(g) = t0 + g / (4m)``.  A forward
attempt applies window ``g`` and then the query of control ``g``.  An inverse
attempt runs the reversed circuit: the query of original control ``j`` sits at
grid ``m - j`` and windows are adjoints of the forward windows, in reverse.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .oracle import ContractViolation, DrivingSpec, OracleString, exact_total_evolution
from .resources import ResourceTally
from .statevector import (
    ProjectorSpec,
    PureState,
    Register,
    RegisterLayout,
    apply_local,
    make_rng,
    measure,
)

SEGMENT_LENGTH = 0.25
MAX_DENSE_CONTROLS = 6


@dataclass(frozen=True)
class SegmentParams:
    """Control-qubit amplitudes and placement of one segment.

    ``pinned=False`` allows a free ``beta`` (used to force a chosen failure
    probability); otherwise ``beta^2 / alpha^2 = tan(1/(8m))`` is enforced.
    """

    m: int
    alpha: float
    beta: float
    t0: float = 0.0
    segment_length: float = SEGMENT_LENGTH
    pinned: bool = True

    def __post_init__(self):
        if self.m < 1 or self.m & (self.m - 1):
            raise ValueError(f"m must be a power of two, got {self.m}")
        if abs(self.alpha**2 + self.beta**2 - 1) > 1e-12 or self.alpha <= 0 or self.beta < 0:
            raise ValueError("need alpha > 0, beta >= 0 and alpha^2 + beta^2 = 1")
        if self.pinned:
            ratio = self.beta**2 / (1 - self.beta**2)
            if abs(ratio - math.tan(1.0 / (8 * self.m))) > 1e-12:
                raise ValueError("beta is not pinned to tan(1/(8m))")

    @classmethod
    def pinned_for(cls, m: int, t0: float = 0.0) -> "SegmentParams":
        tn = math.tan(1.0 / (8 * m))
        beta = math.sqrt(tn / (1 + tn))
        return cls(m, math.sqrt(1 - beta * beta), beta, t0)

    @classmethod
    def with_beta(cls, m: int, beta: float, t0: float = 0.0) -> "SegmentParams":
        return cls(m, math.sqrt(1 - beta * beta), beta, t0, pinned=False)

    def at(self, t0: float) -> "SegmentParams":
        return SegmentParams(self.m, self.alpha, self.beta, t0, self.segment_length, self.pinned)

    def grid_time(self, g: int) -> float:
        return self.t0 + g * self.segment_length / self.m

    @property
    def success_probability(self) -> float:
        """Exact probability that every control reads 0."""
        return (self.alpha**4 + self.beta**4) ** self.m


@dataclass
class SegmentResult:
    b: tuple[int, ...]
    post_state: PureState
    success: bool
    resources: ResourceTally = field(default_factory=ResourceTally)
    direction: int = 1
    factors: dict = field(default_factory=dict, repr=False)
    flag_dirty: bool = False
    truncated: bool = False
    step_capped: bool = False
    trace: object = None

    @property
    def ones(self) -> frozenset:
        return frozenset(j + 1 for j, v in enumerate(self.b) if v)


# -- factors a I + b Q -----------------------------------------------------------

Factor = tuple[complex, complex]
IDENTITY: Factor = (1.0 + 0j, 0j)


def factor_mul(f: Factor, g: Factor) -> Factor:
    """Product ``f g`` using ``Q^2 = I``."""
    a, b = f
    c, d = g
    return (a * c + b * d, a * d + b * c)


def factor_inv(f: Factor) -> Factor:
    """Inverse of a unitary factor (its adjoint)."""
    return (complex(f[0]).conjugate(), complex(f[1]).conjugate())


def factor_matrix(f: Factor, q_diag: np.ndarray) -> np.ndarray:
    return np.diag(f[0] + f[1] * q_diag)


def factor_is_identity(f: Factor, tol: float = 1e-12) -> bool:
    return abs(f[0] - 1) < tol and abs(f[1]) < tol


def control_factors(alpha: float, beta: float, direction: int) -> tuple[Factor, Factor]:
    """Unnormalised target operators for control outcomes 0 and 1."""
    s = 1j * direction
    return (alpha * alpha + 0j, s * beta * beta), (alpha * beta + 0j, -s * alpha * beta)


def unit_factor(f: Factor) -> Factor:
    """Rescale a factor proportional to a unitary so that it is unitary."""
    scale = abs(f[0] + f[1])
    return (f[0] / scale, f[1] / scale)


# -- attempt timeline ----------------------------------------------------------------


class AttemptPlan:
    """Timeline of one attempt (forward or inverse) with optional corrections.

    ``corrections`` maps original control positions ``j`` (1-indexed) to unitary
    factors applied right after that control's query.  They are fixed known
    operators, so they are applied whether or not the control fired.
    """

    def __init__(self, params: SegmentParams, driving: DrivingSpec, oracle: OracleString,
                 direction: int = 1, corrections: dict | None = None, precision: float = 1e-10):
        if direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        if driving.dim != oracle.L:
            raise ContractViolation("driving dimension and oracle length differ")
        self.params = params
        self.driving = driving
        self.oracle = oracle
        self.direction = direction
        self.corrections = {j: f for j, f in (corrections or {}).items() if not factor_is_identity(f)}
        self.precision = precision
        self.q_diag = oracle.query_diag().astype(complex)
        self._windows: dict = {}
        self._stretches: dict = {}

    @property
    def m(self) -> int:
        return self.params.m

    def query_grid(self, r: int) -> int:
        """Grid point of the ``r``-th query in attempt order."""
        return r if self.direction == 1 else r - 1

    def original_position(self, r: int) -> int:
        return r if self.direction == 1 else self.m + 1 - r

    def correction_at(self, g: int) -> Factor:
        j = g if self.direction == 1 else self.m - g
        return self.corrections.get(j, IDENTITY)

    def window(self, g: int) -> np.ndarray:
        """Drive applied between grid points ``g - 1`` and ``g``."""
        if g not in self._windows:
            p = self.params
            if self.direction == 1:
                u = self.driving.propagator(p.grid_time(g - 1), p.grid_time(g), self.precision)
            else:
                j = self.m + 1 - g
                u = self.driving.propagator(p.grid_time(j - 1), p.grid_time(j), self.precision).conj().T
            self._windows[g] = u
        return self._windows[g]

    def stretch(self, a: int, b: int, include_start: bool = False) -> np.ndarray:
        """Windows ``a+1..b`` with their grid corrections; ``include_start`` also
        applies the correction sitting at grid ``a``."""
        key = (a, b, include_start)
        if key not in self._stretches:
            if not 0 <= a <= b <= self.m:
                raise ContractViolation(f"stretch from grid {a} to {b}")
            u = np.eye(self.oracle.L, dtype=complex)
            if include_start:
                u = factor_matrix(self.correction_at(a), self.q_diag) @ u
            for g in range(a + 1, b + 1):
                u = factor_matrix(self.correction_at(g), self.q_diag) @ (self.window(g) @ u)
            self._stretches[key] = u
        return self._stretches[key]

    def string_operator(self, positions) -> np.ndarray:
        """Target operator when exactly the controls at attempt-order ``positions``
        fire (no control amplitudes, no phases)."""
        q = np.diag(self.q_diag)
        u = None
        prev = 0
        for r in positions:
            g = self.query_grid(r)
            seg = self.stretch(prev, g, include_start=u is None)
            u = seg if u is None else seg @ u
            u = q @ u
            prev = g
        seg = self.stretch(prev, self.m, include_start=u is None)
        return seg if u is None else seg @ u

    def conditional_factor(self, r: int, outcome: int) -> Factor:
        """Unnormalised operator (incl. correction) for control ``r`` reading ``outcome``."""
        y = control_factors(self.params.alpha, self.params.beta, self.direction)[outcome]
        return factor_mul(self.correction_at(self.query_grid(r)), y)


# -- sequential route -------------------------------------------------------------------


def _target_axis(state: PureState, target_register: str | None) -> tuple[str, int]:
    name = target_register or state.layout.names[0]
    return name, state.layout.axis(name)


def run_attempt(target: PureState, plan: AttemptPlan, rng, target_register: str | None = None) -> SegmentResult:
    """One attempt, sampling control outcomes as soon as each query has acted."""
    rng = make_rng(rng)
    name, ax = _target_axis(target, target_register)
    t = np.array(target.tensor(), dtype=complex)
    m = plan.m
    outcomes = [0] * m
    realized = {}
    tally = ResourceTally()
    done = 0
    for r in range(1, m + 1):
        g = plan.query_grid(r)
        for w in range(done + 1, g + 1):
            t = apply_local(t, [ax], plan.window(w))
        done = g
        tally.add_queries(1)
        tally.add_gates(plan.driving.gate_cost)
        y0 = plan.conditional_factor(r, 0)
        # factors are proportional to unitaries, so the outcome law ignores the state
        outcome = 0 if rng.random() < abs(y0[0] + y0[1]) ** 2 else 1
        f = unit_factor(plan.conditional_factor(r, outcome))
        t = apply_local(t, [ax], factor_matrix(f, plan.q_diag))
        j = plan.original_position(r)
        outcomes[j - 1] = outcome
        realized[j] = f
    for w in range(done + 1, m + 1):
        t = apply_local(t, [ax], plan.window(w))
    tally.add_gates(plan.driving.gate_cost)
    tally.error_undo_queries += len(plan.corrections)
    tally.note_qubits(m + math.ceil(math.log2(max(2, target.layout.total_dim))))
    out = PureState(target.layout, t.reshape(-1), target.norm_tag)
    return SegmentResult(tuple(outcomes), out, not any(outcomes), tally, plan.direction, realized)


# -- dense route -------------------------------------------------------------------------------


def _r_gate(alpha: float, beta: float) -> np.ndarray:
    return np.array([[alpha, beta], [beta, -alpha]], dtype=complex)


def dense_segment_branches(target: np.ndarray, plan: AttemptPlan) -> dict:
    """Literal circuit on ``m`` explicit control qubits plus the target.

    Returns ``{outcome tuple (original positions): unnormalised target vector}``
    for every control outcome.
    """
    m = plan.m
    if m > MAX_DENSE_CONTROLS:
        raise ValueError(f"dense route limited to m <= {MAX_DENSE_CONTROLS}")
    p = plan.params
    target = np.asarray(target, dtype=complex).reshape(-1)
    dim = target.size
    state = np.zeros((2,) * m + (dim,), dtype=complex)
    state[(0,) * m] = target
    r_gate = _r_gate(p.alpha, p.beta)
    phase = np.diag([1, 1j * plan.direction])
    for c in range(m):
        state = apply_local(state, [c], phase @ r_gate)
    qmat = np.diag(plan.q_diag)
    ctrl_q = np.kron(np.diag([1, 0]), np.eye(dim)) + np.kron(np.diag([0, 1]), qmat)
    done = 0
    for r in range(1, m + 1):
        g = plan.query_grid(r)
        for w in range(done + 1, g + 1):
            state = apply_local(state, [m], plan.window(w))
        done = g
        c = plan.original_position(r) - 1
        state = apply_local(state, [c, m], ctrl_q.reshape(2 * dim, 2 * dim))
        state = apply_local(state, [m], factor_matrix(plan.correction_at(g), plan.q_diag))
    for w in range(done + 1, m + 1):
        state = apply_local(state, [m], plan.window(w))
    for c in range(m):
        state = apply_local(state, [c], r_gate)
    return {b: state[b].copy() for b in itertools.product((0, 1), repeat=m)}


def _dense_attempt(target: PureState, plan: AttemptPlan, rng, target_register: str | None) -> SegmentResult:
    name, ax = _target_axis(target, target_register)
    if len(target.layout.registers) != 1:
        raise ValueError("dense route takes a target-only state")
    m = plan.m
    branches = dense_segment_branches(target.amps, plan)
    layout = RegisterLayout(tuple(Register(f"c{j + 1}", 2, "control-uncompressed") for j in range(m))
                            + target.layout.registers)
    joint = np.stack([branches[b] for b in itertools.product((0, 1), repeat=m)]).reshape(-1)
    joint_state = PureState.from_amps(layout, joint)
    # one projector per control outcome string, on all control registers at once
    names = tuple(f"c{j + 1}" for j in range(m))
    projectors = []
    for i in range(2**m):
        pm = np.zeros((2**m, 2**m))
        pm[i, i] = 1.0
        projectors.append(ProjectorSpec(names, pm))
    outcome, post, _ = measure(joint_state, projectors, rng)
    b = tuple(int(v) for v in np.binary_repr(outcome, width=m))
    vec = post.tensor()[b]
    tally = ResourceTally(queries=m, modeled_gates=(m + 1) * plan.driving.gate_cost + 3 * m)
    tally.note_qubits(m + math.ceil(math.log2(max(2, target.layout.total_dim))))
    out = PureState.from_amps(target.layout, vec).normalized()
    return SegmentResult(b, out, not any(b), tally, plan.direction, realized_factors(plan, b))


def realized_factors(plan: AttemptPlan, b) -> dict:
    """Unit factors (with corrections) that an attempt with outcomes ``b`` applied."""
    out = {}
    for r in range(1, plan.m + 1):
        j = plan.original_position(r)
        out[j] = unit_factor(plan.conditional_factor(r, b[j - 1]))
    return out


def run_segment_uncompressed(target: PureState, params: SegmentParams, driving: DrivingSpec,
                             oracle: OracleString, rng_seed, method: str = "sequential",
                             target_register: str | None = None, direction: int = 1,
                             corrections: dict | None = None) -> SegmentResult:
    plan = AttemptPlan(params, driving, oracle, direction, corrections)
    if method == "sequential":
        return run_attempt(target, plan, rng_seed, target_register)
    if method == "dense":
        return _dense_attempt(target, plan, rng_seed, target_register)
    raise ValueError(f"unknown method {method!r}")


def success_operator(params: SegmentParams, driving: DrivingSpec, oracle: OracleString) -> np.ndarray:
    """Unitary applied to the target by a successful forward attempt."""
    plan = AttemptPlan(params, driving, oracle)
    s = unit_factor(control_factors(params.alpha, params.beta, 1)[0])
    sm = factor_matrix(s, plan.q_diag)
    u = np.eye(oracle.L, dtype=complex)
    for g in range(1, params.m + 1):
        u = sm @ (plan.window(g) @ u)
    return u


# -- reference recursive measurement --------------------------------------------------


def recursive_measure_uncompressed(joint: PureState, control_registers, rng_seed, k_prime: int | None = None,
                                   alpha: float | None = None, beta: float | None = None):
    """Measure qubit controls ``c_1..c_n`` in the ``R`` basis by recursive halving.

    Returns ``(MeasurementTrace, PureJoint)``; the joint keeps the control
    block axes first and every other register flattened into the last axis.
    ``alpha, beta`` default to the pinned values for ``n`` controls.
    """
    from .measurement import PureJoint, UncompressedBlock, sample_recursive

    names = list(control_registers)
    n = len(names)
    if n < 1 or n & (n - 1):
        raise ValueError("block size must be a power of two")
    layout = joint.layout
    axes = layout.axes(names)
    if any(layout.dims[a] != 2 for a in axes):
        raise ValueError("control registers must be qubits")
    if alpha is None or beta is None:
        p = SegmentParams.pinned_for(n)
        alpha, beta = p.alpha, p.beta
    rest = [a for a in range(len(layout.dims)) if a not in axes]
    t = np.moveaxis(joint.tensor(), axes + rest, range(len(layout.dims)))
    rest_dim = int(np.prod([layout.dims[a] for a in rest]))
    pj = PureJoint(t.reshape(2**n, rest_dim), [UncompressedBlock(n, 0, alpha, beta)])
    trace = sample_recursive(pj, make_rng(rng_seed), n if k_prime is None else k_prime)
    return trace, pj


# -- correction walk -----------------------------------------------------------------------


@dataclass
class WalkEntry:
    direction: int
    factors: dict


def undo_corrections(entry: WalkEntry, params: SegmentParams) -> dict:
    """Corrections that make a successful opposite-direction attempt undo ``entry``."""
    s_opposite = unit_factor(control_factors(params.alpha, params.beta, -entry.direction)[0])
    inv_s = factor_inv(s_opposite)
    return {j: factor_mul(factor_inv(f), inv_s) for j, f in entry.factors.items()}


def correction_walk(target: PureState, attempt, failed: SegmentResult, params: SegmentParams,
                    rng_seed, max_attempts: int = 64):
    """Repair a failed forward attempt by undo/redo until one net forward success.

    ``attempt(state, direction, corrections, rng)`` runs one attempt and returns a
    :class:`SegmentResult`.  Returns ``(state, attempts, resources, ok)`` where
    ``attempts`` counts attempts made after ``failed`` and ``ok`` is False when
    ``max_attempts`` ran out.
    """
    rng = make_rng(rng_seed)
    tally = ResourceTally()
    if failed.success:
        return target, 0, tally, True
    stack = [WalkEntry(failed.direction, failed.factors)]
    state = target
    attempts = 0
    while attempts < max_attempts:
        attempts += 1
        if stack:
            top = stack[-1]
            result = attempt(state, -top.direction, undo_corrections(top, params), rng)
        else:
            result = attempt(state, 1, None, rng)
        tally.absorb(result.resources)
        state = result.post_state
        if result.success and not result.flag_dirty and not result.truncated and not result.step_capped:
            if not stack:
                tally.correction_attempts += attempts
                return state, attempts, tally, True
            stack.pop()
        else:
            stack.append(WalkEntry(result.direction, result.factors))
    tally.correction_attempts += attempts
    return state, attempts, tally, False


def uncompressed_attempt_fn(params: SegmentParams, driving: DrivingSpec, oracle: OracleString,
                            target_register: str | None = None, method: str = "sequential"):
    def attempt(state, direction, corrections, rng):
        return run_segment_uncompressed(state, params, driving, oracle, rng, method,
                                        target_register, direction, corrections)
    return attempt


def segment_count(total_time: float) -> int:
    segs = 4 * total_time
    if abs(segs - round(segs)) > 1e-9 or round(segs) < 1:
        raise ValueError(f"4T must be a positive integer, got T={total_time}")
    return int(round(segs))


@dataclass
class FullRunResult:
    state: PureState
    resources: ResourceTally
    failed_segments: int = 0
    segment_attempts: list = field(default_factory=list)
    budget_events: int = 0
    max_queries_per_attempt: int = 0

    @property
    def ok(self) -> bool:
        return self.failed_segments == 0


def run_full_uncompressed(initial: PureState, driving: DrivingSpec, oracle: OracleString,
                          total_time: float, eps_tot: float, rng_seed, m: int | None = None,
                          max_attempts: int = 64, target_register: str | None = None) -> FullRunResult:
    """Chain ``4T`` segments, each repaired by the correction walk."""
    from .compressed import choose_params

    n_seg = segment_count(total_time)
    if m is None:
        m = choose_params(total_time, driving.norm_bound, eps_tot).m
    rng = make_rng(rng_seed)
    state = initial
    tally = ResourceTally()
    failures = 0
    attempts_log = []
    for s in range(n_seg):
        params = SegmentParams.pinned_for(m, t0=s * SEGMENT_LENGTH)
        attempt = uncompressed_attempt_fn(params, driving, oracle, target_register)
        first = attempt(state, 1, None, rng)
        tally.absorb(first.resources)
        state = first.post_state
        extra = 0
        if not first.success:
            state, extra, walk_tally, ok = correction_walk(state, attempt, first, params, rng, max_attempts)
            tally.absorb(walk_tally)
            failures += not ok
        attempts_log.append(1 + extra)
    return FullRunResult(state, tally, failures, attempts_log)


def exact_reference(initial: PureState, driving: DrivingSpec, oracle: OracleString, total_time: float,
                    target_register: str | None = None) -> PureState:
    return exact_total_evolution(initial, driving, oracle, total_time, target_register)
