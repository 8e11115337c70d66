from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_state
from fracquery.compressed import (
    InfeasibleParams,
    apply_drive_queries_compressed,
    apply_phase_compressed,
    choose_params,
    compute_error_metrics,
    key_query_positions,
    run_full_compressed,
    run_segment_compressed,
    segment_ensembles,
)
from fracquery.encoding import (
    CompressionParams,
    TailDecomposition,
    binomial_tail,
    decode_c,
    encode_c,
    exact_q,
    legal_sector,
    pinned_beta,
)
from fracquery.oracle import OracleString, constant_random_driving, zero_driving
from fracquery.statevector import PureState, RegisterLayout, fidelity_pure
from fracquery.uncompressed import AttemptPlan, SegmentParams

ORACLE = OracleString("0110")

# Hand-built two-outcome ensemble.  Outcome "a" differs by [[0.1, 0.05], [0.05, -0.1]],
# whose eigenvalues are +-sqrt(0.0125); outcome "b" is identical on both sides.
HAND_U = {"a": np.array([[0.5, 0.0], [0.0, 0.1]]), "b": np.array([[0.2, 0.0], [0.0, 0.2]])}
HAND_C = {"a": np.array([[0.4, -0.05], [-0.05, 0.2]]), "b": np.array([[0.2, 0.0], [0.0, 0.2]])}
HAND_D_AV = 0.223606797749979
HAND_D_BAR = 0.1118033988749895


def target(dim: int = 4, seed: int = 0) -> PureState:
    return PureState.from_amps(RegisterLayout.of(("t", dim, "target")), random_state(dim, seed))


def plan_for(m: int, driving, oracle=ORACLE) -> AttemptPlan:
    return AttemptPlan(SegmentParams.pinned_for(m), driving, oracle)


class TestPhase:
    def test_zero_string_untouched(self):
        sec = legal_sector(8, 2)
        v = np.zeros(sec.size, dtype=complex)
        v[sec.zero_index] = 1
        np.testing.assert_array_equal(apply_phase_compressed(v, 8, 2), v)

    def test_weight_two_gets_minus_one(self):
        sec = legal_sector(8, 2)
        v = np.zeros(sec.size, dtype=complex)
        i = sec.index[encode_c("01000010", 2)]
        v[i] = 1
        assert apply_phase_compressed(v, 8, 2)[i] == -1

    def test_matches_per_qubit_phase(self):
        sec = legal_sector(8, 3)
        out = apply_phase_compressed(np.ones(sec.size, dtype=complex), 8, 3)
        for i, key in enumerate(sec.keys):
            bits = decode_c(key, 8)
            expected = np.prod([1j if b else 1 for b in bits])
            assert abs(out[i] - expected) <= 1e-15

    def test_inverse_direction_conjugates(self):
        sec = legal_sector(4, 2)
        v = np.ones(sec.size, dtype=complex)
        back = apply_phase_compressed(apply_phase_compressed(v, 4, 2, 1), 4, 2, -1)
        np.testing.assert_allclose(back, v)


class TestDriveAndQueries:
    def test_all_sentinel_is_single_drive(self):
        d = constant_random_driving(4, 1.0, seed=3)
        plan = plan_for(8, d)
        sec = legal_sector(8, 2)
        joint = np.zeros((sec.size, 4), dtype=complex)
        v = random_state(4, 1)
        joint[sec.zero_index] = v
        out, _ = apply_drive_queries_compressed(joint, 8, 2, 2, plan)
        assert np.max(np.abs(out[sec.zero_index] - d.propagator(0.0, 0.25) @ v)) <= 1e-10
        assert key_query_positions(8, 2, 2)[sec.zero_index] == ()

    @pytest.mark.parametrize("p", range(1, 9))
    def test_one_position_applies_one_query(self, p):
        plan = plan_for(8, zero_driving(4))
        sec = legal_sector(8, 2)
        bits = "".join("1" if i == p else "0" for i in range(1, 9))
        i = sec.index[encode_c(bits, 2)]
        joint = np.zeros((sec.size, 4), dtype=complex)
        v = random_state(4, p)
        joint[i] = v
        out, _ = apply_drive_queries_compressed(joint, 8, 2, 2, plan)
        np.testing.assert_allclose(out[i], ORACLE.query_diag() * v, atol=1e-15)

    def test_low_weight_sector_matches_interleaved_circuit(self):
        m, k = 8, 3
        d = constant_random_driving(4, 1.0, seed=5)
        params = SegmentParams.pinned_for(m)
        plan = AttemptPlan(params, d, ORACLE)
        q = np.diag(ORACLE.query_diag())
        sec = legal_sector(m, k)
        joint = np.tile(random_state(4, 2), (sec.size, 1))
        out, _ = apply_drive_queries_compressed(joint, m, k, k + 1, plan)
        for i, key in enumerate(sec.keys):
            bits = decode_c(key, m)
            if sum(bits) > k:
                continue
            u = np.eye(4, dtype=complex)
            for j in range(1, m + 1):
                u = d.propagator(params.grid_time(j - 1), params.grid_time(j)) @ u
                if bits[j - 1]:
                    u = q @ u
            assert np.max(np.abs(out[i] - u @ joint[i])) <= 1e-10

    @given(st.integers(1, 4), st.integers(1, 4))
    def test_issued_queries_bounded(self, k, k_prime):
        plan = plan_for(8, zero_driving(4))
        sec = legal_sector(8, k)
        _, issued = apply_drive_queries_compressed(np.ones((sec.size, 4), dtype=complex), 8, k, k_prime, plan)
        assert issued <= k_prime
        assert max(len(p) for p in key_query_positions(8, k, k_prime)) <= k_prime


class TestSegment:
    def test_trivial_oracle_success_returns_input(self):
        params = CompressionParams.build(8, 2, 2, 1e-3)
        s = target(4, 3)
        successes = 0
        for seed in range(40):
            r = run_segment_compressed(s, params, zero_driving(4), OracleString("0000"), seed)
            if r.success:
                successes += 1
                assert abs(fidelity_pure(r.post_state.amps, s.amps) - 1) <= 1e-10
        assert successes > 0

    @given(st.integers(0, 10_000))
    def test_query_tally_capped(self, seed):
        params = CompressionParams.build(8, 3, 2, 1e-2)
        r = run_segment_compressed(target(4, seed), params, constant_random_driving(4, 1.0, 1), ORACLE, seed)
        assert r.resources.queries <= params.k_prime
        assert r.success == (not r.ones and not r.flag_dirty and not r.truncated and not r.step_capped)
        assert abs(r.post_state.norm_tag - 1) <= 1e-12

    def test_large_m_rejected(self):
        params = CompressionParams.build(32, 2, 2, 1e-3)
        with pytest.raises(InfeasibleParams):
            run_segment_compressed(target(), params, zero_driving(4), ORACLE, 0)

    def test_exact_success_probability_without_drive(self):
        m = 4
        params = CompressionParams.build(m, m, m, 1e-3, q=exact_q(m, pinned_beta(m)))
        ens_u, ens_c, _, _, _ = segment_ensembles(np.ones(4) / 2, params, zero_driving(4), ORACLE)
        p_u = np.trace(ens_u[frozenset()]).real
        p_c = np.trace(ens_c[frozenset()]).real
        assert abs(p_u - p_c) <= 1e-9
        assert abs(p_u - SegmentParams.pinned_for(m).success_probability) <= 1e-12


class TestFullRun:
    def test_quarter_is_single_segment(self):
        params = CompressionParams.build(4, 2, 2, 1e-3)
        r = run_full_compressed(target(), zero_driving(4, 0.25), ORACLE, 0.25, 0.1, 0, params=params)
        assert len(r.segment_attempts) == 1

    def test_queries_scale_with_segments(self):
        d = constant_random_driving(4, 1.0, seed=2, total_time=1.0)
        choice = choose_params(1.0, 1.0, 0.1)
        for seed in range(5):
            r = run_full_compressed(target(4, seed), d, ORACLE, 1.0, 0.1, seed, params=choice.params)
            assert r.max_queries_per_attempt <= choice.params.k_prime
            attempts = sum(r.segment_attempts)
            assert r.resources.queries <= choice.params.k_prime * attempts


class TestErrorMetrics:
    def test_identical_ensembles(self):
        met = compute_error_metrics(HAND_U, HAND_U)
        assert (met.d_av, met.delta_p, met.d_bar) == (0.0, 0.0, 0.0)

    def test_hand_built_example(self):
        met = compute_error_metrics(HAND_U, HAND_C)
        assert abs(met.d_av - HAND_D_AV) <= 1e-12
        assert abs(met.delta_p) <= 1e-12
        assert abs(met.d_bar - HAND_D_BAR) <= 1e-12

    def test_alphabet_mismatch(self):
        with pytest.raises(ValueError):
            compute_error_metrics(HAND_U, {"a": HAND_C["a"]})

    @given(st.integers(0, 10_000), st.integers(1, 5))
    def test_deviation_ordering(self, seed, outcomes):
        rng = np.random.default_rng(seed)

        def ensemble():
            out = {}
            weights = rng.dirichlet(np.ones(outcomes))
            for i, w in enumerate(weights):
                a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
                rho = a @ a.conj().T
                out[i] = w * rho / np.trace(rho).real
            return out

        met = compute_error_metrics(ensemble(), ensemble())
        assert met.delta_p <= met.d_av + 1e-10
        assert met.d_bar <= met.d_av + 1e-10


class TestChooseParams:
    def test_baseline(self):
        c = choose_params(1.0, 1.0, 0.1)
        assert c.n_segments == 4
        assert c.params.m >= c.m_raw and c.params.m >= 4

    @pytest.mark.parametrize("norm", [0.5, 1.0, 2.0])
    def test_doubling_norm_doubles_m(self, norm):
        a = choose_params(1.0, norm, 0.1)
        b = choose_params(1.0, 2 * norm, 0.1)
        assert b.m_raw >= 2 * a.m_raw * (1 - 1e-12)
        assert b.params.m >= a.params.m

    @pytest.mark.parametrize("eps_tot", [0.2, 0.1])
    def test_halving_budget(self, eps_tot):
        a = choose_params(1.0, 0.5, eps_tot).params
        b = choose_params(1.0, 0.5, eps_tot / 2).params
        assert abs(b.eps_prime - a.eps_prime / 2) <= 1e-15
        assert b.eps * math.log2(b.m) <= a.eps * math.log2(a.m) / 2 * (1 + 1e-12)
        assert b.eps <= a.eps / 2

    @pytest.mark.parametrize("args", [(1.0, 1.0, 0.1), (1.0, 2.0, 0.1), (2.0, 1.0, 0.05), (0.5, 1.0, 0.01)])
    def test_cutoffs_are_minimal(self, args):
        p = choose_params(*args).params
        assert TailDecomposition.build(p.m, p.k, p.alpha, p.beta, enumerate_kept=False).mu_sq <= p.eps
        if p.k > 1:
            assert binomial_tail(p.m, p.beta**2, p.k - 1) > p.eps
        p_one = 2 * p.alpha**2 * p.beta**2
        assert binomial_tail(p.m, p_one, p.k_prime) <= p.eps_prime
        if p.k_prime > 1:
            assert binomial_tail(p.m, p_one, p.k_prime - 1) > p.eps_prime
        assert p.meets_q_bound()
        assert p.eps <= 1 / (p.k_prime * math.log2(p.m))

    def test_infeasible(self):
        with pytest.raises(InfeasibleParams):
            choose_params(1.0, 8.0, 0.1)

    @pytest.mark.parametrize("args", [(0.0, 1.0, 0.1), (1.0, 1.0, 1.5), (0.3, 1.0, 0.1)])
    def test_invalid_inputs(self, args):
        with pytest.raises(ValueError):
            choose_params(*args)
