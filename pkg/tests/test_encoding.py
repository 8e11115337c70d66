from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fracquery.encoding import (
    CompressionParams,
    TailDecomposition,
    decode_c,
    encode_b,
    encode_c,
    exact_q,
    exponential_state,
    inverse_prefix_sums,
    kron_all,
    legal_sector,
    m_gamma,
    overlap_phi,
    pinned_beta,
    prefix_sums,
    prepare_phi,
    q_lower_bound,
    smallest_q,
    split,
    split_slots,
)


def low_weight_strings(m: int, k: int):
    for w in range(0, min(k, m) + 1):
        for pos in itertools.combinations(range(m), w):
            yield tuple(1 if i in pos else 0 for i in range(m))


def pinned_pair(m: int) -> tuple[float, float]:
    beta = pinned_beta(m)
    return math.sqrt(1 - beta * beta), beta


class TestSuccinctEncoding:
    def test_zero_string_is_all_sentinel(self):
        assert encode_c("0000", 2) == (4, 4, 4)

    def test_run_lengths(self):
        assert encode_c("0110", 2) == (1, 0, 4)

    @pytest.mark.parametrize("m", [4, 8, 16])
    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_exhaustive_round_trip(self, m, k):
        for bits in low_weight_strings(m, k):
            assert decode_c(encode_c(bits, k), m) == bits

    def test_heavy_string_keeps_first_ones(self):
        assert decode_c(encode_c("1111", 1), 4) == (1, 1, 0, 0)

    @given(st.sampled_from([(4, 1), (4, 2), (8, 2), (8, 3), (16, 3)]), st.data())
    def test_injective(self, mk, data):
        m, k = mk
        strings = st.lists(st.integers(0, m - 1), max_size=k, unique=True).map(
            lambda pos: tuple(1 if i in pos else 0 for i in range(m)))
        x, y = data.draw(strings), data.draw(strings)
        if x != y:
            assert encode_c(x, k) != encode_c(y, k)

    def test_legal_sector_counts(self):
        sec = legal_sector(8, 2)
        assert sec.size == sum(math.comb(8, w) for w in range(4))
        assert sec.keys[sec.zero_index] == (8, 8, 8)

    def test_bad_slot_rejected(self):
        with pytest.raises(ValueError):
            decode_c((5, 4, 4), 4)


class TestSplit:
    def test_zero_string(self):
        assert split_slots((8, 8, 8), 8, 2) == ((4, 4, 4), (4, 4, 4))

    def test_worked_example(self):
        left, right = split_slots(encode_c("01000010", 2), 8, 2)
        assert decode_c(left, 4) == (0, 1, 0, 0)
        assert decode_c(right, 4) == (0, 0, 1, 0)

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_exhaustive_m8(self, k):
        for bits in low_weight_strings(8, k):
            left, right = split_slots(encode_c(bits, k), 8, k)
            assert decode_c(left, 4) + decode_c(right, 4) == bits

    def test_odd_block_rejected(self):
        with pytest.raises(ValueError):
            split_slots((3, 3), 3, 1)

    @given(st.integers(0, 10_000), st.sampled_from([(4, 1), (8, 2), (16, 2), (8, 3)]))
    def test_split_is_isometric(self, seed, nk):
        n, k = nk
        rng = np.random.default_rng(seed)
        v = rng.normal(size=legal_sector(n, k).size) + 1j * rng.normal(size=legal_sector(n, k).size)
        out = split(v, n, k)
        assert abs(np.linalg.norm(out) - np.linalg.norm(v)) <= 1e-12


class TestPrefixSums:
    def test_zero_input(self):
        assert prefix_sums((0, 0, 0), 100) == (1, 2, 3)

    def test_substitution(self):
        assert prefix_sums((2, 0, 1), 100) == (3, 4, 6)

    def test_inverse_exhaustive(self):
        m, q, k = 8, 16, 2
        modulus = m + q + 2
        for slots in itertools.product(range(q + 1), repeat=k + 1):
            assert inverse_prefix_sums(prefix_sums(slots, modulus), modulus) == slots

    @given(st.lists(st.integers(0, 40), min_size=1, max_size=5), st.integers(41, 200))
    def test_forward_is_a_bijection(self, slots, modulus):
        assert inverse_prefix_sums(prefix_sums(slots, modulus), modulus) == tuple(slots)


class TestRotation:
    def test_zero_angle(self):
        np.testing.assert_allclose(m_gamma(0.0).matrix, np.eye(2))

    def test_unit_angle(self):
        np.testing.assert_allclose(m_gamma(1.0).matrix, np.array([[1, -1], [1, 1]]) / math.sqrt(2), atol=1e-15)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            m_gamma(-0.1)

    @given(st.floats(0.0, 1e3))
    def test_unitary(self, gamma):
        u = m_gamma(gamma).matrix
        assert np.max(np.abs(u.conj().T @ u - np.eye(2))) <= 1e-12


class TestExponentialState:
    def test_q1(self):
        a, b = 0.8, 0.6
        np.testing.assert_allclose(prepare_phi(1, a, b).amps, [b, a], atol=1e-15)

    def test_beta_zero(self):
        np.testing.assert_allclose(prepare_phi(8, 1.0, 0.0).amps, np.eye(9)[8], atol=1e-15)

    def test_q4_frozen_amplitudes(self):
        a = 0.9
        b = math.sqrt(1 - a * a)
        expected = [0.4358898943540673, 0.39230090491866054, 0.3530708144267945, 0.3177637329841151, 0.6561]
        amps = prepare_phi(4, a, b).amps
        np.testing.assert_allclose(amps.real, expected, atol=1e-12)
        assert abs(np.linalg.norm(amps) - 1) <= 1e-12

    def test_non_power_of_two(self):
        with pytest.raises(ValueError):
            prepare_phi(6, 0.9, math.sqrt(0.19))

    @given(st.integers(0, 9), st.floats(0.05, 0.95))
    def test_cascade_matches_closed_form(self, log_q, beta):
        q = 2**log_q
        alpha = math.sqrt(1 - beta * beta)
        amps = prepare_phi(q, alpha, beta).amps
        assert np.max(np.abs(amps - exponential_state(q, alpha, beta))) <= 1e-12


class TestOverlap:
    def test_beta_one(self):
        assert overlap_phi(16, 5, 0.0, 1.0) == 1.0

    def test_no_shift_is_exact(self):
        a, b = pinned_pair(8)
        assert overlap_phi(64, 0, a, b) == 1.0

    def test_grid_against_prepared_states(self):
        a, b = pinned_pair(8)
        points = 0
        for log_q in range(1, 9):
            q = 2**log_q
            full = prepare_phi(q, a, b).amps.real
            for log_s in range(0, log_q + 1):
                short = prepare_phi(2**log_s, a, b).amps.real
                assert abs(short @ full[: short.size] - overlap_phi(q, q - 2**log_s, a, b)) <= 1e-12
                points += 1
        assert points >= 44

    @pytest.mark.parametrize("m", [4, 8, 16])
    @pytest.mark.parametrize("eps", [1e-2, 1e-3, 1e-4])
    def test_bound_gives_overlap(self, m, eps):
        a, b = pinned_pair(m)
        q = smallest_q(m, b, eps)
        assert q >= q_lower_bound(m, b, eps) and q // 2 < q_lower_bound(m, b, eps)
        assert min(overlap_phi(q, t, a, b) for t in range(m + 1)) >= 1 - eps

    def test_t_out_of_range(self):
        with pytest.raises(ValueError):
            overlap_phi(4, 5, 0.9, math.sqrt(0.19))

    def test_exact_q_deficit(self):
        a, b = pinned_pair(8)
        q = exact_q(8, b)
        assert 1 - overlap_phi(q, 8, a, b) < 1e-13
        assert 1 - overlap_phi(q // 2, 8, a, b) >= 1e-13


class TestIntermediateEncoding:
    def test_inner_products_and_orthonormality_small(self):
        m, q, k = 4, 8, 2
        a, b = pinned_pair(m)
        product = kron_all([exponential_state(q, a, b)] * (k + 1))
        vectors = []
        for bits in low_weight_strings(m, k):
            v = encode_b(bits, q, k, a, b)
            assert abs(v @ product - a ** (m - sum(bits)) * b ** sum(bits)) <= 1e-12
            vectors.append(v)
        gram = np.array(vectors) @ np.array(vectors).T
        assert np.max(np.abs(gram - np.eye(len(vectors)))) <= 1e-10

    def test_needs_q_at_least_m(self):
        with pytest.raises(ValueError):
            encode_b("0100", 2, 2, 0.9, math.sqrt(0.19))


class TestTail:
    @given(st.sampled_from([4, 8, 16]), st.integers(0, 4))
    def test_tail_plus_kept_is_one(self, m, k):
        a, b = pinned_pair(m)
        tail = TailDecomposition.build(m, k, a, b)
        assert abs(tail.mu_sq + tail.kept_norm_sq() - 1) <= 1e-12

    @given(st.sampled_from([4, 8, 16, 32]), st.integers(2, 5))
    def test_tail_ratio_at_most_half(self, m, k):
        a, b = pinned_pair(m)
        lo = TailDecomposition.build(m, k, a, b, enumerate_kept=False).mu_sq
        hi = TailDecomposition.build(m, k + 1, a, b, enumerate_kept=False).mu_sq
        if lo > 0:
            assert hi / lo <= 0.5


class TestCompressionParams:
    def test_build_meets_bound(self):
        p = CompressionParams.build(8, 2, 2, 1e-3)
        assert p.meets_q_bound()
        assert p.max_phi_deficit() <= 1e-3

    @pytest.mark.parametrize("kwargs", [
        dict(m=6, k=2, k_prime=2, eps=1e-3),
        dict(m=8, k=0, k_prime=2, eps=1e-3),
        dict(m=8, k=2, k_prime=2, eps=1.5),
        dict(m=8, k=2, k_prime=2, eps=1e-3, q=4),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            CompressionParams.build(**kwargs)

    def test_pinned_ratio(self):
        for m in (4, 8, 16, 32):
            b = pinned_beta(m)
            assert abs(b * b / (1 - b * b) - math.tan(1 / (8 * m))) <= 1e-12
