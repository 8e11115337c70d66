from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from conftest import random_state
from fracquery.oracle import (
    ContractViolation,
    DriveError,
    DrivingSpec,
    OracleString,
    apply_fractional_query,
    apply_query,
    constant_random_driving,
    controlled_drive,
    diagonal_driving,
    driving_from_mapping,
    exact_total_evolution,
    load_driving,
    oracle_evolution,
    piecewise_driving,
    walk_driving,
    zero_driving,
)
from fracquery.statevector import DimensionError, PureState, RegisterLayout, fidelity_pure, init_basis

TARGET = RegisterLayout.of(("t", 4, "target"))


def target_state(seed: int = 0, dim: int = 4) -> PureState:
    layout = RegisterLayout.of(("t", dim, "target"))
    return PureState.from_amps(layout, random_state(dim, seed))


def rotating_driving(total_time: float = 1.0) -> DrivingSpec:
    """Smooth, non-commuting time dependence for the time-ordered product."""
    x = np.array([[0, 1], [1, 0]], dtype=complex)
    z = np.diag([1.0, -1.0]).astype(complex)
    return DrivingSpec(lambda t: math.cos(3 * t) * x + math.sin(3 * t) * z, 1.0, total_time, dim=2)


class TestQueries:
    def test_all_zero_oracle_is_identity(self):
        s = target_state()
        np.testing.assert_allclose(apply_query(s, OracleString("0000"), "t").amps, s.amps)

    def test_all_one_oracle_flips_sign(self):
        s = target_state()
        np.testing.assert_allclose(apply_query(s, OracleString("1111"), "t").amps, -s.amps)

    def test_single_marked_entry(self):
        s = init_basis(TARGET, (1,))
        out = apply_query(s, OracleString("0110"), "t")
        np.testing.assert_allclose(out.amps, [0, -1, 0, 0])

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            apply_query(target_state(), OracleString("011"), "t")

    def test_bad_bits(self):
        with pytest.raises(ValueError):
            OracleString("012")

    def test_full_fractional_is_query(self):
        s, o = target_state(1), OracleString("0110")
        np.testing.assert_allclose(apply_fractional_query(s, o, "t", 1.0).amps, apply_query(s, o, "t").amps, atol=1e-15)

    def test_two_halves_make_a_query(self):
        s, o = target_state(2), OracleString("1011")
        twice = apply_fractional_query(apply_fractional_query(s, o, "t", 0.5), o, "t", 0.5)
        assert np.max(np.abs(twice.amps - apply_query(s, o, "t").amps)) <= 1e-12

    @pytest.mark.parametrize("lam", [0.0, -0.2, 1.5])
    def test_power_out_of_range(self, lam):
        with pytest.raises(ValueError):
            apply_fractional_query(target_state(), OracleString("0110"), "t", lam)

    @given(st.floats(0.01, 0.49), st.floats(0.01, 0.5), st.integers(0, 15))
    def test_fractional_powers_compose(self, a, b, bits):
        o = OracleString(format(bits, "04b"))
        s = target_state(bits)
        lhs = apply_fractional_query(apply_fractional_query(s, o, "t", a), o, "t", b)
        rhs = apply_fractional_query(s, o, "t", a + b)
        assert np.max(np.abs(lhs.amps - rhs.amps)) <= 1e-12


class TestOracleEvolution:
    def test_zero_time_is_identity(self):
        s = target_state(3)
        np.testing.assert_allclose(oracle_evolution(s, OracleString("0110"), "t", 0.0).amps, s.amps)

    def test_time_pi_is_query_up_to_phase(self):
        s, o = target_state(4), OracleString("0110")
        out = oracle_evolution(s, o, "t", math.pi)
        assert abs(fidelity_pure(out.amps, apply_query(s, o, "t").amps) - 1) <= 1e-12

    @given(st.floats(-6.0, 6.0), st.integers(0, 15))
    def test_matches_matrix_exponential(self, t, bits):
        o = OracleString(format(bits, "04b"))
        s = target_state(bits + 7)
        direct = expm(-1j * np.diag(o.x) * t) @ s.amps
        assert abs(fidelity_pure(oracle_evolution(s, o, "t", t).amps, direct) - 1) <= 1e-10

    @given(st.floats(-6.0, 6.0))
    def test_forward_and_backward_cancel(self, t):
        s, o = target_state(5), OracleString("1101")
        back = oracle_evolution(oracle_evolution(s, o, "t", t), o, "t", -t)
        assert np.max(np.abs(back.amps - s.amps)) <= 1e-12


def drive_layout(grid_points: int, dim: int) -> RegisterLayout:
    return RegisterLayout.of(("start", grid_points, "time"), ("finish", grid_points, "time"), ("t", dim, "target"))


def windowed_state(layout: RegisterLayout, ts: int, tf: int, target: np.ndarray) -> PureState:
    amps = np.zeros(layout.dims, dtype=complex)
    amps[ts, tf] = target
    return PureState.from_amps(layout, amps.reshape(-1))


class TestControlledDrive:
    def test_equal_times_identity(self):
        d = constant_random_driving(2, 1.0, seed=1).with_grid(8)
        layout = drive_layout(9, 2)
        v = random_state(2, 0)
        out = controlled_drive(windowed_state(layout, 3, 3, v), ("start", "finish"), "t", d)
        np.testing.assert_allclose(out.tensor()[3, 3], v, atol=1e-15)

    def test_constant_window_matches_exponential(self):
        d = constant_random_driving(2, 1.0, seed=2).with_grid(8)
        layout = drive_layout(9, 2)
        v = random_state(2, 1)
        out = controlled_drive(windowed_state(layout, 0, 5, v), ("start", "finish"), "t", d, precision=1e-10)
        expected = expm(-1j * d.hamiltonian(0.0) * (5 / 8)) @ v
        assert np.max(np.abs(out.tensor()[0, 5] - expected)) <= 1e-10

    def test_superposed_windows_are_block_diagonal(self):
        d = walk_driving(0.7).with_grid(4)
        layout = drive_layout(5, 2)
        amps = np.zeros(layout.dims, dtype=complex)
        amps[0, 2] = [1, 0]
        amps[1, 4] = [0, 1]
        amps /= np.linalg.norm(amps)
        out = controlled_drive(PureState.from_amps(layout, amps.reshape(-1)), ("start", "finish"), "t", d).tensor()
        np.testing.assert_allclose(out[0, 2], d.propagator(0.0, 0.5) @ amps[0, 2], atol=1e-12)
        np.testing.assert_allclose(out[1, 4], d.propagator(0.25, 1.0) @ amps[1, 4], atol=1e-12)

    def test_reversed_window_is_contract_violation(self):
        d = walk_driving().with_grid(4)
        layout = drive_layout(5, 2)
        with pytest.raises(ContractViolation):
            controlled_drive(windowed_state(layout, 3, 1, [1, 0]), ("start", "finish"), "t", d)

    @pytest.mark.parametrize("make", [
        lambda: constant_random_driving(3, 1.0, seed=4),
        lambda: piecewise_driving([(0.0, np.diag([1.0, 0.0, -1.0])), (0.4, constant_random_driving(3, 1.0, 5).hamiltonian(0))], 1.0),
    ])
    def test_windows_compose(self, make):
        d = make()
        eps = 1e-9
        for a, b, c in [(0.0, 0.3, 0.7), (0.1, 0.45, 1.0), (0.2, 0.2, 0.9)]:
            two = d.propagator(b, c, eps) @ d.propagator(a, b, eps)
            assert np.linalg.norm(two - d.propagator(a, c, eps), 2) <= 2 * eps

    def test_time_dependent_windows_compose(self):
        d = rotating_driving()
        eps = 1e-8
        two = d.propagator(0.35, 0.9, eps) @ d.propagator(0.0, 0.35, eps)
        assert np.linalg.norm(two - d.propagator(0.0, 0.9, eps), 2) <= 2 * eps

    def test_injected_error_has_requested_norm(self):
        d = constant_random_driving(3, 1.0, seed=6)
        noisy = d.with_error(DriveError(1e-3, seed=2))
        diff = noisy.propagator(0.0, 0.25) - d.propagator(0.0, 0.25)
        assert abs(np.linalg.norm(diff, 2) - 1e-3) <= 1e-12
        np.testing.assert_allclose(noisy.propagator(0.5, 0.5), np.eye(3))


class TestExactEvolution:
    def test_zero_duration(self):
        s = target_state(8)
        out = exact_total_evolution(s, constant_random_driving(4, 1.0, 3), OracleString("0110"), 0.0)
        np.testing.assert_allclose(out.amps, s.amps)

    def test_zero_drive_reduces_to_oracle_evolution(self):
        s, o = target_state(9), OracleString("0110")
        out = exact_total_evolution(s, zero_driving(4), o, 0.8)
        assert abs(fidelity_pure(out.amps, oracle_evolution(s, o, "t", 0.8).amps) - 1) <= 1e-12

    def test_commuting_case_factorises(self):
        values = [0.3, -0.5, 0.9, 0.1]
        o = OracleString("0110")
        s = target_state(10)
        out = exact_total_evolution(s, diagonal_driving(values), o, 1.0)
        expected = np.exp(-1j * np.array(values)) * np.exp(-1j * o.x) * s.amps
        assert np.max(np.abs(out.amps - expected)) <= 1e-10

    def test_dimension_cap(self):
        big = zero_driving(65)
        s = PureState.from_amps(RegisterLayout.of(("t", 65)), np.eye(65)[0])
        with pytest.raises(DimensionError):
            exact_total_evolution(s, big, OracleString("0" * 65), 0.5)

    @given(st.integers(0, 1000), st.floats(0.0, 1.0))
    def test_unitary(self, seed, duration):
        s = target_state(seed)
        out = exact_total_evolution(s, constant_random_driving(4, 2.0, seed), OracleString("1001"), duration)
        assert abs(np.linalg.norm(out.amps) - 1) <= 1e-12


class TestDrivingSpec:
    def test_norm_bound_enforced(self):
        h = np.diag([2.0, -2.0])
        with pytest.raises(ValueError):
            DrivingSpec(lambda t: h, 1.0, 1.0)

    def test_non_hermitian_rejected(self):
        h = np.array([[0, 1], [0, 0]], dtype=complex)
        with pytest.raises(ValueError):
            DrivingSpec(lambda t: h, 5.0, 1.0)

    def test_mapping_mirrors_entries(self):
        d = driving_from_mapping({"dim": 2, "entries": [[0, 1, 0.5, 0.25]], "time_grid": 16})
        h = d.hamiltonian(0.0)
        np.testing.assert_allclose(h, [[0, 0.5 + 0.25j], [0.5 - 0.25j, 0]])
        assert d.time_grid == 16

    def test_mapping_unknown_key(self):
        with pytest.raises(ValueError):
            driving_from_mapping({"dim": 2, "entries": [], "colour": "red"})

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "drive.toml"
        path.write_text(
            "[driving]\ndim = 2\nnorm_bound = 2.0\n"
            "[[driving.pieces]]\nstart = 0.0\nentries = [[0, 0, 1.0, 0.0], [1, 1, -1.0, 0.0]]\n"
            "[[driving.pieces]]\nstart = 0.5\nentries = [[0, 1, 1.0, 0.0]]\n"
        )
        d = load_driving(path)
        assert d.norm_bound == 2.0
        np.testing.assert_allclose(d.hamiltonian(0.75), [[0, 1], [1, 0]])
        np.testing.assert_allclose(d.hamiltonian(0.25), np.diag([1, -1]))
