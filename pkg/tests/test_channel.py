import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from decoqkd.channel import (
    ChannelSetting,
    JointState,
    apply_dephasing,
    argmin_d_b,
    bob_reduced_state,
    gamma_c,
    qber_analytic,
    qber_analytic_grid,
    transmit,
)
from decoqkd.qmath import KETS, GaussianMode, born_probability, validate_density_matrix

MODE = GaussianMode()
displacements = st.floats(-1.0, 1.0, allow_nan=False)


def error_prob(ket_name, setting, mode):
    """Bob's error in the matching basis from the propagated joint state."""
    wrong = {"H": "V", "V": "H", "D": "A", "A": "D"}[ket_name]
    rho = transmit(KETS[ket_name], setting, mode).reduced()
    return born_probability(rho, KETS[wrong])


def test_matched_settings_are_transparent():
    for d in (0.0, 0.2, 0.6):
        rho = transmit(KETS["D"], ChannelSetting(d, d), MODE).reduced()
        assert np.allclose(rho, np.full((2, 2), 0.5), atol=1e-14)
        assert qber_analytic(ChannelSetting(d, d), MODE) == 0.0


@given(displacements, displacements)
def test_joint_state_reduction_matches_closed_form(d_a, d_b):
    s = ChannelSetting(d_a, d_b)
    for alpha, beta in [(1, 0), (np.sqrt(0.5), np.sqrt(0.5)), (0.6, 0.8j)]:
        ket = np.array([alpha, beta], dtype=complex)
        numeric = transmit(ket, s, MODE).reduced()
        assert np.max(np.abs(numeric - bob_reduced_state(alpha, beta, s, MODE))) <= 1e-12
        validate_density_matrix(numeric)


@given(displacements, displacements)
def test_qber_formula_matches_born_rule(d_a, d_b):
    s = ChannelSetting(d_a, d_b)
    # H/V states are untouched, D/A carry the whole error
    assert error_prob("H", s, MODE) <= 1e-14
    p_da = 0.5 * (error_prob("D", s, MODE) + error_prob("A", s, MODE))
    avg = 0.5 * (0.0 + p_da)
    assert abs(avg - qber_analytic(s, MODE)) <= 1e-12


def test_gamma_c_vanishes_for_large_offset():
    g = gamma_c(ChannelSetting(3.0, 0.0), GaussianMode(0.8, 0.0))
    assert abs(g) < 1e-12
    assert qber_analytic(ChannelSetting(3.0, 0.0), GaussianMode(0.8, 0.0)) == pytest.approx(0.25)


def test_untilted_qber_rises_monotonically_to_quarter():
    mode = GaussianMode(0.8, 0.0)
    q = qber_analytic_grid(0.0, np.linspace(0, 3, 301), mode)
    assert np.all(np.diff(q) >= 0)
    assert q[-1] == pytest.approx(0.25, abs=1e-12)


def test_tilted_scan_minimum_at_d_a():
    grid = np.round(np.arange(0, 0.8001, 0.01), 10)
    assert argmin_d_b(0.4, grid, MODE) == pytest.approx(0.4)


def test_qber_frozen_value():
    # 1/4 (1 - exp(-2 * 0.1^2 / 0.64) cos(2 * 6.87 * 0.1)), evaluated by hand
    expected = 0.25 * (1 - 0.9692332344763441 * np.cos(1.374))
    assert qber_analytic(ChannelSetting(0.3, 0.2), MODE) == pytest.approx(expected, abs=1e-12)


def test_dephasing_merges_duplicate_shifts():
    state = JointState.prepare(KETS["D"], MODE)
    state = apply_dephasing(apply_dephasing(state, 0.2), -0.2)
    assert len(state.shifts) == 1
    assert state.norm() == pytest.approx(1.0)


def test_reduced_state_rejects_unnormalized():
    with pytest.raises(ValueError):
        bob_reduced_state(1.0, 1.0, ChannelSetting(0, 0), MODE)
    with pytest.raises(ValueError):
        ChannelSetting(np.inf, 0.0)
