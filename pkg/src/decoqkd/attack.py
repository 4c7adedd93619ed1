"""Entangling-probe attack, with and without controllable decoherence.

Eve's probe is a polarization qubit written in the rotated basis
``|+->, |->`` (built from ``|0> = cos(pi/8)|H> + sin(pi/8)|V>``). All of
Eve's density matrices here use ``{+, -}`` coordinates, index 0 being ``+``.

The C-NOT pairs H with ``T_-`` and V with ``T_+``; the opposite pairing only
flips the sign of Eve's off-diagonal terms and leaves every observable
unchanged.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .channel import JointState, apply_dephasing
from .qmath import (
    KETS,
    GaussianMode,
    IDENTITY2,
    eig_hermitian_2x2,
    normalize,
    overlap,
    trace_distance,
)

SECURITY_THRESHOLD = 0.11

BASIS_LABELS = {"HV": ("H", "V"), "DA": ("D", "A")}

JOINT_LABELS = (("H", "+"), ("H", "-"), ("V", "+"), ("V", "-"))

_DEFAULT_ATTACK_MODE = GaussianMode(w=0.8, q0=0.0)


class HelstromUndefined(ValueError):
    """The two states coincide, so no measurement beats a fair coin."""


class DegenerateBranchWarning(RuntimeWarning):
    pass


def _check_s(S: float) -> float:
    S = float(S)
    if not (0.0 <= S <= 1.0):
        raise ValueError(f"probe parameter S must lie in [0, 1], got {S}")
    return S


def probe_basis():
    """``(|+>, |->)`` expressed in H/V coordinates."""
    c, s = np.cos(np.pi / 8), np.sin(np.pi / 8)
    zero = np.array([c, s], dtype=complex)
    one = np.array([-s, c], dtype=complex)
    return (zero + one) / np.sqrt(2.0), (zero - one) / np.sqrt(2.0)


def probe_state(S: float) -> np.ndarray:
    """``T_in = sqrt(1 - S^2)|+> + S|->`` in ``{+, -}`` coordinates."""
    S = _check_s(S)
    return np.array([np.sqrt(1.0 - S**2), S], dtype=complex)


def probe_outputs(S: float):
    """Return ``(T_plus, T_minus, T_err)`` in ``{+, -}`` coordinates."""
    S = _check_s(S)
    a = np.sqrt(1.0 - S**2)
    b = S / np.sqrt(2.0)
    return (
        np.array([a, b], dtype=complex),
        np.array([a, -b], dtype=complex),
        np.array([0.0, b], dtype=complex),
    )


def cnot_isometry(S: float) -> np.ndarray:
    """4x2 map from the system qubit (probe in ``T_in``) to system (x) probe.

    ``H -> H T_- + V T_err`` and ``V -> V T_+ + H T_err``.
    """
    t_plus, t_minus, t_err = probe_outputs(S)
    h, v = KETS["H"], KETS["V"]
    col_h = np.kron(h, t_minus) + np.kron(v, t_err)
    col_v = np.kron(v, t_plus) + np.kron(h, t_err)
    return np.stack([col_h, col_v], axis=1)


def attacked_transmission(
    ket,
    d_a: float,
    d_b: float,
    S: float,
    mode: GaussianMode = _DEFAULT_ATTACK_MODE,
    d_attack: float | None = None,
) -> JointState:
    """Bob (x) Eve state for a qubit sent through ``U(-d_b) C-NOT U(d_a)``.

    ``d_attack`` is the displacement the qubit carries when it meets the
    C-NOT. By default Eve sits between the two dephasers and sees ``d_a``;
    otherwise she applies ``U(d_attack - d_a)`` before her gate and undoes it
    afterwards.
    """
    if d_attack is None:
        d_attack = d_a
    state = JointState.prepare(ket, mode)
    state = apply_dephasing(state, d_attack)
    coeffs = state.coeffs @ cnot_isometry(S).T
    state = JointState(state.shifts, coeffs, mode, JOINT_LABELS)
    return apply_dephasing(state, -(d_attack - d_a) - d_b)


def cnot_attack(prepared: str, d: float, S: float, mode: GaussianMode = _DEFAULT_ATTACK_MODE) -> JointState:
    """Dephase by ``d``, apply Eve's C-NOT, then undo the dephasing."""
    return attacked_transmission(KETS[prepared], d, d, S, mode)


def eve_conditional_state(joint: JointState, bob_ket) -> np.ndarray:
    """Eve's unnormalized probe state given Bob detects ``bob_ket``.

    The trace of the result is the probability of that detection.
    """
    return joint.project_system(bob_ket).reduced()


def eve_density_matrix(prepared: str, d: float, S: float, mode: GaussianMode = _DEFAULT_ATTACK_MODE) -> np.ndarray:
    """Eve's state on the error-free branch (Bob sees what Alice sent)."""
    joint = cnot_attack(prepared, d, S, mode)
    sigma = eve_conditional_state(joint, KETS[prepared])
    weight = np.trace(sigma).real
    if weight <= 1e-300:
        warnings.warn(
            f"error-free branch for {prepared} has zero weight; returning |-><-|",
            DegenerateBranchWarning,
            stacklevel=2,
        )
        return np.diag([0.0, 1.0]).astype(complex)
    return normalize(sigma)


def gamma0_from_d(d, w: float = 0.8):
    """gamma0 = exp(-2 d^2 / w^2)."""
    return np.exp(-2.0 * np.asarray(d, dtype=float) ** 2 / w**2)


def d_from_gamma0(gamma0: float, w: float = 0.8) -> float:
    """Inverse of :func:`gamma0_from_d` (non-negative branch)."""
    if not (0.0 < gamma0 <= 1.0):
        raise ValueError("gamma0 must lie in (0, 1]")
    return float(w * np.sqrt(-np.log(gamma0) / 2.0))


def gamma_parameters(d: float, mode: GaussianMode = _DEFAULT_ATTACK_MODE):
    """``(gamma0, gamma1, gamma2)`` for attack displacement ``d``.

    gamma1 = int |f(y+2d) + f(y-2d)|^2 dy and
    gamma2 = int f*(y) [f(y+2d) + f(y-2d)] dy, both from the analytic overlap.
    """
    g0 = float(gamma0_from_d(d, mode.w))
    g1 = 2.0 + 2.0 * complex(overlap(2 * d, -2 * d, mode)).real
    g2 = complex(overlap(2 * d, 0.0, mode)) + complex(overlap(-2 * d, 0.0, mode))
    return g0, g1, g2


@dataclass(frozen=True)
class EveStateSet:
    rho_H: np.ndarray
    rho_V: np.ndarray
    rho_D: np.ndarray
    rho_A: np.ndarray
    gamma0: float
    gamma1: float
    gamma2: complex

    def pair(self, basis: str):
        a, b = BASIS_LABELS[basis]
        return getattr(self, f"rho_{a}"), getattr(self, f"rho_{b}")


def eve_states_closed_form(S: float, d: float, mode: GaussianMode = _DEFAULT_ATTACK_MODE) -> EveStateSet:
    """Closed-form error-free-branch states of Eve's probe."""
    S = _check_s(S)
    g0, g1, g2 = gamma_parameters(d, mode)
    c = S * np.sqrt(1.0 - S**2)

    n_hv = 1.0 - S**2 / 2.0
    off_hv = c / np.sqrt(2.0)
    rho_h = np.array([[1 - S**2, -off_hv], [-off_hv, S**2 / 2]], dtype=complex) / n_hv
    rho_v = np.array([[1 - S**2, off_hv], [off_hv, S**2 / 2]], dtype=complex) / n_hv

    n_da = 1.0 + (g1 / 8.0 - 1.0) * S**2
    off_da = c / (2.0 * np.sqrt(2.0))
    # |-><+| carries gamma2, |+><-| its conjugate
    rho_d = np.array(
        [[1 - S**2, off_da * np.conj(g2)], [off_da * g2, S**2 * g1 / 8.0]], dtype=complex
    ) / n_da
    rho_a = np.array(
        [[1 - S**2, -off_da * np.conj(g2)], [-off_da * g2, S**2 * g1 / 8.0]], dtype=complex
    ) / n_da
    return EveStateSet(rho_h, rho_v, rho_d, rho_a, g0, g1, g2)


def eve_states_numeric(S: float, d: float, mode: GaussianMode = _DEFAULT_ATTACK_MODE) -> EveStateSet:
    """Same set as :func:`eve_states_closed_form`, built by project + trace-out."""
    g0, g1, g2 = gamma_parameters(d, mode)
    mats = {lab: eve_density_matrix(lab, d, S, mode) for lab in "HVDA"}
    return EveStateSet(mats["H"], mats["V"], mats["D"], mats["A"], g0, g1, g2)


def trace_distance_hv(S: float) -> float:
    S = _check_s(S)
    return 2.0 * np.sqrt(2.0) * S * np.sqrt(1.0 - S**2) / (2.0 - S**2)


def trace_distance_da(S: float, gamma1: float, gamma2) -> float:
    S = _check_s(S)
    return 4.0 * np.sqrt(2.0) * S * np.sqrt(1.0 - S**2) * abs(gamma2) / (8.0 + (gamma1 - 8.0) * S**2)


def helstrom_error_prob(rho1, rho2) -> float:
    """Minimum error probability 1/2 (1 - D) for equiprobable states."""
    return 0.5 * (1.0 - trace_distance(rho1, rho2))


def helstrom_measurement(rho1, rho2, tol: float = 1e-12):
    """Optimal projectors ``(P1, P2)`` for discriminating ``rho1`` from ``rho2``.

    ``P1`` projects onto the positive eigenspace of ``rho1 - rho2``.
    """
    vals, vecs = eig_hermitian_2x2(np.asarray(rho1) - np.asarray(rho2))
    if np.max(np.abs(vals)) <= tol:
        raise HelstromUndefined("states are identical; fall back to a fair coin")
    v = vecs[:, 0]
    p1 = np.outer(v, v.conj())
    return p1, IDENTITY2 - p1


def conditional_error_hv(S: float) -> float:
    S = _check_s(S)
    return (S**2 - 2.0 + 2.0 * S * np.sqrt(2.0 - 2.0 * S**2)) / (2.0 * (S**2 - 2.0))


def conditional_error_da(S: float, gamma0: float) -> float:
    S = _check_s(S)
    g4 = gamma0**4
    num = 4.0 - 4.0 * S * np.sqrt(2.0 - 2.0 * S**2) * gamma0 + S**2 * (g4 - 3.0)
    return num / (8.0 + 2.0 * S**2 * (g4 - 3.0))


def renyi_information(error_prob):
    """Order-2 Renyi information log2(1 + (1 - 2p)^2) for a symmetric binary channel."""
    p = np.asarray(error_prob, dtype=float)
    if np.any((p < -1e-12) | (p > 0.5 + 1e-12)):
        raise ValueError("error probability must lie in [0, 0.5]")
    out = np.log2(1.0 + (1.0 - 2.0 * p) ** 2)
    return float(out) if out.ndim == 0 else out


def renyi_from_joint(joint) -> float:
    """Renyi information from a joint table ``joint[b, e]`` = P(Bob b, Eve e).

    Direct evaluation of -log2 sum_b P(b)^2 + sum_e P(e) log2 sum_b P(b|e)^2.
    """
    joint = np.asarray(joint, dtype=float)
    joint = joint / joint.sum()
    p_b = joint.sum(axis=1)
    p_e = joint.sum(axis=0)
    total = -np.log2(np.sum(p_b**2))
    for e, pe in enumerate(p_e):
        if pe > 0:
            total += pe * np.log2(np.sum((joint[:, e] / pe) ** 2))
    return float(total)


def renyi_hv(S: float) -> float:
    S = _check_s(S)
    return float(np.log2(1.0 + 2.0 * S**2 * (1.0 - S**2) / (1.0 - S**2 / 2.0) ** 2))


def renyi_da(S: float, gamma0: float) -> float:
    # numerator factor is (1 - S^2); the (S^2 - 1) variant would go negative
    S = _check_s(S)
    den = (4.0 + S**2 * (gamma0**4 - 3.0)) ** 2
    return float(np.log2(1.0 + 32.0 * S**2 * (1.0 - S**2) * gamma0**2 / den))


def renyi_total(S: float, gamma0: float) -> float:
    return 0.5 * (renyi_hv(S) + renyi_da(S, gamma0))


def attack_qber_hv(S: float) -> float:
    S = _check_s(S)
    return S**2 / 2.0


def attack_qber_da(S: float, gamma0: float) -> float:
    S = _check_s(S)
    return 0.25 * (3.0 - gamma0**4) * S**2


def attack_qber_total(S: float, gamma0: float) -> float:
    return 0.5 * (attack_qber_hv(S) + attack_qber_da(S, gamma0))


def s_from_qber(qber: float, gamma0: float, kind: str) -> float | None:
    """Invert the attack QBER for ``kind`` in {"hv", "da", "total"}; None if infeasible."""
    slope = {
        "hv": 0.5,
        "da": 0.25 * (3.0 - gamma0**4),
        "total": (5.0 - gamma0**4) / 8.0,
    }[kind]
    s2 = qber / slope
    if qber < 0 or s2 > 1.0 + 1e-15:
        return None
    return float(np.sqrt(min(s2, 1.0)))


@dataclass(frozen=True)
class CurvePoint:
    qber: float
    info: float
    feasible: bool


def renyi_vs_qber_curve(gamma0: float, qber_grid, kind: str = "da") -> list[CurvePoint]:
    """Eve's Renyi information against the QBER her probe causes.

    ``kind`` selects the DA-basis curve, the HV-basis curve, or the
    basis-averaged total. Infeasible QBER values (S would exceed 1) come back
    with ``feasible=False`` and a NaN info.
    """
    info_fn = {
        "hv": lambda s: renyi_hv(s),
        "da": lambda s: renyi_da(s, gamma0),
        "total": lambda s: renyi_total(s, gamma0),
    }[kind]
    points = []
    for q in qber_grid:
        s = s_from_qber(float(q), gamma0, kind)
        if s is None:
            points.append(CurvePoint(float(q), float("nan"), False))
        else:
            points.append(CurvePoint(float(q), info_fn(s), True))
    return points
