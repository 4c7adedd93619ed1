"""Controllable dephasing channel and the no-eavesdropper QBER.

The channel couples polarization to a transverse shift of the beam: H
components move by ``+d`` and V components by ``-d``. Alice applies
``U(d_a)`` and Bob applies ``U(-d_b)``, so the net relative shift is
``d_a - d_b`` and decoherence cancels when the two settings match.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qmath import (
    DERIVED_TOL,
    GaussianMode,
    gram_matrix,
    overlap,
)

#: Public list of decoherence settings (mm) both parties draw from.
DEFAULT_D_VALUES = (0.0, 0.2, 0.4, 0.6)

POLARIZATION_LABELS = ("H", "V")


@dataclass(frozen=True)
class ChannelSetting:
    """Alice's and Bob's displacements in mm."""

    d_a: float
    d_b: float

    def __post_init__(self):
        if not (np.isfinite(self.d_a) and np.isfinite(self.d_b)):
            raise ValueError("channel displacements must be finite")

    @property
    def delta(self) -> float:
        return self.d_a - self.d_b


@dataclass
class JointState:
    """Finite superposition ``sum_k |c_k> (x) |f shifted by s_k>``.

    ``coeffs[k]`` is a vector over the discrete labels (the system
    polarization, optionally tensored with a probe qubit, system index
    first). Terms with equal shifts are merged, so ``shifts`` is unique.
    """

    shifts: np.ndarray
    coeffs: np.ndarray
    mode: GaussianMode
    labels: tuple = POLARIZATION_LABELS

    def __post_init__(self):
        self.shifts = np.atleast_1d(np.asarray(self.shifts, dtype=float))
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=complex))
        if self.coeffs.shape != (len(self.shifts), len(self.labels)):
            raise ValueError("coeffs must have shape (n_terms, n_labels)")

    @classmethod
    def prepare(cls, ket, mode: GaussianMode, shift: float = 0.0) -> "JointState":
        """Polarization ``ket`` carried by the unshifted mode."""
        ket = np.asarray(ket, dtype=complex)
        return cls(np.array([shift]), ket[None, :], mode)

    @property
    def dim(self) -> int:
        return len(self.labels)

    def gram(self) -> np.ndarray:
        return gram_matrix(self.shifts, self.mode)

    def norm(self) -> float:
        g = self.gram()
        # <psi|psi> = sum_kl G[k, l] <c_l|c_k>
        inner = self.coeffs.conj() @ self.coeffs.T
        return float(np.sqrt(np.einsum("kl,lk->", g, inner).real))

    def reduced(self) -> np.ndarray:
        """Partial trace over the spatial mode (unnormalized)."""
        g = self.gram()
        return self.coeffs.T @ g @ self.coeffs.conj()

    def terms(self):
        """Yield ``(label, shift, amplitude)`` for every nonzero amplitude."""
        for s, c in zip(self.shifts, self.coeffs):
            for label, amp in zip(self.labels, c):
                if abs(amp) > 0:
                    yield label, float(s), complex(amp)

    def project_system(self, ket) -> "JointState":
        """Contract the system polarization with ``<ket|``.

        The result lives on the remaining (probe) labels. For a state with no
        probe the result is a scalar amplitude per shift.
        """
        ket = np.asarray(ket, dtype=complex)
        if self.dim % 2:
            raise ValueError("state carries no polarization qubit to project")
        env = self.dim // 2
        c = self.coeffs.reshape(len(self.shifts), 2, env)
        projected = np.einsum("s,kse->ke", ket.conj(), c)
        labels = tuple(lab[1] for lab in self.labels[:env]) if env > 1 else ("1",)
        return JointState(self.shifts.copy(), projected, self.mode, labels)

    def copy(self) -> "JointState":
        return JointState(self.shifts.copy(), self.coeffs.copy(), self.mode, self.labels)


def _merge(shifts: np.ndarray, coeffs: np.ndarray):
    # exact match only: rounding would drop the tilt phase of tiny offsets
    uniq, first, inverse = np.unique(shifts, return_index=True, return_inverse=True)
    merged = np.zeros((len(uniq), coeffs.shape[1]), dtype=complex)
    np.add.at(merged, inverse, coeffs)
    keep = np.any(np.abs(merged) > 0, axis=1)
    return shifts[first][keep], merged[keep]


def apply_dephasing(state: JointState, d: float) -> JointState:
    """Apply ``U(d)``: H components shift by ``+d``, V components by ``-d``."""
    if not np.isfinite(d):
        raise ValueError("displacement must be finite")
    if state.dim % 2:
        raise ValueError("state carries no polarization qubit to dephase")
    env = state.dim // 2
    n = len(state.shifts)
    c = state.coeffs.reshape(n, 2, env)
    h_part = np.zeros_like(c)
    v_part = np.zeros_like(c)
    h_part[:, 0, :] = c[:, 0, :]
    v_part[:, 1, :] = c[:, 1, :]
    shifts = np.concatenate([state.shifts + d, state.shifts - d])
    coeffs = np.concatenate([h_part.reshape(n, -1), v_part.reshape(n, -1)])
    shifts, coeffs = _merge(shifts, coeffs)
    return JointState(shifts, coeffs, state.mode, state.labels)


def gamma_c(setting: ChannelSetting, mode: GaussianMode) -> complex:
    """Residual coherence factor ``overlap(-delta, +delta)``, delta = d_a - d_b."""
    delta = setting.delta
    return complex(overlap(-delta, delta, mode))


def bob_reduced_state(alpha, beta, setting: ChannelSetting, mode: GaussianMode) -> np.ndarray:
    """Bob's polarization state after ``U(-d_b) U(d_a)`` and tracing out space.

    Standard ``rho = |psi><psi|`` ordering is used, so for real amplitudes
    the off-diagonals are ``alpha*beta*conj(gamma_c)`` above and
    ``alpha*beta*gamma_c`` below the diagonal.
    """
    alpha = complex(alpha)
    beta = complex(beta)
    if abs(abs(alpha) ** 2 + abs(beta) ** 2 - 1.0) > DERIVED_TOL:
        raise ValueError("polarization amplitudes must be normalized")
    g = gamma_c(setting, mode)
    return np.array(
        [
            [abs(alpha) ** 2, alpha * beta.conjugate() * g.conjugate()],
            [alpha.conjugate() * beta * g, abs(beta) ** 2],
        ],
        dtype=complex,
    )


def transmit(ket, setting: ChannelSetting, mode: GaussianMode) -> JointState:
    """Joint polarization/space state Bob holds after both dephasers."""
    state = JointState.prepare(ket, mode)
    state = apply_dephasing(state, setting.d_a)
    return apply_dephasing(state, -setting.d_b)


def qber_analytic(setting: ChannelSetting, mode: GaussianMode) -> float:
    """QBER = 1/4 [1 - exp(-2 delta^2/w^2) cos(2 q0 delta)] = 1/4 (1 - Re gamma_c)."""
    delta = setting.delta
    return 0.25 * (1.0 - np.exp(-2.0 * delta**2 / mode.w**2) * np.cos(2.0 * mode.q0 * delta))


def qber_analytic_grid(d_a, d_b, mode: GaussianMode) -> np.ndarray:
    """Vectorized :func:`qber_analytic` over broadcastable ``d_a``, ``d_b``."""
    delta = np.asarray(d_a, dtype=float) - np.asarray(d_b, dtype=float)
    return 0.25 * (1.0 - np.exp(-2.0 * delta**2 / mode.w**2) * np.cos(2.0 * mode.q0 * delta))


def argmin_d_b(d_a: float, d_b_grid, mode: GaussianMode) -> float:
    """Grid point of ``d_b_grid`` with the lowest analytic QBER for fixed ``d_a``."""
    d_b_grid = np.asarray(d_b_grid, dtype=float)
    return float(d_b_grid[np.argmin(qber_analytic_grid(d_a, d_b_grid, mode))])
