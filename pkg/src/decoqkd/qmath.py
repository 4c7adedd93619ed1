"""Two-level density-matrix algebra and shifted-Gaussian overlap calculus.

Every spatial wavefunction handled by the package is a transversely shifted
copy of a single Gaussian mode, so inner products are evaluated with the
analytic overlap below instead of a spatial grid.

Density matrices are plain ``(2, 2)`` complex numpy arrays. Bob's states are
written in the ``{H, V}`` basis, Eve's probe states in the ``{+, -}`` basis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HERMITIAN_TOL = 1e-12
DERIVED_TOL = 1e-10
NEGATIVE_CLIP = 1e-12

SQRT1_2 = 1.0 / np.sqrt(2.0)

KET_H = np.array([1.0, 0.0], dtype=complex)
KET_V = np.array([0.0, 1.0], dtype=complex)
KET_D = np.array([SQRT1_2, SQRT1_2], dtype=complex)
KET_A = np.array([SQRT1_2, -SQRT1_2], dtype=complex)

KETS = {"H": KET_H, "V": KET_V, "D": KET_D, "A": KET_A}

IDENTITY2 = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class GaussianMode:
    """Transverse beam profile ``f(y) ~ exp(-y**2/w**2) exp(i q0 y)``.

    ``w`` is the beam width in mm and ``q0`` the transverse tilt wavenumber
    in 1/mm. The defaults are the measured experimental values.
    """

    w: float = 0.8
    q0: float = 6.87

    def __post_init__(self):
        if not (np.isfinite(self.w) and np.isfinite(self.q0)):
            raise ValueError("GaussianMode parameters must be finite")
        if self.w <= 0:
            raise ValueError(f"beam width must be positive, got {self.w}")

    def untilted(self) -> "GaussianMode":
        return GaussianMode(w=self.w, q0=0.0)

    def profile(self, y):
        """Normalized profile f(y); used by quadrature checks and plots."""
        y = np.asarray(y, dtype=float)
        norm = (2.0 / (np.pi * self.w**2)) ** 0.25
        return norm * np.exp(-(y**2) / self.w**2) * np.exp(1j * self.q0 * y)


def overlap(s1, s2, mode: GaussianMode):
    """Overlap of the mode shifted by ``s1`` against the mode shifted by ``s2``.

    Evaluates ``integral f(y - s1) conj(f(y - s2)) dy``, i.e. the inner
    product <f_s2|f_s1>, in closed form::

        exp(-(s1 - s2)**2 / (2 w**2)) * exp(i q0 (s2 - s1))

    Broadcasts over array inputs.
    """
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    if not (np.all(np.isfinite(s1)) and np.all(np.isfinite(s2))):
        raise ValueError("overlap shifts must be finite")
    delta = s1 - s2
    out = np.exp(-(delta**2) / (2.0 * mode.w**2)) * np.exp(-1j * mode.q0 * delta)
    return out[()] if out.ndim == 0 else out


def gram_matrix(shifts, mode: GaussianMode) -> np.ndarray:
    """``G[k, l] = overlap(shifts[k], shifts[l])``."""
    s = np.asarray(shifts, dtype=float)
    return np.asarray(overlap(s[:, None], s[None, :], mode))


def _as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=complex)
    if m.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def is_hermitian(m, tol: float = HERMITIAN_TOL) -> bool:
    m = np.asarray(m, dtype=complex)
    return bool(np.max(np.abs(m - m.conj().T)) <= tol)


def validate_density_matrix(rho, tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Return ``rho`` as a complex array after checking the state invariants."""
    rho = _as_matrix(rho)
    if not is_hermitian(rho, tol):
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > tol:
        raise ValueError(f"density matrix trace {np.trace(rho).real!r} != 1")
    if np.min(np.linalg.eigvalsh(rho)) < -tol:
        raise ValueError("density matrix has a negative eigenvalue")
    return rho


def normalize(rho) -> np.ndarray:
    rho = _as_matrix(rho)
    tr = np.trace(rho).real
    if tr <= 0:
        raise ValueError("cannot normalize a matrix with non-positive trace")
    rho = 0.5 * (rho + rho.conj().T) / tr
    return rho


def eig_hermitian_2x2(m, tol: float = DERIVED_TOL):
    """Eigen-decomposition of a Hermitian 2x2 matrix.

    Returns ``(values, vectors)`` with eigenvalues sorted descending and the
    matching orthonormal eigenvectors as the columns of ``vectors``.
    """
    m = _as_matrix(m)
    if not is_hermitian(m, tol):
        raise ValueError("eig_hermitian_2x2 requires a Hermitian matrix")
    vals, vecs = np.linalg.eigh(0.5 * (m + m.conj().T))
    return vals[::-1].copy(), vecs[:, ::-1].copy()


def trace_distance(rho1, rho2) -> float:
    """D = 1/2 sum |lambda_i| over the eigenvalues of ``rho2 - rho1``."""
    vals, _ = eig_hermitian_2x2(_as_matrix(rho2) - _as_matrix(rho1))
    return float(min(1.0, 0.5 * np.sum(np.abs(vals))))


def born_probability(rho, ket) -> float:
    """<ket|rho|ket>, clipped into [0, 1]."""
    rho = _as_matrix(rho)
    ket = np.asarray(ket, dtype=complex)
    if abs(np.vdot(ket, ket) - 1.0) > DERIVED_TOL:
        raise ValueError("ket must be normalized")
    p = np.vdot(ket, rho @ ket).real
    return float(np.clip(p, 0.0, 1.0))


def projector(ket) -> np.ndarray:
    ket = np.asarray(ket, dtype=complex)
    return np.outer(ket, ket.conj())


def fidelity_pure(ket, rho) -> float:
    """Fidelity between a pure state and a density matrix."""
    return born_probability(rho, ket)


def clip_spectrum(rho) -> np.ndarray:
    """Zero out eigenvalues in [-1e-12, 0) so Born sampling never sees negatives."""
    vals, vecs = eig_hermitian_2x2(rho)
    if np.any(vals < -NEGATIVE_CLIP):
        raise ValueError("matrix has a significantly negative eigenvalue")
    vals = np.where(vals < 0, 0.0, vals)
    return (vecs * vals) @ vecs.conj().T
