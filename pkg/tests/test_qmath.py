import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from decoqkd.qmath import (
    KET_A,
    KET_D,
    KET_H,
    KET_V,
    GaussianMode,
    born_probability,
    clip_spectrum,
    eig_hermitian_2x2,
    gram_matrix,
    normalize,
    overlap,
    projector,
    trace_distance,
    validate_density_matrix,
)

MODE = GaussianMode()

# integral f(y - s1) conj(f(y - s2)) dy by adaptive quadrature, frozen
QUADRATURE_OVERLAPS = [
    (0.3, -0.2, -0.7874238683659015 + 0.23790228601131247j),
    (-0.4, 0.4, 0.4281147842924145 - 0.42964773086995545j),
    (0.6, 0.0, -0.42020728029319737 + 0.6270635265421816j),
    (1.0, -1.0, 0.016995129434253086 - 0.040516906492730854j),
]

shifts = st.floats(-3.0, 3.0, allow_nan=False)
widths = st.floats(0.1, 3.0)
tilts = st.floats(-10.0, 10.0)


def quad_overlap(s1, s2, mode):
    def integrand(y):
        return mode.profile(y - s1) * np.conj(mode.profile(y - s2))

    re = quad(lambda y: integrand(y).real, -20, 20, limit=400, epsabs=1e-14)[0]
    im = quad(lambda y: integrand(y).imag, -20, 20, limit=400, epsabs=1e-14)[0]
    return complex(re, im)


@pytest.mark.parametrize("s1,s2,expected", QUADRATURE_OVERLAPS)
def test_overlap_matches_frozen_quadrature(s1, s2, expected):
    assert abs(complex(overlap(s1, s2, MODE)) - expected) <= 1e-10


def test_overlap_matches_live_quadrature_off_default_mode():
    mode = GaussianMode(w=1.3, q0=-2.5)
    assert abs(complex(overlap(0.7, -0.1, mode)) - quad_overlap(0.7, -0.1, mode)) <= 1e-10


def test_profile_is_normalized():
    y = np.linspace(-8, 8, 20001)
    norm = np.trapezoid(np.abs(MODE.profile(y)) ** 2, y)
    assert norm == pytest.approx(1.0, abs=1e-9)


@given(shifts, shifts, widths, tilts)
def test_overlap_conjugate_symmetry_and_bound(s1, s2, w, q0):
    mode = GaussianMode(w, q0)
    a = complex(overlap(s1, s2, mode))
    b = complex(overlap(s2, s1, mode))
    assert abs(a - b.conjugate()) <= 1e-14
    assert abs(a) <= 1.0 + 1e-15
    assert complex(overlap(s1, s1, mode)) == pytest.approx(1.0)


@given(shifts, shifts, shifts)
def test_overlap_is_translation_invariant(s1, s2, t):
    a = complex(overlap(s1, s2, MODE))
    b = complex(overlap(s1 + t, s2 + t, MODE))
    assert abs(a - b) <= 1e-9


@settings(max_examples=50)
@given(st.lists(shifts, min_size=1, max_size=6))
def test_gram_matrix_is_psd(ss):
    g = gram_matrix(ss, MODE)
    assert np.allclose(g, g.conj().T, atol=1e-14)
    assert np.linalg.eigvalsh(g).min() >= -1e-10


def test_overlap_rejects_nonfinite():
    with pytest.raises(ValueError):
        overlap(np.nan, 0.0, MODE)
    with pytest.raises(ValueError):
        GaussianMode(w=0.0)


def test_overlap_broadcasts():
    out = overlap(np.array([0.0, 0.1]), 0.0, MODE)
    assert out.shape == (2,)


def test_trace_distance_known_values():
    assert trace_distance(projector(KET_H), projector(KET_V)) == pytest.approx(1.0)
    # |<H|D>|^2 = 1/2 -> D = sqrt(1 - 1/2)
    assert trace_distance(projector(KET_H), projector(KET_D)) == pytest.approx(np.sqrt(0.5))
    assert trace_distance(np.eye(2) / 2, np.eye(2) / 2) == 0.0


def test_eig_hermitian_sorted_and_orthonormal():
    m = np.array([[0.2, 0.3 - 0.1j], [0.3 + 0.1j, -0.5]])
    vals, vecs = eig_hermitian_2x2(m)
    assert vals[0] >= vals[1]
    assert np.allclose(vecs.conj().T @ vecs, np.eye(2))
    assert np.allclose(m @ vecs, vecs * vals)
    with pytest.raises(ValueError):
        eig_hermitian_2x2(np.array([[0, 1], [0, 0]]))


def test_born_probability_and_validation():
    rho = projector(KET_D)
    assert born_probability(rho, KET_D) == pytest.approx(1.0)
    assert born_probability(rho, KET_A) == pytest.approx(0.0, abs=1e-15)
    validate_density_matrix(rho)
    with pytest.raises(ValueError):
        validate_density_matrix(np.diag([1.2, -0.2]))
    with pytest.raises(ValueError):
        born_probability(rho, np.array([1.0, 1.0]))


def test_normalize_and_clip():
    rho = normalize(np.diag([2.0, 2.0]))
    assert np.allclose(rho, np.eye(2) / 2)
    clipped = clip_spectrum(np.diag([1.0, -1e-14]))
    assert np.linalg.eigvalsh(clipped).min() >= 0.0
    with pytest.raises(ValueError):
        clip_spectrum(np.diag([1.0, -1e-3]))
