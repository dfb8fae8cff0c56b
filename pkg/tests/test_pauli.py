import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqe_bayes.pauli import (
    CapacityError,
    PauliSumHamiltonian,
    build_matrix,
    format_hamiltonian,
    ground_state,
    ising_hamiltonian,
    parse_hamiltonian,
)

SQRT5 = math.sqrt(5)


def faddeev_leverrier(M):
    """Characteristic polynomial coefficients via traces only (no eigensolver)."""
    n = M.shape[0]
    coeffs = [1.0 + 0j]
    Mk = np.zeros_like(M)
    for k in range(1, n + 1):
        Mk = M @ Mk + coeffs[-1] * np.eye(n)
        coeffs.append(-np.trace(M @ Mk) / k)
    return np.array(coeffs)


def pauli_sums(max_qubits=4):
    return st.integers(1, max_qubits).flatmap(
        lambda q: st.lists(
            st.tuples(
                st.floats(-3, 3, allow_nan=False),
                st.text(alphabet="IXYZ", min_size=q, max_size=q),
            ),
            min_size=1,
            max_size=6,
        ).map(lambda terms: PauliSumHamiltonian(terms, q))
    )


def test_single_z():
    np.testing.assert_array_equal(build_matrix(PauliSumHamiltonian([(1.0, "Z")])), np.diag([1, -1]))


def test_identity_term():
    np.testing.assert_allclose(build_matrix(PauliSumHamiltonian([(2.5, "II")])), 2.5 * np.eye(4))


def test_ising_matrix_by_hand():
    expected = np.array(
        [[-2, 0, 0, -1], [0, 0, -1, 0], [0, -1, 0, 0], [-1, 0, 0, 2]], dtype=float
    )
    np.testing.assert_allclose(build_matrix(ising_hamiltonian()), expected, atol=1e-15)


def test_ising_terms():
    h = ising_hamiltonian()
    assert len(h) == 3
    assert h.qubit_count == 2
    assert sorted(s for _, s in h.terms) == ["IZ", "XX", "ZI"]
    assert all(c == -1.0 for c, _ in h.terms)


def test_duplicates_merge_and_zero_terms_drop():
    h = PauliSumHamiltonian([(1.0, "XZ"), (0.5, "XZ"), (1.0, "ZZ"), (-1.0, "ZZ")])
    assert h.terms == ((1.5, "XZ"),)


def test_invalid_strings():
    with pytest.raises(ValueError):
        PauliSumHamiltonian([(1.0, "XA")])
    with pytest.raises(ValueError):
        PauliSumHamiltonian([(1.0, "XX"), (1.0, "X")])
    with pytest.raises(ValueError):
        PauliSumHamiltonian([(float("nan"), "X")])


def test_capacity_guard():
    with pytest.raises(CapacityError):
        build_matrix(PauliSumHamiltonian([(1.0, "Z" * 13)]))


def test_ground_state_of_minus_z():
    res = ground_state(PauliSumHamiltonian([(-1.0, "Z")]))
    assert res.ground_energy == pytest.approx(-1.0)
    np.testing.assert_allclose(res.ground_state, [1, 0], atol=1e-12)


def test_ising_ground_state_closed_form():
    res = ground_state(ising_hamiltonian())
    assert res.ground_energy == pytest.approx(-SQRT5, abs=1e-10)
    # 2x2 block on {|00>, |11>} is [[-2, -1], [-1, 2]]; eigenvector (1, sqrt5 - 2)
    vec = np.array([1.0, 0, 0, SQRT5 - 2])
    vec /= np.linalg.norm(vec)
    np.testing.assert_allclose(res.ground_state, vec, atol=1e-10)
    assert abs(res.ground_state[0]) ** 2 == pytest.approx(1 / (10 - 4 * SQRT5), abs=1e-9)


def test_ground_state_phase_convention():
    res = ground_state(PauliSumHamiltonian([(1.0, "Y")]))
    k = np.argmax(np.abs(res.ground_state))
    assert res.ground_state[k].imag == pytest.approx(0.0, abs=1e-14)
    assert res.ground_state[k].real > 0


@settings(max_examples=50, deadline=None)
@given(pauli_sums())
def test_hermitian(h):
    M = build_matrix(h)
    assert np.max(np.abs(M - M.conj().T)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(pauli_sums(3), st.floats(-2, 2), st.floats(-2, 2), st.data())
def test_linearity(h1, a, b, data):
    h2 = data.draw(
        st.lists(
            st.tuples(st.floats(-3, 3), st.text(alphabet="IXYZ", min_size=h1.qubit_count,
                                                max_size=h1.qubit_count)),
            min_size=1, max_size=4,
        ).map(lambda t: PauliSumHamiltonian(t, h1.qubit_count))
    )
    lhs = build_matrix(a * h1 + b * h2)
    rhs = a * build_matrix(h1) + b * build_matrix(h2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(pauli_sums(2))
def test_ground_energy_matches_characteristic_polynomial(h):
    M = build_matrix(h)
    coeffs = faddeev_leverrier(M)
    e0 = ground_state(h).ground_energy
    scale = 1 + np.abs(M).sum()
    # repeated roots are ill-conditioned for np.roots (error ~ eps^(1/multiplicity))
    assert e0 == pytest.approx(np.min(np.roots(coeffs).real), abs=1e-3 * scale)
    assert abs(np.polyval(coeffs, e0)) < 1e-8 * scale ** 4


def test_eigen_equation():
    h = ising_hamiltonian()
    res = ground_state(h)
    np.testing.assert_allclose(
        build_matrix(h) @ res.ground_state, res.ground_energy * res.ground_state, atol=1e-10
    )


def test_text_format_roundtrip():
    text = "# transverse field Ising\n-1.0 XX\n\n-1 ZI  # field\n-1.0 IZ\n"
    h = parse_hamiltonian(text)
    assert h == ising_hamiltonian()
    assert parse_hamiltonian(format_hamiltonian(h)) == h


@pytest.mark.parametrize("bad", ["", "# only comment\n", "1.0\n", "abc XX\n", "1.0 XQ\n"])
def test_text_format_errors(bad):
    with pytest.raises(ValueError):
        parse_hamiltonian(bad)
