"""Pauli-sum Hamiltonians, dense matrices and exact diagonalization.

Qubit 0 is the leftmost tensor factor, i.e. the most significant bit of a
basis-state index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Iterable

import numpy as np

MAX_DENSE_QUBITS = 12
_DROP_TOL = 1e-15

PAULI_MATRICES = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class CapacityError(ValueError):
    """Raised when a dense representation would be too large."""


def _check_pauli_string(s: str) -> str:
    s = s.strip().upper()
    if not s:
        raise ValueError("empty Pauli string")
    bad = set(s) - set(PAULI_MATRICES)
    if bad:
        raise ValueError(f"invalid Pauli letters {sorted(bad)} in {s!r}")
    return s


@dataclass(frozen=True)
class PauliSumHamiltonian:
    """Real linear combination of Pauli strings on a fixed number of qubits.

    Duplicate strings are merged on construction and terms whose coefficient
    vanishes (``|c| < 1e-15``) are dropped.
    """

    terms: tuple[tuple[float, str], ...]
    qubit_count: int

    def __init__(self, terms: Iterable[tuple[float, str]], qubit_count: int | None = None):
        merged: dict[str, float] = {}
        for coeff, string in terms:
            string = _check_pauli_string(string)
            coeff = float(coeff)
            if not math.isfinite(coeff):
                raise ValueError(f"non-finite coefficient for {string!r}")
            if qubit_count is None:
                qubit_count = len(string)
            if len(string) != qubit_count:
                raise ValueError(
                    f"Pauli string {string!r} has length {len(string)}, expected {qubit_count}"
                )
            merged[string] = merged.get(string, 0.0) + coeff
        if qubit_count is None or qubit_count < 1:
            raise ValueError("qubit_count must be given for an empty Hamiltonian")
        kept = tuple((c, s) for s, c in merged.items() if abs(c) >= _DROP_TOL)
        object.__setattr__(self, "terms", kept)
        object.__setattr__(self, "qubit_count", int(qubit_count))

    def __add__(self, other: PauliSumHamiltonian) -> PauliSumHamiltonian:
        if not isinstance(other, PauliSumHamiltonian):
            return NotImplemented
        if other.qubit_count != self.qubit_count:
            raise ValueError("cannot add Hamiltonians on different qubit counts")
        return PauliSumHamiltonian(self.terms + other.terms, self.qubit_count)

    def __mul__(self, scalar: float) -> PauliSumHamiltonian:
        return PauliSumHamiltonian(
            [(scalar * c, s) for c, s in self.terms], self.qubit_count
        )

    __rmul__ = __mul__

    def __len__(self) -> int:
        return len(self.terms)


@dataclass(frozen=True)
class SpectralResult:
    ground_energy: float
    ground_state: np.ndarray


def ising_hamiltonian() -> PauliSumHamiltonian:
    """Two-qubit transverse-field Ising model with unit coupling and field."""
    return PauliSumHamiltonian([(-1.0, "XX"), (-1.0, "ZI"), (-1.0, "IZ")], 2)


def pauli_string_matrix(string: str) -> np.ndarray:
    string = _check_pauli_string(string)
    return reduce(np.kron, (PAULI_MATRICES[p] for p in string))


def build_matrix(h: PauliSumHamiltonian) -> np.ndarray:
    """Dense ``2**q x 2**q`` matrix of ``h``."""
    q = h.qubit_count
    if q > MAX_DENSE_QUBITS:
        raise CapacityError(
            f"{q} qubits exceeds the dense limit of {MAX_DENSE_QUBITS}"
        )
    dim = 2**q
    out = np.zeros((dim, dim), dtype=complex)
    for coeff, string in h.terms:
        out += coeff * pauli_string_matrix(string)
    return out


def fix_global_phase(state: np.ndarray) -> np.ndarray:
    """Rotate ``state`` so its largest-magnitude amplitude is real positive."""
    state = np.asarray(state, dtype=complex)
    k = int(np.argmax(np.abs(state)))
    if abs(state[k]) == 0.0:
        return state
    return state * (abs(state[k]) / state[k])


def ground_state(h: PauliSumHamiltonian) -> SpectralResult:
    evals, evecs = np.linalg.eigh(build_matrix(h))
    vec = evecs[:, 0]
    vec = fix_global_phase(vec / np.linalg.norm(vec))
    return SpectralResult(float(evals[0]), vec)


def parse_hamiltonian(text: str) -> PauliSumHamiltonian:
    """Parse ``<coefficient> <pauli-string>`` lines; ``#`` starts a comment."""
    terms = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected '<coefficient> <pauli-string>', got {raw!r}")
        try:
            coeff = float(parts[0])
        except ValueError:
            raise ValueError(f"line {lineno}: bad coefficient {parts[0]!r}") from None
        terms.append((coeff, parts[1]))
    if not terms:
        raise ValueError("no terms found")
    return PauliSumHamiltonian(terms)


def format_hamiltonian(h: PauliSumHamiltonian) -> str:
    return "".join(f"{c!r} {s}\n" for c, s in h.terms)
