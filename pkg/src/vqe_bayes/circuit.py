"""Statevector simulation of the two-qubit hardware-efficient ansatz.

Rotation gates follow ``R_a(t) = exp(-i t sigma_a / 2)``. The ansatz is::

    q0: -Ry(t1)--o--Ry(t3)--Rz(t5)-
    q1: -Ry(t2)--X--Ry(t4)--Rz(t6)-

Noise is simulated with pure-state Monte-Carlo trajectories: after each gate
a uniformly random non-identity Pauli hits the touched qubit(s) with the
configured depolarizing probability.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .pauli import PAULI_MATRICES, PauliSumHamiltonian, build_matrix

N_QUBITS = 2
N_PARAMS = 6

CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
S_DAG = np.array([[1, 0], [0, -1j]], dtype=complex)

_PAULI_1Q = [PAULI_MATRICES[p] for p in "XYZ"]
_PAULI_2Q = [
    np.kron(PAULI_MATRICES[a], PAULI_MATRICES[b])
    for a in "IXYZ"
    for b in "IXYZ"
    if a + b != "II"
]


def ry(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(theta: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])


@dataclass(frozen=True)
class NoiseConfig:
    depolarizing_1q: float = 0.0
    depolarizing_2q: float = 0.0
    readout_flip: float = 0.0

    def __post_init__(self):
        for name in ("depolarizing_1q", "depolarizing_2q", "readout_flip"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")

    @property
    def is_noiseless(self) -> bool:
        return self.depolarizing_1q == 0 and self.depolarizing_2q == 0 and self.readout_flip == 0


NOISELESS = NoiseConfig()
# Artifact stand-in for a real device model; not calibrated to any hardware.
MILD_NOISE = NoiseConfig(depolarizing_1q=0.001, depolarizing_2q=0.01, readout_flip=0.02)


def basis_state(index: int, n_qubits: int = N_QUBITS) -> np.ndarray:
    state = np.zeros(2**n_qubits, dtype=complex)
    state[index] = 1.0
    return state


def apply_gate(state: np.ndarray, gate: np.ndarray, qubits: Sequence[int]) -> np.ndarray:
    """Apply a ``k``-qubit ``gate`` to the listed qubits of ``state``."""
    n = int(np.log2(state.size))
    k = len(qubits)
    psi = state.reshape((2,) * n)
    g = gate.reshape((2,) * (2 * k))
    psi = np.tensordot(g, psi, axes=(list(range(k, 2 * k)), list(qubits)))
    psi = np.moveaxis(psi, list(range(k)), list(qubits))
    return psi.reshape(-1)


def ansatz_gates(theta: Sequence[float]) -> list[tuple[np.ndarray, tuple[int, ...]]]:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (N_PARAMS,):
        raise ValueError(f"expected {N_PARAMS} parameters, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("circuit parameters must be finite")
    t1, t2, t3, t4, t5, t6 = theta
    return [
        (ry(t1), (0,)),
        (ry(t2), (1,)),
        (CNOT, (0, 1)),
        (ry(t3), (0,)),
        (ry(t4), (1,)),
        (rz(t5), (0,)),
        (rz(t6), (1,)),
    ]


def apply_circuit(theta: Sequence[float]) -> np.ndarray:
    """Noiseless ansatz state ``U(theta)|00>``."""
    state = basis_state(0)
    for gate, qubits in ansatz_gates(theta):
        state = apply_gate(state, gate, qubits)
    return state


def apply_noise(
    state: np.ndarray, qubits: Sequence[int], p: float, rng: np.random.Generator
) -> np.ndarray:
    """With probability ``p`` apply a uniformly random non-identity Pauli on ``qubits``."""
    if len(qubits) not in (1, 2):
        raise ValueError("depolarizing noise is defined for 1- and 2-qubit gates only")
    if p <= 0.0 or rng.random() >= p:
        return state
    paulis = _PAULI_1Q if len(qubits) == 1 else _PAULI_2Q
    return apply_gate(state, paulis[rng.integers(len(paulis))], qubits)


def noisy_circuit_state(
    theta: Sequence[float], noise: NoiseConfig, rng: np.random.Generator
) -> np.ndarray:
    """One Monte-Carlo trajectory of the ansatz under depolarizing noise."""
    state = basis_state(0)
    for gate, qubits in ansatz_gates(theta):
        state = apply_gate(state, gate, qubits)
        p = noise.depolarizing_1q if len(qubits) == 1 else noise.depolarizing_2q
        state = apply_noise(state, qubits, p, rng)
    return state


def flip_readout(
    outcomes: np.ndarray, n_qubits: int, p: float, rng: np.random.Generator
) -> np.ndarray:
    """Flip each measured bit of the integer ``outcomes`` independently with probability ``p``."""
    outcomes = np.asarray(outcomes, dtype=np.int64)
    if p <= 0.0:
        return outcomes
    flips = rng.random((outcomes.size, n_qubits)) < p
    weights = 1 << np.arange(n_qubits - 1, -1, -1)
    return outcomes ^ (flips.astype(np.int64) @ weights).reshape(outcomes.shape)


def expectation_exact(state: np.ndarray, h: PauliSumHamiltonian) -> float:
    state = np.asarray(state, dtype=complex)
    if state.size != 2**h.qubit_count:
        raise ValueError(
            f"state of dimension {state.size} does not match {h.qubit_count} qubits"
        )
    value = np.vdot(state, build_matrix(h) @ state)
    return float(value.real)


def fidelity(psi: np.ndarray, phi: np.ndarray) -> float:
    psi = np.asarray(psi, dtype=complex)
    phi = np.asarray(phi, dtype=complex)
    if psi.shape != phi.shape:
        raise ValueError(f"dimension mismatch: {psi.shape} vs {phi.shape}")
    return float(min(1.0, abs(np.vdot(psi, phi)) ** 2))
