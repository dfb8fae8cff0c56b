"""Shot-based energy estimation.

One *shot* is one joint sample of every measurement group, producing a single
per-shot energy. ``measure_energy`` averages ``S`` such shots and reports the
standard error of the mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .circuit import (
    HADAMARD,
    NOISELESS,
    S_DAG,
    NoiseConfig,
    apply_circuit,
    apply_gate,
    flip_readout,
    noisy_circuit_state,
)
from .pauli import PauliSumHamiltonian


@dataclass(frozen=True)
class MeasurementGroup:
    """Qubit-wise commuting terms measured together in ``basis``."""

    basis: str
    members: tuple[tuple[float, str], ...]

    def outcome_values(self) -> np.ndarray:
        """Weighted sum of member eigenvalues for every computational-basis outcome."""
        q = len(self.basis)
        bits = (np.arange(2**q)[:, None] >> np.arange(q - 1, -1, -1)) & 1
        signs = 1 - 2 * bits
        values = np.zeros(2**q)
        for coeff, string in self.members:
            mask = np.array([p != "I" for p in string])
            values += coeff * np.prod(signs[:, mask], axis=1)
        return values


@dataclass(frozen=True)
class MeasurementRecord:
    theta: np.ndarray = field(repr=False)
    energy: float
    std_error: float
    shots: int

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        if self.std_error < 0:
            raise ValueError("std_error must be non-negative")


def _compatible(basis: list[str], string: str) -> bool:
    return all(b == "I" or p == "I" or b == p for b, p in zip(basis, string))


def group_terms(h: PauliSumHamiltonian) -> tuple[list[MeasurementGroup], float]:
    """Greedy qubit-wise-commuting grouping in term order.

    Returns the groups and the constant offset from identity terms.
    """
    offset = 0.0
    bases: list[list[str]] = []
    members: list[list[tuple[float, str]]] = []
    for coeff, string in h.terms:
        if set(string) == {"I"}:
            offset += coeff
            continue
        for basis, group in zip(bases, members):
            if _compatible(basis, string):
                for i, p in enumerate(string):
                    if p != "I":
                        basis[i] = p
                group.append((coeff, string))
                break
        else:
            bases.append(list(string))
            members.append([(coeff, string)])
    groups = [
        MeasurementGroup("".join(b), tuple(m)) for b, m in zip(bases, members)
    ]
    return groups, offset


def rotate_to_basis(state: np.ndarray, basis: str) -> np.ndarray:
    for qubit, axis in enumerate(basis):
        if axis == "X":
            state = apply_gate(state, HADAMARD, (qubit,))
        elif axis == "Y":
            state = apply_gate(state, HADAMARD @ S_DAG, (qubit,))
    return state


def _outcome_probabilities(state: np.ndarray, basis: str) -> np.ndarray:
    probs = np.abs(rotate_to_basis(state, basis)) ** 2
    return probs / probs.sum()


def sample_shots(
    state: np.ndarray,
    groups: Sequence[MeasurementGroup],
    offset: float,
    rng: np.random.Generator,
    count: int,
    readout_flip: float = 0.0,
) -> np.ndarray:
    """Per-shot energies for ``count`` shots of a fixed pure state."""
    energies = np.full(count, float(offset))
    n_qubits = int(np.log2(state.size))
    for group in groups:
        probs = _outcome_probabilities(state, group.basis)
        outcomes = rng.choice(probs.size, size=count, p=probs)
        outcomes = flip_readout(outcomes, n_qubits, readout_flip, rng)
        energies += group.outcome_values()[outcomes]
    return energies


def sample_shot(
    state: np.ndarray,
    groups: Sequence[MeasurementGroup],
    offset: float,
    rng: np.random.Generator,
) -> float:
    return float(sample_shots(state, groups, offset, rng, 1)[0])


def _noisy_shots(theta, groups, offset, noise, rng, count) -> np.ndarray:
    # every group execution is an independent circuit run, hence its own trajectory
    energies = np.full(count, float(offset))
    for m in range(count):
        for group in groups:
            state = noisy_circuit_state(theta, noise, rng)
            energies[m] += sample_shots(
                state, [group], 0.0, rng, 1, noise.readout_flip
            )[0]
    return energies


def estimate_from_shots(per_shot: np.ndarray) -> tuple[float, float]:
    """Sample mean and standard error of the mean of per-shot energies."""
    per_shot = np.asarray(per_shot, dtype=float)
    s = per_shot.size
    if s < 2:
        raise ValueError("need at least 2 shots for a standard error")
    mean = float(per_shot.mean())
    var = float(np.sum((per_shot - mean) ** 2)) / (s * (s - 1))
    return mean, float(np.sqrt(var))


def measure_energy(
    theta: Sequence[float],
    shots: int,
    h: PauliSumHamiltonian,
    noise: NoiseConfig = NOISELESS,
    rng: np.random.Generator | None = None,
) -> MeasurementRecord:
    if shots < 2:
        raise ValueError(f"shots must be >= 2, got {shots}")
    rng = np.random.default_rng() if rng is None else rng
    theta = np.asarray(theta, dtype=float)
    groups, offset = group_terms(h)
    if noise.depolarizing_1q == 0 and noise.depolarizing_2q == 0:
        per_shot = sample_shots(
            apply_circuit(theta), groups, offset, rng, shots, noise.readout_flip
        )
    else:
        per_shot = _noisy_shots(theta, groups, offset, noise, rng, shots)
    energy, std_error = estimate_from_shots(per_shot)
    return MeasurementRecord(theta.copy(), energy, std_error, int(shots))
