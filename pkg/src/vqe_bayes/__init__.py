"""Bayesian optimization of variational quantum eigensolvers from shot-noisy energies."""

from .bayes_opt import BoConfig, current_best, run_bo, sobol_points
from .baselines import NftConfig, SpsaConfig, nft_sinusoid_fit, run_nft, run_spsa
from .circuit import NoiseConfig, apply_circuit, expectation_exact, fidelity
from .estimator import MeasurementRecord, measure_energy
from .gpr import GpModel, Hyperparameters, KernelKind
from .pauli import PauliSumHamiltonian, build_matrix, ground_state, ising_hamiltonian
from .trace import OptimizationTrace

__version__ = "0.1.0"
