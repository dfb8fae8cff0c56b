"""Per-measurement optimization traces shared by every optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .estimator import MeasurementRecord

Objective = Callable[[np.ndarray], MeasurementRecord]
# Maps parameters to (exact energy, fidelity to the ground state). Only ever
# used for reporting, never for optimizer decisions.
Diagnostics = Callable[[np.ndarray], tuple[float, float]]


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    cumulative_shots: int
    energy_estimate: float
    energy_stderr: float
    theta_min: np.ndarray = field(repr=False)
    best_energy_model: float
    true_energy: float = float("nan")
    fidelity: float = float("nan")


@dataclass
class OptimizationTrace:
    rows: list[TraceRow] = field(default_factory=list)
    records: list[MeasurementRecord] = field(default_factory=list, repr=False)
    error: Optional[BaseException] = None
    run_id: Optional[int] = None

    @property
    def final(self) -> tuple[np.ndarray, float]:
        last = self.rows[-1]
        return last.theta_min, last.best_energy_model

    @property
    def cumulative_shots(self) -> int:
        return self.rows[-1].cumulative_shots if self.rows else 0


class TraceRecorder:
    """Calls the objective, keeps shot accounting and appends one row per measurement."""

    def __init__(self, objective: Objective, diagnostics: Diagnostics | None = None):
        self._objective = objective
        self._diagnostics = diagnostics
        self.trace = OptimizationTrace()
        self.shots = 0

    @property
    def count(self) -> int:
        return len(self.trace.records)

    def measure(self, theta) -> MeasurementRecord:
        record = self._objective(np.array(theta, dtype=float))
        self.trace.records.append(record)
        self.shots += record.shots
        return record

    def log(self, theta_min, best_energy: float) -> None:
        last = self.trace.records[-1]
        theta_min = np.array(theta_min, dtype=float)
        true_energy, fid = (
            self._diagnostics(theta_min) if self._diagnostics else (float("nan"), float("nan"))
        )
        self.trace.rows.append(
            TraceRow(
                iteration=self.count,
                cumulative_shots=self.shots,
                energy_estimate=last.energy,
                energy_stderr=last.std_error,
                theta_min=theta_min,
                best_energy_model=float(best_energy),
                true_energy=float(true_energy),
                fidelity=float(fid),
            )
        )
