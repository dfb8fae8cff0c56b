"""Repeated optimization runs under a fixed shot budget, with CSV, JSON and SVG output."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from . import baselines, bayes_opt, circuit
from .circuit import NoiseConfig
from .estimator import measure_energy
from .gpr import KernelKind
from .pauli import PauliSumHamiltonian, ground_state, ising_hamiltonian
from .trace import OptimizationTrace, TraceRow

logger = logging.getLogger(__name__)

OPTIMIZERS = ("bo-rbf", "bo-periodic", "spsa", "nft")
NOISE_PRESETS = {"off": circuit.NOISELESS, "mild": circuit.MILD_NOISE}
REFERENCE_SHOT_BUDGET = 1280
REFERENCE_SETUPS = ((20, 64), (40, 32), (80, 16))
CSV_HEADER = (
    "run_id", "iteration", "cumulative_shots", "energy_estimate", "energy_stderr",
    "best_energy_model", "true_energy", "fidelity",
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    optimizer: str = "bo-periodic"
    measurements: int = 80
    shots: int = 16
    runs: int = 20
    seed: int = 0
    noise: NoiseConfig = circuit.NOISELESS
    out_dir: Path | None = None
    hamiltonian: PauliSumHamiltonian = field(default_factory=ising_hamiltonian)
    nft_reset_interval: int | None = 4

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}; choose from {OPTIMIZERS}")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.shots < 2:
            raise ConfigError("shots must be >= 2")
        if self.hamiltonian.qubit_count != circuit.N_QUBITS:
            raise ConfigError(
                f"the ansatz acts on {circuit.N_QUBITS} qubits, "
                f"Hamiltonian has {self.hamiltonian.qubit_count}"
            )
        minimum = {"bo-rbf": 3, "bo-periodic": 3, "spsa": 4, "nft": 3}[self.optimizer]
        if self.measurements < minimum:
            raise ConfigError(f"{self.optimizer} needs at least {minimum} measurements")

    @property
    def name(self) -> str:
        return f"{self.optimizer}_N{self.measurements}_S{self.shots}"

    @property
    def total_shots(self) -> int:
        return self.measurements * self.shots


def check_budget(configs: Sequence[ExperimentConfig]) -> bool:
    """Warn unless every config spends the same total number of shots."""
    totals = {c.total_shots for c in configs}
    if len(totals) > 1:
        warnings.warn(f"compared setups use different shot budgets: {sorted(totals)}", stacklevel=2)
        return False
    return True


@dataclass(frozen=True)
class Aggregate:
    iteration: np.ndarray
    cumulative_shots: np.ndarray
    mean: dict[str, np.ndarray]
    stderr: dict[str, np.ndarray]
    se_defined: bool


AGGREGATED_FIELDS = ("best_energy_model", "true_energy", "fidelity")


@dataclass
class ExperimentResult:
    name: str
    traces: list[OptimizationTrace]
    failures: dict[int, str] = field(default_factory=dict)

    def aggregate(self) -> Aggregate:
        """Mean and standard error across runs at the iterations all runs share."""
        if not self.traces:
            empty = np.array([])
            return Aggregate(empty, empty, {f: empty for f in AGGREGATED_FIELDS},
                             {f: empty for f in AGGREGATED_FIELDS}, False)
        length = min(len(t.rows) for t in self.traces)
        rows = [t.rows[:length] for t in self.traces]
        R = len(rows)
        mean, stderr = {}, {}
        for name in AGGREGATED_FIELDS:
            values = np.array([[getattr(r, name) for r in run] for run in rows])
            mean[name] = values.mean(axis=0)
            stderr[name] = (
                values.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros(length)
            )
        first = rows[0]
        return Aggregate(
            np.array([r.iteration for r in first]),
            np.array([r.cumulative_shots for r in first]),
            mean, stderr, R > 1,
        )

    def final_values(self, field_name: str = "fidelity") -> np.ndarray:
        return np.array([getattr(t.rows[-1], field_name) for t in self.traces if t.rows])


def make_diagnostics(h: PauliSumHamiltonian):
    """Noiseless exact energy and ground-state fidelity of the ansatz at ``theta``."""
    target = ground_state(h).ground_state

    def diagnostics(theta):
        state = circuit.apply_circuit(theta)
        return circuit.expectation_exact(state, h), circuit.fidelity(state, target)

    return diagnostics


def run_single(cfg: ExperimentConfig, run_id: int) -> OptimizationTrace:
    seed = cfg.seed + run_id
    objective_seq, optimizer_seq = np.random.SeedSequence(seed).spawn(2)
    objective_rng = np.random.default_rng(objective_seq)
    rng = np.random.default_rng(optimizer_seq)
    h = cfg.hamiltonian

    def objective(theta):
        return measure_energy(theta, cfg.shots, h, cfg.noise, objective_rng)

    diagnostics = make_diagnostics(h)
    d = circuit.N_PARAMS
    if cfg.optimizer.startswith("bo-"):
        kernel = KernelKind.RBF if cfg.optimizer == "bo-rbf" else KernelKind.PERIODIC
        bo_cfg = bayes_opt.BoConfig(
            kernel=kernel, total_measurements=cfg.measurements,
            shots_per_measurement=cfg.shots, d=d, seed=seed,
        )
        return bayes_opt.run_bo(bo_cfg, objective, rng, diagnostics)
    if cfg.optimizer == "spsa":
        return baselines.run_spsa(
            baselines.SpsaConfig(measurements=cfg.measurements, seed=seed),
            objective, d, rng, diagnostics,
        )
    return baselines.run_nft(
        baselines.NftConfig(measurements=cfg.measurements, reset_interval=cfg.nft_reset_interval,
                            seed=seed),
        objective, d, rng, diagnostics,
    )


def _run_one_safe(cfg: ExperimentConfig, run_id: int):
    try:
        return run_id, run_single(cfg, run_id), None
    except Exception as exc:
        logger.exception("run %d of %s failed", run_id, cfg.name)
        return run_id, None, f"{type(exc).__name__}: {exc}"


def worker_count() -> int:
    raw = os.environ.get("VQE_BAYES_THREADS", "0").strip() or "0"
    n = int(raw)
    return (os.cpu_count() or 1) if n <= 0 else n


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentResult:
    """``cfg.runs`` independent runs with seeds ``seed+1 .. seed+runs``."""
    if cfg.total_shots != REFERENCE_SHOT_BUDGET:
        logger.info("%s spends %d shots (reference budget %d)", cfg.name, cfg.total_shots,
                    REFERENCE_SHOT_BUDGET)
    run_ids = range(1, cfg.runs + 1)
    workers = min(worker_count() if workers is None else workers, cfg.runs)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_one_safe, [cfg] * cfg.runs, run_ids))
    else:
        outcomes = [_run_one_safe(cfg, i) for i in run_ids]
    traces, failures = [], {}
    for run_id, trace, error in sorted(outcomes, key=lambda o: o[0]):
        if error is None:
            trace.run_id = run_id
            traces.append(trace)
        else:
            failures[run_id] = error
    if failures:
        warnings.warn(f"{len(failures)} of {cfg.runs} runs failed; aggregating the rest",
                      stacklevel=2)
    result = ExperimentResult(cfg.name, traces, failures)
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        emit_csv(result, out / f"{cfg.name}.csv")
        emit_summary(result, cfg, out / f"{cfg.name}_summary.json")
    return result


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def emit_csv(result: ExperimentResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for index, trace in enumerate(result.traces, 1):
            run_id = index if trace.run_id is None else trace.run_id
            for r in trace.rows:
                writer.writerow([
                    run_id, r.iteration, r.cumulative_shots, _fmt(r.energy_estimate),
                    _fmt(r.energy_stderr), _fmt(r.best_energy_model), _fmt(r.true_energy),
                    _fmt(r.fidelity),
                ])


def read_csv(path, name: str | None = None) -> ExperimentResult:
    path = Path(path)
    runs: dict[int, OptimizationTrace] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            run_id = int(row["run_id"])
            trace = runs.setdefault(run_id, OptimizationTrace())
            trace.run_id = run_id
            trace.rows.append(TraceRow(
                iteration=int(row["iteration"]),
                cumulative_shots=int(row["cumulative_shots"]),
                energy_estimate=float(row["energy_estimate"]),
                energy_stderr=float(row["energy_stderr"]),
                theta_min=np.array([]),
                best_energy_model=float(row["best_energy_model"]),
                true_energy=float(row["true_energy"]),
                fidelity=float(row["fidelity"]),
            ))
    return ExperimentResult(name or path.stem, [runs[k] for k in sorted(runs)])


def emit_summary(result: ExperimentResult, cfg: ExperimentConfig, path) -> None:
    agg = result.aggregate()
    summary = {
        "name": result.name,
        "optimizer": cfg.optimizer,
        "measurements": cfg.measurements,
        "shots": cfg.shots,
        "total_shots": cfg.total_shots,
        "runs_completed": len(result.traces),
        "failures": {str(k): v for k, v in result.failures.items()},
        "noise": asdict(cfg.noise),
        "seed": cfg.seed,
        "stderr_defined": agg.se_defined,
        "exact_ground_energy": ground_state(cfg.hamiltonian).ground_energy,
    }
    if len(agg.iteration):
        summary["final"] = {
            f: {"mean": float(agg.mean[f][-1]), "stderr": float(agg.stderr[f][-1])}
            for f in AGGREGATED_FIELDS
        }
        summary["final"]["fidelity"]["median"] = float(np.median(result.final_values()))
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")


# --- SVG ------------------------------------------------------------------

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2")
_PANEL_W, _PANEL_H = 420, 300
_MARGIN = dict(left=60, right=20, top=30, bottom=45)


def _nice_range(lo: float, hi: float) -> tuple[float, float]:
    if not math.isfinite(lo) or not math.isfinite(hi):
        return 0.0, 1.0
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _panel(x0, title, xlabel, series, reference, x_max) -> list[str]:
    """One plot panel; ``series`` is ``[(label, color, x, mean, se)]``."""
    left, top = x0 + _MARGIN["left"], _MARGIN["top"]
    w = _PANEL_W - _MARGIN["left"] - _MARGIN["right"]
    h = _PANEL_H - _MARGIN["top"] - _MARGIN["bottom"]
    lows = [np.nanmin(m - s) for _, _, _, m, s in series if len(m)] + [reference]
    highs = [np.nanmax(m + s) for _, _, _, m, s in series if len(m)] + [reference]
    y_lo, y_hi = _nice_range(min(lows), max(highs))
    x_hi = max(x_max, 1)

    def sx(x):
        return left + w * np.asarray(x, float) / x_hi

    def sy(y):
        return top + h * (1 - (np.asarray(y, float) - y_lo) / (y_hi - y_lo))

    out = [
        f'<g class="panel">',
        f'<text x="{left + w / 2:.1f}" y="{top - 10}" text-anchor="middle" '
        f'font-size="14">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{w}" height="{h}" fill="none" stroke="#333"/>',
    ]
    for frac in np.linspace(0, 1, 5):
        yv = y_lo + frac * (y_hi - y_lo)
        xv = frac * x_hi
        out.append(f'<text x="{left - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end" '
                   f'font-size="10">{yv:.3g}</text>')
        out.append(f'<text x="{sx(xv):.1f}" y="{top + h + 14}" text-anchor="middle" '
                   f'font-size="10">{xv:.0f}</text>')
    out.append(f'<text x="{left + w / 2:.1f}" y="{top + h + 34}" text-anchor="middle" '
               f'font-size="12">{escape(xlabel)}</text>')
    for label, color, x, m, s in series:
        if not len(m):
            continue
        upper = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(sx(x), sy(m + s)))
        lower = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(sx(x)[::-1], sy((m - s)[::-1])))
        out.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.2" '
                   f'stroke="none"/>')
        line = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(sx(x), sy(m)))
        out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5">'
                   f'<title>{escape(label)}</title></polyline>')
    out.append(f'<line class="reference" x1="{left}" x2="{left + w}" y1="{sy(reference):.2f}" '
               f'y2="{sy(reference):.2f}" stroke="black" stroke-width="1.2" '
               f'data-value="{reference:.8f}"/>')
    out.append("</g>")
    return out


def emit_plot(results: Sequence[ExperimentResult], path, exact_energy: float | None = None) -> None:
    """Two-panel SVG: model energy estimate and fidelity versus cumulative shots."""
    if not results:
        raise ValueError("need at least one result to plot")
    if exact_energy is None:
        exact_energy = ground_state(ising_hamiltonian()).ground_energy
    energy, fid = [], []
    x_max = 0
    for i, result in enumerate(results):
        agg = result.aggregate()
        color = _COLORS[i % len(_COLORS)]
        x = agg.cumulative_shots
        x_max = max(x_max, int(x.max()) if len(x) else 0)
        energy.append((result.name, color, x, agg.mean["best_energy_model"],
                       agg.stderr["best_energy_model"]))
        fid.append((result.name, color, x, agg.mean["fidelity"], agg.stderr["fidelity"]))
    legend_h = 18 * len(results) + 10
    width, height = 2 * _PANEL_W, _PANEL_H + legend_h
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    parts += _panel(0, "Energy", "cumulative shots", energy, exact_energy, x_max)
    parts += _panel(_PANEL_W, "Fidelity", "cumulative shots", fid, 1.0, x_max)
    parts.append('<g class="legend">')
    for i, result in enumerate(results):
        y = _PANEL_H + 10 + 18 * i
        color = _COLORS[i % len(_COLORS)]
        parts.append(f'<g class="legend-entry"><line x1="70" x2="95" y1="{y}" y2="{y}" '
                     f'stroke="{color}" stroke-width="3"/><text x="102" y="{y + 4}" '
                     f'font-size="12">{escape(result.name)}</text></g>')
    parts.append("</g></svg>")
    Path(path).write_text("\n".join(parts) + "\n")
