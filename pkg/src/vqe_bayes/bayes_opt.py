"""Bayesian optimization loop with a GP surrogate and noisy expected improvement."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from . import acquisition, gpr
from .gpr import GpModel, KernelKind
from .trace import Diagnostics, Objective, OptimizationTrace, TraceRecorder

logger = logging.getLogger(__name__)

TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class BoConfig:
    kernel: KernelKind = KernelKind.PERIODIC
    n_init: int = 3
    K_nei: int = 20
    total_measurements: int = 80
    shots_per_measurement: int = 16
    d: int = 6
    seed: int = 0
    scramble_init: bool = True
    # opt-in early stop: incumbent unchanged and |dE| < tol for `stable_window` iterations
    stable_window: int | None = None
    stable_tol: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "kernel", KernelKind(self.kernel))
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")
        if self.total_measurements < self.n_init:
            raise ValueError("total_measurements must be >= n_init")
        if self.shots_per_measurement < 2:
            raise ValueError("shots_per_measurement must be >= 2")
        if self.K_nei < 1 or self.d < 1:
            raise ValueError("K_nei and d must be >= 1")


def sobol_points(n: int, d: int, seed: int | None = 0, scramble: bool = True) -> np.ndarray:
    """First ``n`` Sobol points scaled to ``[0, 2*pi]**d``.

    With ``scramble=False`` the plain Joe-Kuo sequence is returned (starting at
    the origin) and ``seed`` has no effect.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    sampler = qmc.Sobol(d, scramble=scramble, seed=seed)
    with warnings.catch_warnings():
        # balance warning for n not a power of two
        warnings.simplefilter("ignore", UserWarning)
        return TWO_PI * sampler.random(n)


def current_best(model: GpModel) -> tuple[np.ndarray, float]:
    """Observed point with the lowest posterior mean (first index on ties)."""
    mean, _ = gpr.posterior(model, model.X, full_cov=False)
    i = int(np.argmin(mean))
    return model.X[i].copy(), float(mean[i])


def _fit_model(cfg: BoConfig, records) -> GpModel:
    if len(records) == 1:
        hyper = gpr.fallback_hyper([records[0].energy], cfg.d)
    else:
        hyper = gpr.mle2_fit(cfg.kernel, records)
    return gpr.fit(cfg.kernel, hyper, records)


def propose(model: GpModel, cfg: BoConfig, rng: np.random.Generator) -> np.ndarray:
    ens = acquisition.build_nei_ensemble(model, cfg.K_nei, rng)
    return acquisition.maximize_acquisition(
        lambda x: acquisition.noisy_expected_improvement(ens, x),
        cfg.d,
        rng,
        (0.0, TWO_PI),
        batch_f=lambda X: acquisition.nei_value_and_grad(ens, X, with_grad=False)[0],
        value_and_grad=lambda X: acquisition.nei_value_and_grad(ens, X),
    )


def run_bo(
    cfg: BoConfig,
    objective: Objective,
    rng: np.random.Generator,
    diagnostics: Diagnostics | None = None,
) -> OptimizationTrace:
    """Run the full loop until ``cfg.total_measurements`` objective calls.

    A trace row is written after every measurement. With a single
    measurement MLE-II is undefined and heuristic hyperparameters are used.
    """
    rec = TraceRecorder(objective, diagnostics)
    stable_count = 0
    prev_best: tuple[np.ndarray, float] | None = None
    try:
        pending = list(sobol_points(cfg.n_init, cfg.d, seed=rng, scramble=cfg.scramble_init))
        while True:
            theta = pending.pop(0) if pending else propose(model, cfg, rng)
            rec.measure(theta)
            model = _fit_model(cfg, rec.trace.records)
            best = current_best(model)
            rec.log(*best)
            if rec.count >= cfg.total_measurements:
                break
            if cfg.stable_window and prev_best is not None and rec.count > cfg.n_init:
                same = np.array_equal(best[0], prev_best[0])
                if same and abs(best[1] - prev_best[1]) < cfg.stable_tol:
                    stable_count += 1
                else:
                    stable_count = 0
                if stable_count >= cfg.stable_window:
                    logger.info("incumbent stable for %d iterations, stopping", stable_count)
                    break
            prev_best = best
    except Exception as exc:  # partial trace is kept for the caller
        logger.error("BO run aborted after %d measurements: %s", rec.count, exc)
        rec.trace.error = exc
        raise BoRunError(rec.trace) from exc
    return rec.trace


class BoRunError(RuntimeError):
    def __init__(self, trace: OptimizationTrace):
        super().__init__(f"optimization aborted after {len(trace.records)} measurements")
        self.trace = trace
