"""Reference optimizers: SPSA and Nakanishi-Fujii-Todo (NFT) sequential minimal optimization.

Both consume exactly the measurement budget they are given and record one
trace row per measurement, like the Bayesian optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .trace import Diagnostics, Objective, OptimizationTrace, TraceRecorder

TWO_PI = 2 * np.pi


def _initial_point(d: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.0, TWO_PI, size=d)


@dataclass(frozen=True)
class SpsaConfig:
    """Gains ``a_k = a / (k + 1 + A)**alpha`` and ``c_k = c / (k + 1)**gamma``.

    ``a=None`` calibrates ``a`` from one extra pair of probe measurements so the
    first update moves each coordinate by about ``target_step`` radians.
    ``A=None`` means ``0.1 * iterations``.
    """

    measurements: int = 80
    a: float | None = None
    c: float = 0.1
    A: float | None = None
    alpha: float = 0.602
    gamma: float = 0.101
    target_step: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.a is not None and self.a < 0:
            raise ValueError("a must be non-negative")
        if self.c <= 0:
            raise ValueError("c must be positive")
        if not (0 < self.alpha <= 1 and 0 < self.gamma <= 1):
            raise ValueError("alpha and gamma must lie in (0, 1]")
        if self.measurements < 2 + (2 if self.a is None else 0):
            raise ValueError("budget too small for one SPSA iteration")

    @property
    def iterations(self) -> int:
        probes = 2 if self.a is None else 0
        return (self.measurements - probes) // 2


def spsa_gains(k: int, a: float, c: float, A: float, alpha: float, gamma: float) -> tuple[float, float]:
    return a / (k + 1 + A) ** alpha, c / (k + 1) ** gamma


def run_spsa(
    cfg: SpsaConfig,
    objective: Objective,
    d: int,
    rng: np.random.Generator,
    diagnostics: Diagnostics | None = None,
    theta0=None,
) -> OptimizationTrace:
    rec = TraceRecorder(objective, diagnostics)
    theta = _initial_point(d, rng) if theta0 is None else np.array(theta0, dtype=float)
    iterations = cfg.iterations
    A = 0.1 * iterations if cfg.A is None else cfg.A
    estimate = math.nan

    def pair(k: int):
        _, ck = spsa_gains(k, 0.0, cfg.c, A, cfg.alpha, cfg.gamma)
        delta = rng.choice([-1.0, 1.0], size=d)
        plus = rec.measure(theta + ck * delta)
        rec.log(theta, plus.energy if math.isnan(estimate) else estimate)
        minus = rec.measure(theta - ck * delta)
        diff = (plus.energy - minus.energy) / (2 * ck)
        return diff, delta, 0.5 * (plus.energy + minus.energy)

    a = cfg.a
    if a is None:
        diff, _, estimate = pair(0)
        rec.log(theta, estimate)
        magnitude = max(abs(diff), 1e-8)
        a = cfg.target_step * (1 + A) ** cfg.alpha / magnitude

    for k in range(iterations):
        ak, _ = spsa_gains(k, a, cfg.c, A, cfg.alpha, cfg.gamma)
        diff, delta, estimate = pair(k)
        theta = theta - ak * diff / delta
        rec.log(theta, estimate)

    if rec.count < cfg.measurements:
        # odd budget: spend the last measurement on the final iterate
        estimate = rec.measure(theta).energy
        rec.log(theta, estimate)
    return rec.trace


def nft_sinusoid_fit(e_0: float, e_plus: float, e_minus: float, phi0: float = 0.0):
    """Fit ``E(phi) = a cos(phi - b) + c`` to samples at ``phi0`` and ``phi0 +- pi/2``.

    Returns ``(a, b, c, phi_min)`` with ``a >= 0``; a flat fit (``a < 1e-12``)
    keeps ``phi_min = phi0``.
    """
    c = 0.5 * (e_plus + e_minus)
    x = e_0 - c
    y = 0.5 * (e_minus - e_plus)
    a = math.hypot(x, y)
    if a < 1e-12:
        return 0.0, phi0, c, phi0
    b = phi0 - math.atan2(y, x)
    return a, b, c, b + math.pi


@dataclass(frozen=True)
class NftConfig:
    """``reset_interval=None`` never re-measures the cached energy after the first step."""

    measurements: int = 40
    reset_interval: int | None = 4
    seed: int = 0

    def __post_init__(self):
        if self.reset_interval is not None and self.reset_interval < 1:
            raise ValueError("reset_interval must be >= 1 or None")
        if self.measurements < 3:
            raise ValueError("NFT needs at least 3 measurements")


def run_nft(
    cfg: NftConfig,
    objective: Objective,
    d: int,
    rng: np.random.Generator,
    diagnostics: Diagnostics | None = None,
    theta0=None,
    max_steps: int | None = None,
) -> OptimizationTrace:
    """Cyclic coordinate minimization using exact single-parameter sinusoids.

    Step ``j`` re-measures the current energy when ``j % reset_interval == 0``
    (always at ``j == 0``) and otherwise reuses the fitted minimum value of the
    previous step. Stops when the budget is spent or after ``max_steps``.
    """
    rec = TraceRecorder(objective, diagnostics)
    theta = _initial_point(d, rng) if theta0 is None else np.array(theta0, dtype=float)
    e_0: float | None = None
    step = 0
    while rec.count < cfg.measurements and (max_steps is None or step < max_steps):
        remaining = cfg.measurements - rec.count
        reset_due = e_0 is None or (
            cfg.reset_interval is not None and step % cfg.reset_interval == 0
        )
        if remaining == 1 or (reset_due and remaining >= 3) or e_0 is None:
            e_0 = rec.measure(theta).energy
            rec.log(theta, e_0)
            if remaining == 1:
                break
        alpha = step % d
        phi0 = theta[alpha]
        shifted = theta.copy()
        shifted[alpha] = phi0 + np.pi / 2
        e_plus = rec.measure(shifted).energy
        rec.log(theta, e_0)
        shifted[alpha] = phi0 - np.pi / 2
        e_minus = rec.measure(shifted).energy
        a, _, c, phi_min = nft_sinusoid_fit(e_0, e_plus, e_minus, phi0)
        theta[alpha] = phi_min % TWO_PI
        e_0 = c - a
        rec.log(theta, e_0)
        step += 1
    return rec.trace
