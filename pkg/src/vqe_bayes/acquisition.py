"""Expected improvement, Monte-Carlo noisy expected improvement and their maximization."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import linalg, optimize
from scipy.special import ndtr
from scipy.stats import qmc

from . import gpr
from .gpr import GpModel

logger = logging.getLogger(__name__)

_S_MIN = 1e-12
_INV_SQRT_2PI = 1.0 / np.sqrt(2 * np.pi)
N_RAW_SAMPLES = 1000
N_RESTARTS = 20
FD_STEP = 1e-6


@dataclass(frozen=True)
class EiContext:
    model: GpModel
    incumbent: float


@dataclass(frozen=True)
class NeiEnsemble:
    contexts: tuple[EiContext, ...]

    @property
    def K(self) -> int:
        return len(self.contexts)

    @cached_property
    def stacked(self) -> tuple[np.ndarray, np.ndarray] | None:
        """``(alphas (n, K), incumbents (K,))`` when all contexts share one factor."""
        first = self.contexts[0].model
        shared = all(
            c.model.chol is first.chol and c.model.X is first.X and c.model.hyper is first.hyper
            for c in self.contexts
        )
        if not shared:
            return None
        alphas = np.stack([c.model.alpha for c in self.contexts], axis=1)
        return alphas, np.array([c.incumbent for c in self.contexts])

    @cached_property
    def chol_inv(self) -> np.ndarray:
        model = self.contexts[0].model
        return linalg.solve_triangular(model.chol, np.eye(model.n), lower=True)


def ei_from_moments(mean, std, incumbent):
    """Closed-form ``E[max(0, incumbent - N(mean, std**2))]``, elementwise."""
    mean, std, incumbent = np.broadcast_arrays(
        np.asarray(mean, float), np.asarray(std, float), np.asarray(incumbent, float)
    )
    improvement = incumbent - mean
    safe = np.where(std < _S_MIN, 1.0, std)
    z = improvement / safe
    ei = improvement * ndtr(z) + safe * _normal_pdf(z)
    return np.where(std < _S_MIN, np.maximum(improvement, 0.0), np.maximum(ei, 0.0))


def _normal_pdf(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def expected_improvement(ctx: EiContext, theta) -> float | np.ndarray:
    """EI of ``ctx.model`` at one point (returns float) or a batch of points."""
    theta = np.asarray(theta, dtype=float)
    mean, var = gpr.posterior(ctx.model, theta, full_cov=False)
    ei = ei_from_moments(mean, np.sqrt(var), ctx.incumbent)
    return float(ei[0]) if theta.ndim == 1 else ei


def ei_context(model: GpModel) -> EiContext:
    return EiContext(model, float(np.min(model.y)))


def build_nei_ensemble(model: GpModel, K: int, rng: np.random.Generator) -> NeiEnsemble:
    """Draw ``K`` latent-function samples at the data and refit each noiselessly.

    All refits share inputs and hyperparameters, so they share one Cholesky
    factor and differ only in their targets.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if np.all(model.noise_var == 0):
        ctx = ei_context(model)
        return NeiEnsemble((ctx,) * K)
    samples = gpr.sample_joint(model, model.X, K, rng)
    base = gpr.fit_arrays(model.kind, model.hyper, model.X, samples[0], 0.0)
    contexts = []
    for y in samples:
        refit = gpr.with_targets(base, y)
        contexts.append(EiContext(refit, float(np.min(y))))
    return NeiEnsemble(tuple(contexts))


def nei_value_and_grad(ens: NeiEnsemble, points, with_grad: bool = True):
    """NEI and its gradient at a batch of points; shapes ``(m,)`` and ``(m, d)``."""
    Q = np.atleast_2d(np.asarray(points, dtype=float))
    if ens.stacked is None:
        vals, grads = zip(*(_ei_value_and_grad(c, Q, with_grad) for c in ens.contexts))
        return np.mean(vals, axis=0), (np.mean(grads, axis=0) if with_grad else None)
    A, incumbents = ens.stacked
    return _batched_ei(ens.contexts[0].model, ens.chol_inv, A, incumbents, Q, with_grad)


def _ei_value_and_grad(ctx: EiContext, Q, with_grad):
    chol_inv = linalg.solve_triangular(ctx.model.chol, np.eye(ctx.model.n), lower=True)
    A = ctx.model.alpha[:, None]
    return _batched_ei(ctx.model, chol_inv, A, np.array([ctx.incumbent]), Q, with_grad)


def _batched_ei(model: GpModel, chol_inv, A, incumbents, Q, with_grad):
    hyper = model.hyper
    if with_grad:
        Ks, dK = gpr.kernel_and_grad_x(model.kind, hyper, Q, model.X)  # (m, n), (m, n, d)
    else:
        Ks = gpr.kernel_matrix(model.kind, hyper, Q, model.X)
    means = hyper.mean + Ks @ A  # (m, K)
    v = chol_inv @ Ks.T  # (n, m)
    var = hyper.signal_var - np.einsum("nm,nm->m", v, v)
    ok = var > _S_MIN**2
    all_ok = bool(ok.all())
    std = (np.sqrt(var) if all_ok else np.sqrt(np.where(ok, var, 1.0)))[:, None]
    improvement = incumbents - means
    z = improvement / std
    cdf = ndtr(z)
    pdf = _normal_pdf(z)
    ei = improvement * cdf + std * pdf
    if not all_ok:
        ei = np.where(ok[:, None], ei, improvement)
    value = np.maximum(ei, 0.0).mean(axis=1)
    if not with_grad:
        return value, None
    dmean = np.matmul(dK.transpose(0, 2, 1), A)  # (m, d, K)
    w = chol_inv.T @ v  # (n, m)
    dvar = -2.0 * np.einsum("mnd,nm->md", dK, w)
    if all_ok:
        dmean_coef, dstd, dstd_coef = -cdf, dvar / (2 * std), pdf.sum(axis=1)
    else:
        dmean_coef = np.where(ok[:, None], -cdf, -(improvement > 0).astype(float))
        dstd = np.where(ok[:, None], dvar / (2 * std), 0.0)
        dstd_coef = np.where(ok, pdf.sum(axis=1), 0.0)
    grad = np.matmul(dmean, dmean_coef[:, :, None])[..., 0] + dstd * dstd_coef[:, None]
    return value, grad / A.shape[1]


def noisy_expected_improvement(ens: NeiEnsemble, theta) -> float | np.ndarray:
    theta = np.asarray(theta, dtype=float)
    value, _ = nei_value_and_grad(ens, theta, with_grad=False)
    return float(value[0]) if theta.ndim == 1 else value


def _fd_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, step: float) -> np.ndarray:
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        grad[i] = (f(x + e) - f(x - e)) / (2 * step)
    return grad


def raw_candidates(n: int, d: int, bounds, rng: np.random.Generator) -> np.ndarray:
    lo, hi = bounds
    sampler = qmc.Sobol(d, scramble=True, seed=rng)
    m = int(np.ceil(np.log2(max(n, 1))))
    return lo + (hi - lo) * sampler.random_base2(m)[:n]


def maximize_acquisition(
    f: Callable[[np.ndarray], float],
    d: int,
    rng: np.random.Generator,
    bounds: tuple[float, float] = (0.0, 2 * np.pi),
    *,
    batch_f: Callable[[np.ndarray], np.ndarray] | None = None,
    value_and_grad: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None,
    n_raw: int = N_RAW_SAMPLES,
    n_restarts: int = N_RESTARTS,
    maxiter: int = 200,
) -> np.ndarray:
    """Maximize ``f`` over the box ``bounds**d``.

    ``f`` is scored on ``n_raw`` Sobol points, the best ``n_restarts`` seed
    L-BFGS-B runs, and the best point seen (raw or optimized) is returned.
    ``batch_f`` optionally scores an ``(m, d)`` batch at once. Local runs use
    ``value_and_grad`` (batched: ``(m, d) -> ((m,), (m, d))``) when given and
    central finite differences of ``f`` otherwise.
    """
    lo, hi = bounds
    raw = raw_candidates(n_raw, d, bounds, rng)
    if batch_f is not None:
        raw_vals = np.asarray(batch_f(raw), dtype=float)
    else:
        raw_vals = np.array([f(x) for x in raw])
    order = np.argsort(-raw_vals, kind="stable")[:n_restarts]
    starts = raw[order]
    candidates = [raw[order[0]]]
    values = [raw_vals[order[0]]]

    if value_and_grad is not None:
        def neg(x):
            val, grad = value_and_grad(x[None, :])
            return -val[0], -grad[0]
    else:
        def neg(x):
            x = np.clip(x, lo, hi)
            return -f(x), -_fd_gradient(f, x, FD_STEP)

    for x0 in starts:
        try:
            res = optimize.minimize(
                neg, x0, jac=True, method="L-BFGS-B", bounds=[(lo, hi)] * d,
                options={"maxiter": maxiter},
            )
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            logger.debug("acquisition restart failed, keeping raw start: %s", exc)
            continue
        x = np.clip(res.x, lo, hi)
        candidates.append(x)
        values.append(f(x))
    best = int(np.argmax(values))
    return np.asarray(candidates[best], dtype=float)

