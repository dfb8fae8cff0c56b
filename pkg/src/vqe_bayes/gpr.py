"""Gaussian process regression with known per-observation noise.

The training covariance is ``K~ = K + diag(dE**2) + jitter * I`` where ``dE``
are the reported standard errors of the energy estimates. Hyperparameters are a
constant prior mean, a signal variance and one lengthscale per input dimension.
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg, optimize
from scipy.linalg import lapack

from .estimator import MeasurementRecord

logger = logging.getLogger(__name__)

JITTER_LADDER = (1e-10, 1e-8, 1e-6)
LENGTHSCALE_BOUNDS = (0.05, 50.0)
SIGNAL_VAR_RANGE = (1e-4, 1e4)
_START_LENGTHSCALES = (0.25, 1.0, 4.0, 16.0)
_START_SIGNAL_FACTORS = (1.0, 10.0)


class KernelKind(str, enum.Enum):
    RBF = "rbf"
    PERIODIC = "periodic"


class NumericalError(np.linalg.LinAlgError):
    """Cholesky factorization failed even after jitter escalation."""


class MleFallbackWarning(RuntimeWarning):
    """MLE-II failed at every start; heuristic hyperparameters were used."""


@dataclass(frozen=True)
class Hyperparameters:
    mean: float
    signal_var: float
    lengthscales: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if not self.signal_var > 0:
            raise ValueError(f"signal_var must be positive, got {self.signal_var}")
        if not np.all(ls > 0):
            raise ValueError("lengthscales must be positive")

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    def to_vector(self) -> np.ndarray:
        """Unconstrained ``(mean, log signal_var, log lengthscales...)``."""
        return np.concatenate(
            [[self.mean, np.log(self.signal_var)], np.log(self.lengthscales)]
        )

    @classmethod
    def from_vector(cls, v: Sequence[float]) -> Hyperparameters:
        v = np.asarray(v, dtype=float)
        return cls(float(v[0]), float(np.exp(v[1])), np.exp(v[2:]))


def pairwise_base(kind: KernelKind, A, B) -> np.ndarray:
    """Lengthscale-free exponent terms, shape ``(na, nb, d)``.

    ``k(a, b) = s2 * exp(-sum_d base[..., d] / l_d**2)`` for both kernels.
    """
    diff = A[:, None, :] - B[None, :, :]
    if KernelKind(kind) == KernelKind.RBF:
        return 0.5 * diff**2
    return 2 * np.sin(0.5 * diff) ** 2


def _kernel_from_base(hyper: "Hyperparameters", base: np.ndarray) -> np.ndarray:
    return hyper.signal_var * np.exp(-(base @ (1.0 / hyper.lengthscales**2)))


def _as_points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != d:
        raise ValueError(f"points have dimension {x.shape[-1]}, hyperparameters expect {d}")
    return x


def kernel_matrix(kind: KernelKind, hyper: Hyperparameters, A, B) -> np.ndarray:
    A = _as_points(A, hyper.dim)
    B = _as_points(B, hyper.dim)
    return _kernel_from_base(hyper, pairwise_base(kind, A, B))


def kernel_eval(kind: KernelKind, hyper: Hyperparameters, x, y) -> float:
    return float(kernel_matrix(kind, hyper, x, y)[0, 0])


def kernel_and_grad_x(kind: KernelKind, hyper: Hyperparameters, Q, X) -> tuple[np.ndarray, np.ndarray]:
    """``k(q, x)`` with shape ``(m, n)`` and its derivative in ``q``, shape ``(m, n, d)``."""
    Q = _as_points(Q, hyper.dim)
    X = _as_points(X, hyper.dim)
    diff = Q[:, None, :] - X[None, :, :]
    inv_ls2 = 1.0 / hyper.lengthscales**2
    if KernelKind(kind) == KernelKind.RBF:
        K = hyper.signal_var * np.exp(-0.5 * (diff**2 @ inv_ls2))
        return K, -K[..., None] * diff * inv_ls2
    half_sin = np.sin(0.5 * diff)
    K = hyper.signal_var * np.exp(-2.0 * (half_sin**2 @ inv_ls2))
    # sin(diff) = 2 sin(diff/2) cos(diff/2)
    return K, -2.0 * K[..., None] * half_sin * np.cos(0.5 * diff) * inv_ls2


def cholesky_with_jitter(A: np.ndarray, what: str = "matrix") -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``A + jitter * I`` for the first jitter that works."""
    eye = np.eye(A.shape[0])
    for jitter in JITTER_LADDER:
        try:
            return linalg.cholesky(A + jitter * eye, lower=True, check_finite=True), jitter
        except (np.linalg.LinAlgError, ValueError):
            continue
    diag = np.diag(A)
    raise NumericalError(
        f"Cholesky of {what} (n={A.shape[0]}) failed with jitter up to {JITTER_LADDER[-1]:g}; "
        f"diagonal range [{diag.min():.3g}, {diag.max():.3g}]"
    )


@dataclass(frozen=True)
class GpModel:
    kind: KernelKind
    hyper: Hyperparameters
    X: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    noise_var: np.ndarray = field(repr=False)
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.y.size

    def train_cov(self) -> np.ndarray:
        """The jittered ``K~`` that ``chol`` factorizes."""
        K = kernel_matrix(self.kind, self.hyper, self.X, self.X)
        return K + np.diag(self.noise_var) + self.jitter * np.eye(self.n)


def records_to_arrays(records: Sequence[MeasurementRecord]) -> tuple[np.ndarray, ...]:
    if not records:
        raise ValueError("need at least one record")
    X = np.array([r.theta for r in records], dtype=float)
    y = np.array([r.energy for r in records], dtype=float)
    noise_var = np.array([r.std_error for r in records], dtype=float) ** 2
    return X, y, noise_var


def fit_arrays(kind, hyper: Hyperparameters, X, y, noise_var) -> GpModel:
    kind = KernelKind(kind)
    X = _as_points(X, hyper.dim)
    y = np.asarray(y, dtype=float)
    noise_var = np.broadcast_to(np.asarray(noise_var, dtype=float), y.shape).copy()
    K = kernel_matrix(kind, hyper, X, X) + np.diag(noise_var)
    chol, jitter = cholesky_with_jitter(K, "training covariance")
    alpha = linalg.cho_solve((chol, True), y - hyper.mean)
    return GpModel(kind, hyper, X, y, noise_var, chol, alpha, jitter)


def fit(kind, hyper: Hyperparameters, records: Sequence[MeasurementRecord]) -> GpModel:
    return fit_arrays(kind, hyper, *records_to_arrays(records))


def with_targets(model: GpModel, y) -> GpModel:
    """Same inputs, noise and factorization, new training targets."""
    y = np.asarray(y, dtype=float)
    alpha = linalg.cho_solve((model.chol, True), y - model.hyper.mean)
    return GpModel(
        model.kind, model.hyper, model.X, y, model.noise_var, model.chol, alpha, model.jitter
    )


def posterior(model: GpModel, points, full_cov: bool = True):
    """Posterior mean and covariance (or variance when ``full_cov=False``) at ``points``."""
    Q = _as_points(points, model.hyper.dim)
    Ks = kernel_matrix(model.kind, model.hyper, Q, model.X)
    mean = model.hyper.mean + Ks @ model.alpha
    v = linalg.solve_triangular(model.chol, Ks.T, lower=True)
    if full_cov:
        cov = kernel_matrix(model.kind, model.hyper, Q, Q) - v.T @ v
        return mean, 0.5 * (cov + cov.T)
    var = model.hyper.signal_var - np.sum(v**2, axis=0)
    return mean, np.maximum(var, 0.0)


def _lml_from_base(hyper, base, y, noise_var, with_grad=False):
    # hot path of MLE-II: raw LAPACK calls, the jitter ladder only on failure
    n = y.size
    K = _kernel_from_base(hyper, base)
    Kt = K + np.diag(noise_var + JITTER_LADDER[0])
    chol, info = lapack.dpotrf(Kt, lower=1, clean=1)
    if info != 0:
        chol, _ = cholesky_with_jitter(K + np.diag(noise_var), "training covariance")
    r = y - hyper.mean
    alpha, _ = lapack.dpotrs(chol, r, lower=1)
    value = -0.5 * r @ alpha - np.log(np.diag(chol)).sum() - 0.5 * n * np.log(2 * np.pi)
    if not with_grad:
        return float(value)
    K_inv, info = lapack.dpotri(chol, lower=1)
    if info != 0:
        raise NumericalError(f"inverse from Cholesky factor failed (info={info})")
    K_inv = np.tril(K_inv)
    K_inv += K_inv.T
    K_inv[np.diag_indices(n)] *= 0.5
    WK = (np.outer(alpha, alpha) - K_inv) * K
    # dK/d log s2 = K;  dK/d log l_a = 2 K base_a / l_a**2
    d_log_ls = (WK.reshape(-1) @ base.reshape(n * n, -1)) / hyper.lengthscales**2
    grad = np.concatenate([[alpha.sum(), 0.5 * WK.sum()], d_log_ls])
    return float(value), grad


def log_marginal_likelihood(kind, hyper: Hyperparameters, records: Sequence[MeasurementRecord]) -> float:
    X, y, noise_var = records_to_arrays(records)
    X = _as_points(X, hyper.dim)
    return _lml_from_base(hyper, pairwise_base(kind, X, X), y, noise_var)


def lml_and_grad(kind, vector, X, y, noise_var, base=None) -> tuple[float, np.ndarray]:
    """LML and its gradient in ``(mean, log signal_var, log lengthscales)`` coordinates.

    ``base`` is ``pairwise_base(kind, X, X)``, cached by callers that evaluate
    many hyperparameter vectors on the same inputs.
    """
    hyper = Hyperparameters.from_vector(vector)
    X = _as_points(X, hyper.dim)
    if base is None:
        base = pairwise_base(kind, X, X)
    return _lml_from_base(hyper, base, np.asarray(y, float), np.asarray(noise_var, float),
                          with_grad=True)


def _data_scale(y: np.ndarray) -> tuple[float, float]:
    var = float(np.var(y))
    spread = float(np.ptp(y))
    return (var if var > 0 else 1.0), (spread if spread > 0 else 1.0)


def mle_bounds(y, d: int) -> list[tuple[float, float]]:
    var, spread = _data_scale(np.asarray(y, float))
    lo_s, hi_s = SIGNAL_VAR_RANGE
    lo_l, hi_l = LENGTHSCALE_BOUNDS
    return (
        [(float(np.min(y) - 3 * spread), float(np.max(y) + 3 * spread))]
        + [(np.log(lo_s * var), np.log(hi_s * var))]
        + [(np.log(lo_l), np.log(hi_l))] * d
    )


def mle_start_points(y, d: int) -> list[np.ndarray]:
    """The fixed 8-point grid: 4 lengthscale levels x 2 signal-variance levels."""
    var, _ = _data_scale(np.asarray(y, float))
    mean = float(np.mean(y))
    return [
        np.concatenate([[mean, np.log(f * var)], np.full(d, np.log(ls))])
        for ls in _START_LENGTHSCALES
        for f in _START_SIGNAL_FACTORS
    ]


def fallback_hyper(y, d: int) -> Hyperparameters:
    y = np.asarray(y, float)
    var = float(np.var(y, ddof=1)) if y.size > 1 else 0.0
    return Hyperparameters(float(np.mean(y)), var if var > 0 else 1.0, np.full(d, np.pi / 2))


def mle2_fit(kind, records: Sequence[MeasurementRecord], maxiter: int = 200) -> Hyperparameters:
    """Type-II maximum likelihood by multistart L-BFGS-B with analytic gradients."""
    kind = KernelKind(kind)
    X, y, noise_var = records_to_arrays(records)
    if y.size < 2:
        raise ValueError("MLE-II needs at least 2 records")
    d = X.shape[1]
    bounds = mle_bounds(y, d)
    base = pairwise_base(kind, X, X)

    def neg(v):
        try:
            val, grad = lml_and_grad(kind, v, X, y, noise_var, base)
        except NumericalError:
            return 1e25, np.zeros_like(v)
        if not np.isfinite(val):
            return 1e25, np.zeros_like(v)
        return -val, -grad

    best_v, best_val = None, np.inf
    for start in mle_start_points(y, d):
        start = np.clip(start, [b[0] for b in bounds], [b[1] for b in bounds])
        candidates = [start]
        try:
            res = optimize.minimize(
                neg, start, jac=True, method="L-BFGS-B", bounds=bounds,
                options={"maxiter": maxiter},
            )
            candidates.append(res.x)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            logger.debug("MLE-II start failed: %s", exc)
        for v in candidates:
            val = neg(v)[0]
            if val < best_val:
                best_v, best_val = v, val
    if best_v is None or best_val >= 1e25:
        warnings.warn("MLE-II failed at every start; using heuristic hyperparameters",
                      MleFallbackWarning, stacklevel=2)
        return fallback_hyper(y, d)
    return Hyperparameters.from_vector(best_v)


def sample_joint(model: GpModel, points, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` joint draws of the noiseless latent function at ``points``; shape ``(count, m)``.

    A posterior whose variance is at jitter level everywhere is treated as
    degenerate and every draw equals the posterior mean.
    """
    mean, cov = posterior(model, points, full_cov=True)
    scale = max(model.hyper.signal_var, 1.0)
    if np.max(np.diag(cov), initial=0.0) <= 1.01 * max(model.jitter, JITTER_LADDER[0]) * scale:
        return np.tile(mean, (count, 1))
    L, _ = cholesky_with_jitter(cov, "posterior covariance")
    z = rng.standard_normal((count, mean.size))
    return mean + z @ L.T
