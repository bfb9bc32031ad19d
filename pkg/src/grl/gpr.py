"""Gaussian-process regression over experience particles.

Zero prior mean, raw targets.  A fitted :class:`GprModel` caches the Cholesky
factor of ``K(X, X)`` and ``alpha = K^-1 q`` so predictions are two
triangular solves away.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .errors import ConfigurationError, DegenerateQueryError, NumericalError, PreconditionError
from .kernels import (
    KernelHyperparameters,
    cross_kernel,
    gram_gradients,
    gram_matrix,
    stack_joint,
)

__all__ = [
    "GprModel",
    "ArdConfig",
    "ArdResult",
    "fit",
    "predict_mean",
    "predict_variance",
    "predict",
    "log_marginal_likelihood",
    "lml_gradient",
    "ard_optimize",
    "nadaraya_watson",
]

_LOG_2PI = np.log(2.0 * np.pi)
JITTER_FACTOR = 1e-8
JITTER_DOUBLINGS = 6
RESIDUAL_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class GprModel:
    training_inputs: np.ndarray
    training_targets: np.ndarray
    hyper: KernelHyperparameters
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.training_targets.shape[0]

    def mean(self, Xs) -> np.ndarray:
        return cross_kernel(Xs, self.training_inputs, self.hyper) @ self.alpha

    def variance(self, Xs) -> np.ndarray:
        ks = cross_kernel(Xs, self.training_inputs, self.hyper)
        v = linalg.solve_triangular(self.chol, ks.T, lower=True, check_finite=False)
        var = self.hyper.signal_amplitude - np.einsum("ij,ij->j", v, v)
        return np.maximum(var, 0.0)


def _factorize(K: np.ndarray, q: np.ndarray, amplitude: float):
    """Cholesky with escalating diagonal jitter.

    A factorization is accepted only if the resulting ``alpha`` solves the
    un-jittered system to ``RESIDUAL_TOL``; jitter that merely papers over a
    singular, inconsistent system is rejected.
    """
    n = K.shape[0]
    qnorm = max(np.linalg.norm(q), np.finfo(float).tiny)
    jitters = [0.0] + [JITTER_FACTOR * amplitude * 2.0**i for i in range(JITTER_DOUBLINGS + 1)]
    for jitter in jitters:
        Kj = K if jitter == 0.0 else K + jitter * np.eye(n)
        try:
            L = linalg.cholesky(Kj, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(L)):
            continue
        alpha = linalg.cho_solve((L, True), q, check_finite=False)
        if np.linalg.norm(K @ alpha - q) <= RESIDUAL_TOL * qnorm:
            return L, alpha, jitter
    raise NumericalError(
        f"covariance matrix is not positive definite after {JITTER_DOUBLINGS} jitter doublings"
    )


def fit(X, q, h: KernelHyperparameters) -> GprModel:
    """Condition a zero-mean GP on inputs ``X`` and targets ``q``."""
    X = stack_joint(X)
    q = np.asarray(q, dtype=float).ravel()
    if X.shape[0] == 0:
        raise PreconditionError("fit needs at least one particle")
    if X.shape[0] != q.shape[0]:
        raise PreconditionError("inputs and targets differ in length")
    if not np.all(np.isfinite(q)):
        raise PreconditionError("targets must be finite")
    K = gram_matrix(X, h)
    L, alpha, jitter = _factorize(K, q, h.signal_amplitude)
    return GprModel(X, q, h, L, alpha, jitter)


def predict_mean(m: GprModel, x_star) -> float:
    return float(m.mean(stack_joint([x_star]))[0])


def predict_variance(m: GprModel, x_star) -> float:
    """Latent (noise-free) predictive variance, clamped at zero."""
    return float(m.variance(stack_joint([x_star]))[0])


def predict(m: GprModel, Xs):
    """Vectorised ``(mean, variance)`` for a batch of query points."""
    Xs = stack_joint(Xs)
    return m.mean(Xs), m.variance(Xs)


def log_marginal_likelihood(m: GprModel) -> float:
    data_fit = -0.5 * float(m.training_targets @ m.alpha)
    complexity = -float(np.sum(np.log(np.diag(m.chol))))
    return data_fit + complexity - 0.5 * m.n * _LOG_2PI


def lml_gradient(m: GprModel) -> np.ndarray:
    """Gradient of the log marginal likelihood w.r.t. log hyperparameters."""
    Kinv = linalg.cho_solve((m.chol, True), np.eye(m.n), check_finite=False)
    A = np.outer(m.alpha, m.alpha) - Kinv
    dK = gram_gradients(m.training_inputs, m.hyper)
    # tr(A dK) for symmetric A
    return 0.5 * np.einsum("ij,pij->p", A, dK)


@dataclass
class ArdConfig:
    max_iters: int = 50
    step_tolerance: float = 1e-6
    initial_step: float = 0.5
    max_step: float = 2.0
    amplitude_bounds: tuple = (1e-4, 1e8)
    noise_bounds: tuple = (1e-6, 1e8)
    length_bounds: tuple = (1e-3, 1e4)

    def length_box(self, dim: int) -> np.ndarray:
        """``(dim, 2)`` array of length-scale bounds.

        ``length_bounds`` is either one ``(lo, hi)`` pair shared by every
        dimension or one pair per dimension.
        """
        b = np.asarray(self.length_bounds, dtype=float)
        if b.shape == (2,):
            b = np.tile(b, (dim, 1))
        if b.shape != (dim, 2) or np.any(b[:, 0] <= 0) or np.any(b[:, 1] < b[:, 0]):
            raise ConfigurationError(f"length_bounds must be one (lo, hi) pair or {dim} of them")
        return b

    def log_bounds(self, h: KernelHyperparameters):
        box = np.log(self.length_box(h.dim))
        lo = np.concatenate(([np.log(self.amplitude_bounds[0]), np.log(self.noise_bounds[0])], box[:, 0]))
        hi = np.concatenate(([np.log(self.amplitude_bounds[1]), np.log(self.noise_bounds[1])], box[:, 1]))
        return lo, hi


@dataclass
class ArdResult:
    hyper: KernelHyperparameters
    lml: float
    trace: list = field(default_factory=list)
    n_iter: int = 0


def _lml_and_grad(X, q, h):
    m = fit(X, q, h)
    return log_marginal_likelihood(m), lml_gradient(m)


def ard_optimize(X, q, h0: KernelHyperparameters,
                 cfg: Optional[ArdConfig] = None) -> ArdResult:
    """Maximise the log marginal likelihood over log hyperparameters.

    Normalised gradient ascent with a backtracking step: a trial point is
    accepted only if it strictly improves the LML, so the recorded trace is
    non-decreasing.  Factorization failures count as rejected trials; the
    best point found so far is always returned.
    """
    cfg = cfg or ArdConfig()
    X = stack_joint(X)
    q = np.asarray(q, dtype=float).ravel()
    if X.shape[0] < 2:
        raise PreconditionError("ARD needs at least two particles")

    free = np.ones(h0.n_params, dtype=bool)
    if h0.noise_scale == 0.0:
        free[1] = False
    lo, hi = cfg.log_bounds(h0)
    base = h0.log_params()
    # fixed parameters (zero noise) keep their -inf; search only over the free ones
    theta = np.where(free, base, 0.0)

    def unpack(t):
        return h0.with_log_params(np.where(free, t, base))

    try:
        best_lml, grad = _lml_and_grad(X, q, h0)
    except NumericalError:
        return ArdResult(h0, -np.inf, [], 0)
    best_h = h0
    trace = [best_lml]
    step = cfg.initial_step
    it = 0
    for it in range(1, cfg.max_iters + 1):
        g = np.where(free, grad, 0.0)
        # a component pushing against its bound cannot move
        g[(theta <= lo) & (g < 0)] = 0.0
        g[(theta >= hi) & (g > 0)] = 0.0
        gnorm = np.linalg.norm(g)
        if gnorm == 0.0 or not np.isfinite(gnorm):
            break
        direction = g / gnorm
        accepted = False
        while True:
            cand = np.where(free, np.clip(theta + step * direction, lo, hi), 0.0)
            if np.linalg.norm(cand - theta) < cfg.step_tolerance:
                break
            h_c = unpack(cand)
            try:
                lml_c, grad_c = _lml_and_grad(X, q, h_c)
            except NumericalError:
                lml_c = -np.inf
            if np.isfinite(lml_c) and lml_c > best_lml:
                theta, best_lml, grad, best_h = cand, lml_c, grad_c, h_c
                trace.append(best_lml)
                step = min(step * 2.0, cfg.max_step)
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
    return ArdResult(best_h, best_lml, trace, it)


def nadaraya_watson(X, q, x_star, h: KernelHyperparameters):
    """Kernel-weighted average of targets; returns ``(weights, estimate)``."""
    X = stack_joint(X)
    q = np.asarray(q, dtype=float).ravel()
    if X.shape[0] == 0:
        raise PreconditionError("nadaraya_watson needs at least one particle")
    k = cross_kernel(stack_joint([x_star]), X, h)[0]
    total = k.sum()
    if not total > 0.0:
        raise DegenerateQueryError("all kernel weights underflowed to zero")
    w = k / total
    return w, float(w @ q)
