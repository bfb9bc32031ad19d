"""Squared-exponential kernels over augmented (state, action) vectors.

Two kernel forms are supported:

* ``SquaredExponentialJoint``: one ARD squared exponential over the joint
  vector ``(x_s1..x_sm, x_a1..x_an)``.
* ``ProductStateAction``: ``theta0 * k_s(x_s, x_s') * k_a(x_a, x_a')`` where
  ``k_s`` and ``k_a`` are unit-amplitude ARD squared exponentials over their
  own blocks of length scales.

The observational noise term is *not* part of the cross covariance; it only
enters on the diagonal of a Gram matrix (or when ``include_noise=True`` is
requested explicitly for a single pair).

Hyperparameter gradients are taken with respect to log parameters, in the
order ``[log amplitude, log noise, log l_1, ..., log l_d]``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import ConfigurationError, PreconditionError

__all__ = [
    "KernelKind",
    "KernelHyperparameters",
    "AugmentedState",
    "as_joint",
    "stack_joint",
    "kernel_value",
    "correlation",
    "cross_kernel",
    "correlation_matrix",
    "paired_correlation",
    "gram_matrix",
    "gram_gradients",
    "kernel_param_gradient",
]


class KernelKind(str, enum.Enum):
    SE = "se"
    PRODUCT = "product"


@dataclass(frozen=True)
class KernelHyperparameters:
    """Amplitude, noise variance and per-dimension length scales."""

    signal_amplitude: float
    noise_scale: float
    length_scales: tuple
    kernel_kind: KernelKind = KernelKind.SE
    state_dim: int = 0
    action_dim: int = 0

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.length_scales))
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "kernel_kind", KernelKind(self.kernel_kind))
        object.__setattr__(self, "signal_amplitude", float(self.signal_amplitude))
        object.__setattr__(self, "noise_scale", float(self.noise_scale))
        if not self.state_dim and not self.action_dim:
            object.__setattr__(self, "state_dim", len(ls))
        if not (self.signal_amplitude > 0 and np.isfinite(self.signal_amplitude)):
            raise ConfigurationError("signal_amplitude must be positive and finite")
        if not (self.noise_scale >= 0 and np.isfinite(self.noise_scale)):
            raise ConfigurationError("noise_scale must be non-negative and finite")
        if any(not (v > 0 and np.isfinite(v)) for v in ls):
            raise ConfigurationError("every length scale must be positive and finite")
        if len(ls) != self.state_dim + self.action_dim:
            raise ConfigurationError(
                f"{len(ls)} length scales for state_dim={self.state_dim} + "
                f"action_dim={self.action_dim}"
            )

    @property
    def dim(self) -> int:
        return self.state_dim + self.action_dim

    @property
    def n_params(self) -> int:
        return 2 + self.dim

    @property
    def lengths(self) -> np.ndarray:
        return np.asarray(self.length_scales)

    def log_params(self) -> np.ndarray:
        noise = np.log(self.noise_scale) if self.noise_scale > 0 else -np.inf
        return np.concatenate(([np.log(self.signal_amplitude), noise], np.log(self.lengths)))

    def with_log_params(self, theta) -> "KernelHyperparameters":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ConfigurationError(f"expected {self.n_params} log parameters")
        return KernelHyperparameters(
            signal_amplitude=float(np.exp(theta[0])),
            noise_scale=float(np.exp(theta[1])) if np.isfinite(theta[1]) else 0.0,
            length_scales=tuple(np.exp(theta[2:])),
            kernel_kind=self.kernel_kind,
            state_dim=self.state_dim,
            action_dim=self.action_dim,
        )

    def replace(self, **changes) -> "KernelHyperparameters":
        fields = dict(
            signal_amplitude=self.signal_amplitude,
            noise_scale=self.noise_scale,
            length_scales=self.length_scales,
            kernel_kind=self.kernel_kind,
            state_dim=self.state_dim,
            action_dim=self.action_dim,
        )
        fields.update(changes)
        return KernelHyperparameters(**fields)

    def to_dict(self) -> dict:
        return {
            "kind": self.kernel_kind.value,
            "signal_amplitude": self.signal_amplitude,
            "noise_scale": self.noise_scale,
            "length_scales": list(self.length_scales),
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelHyperparameters":
        try:
            return cls(
                signal_amplitude=d["signal_amplitude"],
                noise_scale=d.get("noise_scale", 0.0),
                length_scales=tuple(d["length_scales"]),
                kernel_kind=KernelKind(d.get("kind", "se")),
                state_dim=int(d.get("state_dim", 0)),
                action_dim=int(d.get("action_dim", 0)),
            )
        except KeyError as exc:
            raise ConfigurationError(f"kernel block is missing {exc}") from None


@dataclass(frozen=True, eq=False)
class AugmentedState:
    """A state vector paired with a resolved action vector."""

    state_vec: np.ndarray
    action_vec: np.ndarray
    joint: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        s = np.asarray(self.state_vec, dtype=float).ravel()
        a = np.asarray(self.action_vec, dtype=float).ravel()
        object.__setattr__(self, "state_vec", s)
        object.__setattr__(self, "action_vec", a)
        object.__setattr__(self, "joint", np.concatenate((s, a)))

    @classmethod
    def from_joint(cls, joint, state_dim: int) -> "AugmentedState":
        joint = np.asarray(joint, dtype=float)
        return cls(joint[:state_dim], joint[state_dim:])

    def __eq__(self, other):
        if not isinstance(other, AugmentedState):
            return NotImplemented
        return (
            self.state_vec.shape == other.state_vec.shape
            and np.array_equal(self.joint, other.joint)
        )

    __hash__ = None


PointLike = Union[AugmentedState, Sequence[float], np.ndarray]


def as_joint(x: PointLike) -> np.ndarray:
    if isinstance(x, AugmentedState):
        return x.joint
    return np.asarray(x, dtype=float).ravel()


def stack_joint(X) -> np.ndarray:
    """Stack a sequence of points (or an ``(n, d)`` array) into an ``(n, d)`` array."""
    if isinstance(X, np.ndarray):
        return np.atleast_2d(np.asarray(X, dtype=float))
    rows = [as_joint(x) for x in X]
    if not rows:
        return np.empty((0, 0))
    return np.vstack(rows)


def _check_dim(arr: np.ndarray, h: KernelHyperparameters):
    if arr.shape[-1] != h.dim:
        raise ConfigurationError(
            f"point dimension {arr.shape[-1]} does not match kernel dimension {h.dim}"
        )


def _scaled_sqdist(A: np.ndarray, B: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    diff = (A[:, None, :] - B[None, :, :]) / lengths
    return np.einsum("ijk,ijk->ij", diff, diff)


def _noise_free(A: np.ndarray, B: np.ndarray, h: KernelHyperparameters) -> np.ndarray:
    ls = h.lengths
    if h.kernel_kind is KernelKind.PRODUCT:
        m = h.state_dim
        ks = np.exp(-0.5 * _scaled_sqdist(A[:, :m], B[:, :m], ls[:m]))
        ka = np.exp(-0.5 * _scaled_sqdist(A[:, m:], B[:, m:], ls[m:]))
        return h.signal_amplitude * ks * ka
    return h.signal_amplitude * np.exp(-0.5 * _scaled_sqdist(A, B, ls))


def cross_kernel(A, B, h: KernelHyperparameters) -> np.ndarray:
    """Noise-free covariance block ``k(A_i, B_j)``."""
    A = stack_joint(A)
    B = stack_joint(B)
    _check_dim(A, h)
    _check_dim(B, h)
    return _noise_free(A, B, h)


def correlation_matrix(A, B, h: KernelHyperparameters) -> np.ndarray:
    """Normalised correlation ``k(a,b) / sqrt(k(a,a) k(b,b))`` for every pair."""
    A = stack_joint(A)
    B = stack_joint(B)
    _check_dim(A, h)
    _check_dim(B, h)
    # both kernel forms are stationary with k(x, x) = theta0
    return _noise_free(A, B, h) / h.signal_amplitude


def paired_correlation(A, B, h: KernelHyperparameters) -> np.ndarray:
    """Row-wise correlation ``rho(A_i, B_i)`` for two equally long point lists."""
    A = stack_joint(A)
    B = stack_joint(B)
    _check_dim(A, h)
    _check_dim(B, h)
    if A.shape != B.shape:
        raise ConfigurationError("paired_correlation needs point lists of equal shape")
    r = (A - B) / h.lengths
    # both kernel forms reduce to the same exponent once normalised
    return np.exp(-0.5 * np.einsum("ij,ij->i", r, r))


def kernel_value(x: PointLike, x2: PointLike, h: KernelHyperparameters,
                 include_noise: bool = False) -> float:
    a = as_joint(x)[None, :]
    b = as_joint(x2)[None, :]
    _check_dim(a, h)
    _check_dim(b, h)
    k = float(_noise_free(a, b, h)[0, 0])
    if include_noise:
        k += h.noise_scale
    return k


def correlation(x: PointLike, x2: PointLike, h: KernelHyperparameters) -> float:
    return float(correlation_matrix(as_joint(x)[None, :], as_joint(x2)[None, :], h)[0, 0])


def gram_matrix(X, h: KernelHyperparameters) -> np.ndarray:
    """``K(X, X)`` with the noise variance added on the diagonal only."""
    X = stack_joint(X)
    if X.shape[0] == 0:
        raise PreconditionError("gram_matrix needs at least one point")
    _check_dim(X, h)
    K = _noise_free(X, X, h)
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] += h.noise_scale
    return K


def gram_gradients(X, h: KernelHyperparameters) -> np.ndarray:
    """``dK/dlog(theta_i)`` for all hyperparameters, shape ``(n_params, n, n)``."""
    X = stack_joint(X)
    _check_dim(X, h)
    n = X.shape[0]
    Kf = _noise_free(X, X, h)
    out = np.empty((h.n_params, n, n))
    out[0] = Kf
    out[1] = h.noise_scale * np.eye(n)
    ls = h.lengths
    for d in range(h.dim):
        diff = (X[:, None, d] - X[None, :, d]) / ls[d]
        out[2 + d] = Kf * diff * diff
    return out


def kernel_param_gradient(x: PointLike, x2: PointLike, h: KernelHyperparameters,
                          param_index: int, include_noise: bool = False) -> float:
    """Derivative of :func:`kernel_value` with respect to one log hyperparameter."""
    if not 0 <= param_index < h.n_params:
        raise ConfigurationError(
            f"param_index {param_index} out of range for {h.n_params} hyperparameters"
        )
    a = as_joint(x)
    b = as_joint(x2)
    _check_dim(a[None, :], h)
    _check_dim(b[None, :], h)
    if param_index == 1:
        return h.noise_scale if include_noise else 0.0
    kf = float(_noise_free(a[None, :], b[None, :], h)[0, 0])
    if param_index == 0:
        return kf
    d = param_index - 2
    r = (a[d] - b[d]) / h.length_scales[d]
    return kf * r * r
