"""Small classifiers with exact analytic gradients and test oracles.

Two architectures cover the convex and nonconvex regimes: a linear softmax
(convex cross-entropy) and a one-hidden-layer tanh MLP. Parameters travel as
one flat float64 vector in row-major layer order (first-layer weights,
first-layer bias, then second-layer weights and bias for the MLP).

Batches are reduced in ascending sample-index order before any summation so
loss and gradient are bit-identical under permutations of the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class Sample:
    """One labeled example; idx is a dataset-unique id fixing summation order."""

    features: np.ndarray
    label: int
    idx: int = -1


class Arch(Protocol):
    n_params: int

    def batch_loss(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float: ...

    def batch_gradient(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray: ...


def _stable_log_softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    return Z - np.log(np.sum(np.exp(Z), axis=1, keepdims=True))


@dataclass(frozen=True)
class LinearSoftmax:
    """Softmax regression: logits = W x + b, cross-entropy loss."""

    d: int
    C: int

    @property
    def n_params(self) -> int:
        return self.C * self.d + self.C

    def unpack(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        W = theta[: self.C * self.d].reshape(self.C, self.d)
        b = theta[self.C * self.d :]
        return W, b

    def batch_loss(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        W, b = self.unpack(theta)
        logp = _stable_log_softmax(X @ W.T + b)
        return float(-np.mean(logp[np.arange(len(y)), y]))

    def batch_gradient(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        W, b = self.unpack(theta)
        P = np.exp(_stable_log_softmax(X @ W.T + b))
        P[np.arange(len(y)), y] -= 1.0
        P /= len(y)
        return np.concatenate([(P.T @ X).ravel(), P.sum(axis=0)])


@dataclass(frozen=True)
class MLP1:
    """One tanh hidden layer of width h, softmax cross-entropy output."""

    d: int
    h: int
    C: int

    @property
    def n_params(self) -> int:
        return self.h * self.d + self.h + self.C * self.h + self.C

    def unpack(self, theta: np.ndarray):
        o = 0
        W1 = theta[o : o + self.h * self.d].reshape(self.h, self.d)
        o += self.h * self.d
        b1 = theta[o : o + self.h]
        o += self.h
        W2 = theta[o : o + self.C * self.h].reshape(self.C, self.h)
        o += self.C * self.h
        b2 = theta[o : o + self.C]
        return W1, b1, W2, b2

    def batch_loss(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        W1, b1, W2, b2 = self.unpack(theta)
        H = np.tanh(X @ W1.T + b1)
        logp = _stable_log_softmax(H @ W2.T + b2)
        return float(-np.mean(logp[np.arange(len(y)), y]))

    def batch_gradient(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        W1, b1, W2, b2 = self.unpack(theta)
        A = X @ W1.T + b1
        H = np.tanh(A)
        P = np.exp(_stable_log_softmax(H @ W2.T + b2))
        P[np.arange(len(y)), y] -= 1.0
        P /= len(y)
        dH = (P @ W2) * (1.0 - H**2)
        return np.concatenate(
            [(dH.T @ X).ravel(), dH.sum(axis=0), (P.T @ H).ravel(), P.sum(axis=0)]
        )


@dataclass(frozen=True)
class ModelParams:
    """A flat parameter vector bound to its architecture."""

    arch: Arch
    theta: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.theta, dtype=np.float64)
        if t.ndim != 1 or t.size != self.arch.n_params:
            raise DimensionError(
                f"theta has length {t.size}, arch expects {self.arch.n_params}"
            )
        if not np.all(np.isfinite(t)):
            raise DimensionError("theta entries must be finite")
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "theta", t)


def init_params(arch: Arch, rng: np.random.Generator | None = None) -> ModelParams:
    """Zero init for the linear model; symmetric uniform +-1/sqrt(d) for the MLP."""
    if isinstance(arch, MLP1):
        if rng is None:
            rng = np.random.default_rng(0)
        scale = 1.0 / np.sqrt(arch.d)
        return ModelParams(arch, rng.uniform(-scale, scale, arch.n_params))
    return ModelParams(arch, np.zeros(arch.n_params))


def as_arrays(batch: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack a batch into (X, y) in ascending sample-index order (stable)."""
    ordered = sorted(batch, key=lambda s: s.idx)
    X = np.asarray([s.features for s in ordered], dtype=np.float64)
    y = np.asarray([s.label for s in ordered], dtype=np.int64)
    return X, y


def _check_batch(m: ModelParams, X: np.ndarray) -> None:
    if X.size == 0:
        raise DimensionError("batch must be nonempty")
    d = getattr(m.arch, "d", None)
    if d is not None and X.shape[1] != d:
        raise DimensionError(f"feature dimension {X.shape[1]} does not match arch d={d}")


def batch_loss(m: ModelParams, batch: Sequence[Sample]) -> float:
    X, y = as_arrays(batch)
    _check_batch(m, X)
    return m.arch.batch_loss(m.theta, X, y)


def batch_gradient(m: ModelParams, batch: Sequence[Sample]) -> np.ndarray:
    X, y = as_arrays(batch)
    _check_batch(m, X)
    return m.arch.batch_gradient(m.theta, X, y)


def fd_gradient(m: ModelParams, batch: Sequence[Sample], h: float | np.ndarray) -> np.ndarray:
    """Central-difference gradient oracle; h may be scalar or per-coordinate."""
    X, y = as_arrays(batch)
    _check_batch(m, X)
    n = m.arch.n_params
    steps = np.broadcast_to(np.asarray(h, dtype=np.float64), (n,))
    if np.any(steps <= 0):
        raise DimensionError("fd_gradient requires h > 0")
    theta = m.theta.copy()
    g = np.empty(n)
    for j in range(n):
        hj = steps[j]
        theta[j] += hj
        up = m.arch.batch_loss(theta, X, y)
        theta[j] -= 2.0 * hj
        dn = m.arch.batch_loss(theta, X, y)
        theta[j] = m.theta[j]
        g[j] = (up - dn) / (2.0 * hj)
    return g


def estimate_smoothness(
    dataset: Sequence[Sample],
    arch: Arch,
    trials: int,
    radius: float,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Empirical lower bounds (L_hat, L0_hat) on smoothness and gradient norm.

    L_hat maxes the gradient-difference ratio over random parameter pairs at
    distance <= radius; L0_hat maxes the gradient norm over the sampled
    points. Both only instantiate theorem bounds, never certify them.
    """
    if trials < 1:
        raise DimensionError("trials must be >= 1")
    X, y = as_arrays(dataset)
    n = arch.n_params
    l_hat = 0.0
    l0_hat = 0.0
    for _ in range(trials):
        base = radius * rng.standard_normal(n)
        step = rng.standard_normal(n)
        step *= radius * rng.uniform(0.05, 1.0) / max(np.linalg.norm(step), 1e-300)
        g0 = arch.batch_gradient(base, X, y)
        g1 = arch.batch_gradient(base + step, X, y)
        dist = float(np.linalg.norm(step))
        if dist > 0:
            l_hat = max(l_hat, float(np.linalg.norm(g1 - g0)) / dist)
        l0_hat = max(l0_hat, float(np.linalg.norm(g0)), float(np.linalg.norm(g1)))
    return l_hat, l0_hat
