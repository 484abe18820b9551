"""Scalar surrogate losses, generalized means, Nash products and dual weights.

Four scalarizer families are supported, each turning a vector of per-client
losses into one scalar objective:

======== =================== =========================================
kind     phi(t)              weighted dual solution
======== =================== =========================================
fedavg   t                   lambda_i = p_i
qffl     t^(q+1) / (q+1)     lambda_i ~ p_i t^q
term     exp(alpha t)        lambda_i ~ p_i exp(alpha t), sum = 1
propfair -log(M - t)         lambda_i ~ p_i / (M - t), weighted geo
                             mean of lambda_i/p_i equal to 1
======== =================== =========================================

All products and inverse means are evaluated in log space so extreme
``alpha``, ``q`` or ``M`` do not overflow. Every function here is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SingularError

FEDAVG = "fedavg"
QFFL = "qffl"
TERM = "term"
PROPFAIR = "propfair"

_KINDS = (FEDAVG, QFFL, TERM, PROPFAIR)

SIMPLEX_TOL = 1e-12
NEAR_SINGULAR = 1e-12
_CONSTRAINT_TOL = 1e-9


@dataclass(frozen=True)
class ScalarizerSpec:
    """Which surrogate transforms per-batch losses, plus its parameters.

    Only the parameters of the chosen kind are meaningful; the rest stay at
    their defaults. ``qffl`` with ``q == 0`` is exactly ``fedavg`` on every
    operation.
    """

    kind: str
    q: float = 0.0
    alpha: float = 0.0
    baseline_M: float = 0.0
    epsilon: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise DomainError(f"unknown scalarizer kind {self.kind!r}")
        if self.kind == QFFL and self.q < 0:
            raise DomainError("qffl requires q >= 0")
        if self.kind == TERM and self.alpha <= 0:
            raise DomainError("term requires alpha > 0")
        if self.kind == PROPFAIR:
            if self.baseline_M <= 0:
                raise DomainError("propfair requires baseline_M > 0")
            if not 0 < self.epsilon < self.baseline_M:
                raise DomainError("propfair requires 0 < epsilon < baseline_M")


def fedavg() -> ScalarizerSpec:
    return ScalarizerSpec(FEDAVG)


def qffl(q: float) -> ScalarizerSpec:
    return ScalarizerSpec(QFFL, q=float(q))


def term(alpha: float) -> ScalarizerSpec:
    return ScalarizerSpec(TERM, alpha=float(alpha))


def propfair(baseline_M: float, epsilon: float = 0.2) -> ScalarizerSpec:
    return ScalarizerSpec(PROPFAIR, baseline_M=float(baseline_M), epsilon=float(epsilon))


@dataclass(frozen=True)
class LossVector:
    """Nonnegative client losses f_i with simplex weights p_i."""

    losses: np.ndarray
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        f = np.asarray(self.losses, dtype=np.float64)
        if self.weights is None:
            p = np.full(f.shape, 1.0 / max(f.size, 1))
        else:
            p = np.asarray(self.weights, dtype=np.float64)
        if f.ndim != 1 or p.ndim != 1 or f.size != p.size or f.size == 0:
            raise DomainError("losses and weights must be equal-length 1-d vectors")
        if not np.all(np.isfinite(f)) or np.any(f < 0):
            raise DomainError("losses must be finite and nonnegative")
        if np.any(p < 0) or abs(float(p.sum()) - 1.0) > SIMPLEX_TOL:
            raise DomainError("weights must be nonnegative and sum to 1 within 1e-12")
        f = f.copy()
        p = p.copy()
        f.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "losses", f)
        object.__setattr__(self, "weights", p)

    @property
    def n(self) -> int:
        return int(self.losses.size)


def huberized_log(M: float, eps: float, t: float) -> float:
    """C^1 extension of log(M - t) from [0, M - eps] to all of t >= 0.

    Past the branch point t = M - eps the logarithm is replaced by its
    tangent line, so value and first derivative are continuous there.
    """
    _check_huber_args(M, eps, t)
    if t <= M - eps:
        return math.log(M - t)
    return math.log(eps) - (t - M + eps) / eps


def huberized_log_grad(M: float, eps: float, t: float) -> float:
    """d/dt of :func:`huberized_log`: -1/(M-t) on the log branch, -1/eps after."""
    _check_huber_args(M, eps, t)
    if t <= M - eps:
        return -1.0 / (M - t)
    return -1.0 / eps


def _check_huber_args(M: float, eps: float, t: float) -> None:
    if eps <= 0 or eps >= M:
        raise DomainError("huberized_log requires 0 < eps < M")
    if t < 0:
        raise DomainError("huberized_log requires t >= 0")


def surrogate(spec: ScalarizerSpec, loss: float) -> tuple[float, float]:
    """Value and slope of phi at one batch loss.

    The slope is d(phi)/d(loss), so the chain rule gives the surrogate
    gradient as ``slope * grad(loss)``. For propfair the value is
    ``-huberized_log`` and the slope switches to 1/eps on the linear branch.
    """
    if loss < 0:
        raise DomainError("surrogate requires loss >= 0")
    loss = float(loss)
    if spec.kind == FEDAVG or (spec.kind == QFFL and spec.q == 0.0):
        return loss, 1.0
    if spec.kind == QFFL:
        qv = spec.q
        return loss ** (qv + 1.0) / (qv + 1.0), loss**qv
    if spec.kind == TERM:
        v = math.exp(spec.alpha * loss)
        return v, spec.alpha * v
    M, eps = spec.baseline_M, spec.epsilon
    return -huberized_log(M, eps, loss), -huberized_log_grad(M, eps, loss)


def _logsumexp(logs: np.ndarray) -> float:
    m = float(np.max(logs))
    if m == -math.inf:
        return -math.inf
    return m + math.log(float(np.sum(np.exp(logs - m))))


def generalized_mean(spec: ScalarizerSpec, lv: LossVector) -> float:
    """phi^{-1} of the weighted mean of phi(f_i).

    For propfair this equals M - prod_i (M - f_i)^{p_i}; inputs past the
    huberized branch point are rejected because phi^{-1} is undefined there.
    """
    f, p = lv.losses, lv.weights
    if spec.kind == FEDAVG or (spec.kind == QFFL and spec.q == 0.0):
        return float(np.dot(p, f))
    if spec.kind == QFFL:
        qv = spec.q
        mask = (p > 0) & (f > 0)
        if not mask.any():
            return 0.0
        logs = np.log(p[mask]) + (qv + 1.0) * np.log(f[mask])
        return math.exp(_logsumexp(logs) / (qv + 1.0))
    if spec.kind == TERM:
        mask = p > 0
        logs = np.log(p[mask]) + spec.alpha * f[mask]
        return _logsumexp(logs) / spec.alpha
    M, eps = spec.baseline_M, spec.epsilon
    if np.any(f > M - eps):
        raise DomainError("propfair generalized mean is undefined on the linear branch")
    mask = p > 0
    return M - math.exp(float(np.dot(p[mask], np.log(M - f[mask]))))


def nash_product(lv: LossVector, M: float) -> float:
    """Weighted Nash product prod_i (M - f_i)^{p_i}, evaluated in log space."""
    if M <= 0:
        raise DomainError("nash_product requires M > 0")
    f, p = lv.losses, lv.weights
    if np.any(f >= M):
        raise DomainError("nash_product requires every loss < M")
    mask = p > 0
    return math.exp(float(np.dot(p[mask], np.log(M - f[mask]))))


def dual_weights(spec: ScalarizerSpec, lv: LossVector) -> np.ndarray:
    """Closed-form maximizer lambda of the conjugate inner problem.

    fedavg: lambda = p. qffl: lambda_i ~ p_i f_i^q on the constraint
    sum p_i^{-1/q} lambda_i^{(q+1)/q} = 1 (zero losses get weight 0, all-zero
    losses fall back to p). term: softmax weights summing to 1. propfair:
    lambda_i = G p_i / (M - f_i) with G the Nash product, which pins the
    weighted geometric mean of lambda_i/p_i at 1.
    """
    f, p = lv.losses, lv.weights
    if spec.kind == FEDAVG or (spec.kind == QFFL and spec.q == 0.0):
        return p.copy()
    if spec.kind == QFFL:
        qv = spec.q
        lam = np.zeros_like(p)
        mask = (p > 0) & (f > 0)
        if not mask.any():
            return p.copy()
        logs = np.log(p[mask]) + (qv + 1.0) * np.log(f[mask])
        log_s = _logsumexp(logs)
        lam[mask] = np.exp(np.log(p[mask]) + qv * np.log(f[mask]) - qv / (qv + 1.0) * log_s)
        return lam
    if spec.kind == TERM:
        z = spec.alpha * f
        z = z - z.max()
        w = p * np.exp(z)
        return w / w.sum()
    M = spec.baseline_M
    gap = M - f
    if np.any(gap <= 0):
        raise DomainError("propfair dual weights require every loss < M")
    if np.any(gap < NEAR_SINGULAR):
        raise SingularError("M - f underflowed below 1e-12; baseline M is too small")
    mask = p > 0
    log_g = float(np.dot(p[mask], np.log(gap[mask])))
    lam = np.zeros_like(p)
    lam[mask] = np.exp(log_g + np.log(p[mask]) - np.log(gap[mask]))
    return lam


def conjugate(spec: ScalarizerSpec, lam: np.ndarray, weights: np.ndarray) -> float:
    """Convex conjugate A*_phi evaluated at lambda (inf off the constraint set)."""
    lam = np.asarray(lam, dtype=np.float64)
    p = np.asarray(weights, dtype=np.float64)
    if np.any(lam < 0):
        return math.inf
    if spec.kind == FEDAVG or (spec.kind == QFFL and spec.q == 0.0):
        return 0.0 if np.max(np.abs(lam - p)) <= _CONSTRAINT_TOL else math.inf
    if spec.kind == QFFL:
        res = _qffl_constraint(spec.q, lam, p)
        return 0.0 if res <= 1.0 + _CONSTRAINT_TOL else math.inf
    if spec.kind == TERM:
        if abs(float(lam.sum()) - 1.0) > _CONSTRAINT_TOL:
            return math.inf
        mask = lam > 0
        if np.any(mask & (p <= 0)):
            return math.inf
        return float(np.sum(lam[mask] / spec.alpha * np.log(lam[mask] / p[mask])))
    geo = _propfair_geomean(lam, p)
    if geo < 1.0 - _CONSTRAINT_TOL:
        return math.inf
    return spec.baseline_M * (float(lam.sum()) - 1.0)


def duality_gap(spec: ScalarizerSpec, lv: LossVector) -> float:
    """|lambda^T f - A*_phi(lambda) - A_phi(f)| at the analytic maximizer.

    Strong duality holds on the valid domain, so this is a pure roundoff
    check: it stays below 1e-8 for any admissible loss vector.
    """
    lam = dual_weights(spec, lv)
    primal = generalized_mean(spec, lv)
    value = float(np.dot(lam, lv.losses)) - conjugate(spec, lam, lv.weights)
    return abs(value - primal)


def dual_constraint_residual(spec: ScalarizerSpec, lam: np.ndarray, weights: np.ndarray) -> float:
    """Residual of the lambda constraint for the given kind (0 when satisfied)."""
    lam = np.asarray(lam, dtype=np.float64)
    p = np.asarray(weights, dtype=np.float64)
    if np.any(lam < -_CONSTRAINT_TOL):
        return float(np.max(-lam))
    if spec.kind == FEDAVG or (spec.kind == QFFL and spec.q == 0.0):
        return float(np.max(np.abs(lam - p)))
    if spec.kind == QFFL:
        if not np.any(lam > 0):
            return 0.0
        return abs(_qffl_constraint(spec.q, lam, p) - 1.0)
    if spec.kind == TERM:
        return abs(float(lam.sum()) - 1.0)
    return abs(_propfair_geomean(lam, p) - 1.0)


def _qffl_constraint(q: float, lam: np.ndarray, p: np.ndarray) -> float:
    mask = lam > 0
    if np.any(mask & (p <= 0)):
        return math.inf
    if not mask.any():
        return 0.0
    logs = -np.log(p[mask]) / q + (q + 1.0) / q * np.log(lam[mask])
    return math.exp(_logsumexp(logs))


def _propfair_geomean(lam: np.ndarray, p: np.ndarray) -> float:
    mask = p > 0
    if np.any(lam[mask] <= 0):
        return 0.0
    return math.exp(float(np.dot(p[mask], np.log(lam[mask] / p[mask]))))
