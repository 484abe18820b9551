"""Proportional-fairness certification and Nash-bargaining grid oracles.

Everything operates on finite sets of strictly positive utility vectors, so
exhaustive search is an unarguable ground truth: the grid maximizer of
``sum_i p_i log u_i`` is the bargaining solution of the discretized set, and
a candidate u* is proportionally preferred when no candidate improves the
weighted relative utility ``sum_i p_i (u_i - u*_i) / u*_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError

UTILITY_FLOOR = 1e-6


@dataclass(frozen=True)
class UtilityProfile:
    """Strictly positive utilities with simplex weights."""

    utilities: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        u = np.asarray(self.utilities, dtype=np.float64)
        p = np.asarray(self.weights, dtype=np.float64)
        if u.ndim != 1 or p.ndim != 1 or u.size != p.size or u.size == 0:
            raise DomainError("utilities and weights must be equal-length 1-d vectors")
        if np.any(u <= 0) or not np.all(np.isfinite(u)):
            raise DomainError("utilities must be finite and strictly positive")
        if np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-12:
            raise DomainError("weights must be nonnegative and sum to 1 within 1e-12")
        u = u.copy()
        p = p.copy()
        u.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "utilities", u)
        object.__setattr__(self, "weights", p)


@dataclass(frozen=True)
class CertifyResult:
    certified: bool
    worst_index: int | None
    worst_score: float


def pf_score(u, u_star, p) -> float:
    """Weighted total relative utility gain of u over u_star.

    Negative means u_star is proportionally preferred over u.
    """
    u = np.asarray(u, dtype=np.float64)
    us = np.asarray(u_star, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if u.shape != us.shape or u.shape != p.shape:
        raise DomainError("pf_score requires equal-length vectors")
    if np.any(us <= 0):
        raise DomainError("pf_score requires strictly positive reference utilities")
    return float(np.dot(p, (u - us) / us))


def certify_pf(
    u_star: UtilityProfile,
    candidates: Sequence[np.ndarray],
    tol: float,
) -> CertifyResult:
    """Check that no candidate beats u_star by more than tol in pf_score.

    An empty candidate list certifies vacuously with a -inf sentinel score.
    """
    if tol < 0:
        raise DomainError("tol must be nonnegative")
    if len(candidates) == 0:
        return CertifyResult(True, None, -math.inf)
    cand = np.asarray(candidates, dtype=np.float64)
    if cand.ndim != 2 or cand.shape[1] != u_star.utilities.size:
        raise DomainError("candidates must all share the reference length")
    scores = cand @ (u_star.weights / u_star.utilities) - 1.0
    worst = int(np.argmax(scores))
    worst_score = float(scores[worst])
    return CertifyResult(worst_score <= tol, worst, worst_score)


def nbs_grid(feasible_points: Sequence[np.ndarray], p) -> tuple[np.ndarray, float]:
    """Exhaustive maximizer of sum_i p_i log u_i over a finite point set.

    Ties break toward the lowest list index so the scan is deterministic.
    """
    if len(feasible_points) == 0:
        raise DomainError("nbs_grid requires a nonempty point list")
    pts = np.asarray(feasible_points, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != p.size:
        raise DomainError("points and weights have mismatched lengths")
    if np.any(pts <= 0):
        raise DomainError("nbs_grid requires strictly positive points")
    objective = np.log(pts) @ p
    best = int(np.argmax(objective))  # argmax returns the first maximizer
    return pts[best].copy(), float(objective[best])


def jensen_gap(u: UtilityProfile) -> float:
    """log of the weighted mean utility minus the weighted mean log utility.

    Always nonnegative; zero exactly when all utilities coincide.
    """
    mean = float(np.dot(u.weights, u.utilities))
    log_mean = float(np.dot(u.weights, np.log(u.utilities)))
    return max(math.log(mean) - log_mean, 0.0)


def grid_tolerance(h: float, u_star) -> float:
    """First-order certification slack for a grid of resolution h: 2h/min(u*)."""
    us = np.asarray(u_star, dtype=np.float64)
    if h < 0 or np.any(us <= 0):
        raise DomainError("grid_tolerance requires h >= 0 and positive utilities")
    return 2.0 * h / float(us.min())


def clamp_utilities(u, floor: float = UTILITY_FLOOR) -> tuple[np.ndarray, int]:
    """Lift entries below the floor into R++; returns the vector and clamp count."""
    u = np.asarray(u, dtype=np.float64).copy()
    clamped = int(np.sum(u < floor))
    np.maximum(u, floor, out=u)
    return u, clamped
