"""Fairness and performance statistics over per-client outcomes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import bargain, scalarize
from .errors import DomainError


@dataclass(frozen=True)
class ClientOutcome:
    client_id: int
    n_i: int
    test_accuracy: float
    test_loss: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.test_accuracy <= 1.0:
            raise DomainError("test_accuracy must lie in [0, 1]")


@dataclass(frozen=True)
class SummaryStats:
    mean_unweighted: float
    mean_weighted: float
    std: float
    worst: float
    best: float
    worst_k: float
    best_k: float


def summarize(outcomes: list[ClientOutcome], k_percent: float) -> SummaryStats:
    """Accuracy statistics across clients.

    The worst-k% (best-k%) mean averages, unweighted, the ceil(k n/100)
    lowest (highest) accuracy clients, breaking ties by ascending client id.
    std is the population standard deviation of the unweighted accuracies.
    """
    if not outcomes:
        raise DomainError("summarize requires at least one outcome")
    if not 0 < k_percent <= 100:
        raise DomainError("k_percent must lie in (0, 100]")
    outcomes = sorted(outcomes, key=lambda o: o.client_id)  # canonical float order
    acc = np.array([o.test_accuracy for o in outcomes])
    n_i = np.array([o.n_i for o in outcomes], dtype=np.float64)
    ids = np.array([o.client_id for o in outcomes])
    k = math.ceil(k_percent * len(outcomes) / 100.0)
    asc = np.lexsort((ids, acc))
    desc = np.lexsort((ids, -acc))
    return SummaryStats(
        mean_unweighted=float(acc.mean()),
        mean_weighted=float(np.dot(n_i, acc) / n_i.sum()),
        std=float(acc.std()),
        worst=float(acc.min()),
        best=float(acc.max()),
        worst_k=float(acc[asc[:k]].mean()),
        best_k=float(acc[desc[:k]].mean()),
    )


@dataclass(frozen=True)
class PfComparison:
    per_client: list[tuple[int, float]]
    weighted_aggregate: float
    clamp_count: int


def pf_compare(base: list[ClientOutcome], other: list[ClientOutcome]) -> PfComparison:
    """Relative accuracy change of `other` against the reference run `base`.

    Per client (u_i - u*_i)/u*_i plus the n_i/N-weighted sum; a negative
    aggregate means the reference is proportionally preferred. Reference
    accuracies below 1e-6 are clamped (counted) to stay in R++.
    """
    base_by_id = {o.client_id: o for o in base}
    other_by_id = {o.client_id: o for o in other}
    if base_by_id.keys() != other_by_id.keys():
        raise DomainError("pf_compare requires matching client-id sets")
    ids = sorted(base_by_id)
    u_star = np.array([base_by_id[i].test_accuracy for i in ids])
    u = np.array([other_by_id[i].test_accuracy for i in ids])
    n_i = np.array([base_by_id[i].n_i for i in ids], dtype=np.float64)
    p = n_i / n_i.sum()
    u_star, clamped = bargain.clamp_utilities(u_star)
    rel = (u - u_star) / u_star
    aggregate = bargain.pf_score(u, u_star, p)
    return PfComparison(
        per_client=[(i, float(r)) for i, r in zip(ids, rel)],
        weighted_aggregate=aggregate,
        clamp_count=clamped,
    )


def nash_report(
    outcomes: list[ClientOutcome],
    M: float,
    losses: np.ndarray | None = None,
) -> dict:
    """Nash products and the Jensen gap for one run's outcomes.

    The loss-side product uses M - f_i, with losses aligned to the outcomes
    argument; the accuracy-side product treats clamped accuracies as
    utilities. Reductions run in client-id order.
    """
    order = np.argsort([o.client_id for o in outcomes], kind="stable")
    outcomes = [outcomes[i] for i in order]
    if losses is not None:
        losses = np.asarray(losses, dtype=np.float64)[order]
    n_i = np.array([o.n_i for o in outcomes], dtype=np.float64)
    p = n_i / n_i.sum()
    acc, clamped = bargain.clamp_utilities(np.array([o.test_accuracy for o in outcomes]))
    profile = bargain.UtilityProfile(acc, p)
    report = {
        "nash_product_losses": None,
        "nash_product_acc": math.exp(float(np.dot(p, np.log(acc)))),
        "jensen_gap": bargain.jensen_gap(profile),
        "clamp_count": clamped,
    }
    if losses is not None:
        lv = scalarize.LossVector(losses, p)
        report["nash_product_losses"] = scalarize.nash_product(lv, M)
    return report
