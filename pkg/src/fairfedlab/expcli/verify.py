"""Self-contained invariant suites behind the `verify` CLI command.

Each suite re-derives its expectations independently (finite differences,
brute-force scans, exhaustive grids) and returns (ok, detail). Sizes are
trimmed for a fast smoke pass; the pytest acceptance suite runs the full
budgets.
"""

from __future__ import annotations

import math
import zlib

import numpy as np

from .. import bargain, datagen, fedsim, metrics, scalarize
from ..model import LinearSoftmax, MLP1, ModelParams, Sample, batch_gradient, fd_gradient, init_params
from ..scalarize import LossVector


def _random_spec(kind: str, rng) -> scalarize.ScalarizerSpec:
    if kind == "fedavg":
        return scalarize.fedavg()
    if kind == "qffl":
        return scalarize.qffl(rng.uniform(0.05, 3.0))
    if kind == "term":
        return scalarize.term(rng.uniform(0.1, 2.0))
    return scalarize.propfair(rng.uniform(2.0, 6.0), rng.uniform(0.05, 0.4))


def _random_lv(spec, rng, n=None) -> LossVector:
    n = n or int(rng.integers(2, 9))
    f = rng.uniform(0.01, 1.5, n)
    p = rng.dirichlet(np.ones(n))
    if spec.kind == scalarize.PROPFAIR:
        f = np.minimum(f, spec.baseline_M - spec.epsilon - 0.05)
    return LossVector(f, p)


def check_duality(rng) -> tuple[bool, str]:
    worst_gap = worst_res = 0.0
    for kind in ("fedavg", "qffl", "term", "propfair"):
        for _ in range(200):
            spec = _random_spec(kind, rng)
            lv = _random_lv(spec, rng)
            lam = scalarize.dual_weights(spec, lv)
            worst_gap = max(worst_gap, scalarize.duality_gap(spec, lv))
            worst_res = max(worst_res, scalarize.dual_constraint_residual(spec, lam, lv.weights))
    ok = worst_gap <= 1e-8 and worst_res <= 1e-9
    return ok, f"max gap {worst_gap:.2e}, max constraint residual {worst_res:.2e}"


def check_huber_continuity(rng) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(300):
        M = rng.uniform(0.5, 10.0)
        eps = rng.uniform(0.01, 0.9) * M
        t = M - eps
        lo = math.nextafter(t, -math.inf)
        hi = math.nextafter(t, math.inf)
        dv = abs(scalarize.huberized_log(M, eps, lo) - scalarize.huberized_log(M, eps, hi))
        dg = abs(scalarize.huberized_log_grad(M, eps, lo) - scalarize.huberized_log_grad(M, eps, hi))
        worst = max(worst, dv, dg * eps)  # slope scaled to a comparable unit
    return worst <= 1e-9, f"max branch mismatch {worst:.2e}"


def check_slope_consistency(rng) -> tuple[bool, str]:
    worst = 0.0
    for kind in ("fedavg", "qffl", "term", "propfair"):
        for _ in range(200):
            spec = _random_spec(kind, rng)
            loss = rng.uniform(0.05, 2.0)
            if spec.kind == scalarize.PROPFAIR:
                loss = min(loss, spec.baseline_M - 1.5 * spec.epsilon)
            h = 1e-6 * (1.0 + loss)
            _, slope = scalarize.surrogate(spec, loss)
            fd = (
                scalarize.surrogate(spec, loss + h)[0]
                - scalarize.surrogate(spec, loss - h)[0]
            ) / (2 * h)
            worst = max(worst, abs(fd - slope) / max(abs(slope), 1e-12))
    return worst < 1e-5, f"max relative slope error {worst:.2e}"


def check_qffl_degeneracy(rng) -> tuple[bool, str]:
    q0 = scalarize.qffl(0.0)
    fa = scalarize.fedavg()
    worst = 0.0
    for _ in range(100):
        lv = _random_lv(fa, rng)
        worst = max(
            worst,
            abs(scalarize.generalized_mean(q0, lv) - scalarize.generalized_mean(fa, lv)),
            float(np.max(np.abs(scalarize.dual_weights(q0, lv) - scalarize.dual_weights(fa, lv)))),
        )
        loss = rng.uniform(0, 2)
        v0, s0 = scalarize.surrogate(q0, loss)
        v1, s1 = scalarize.surrogate(fa, loss)
        worst = max(worst, abs(v0 - v1), abs(s0 - s1))
    return worst <= 1e-12, f"max q=0 deviation {worst:.2e}"


def check_fd_gradient(rng) -> tuple[bool, str]:
    worst = 0.0
    for arch in (LinearSoftmax(4, 3), MLP1(4, 5, 3)):
        for _ in range(20):
            theta = rng.standard_normal(arch.n_params) * 0.5
            batch = [
                Sample(rng.standard_normal(4), int(rng.integers(0, 3)), i) for i in range(6)
            ]
            m = ModelParams(arch, theta)
            g = batch_gradient(m, batch)
            h = 1e-6 * (1.0 + np.abs(theta))
            fd = fd_gradient(m, batch, h)
            worst = max(worst, float(np.max(np.abs(g - fd))) / max(np.max(np.abs(g)), 1e-8))
    return worst < 1e-5, f"max relative gradient error {worst:.2e}"


def _convex_set_with_nbs(rng, n: int):
    """Random axis-scaled concave frontier with the analytic maximizer included."""
    p = rng.dirichlet(np.ones(n) + 1.0)
    a = rng.uniform(0.5, 2.0, n)  # frontier: sum (u_i/a_i)^2 = 1, u > 0
    # KKT for max sum p_i log u_i: (u_i/a_i)^2 = p_i at the maximizer.
    u_star = a * np.sqrt(p)
    points = [u_star]
    for _ in range(400):
        direction = rng.uniform(0.05, 1.0, n)
        direction /= math.sqrt(float(np.sum((direction / a) ** 2)))
        r = rng.uniform(0.3, 1.0) ** 0.5
        points.append(np.maximum(direction * r, 1e-4))
    points.append(np.maximum(u_star * 0.97, 1e-4))
    return np.array(points), p, u_star


def check_nbs_pf_equivalence(rng) -> tuple[bool, str]:
    for trial in range(8):
        n = 2 if trial % 2 == 0 else 3
        pts, p, u_star = _convex_set_with_nbs(rng, n)
        arg, _ = bargain.nbs_grid(pts, p)
        if not np.array_equal(arg, pts[0]):
            return False, f"grid argmax missed the analytic maximizer at trial {trial}"
        prof = bargain.UtilityProfile(arg, p)
        res = bargain.certify_pf(prof, pts, tol=1e-9)
        if not res.certified:
            return False, f"analytic maximizer failed certification ({res.worst_score:.2e})"
        other = bargain.UtilityProfile(pts[-1], p)
        res_bad = bargain.certify_pf(other, pts, tol=1e-9)
        if res_bad.certified:
            return False, "a non-maximizing point was certified"
    return True, "argmax certified uniquely on all sampled sets"


def check_simplex_projection(rng) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(100):
        v = rng.standard_normal(int(rng.integers(2, 7))) * 2.0
        w = fedsim.simplex_project(v)
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
            return False, "projection left the simplex"
        # brute force over a fine grid of the active set threshold
        taus = np.linspace(v.min() - 1.5, v.max(), 20001)
        sums = np.maximum(v[None, :] - taus[:, None], 0.0).sum(axis=1)
        tau = taus[int(np.argmin(np.abs(sums - 1.0)))]
        ref = np.maximum(v - tau, 0.0)
        ref = ref / ref.sum()
        worst = max(worst, float(np.max(np.abs(w - ref))))
    return worst < 1e-3, f"max deviation from brute-force projection {worst:.2e}"


def check_partition_completeness(rng) -> tuple[bool, str]:
    samples = datagen.gaussian_mixture_data(40, 4, 4, 1.0, rng)
    fd = datagen.dirichlet_partition(samples, 4, 0.5, 5, 100, np.random.default_rng(7))
    got = sorted(s.idx for c in fd.clients for s in c.train)
    want = sorted(s.idx for s in samples)
    if got != want:
        return False, "client union does not match the input multiset"
    fd2 = datagen.dirichlet_partition(samples, 4, 0.5, 5, 100, np.random.default_rng(7))
    same = all(
        [s.idx for s in a.train] == [s.idx for s in b.train]
        for a, b in zip(fd.clients, fd2.clients)
    )
    return same, "multiset preserved and partition deterministic" if same else "redraw differed"


def check_descent_under_bound(rng) -> tuple[bool, str]:
    from ..model import estimate_smoothness

    samples = datagen.gaussian_mixture_data(30, 3, 4, 1.5, np.random.default_rng(3))
    clients = [datagen.ClientDataset(list(samples), list(samples[:6])) for _ in range(3)]
    fd = datagen.FederatedDataset(clients)
    arch = LinearSoftmax(4, 3)
    L_hat, _ = estimate_smoothness(samples, arch, 10, 1.0, np.random.default_rng(5))
    eta = 0.5 * fedsim.lr_bound_fedavg(L_hat, fd.client_weights(), np.ones(3))
    config = fedsim.TrainConfig(
        algorithm=scalarize.fedavg(), rounds_T=40, lr_eta=eta,
        batch_size_m=len(samples), seed=11,
    )
    hist = fedsim.run_training(fd, config, arch=arch)
    obj = [float(np.dot(fd.client_weights(), r.train_losses)) for r in hist.records]
    diffs = np.diff(obj)
    ok = bool(np.all(diffs <= 1e-12))
    return ok, f"max objective increase {float(diffs.max()):.2e}" if len(diffs) else "n/a"


def check_aggregation_order(rng) -> tuple[bool, str]:
    arch = LinearSoftmax(3, 2)
    models = [ModelParams(arch, rng.standard_normal(arch.n_params)) for _ in range(4)]
    n_i = [3, 7, 11, 29]
    ids = [0, 1, 2, 3]
    ref = fedsim.aggregate(models, n_i, ids)
    perm = [2, 0, 3, 1]
    out = fedsim.aggregate([models[i] for i in perm], [n_i[i] for i in perm], [ids[i] for i in perm])
    ok = np.array_equal(ref.theta, out.theta)
    return ok, "permutation-invariant reduction" if ok else "aggregation depends on input order"


def check_jensen_gap(rng) -> tuple[bool, str]:
    for _ in range(2000):
        n = int(rng.integers(2, 6))
        u = rng.uniform(0.05, 5.0, n)
        p = rng.dirichlet(np.ones(n))
        gap = bargain.jensen_gap(bargain.UtilityProfile(u, p))
        if gap < 0:
            return False, "negative gap"
        if np.ptp(u) < 1e-13 and gap > 1e-12:
            return False, "nonzero gap at a constant vector"
    const = bargain.jensen_gap(bargain.UtilityProfile(np.full(4, 2.5), np.full(4, 0.25)))
    return const <= 1e-12, f"gap at constant vector {const:.2e}"


SUITES = {
    "duality": check_duality,
    "huber-continuity": check_huber_continuity,
    "slope-consistency": check_slope_consistency,
    "qffl-degeneracy": check_qffl_degeneracy,
    "fd-gradient": check_fd_gradient,
    "nbs-pf-equivalence": check_nbs_pf_equivalence,
    "simplex-projection": check_simplex_projection,
    "partition-completeness": check_partition_completeness,
    "descent-under-bound": check_descent_under_bound,
    "aggregation-order": check_aggregation_order,
    "jensen-gap": check_jensen_gap,
}


def run_verify(inject_fault: str | None = None) -> list[str]:
    """Run every suite; returns the names that failed (empty means clean)."""
    failures = []
    for name, fn in SUITES.items():
        rng = np.random.default_rng(zlib.crc32(name.encode()))
        ok, detail = fn(rng)
        if inject_fault == name:
            ok, detail = False, "fault injected for harness self-test"
        status = "ok" if ok else "FAIL"
        print(f"{status:4s} {name}: {detail}")
        if not ok:
            failures.append(name)
    return failures
