"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Criteria 10 and 11 are soft: a failure prints the per-seed record and marks
the test xfail (investigate, don't block) instead of failing the run.
"""

import json
import math
import os
import time

import numpy as np
import pytest

from fairfedlab import bargain, datagen, fedsim, metrics, scalarize
from fairfedlab.expcli import runner
from fairfedlab.fedsim import AflConfig, TrainConfig
from fairfedlab.model import (
    LinearSoftmax,
    MLP1,
    ModelParams,
    Sample,
    batch_gradient,
    batch_loss,
    estimate_smoothness,
    fd_gradient,
)

E_MINUS_2 = math.e - 2.0


def report(num, detail):
    print(f"[PASS] criterion {num:02d}: {detail}")


def soft_report(num, ok, detail):
    print(f"[{'PASS' if ok else 'SOFT-FAIL'}] criterion {num:02d}: {detail}")
    if not ok:
        pytest.xfail(f"soft criterion {num} failed; investigate: {detail}")


def random_spec(kind, rng):
    if kind == "fedavg":
        return scalarize.fedavg()
    if kind == "qffl":
        return scalarize.qffl(rng.uniform(0.05, 3.0))
    if kind == "term":
        return scalarize.term(rng.uniform(0.1, 2.0))
    return scalarize.propfair(rng.uniform(2.0, 6.0), rng.uniform(0.05, 0.4))


def test_c01_duality_suite():
    start = time.monotonic()
    rng = np.random.default_rng(1001)
    worst_gap = worst_res = 0.0
    for kind in ("fedavg", "qffl", "term", "propfair"):
        for _ in range(1000):
            spec = random_spec(kind, rng)
            n = int(rng.integers(2, 9))
            f = rng.uniform(0.01, 1.5, n)
            if spec.kind == scalarize.PROPFAIR:
                f = np.minimum(f, spec.baseline_M - spec.epsilon - 0.05)
            lv = scalarize.LossVector(f, rng.dirichlet(np.ones(n)))
            gap = scalarize.duality_gap(spec, lv)
            lam = scalarize.dual_weights(spec, lv)
            res = scalarize.dual_constraint_residual(spec, lam, lv.weights)
            assert np.all(lam >= 0)
            worst_gap, worst_res = max(worst_gap, gap), max(worst_res, res)
    elapsed = time.monotonic() - start
    assert worst_gap <= 1e-8
    assert worst_res <= 1e-9
    assert elapsed < 5.0
    report(1, f"4x1000 instances, max gap {worst_gap:.2e}, max residual {worst_res:.2e}, {elapsed:.2f}s")


def test_c02_huberized_continuity():
    start = time.monotonic()
    rng = np.random.default_rng(1002)
    worst = 0.0
    for _ in range(1000):
        M = rng.uniform(0.2, 50.0)
        eps = rng.uniform(0.01, 0.99) * M
        t = M - eps
        below, above = math.nextafter(t, -math.inf), math.nextafter(t, math.inf)
        dv = abs(scalarize.huberized_log(M, eps, below) - scalarize.huberized_log(M, eps, above))
        dg = abs(
            scalarize.huberized_log_grad(M, eps, below)
            - scalarize.huberized_log_grad(M, eps, above)
        ) * eps  # relative to the branch slope 1/eps
        worst = max(worst, dv, dg)
    elapsed = time.monotonic() - start
    assert worst <= 1e-9
    assert elapsed < 1.0
    report(2, f"1000 random (M, eps), max branch mismatch {worst:.2e}, {elapsed:.2f}s")


def test_c03_gradient_oracle():
    start = time.monotonic()
    rng = np.random.default_rng(1003)
    worst = 0.0
    for arch in (LinearSoftmax(4, 3), MLP1(4, 5, 3)):
        for _ in range(200):
            theta = 0.8 * rng.standard_normal(arch.n_params)
            batch = [
                Sample(rng.standard_normal(4), int(rng.integers(0, 3)), i) for i in range(6)
            ]
            m = ModelParams(arch, theta)
            g = batch_gradient(m, batch)
            fd = fd_gradient(m, batch, 1e-6 * (1.0 + np.abs(theta)))
            worst = max(
                worst, float(np.max(np.abs(g - fd))) / max(float(np.max(np.abs(g))), 1e-8)
            )
    assert worst < 1e-5

    # composed surrogate steps are exactly -eta_eff * slope * grad
    arch = LinearSoftmax(3, 2)
    client = datagen.ClientDataset(
        [Sample(rng.standard_normal(3), int(rng.integers(0, 2)), i) for i in range(8)]
    )
    theta = ModelParams(arch, 0.2 * rng.standard_normal(arch.n_params))
    for spec in (scalarize.propfair(5.0, 0.2), scalarize.qffl(1.0), scalarize.term(0.5)):
        out = fedsim.local_update(client, theta, spec, 0.1, 1, 8, np.random.default_rng(0))
        loss = batch_loss(theta, client.train)
        _, slope = scalarize.surrogate(spec, loss)
        expected = theta.theta - (0.1 * slope) * batch_gradient(theta, client.train)
        np.testing.assert_array_equal(out.theta, expected)
    elapsed = time.monotonic() - start
    assert elapsed < 30.0
    report(3, f"200 cases/arch, max rel fd error {worst:.2e}; composed steps exact, {elapsed:.1f}s")


def test_c04_nbs_pf_equivalence():
    start = time.monotonic()
    rng = np.random.default_rng(1004)
    for trial in range(50):
        n = 2 if trial % 2 == 0 else 3
        p = rng.dirichlet(np.ones(n) + 1.0)
        a = rng.uniform(0.5, 2.0, n)
        u_star = a * np.sqrt(p)  # KKT maximizer of sum p_i log u_i on the frontier
        pts = [u_star]
        for _ in range(1999):
            direction = rng.uniform(0.05, 1.0, n)
            direction /= math.sqrt(float(np.sum((direction / a) ** 2)))
            pts.append(np.maximum(direction * math.sqrt(rng.uniform(0.2, 0.999)), 1e-4))
        pts = np.array(pts)
        arg, _ = bargain.nbs_grid(pts, p)
        np.testing.assert_array_equal(arg, u_star)
        res = bargain.certify_pf(bargain.UtilityProfile(arg, p), pts, tol=1e-9)
        assert res.certified
        # exhaustive: every other point must fail certification
        scores = pts @ (p[None, :] / pts).T - 1.0
        worst = scores.max(axis=0)
        assert worst[0] <= 1e-9
        assert np.all(worst[1:] > 1e-9)
        for k in rng.integers(1, len(pts), 5):
            assert not bargain.certify_pf(
                bargain.UtilityProfile(pts[int(k)], p), pts, tol=1e-9
            ).certified
    elapsed = time.monotonic() - start
    assert elapsed < 60.0
    report(4, f"50 sets x 2000 points, unique certification everywhere, {elapsed:.1f}s")


def test_c05_nash_product_dominance():
    p = np.array([0.5, 0.5])
    even = scalarize.LossVector(np.array([0.5, 0.5]), p)
    uneven = scalarize.LossVector(np.array([1 / 3, 2 / 3]), p)
    for M in (1.0, 1.5, 2.0, 5.0, 10.0):
        np_even = scalarize.nash_product(even, M)
        np_uneven = scalarize.nash_product(uneven, M)
        assert np_even > np_uneven + 1e-12
        spec = scalarize.propfair(M, 0.2)
        gm_even = scalarize.generalized_mean(spec, even)
        gm_uneven = scalarize.generalized_mean(spec, uneven)
        assert gm_even < gm_uneven - 1e-12  # lower mean == larger product
        assert abs((M - gm_even) - np_even) <= 1e-12
    report(5, "even split dominates on every M in {1, 1.5, 2, 5, 10}")


def test_c06_propfair_centralized_equivalence():
    start = time.monotonic()
    rng = np.random.default_rng(1006)
    arch = LinearSoftmax(4, 3)
    clients = []
    idx = 0
    for n in (20, 30, 10):
        train = [
            Sample(rng.standard_normal(4) + 0.5 * (i % 3), int(rng.integers(0, 3)), idx + i)
            for i in range(n)
        ]
        clients.append(datagen.ClientDataset(train, train[:2]))
        idx += n
    fd = datagen.FederatedDataset(clients)
    counts = np.array([c.n_i for c in fd.clients], dtype=np.float64)
    p = counts / counts.sum()
    spec = scalarize.propfair(5.0, 0.2)
    eta = 0.2

    theta_fed = np.zeros(arch.n_params)
    theta_cent = np.zeros(arch.n_params)
    worst = 0.0
    for _ in range(100):
        locals_ = [
            fedsim.local_update(
                c, ModelParams(arch, theta_fed), spec, eta, 1, 64, np.random.default_rng(0)
            )
            for c in fd.clients
        ]
        theta_fed = fedsim.aggregate(locals_, counts, client_ids=[0, 1, 2]).theta
        # centralized gradient step on pi(theta) = -sum p_i log(M - f_i)
        g = np.zeros(arch.n_params)
        for i, c in enumerate(fd.clients):
            m = ModelParams(arch, theta_cent)
            f_i = batch_loss(m, c.train)
            assert f_i < spec.baseline_M - spec.epsilon
            g += p[i] * (1.0 / (spec.baseline_M - f_i)) * batch_gradient(m, c.train)
        theta_cent = theta_cent - eta * g
        worst = max(worst, float(np.max(np.abs(theta_fed - theta_cent))))
        assert worst <= 1e-10
    # the engine's own loop reproduces the composed rounds bitwise
    config = TrainConfig(
        algorithm=spec, rounds_T=100, lr_eta=eta, batch_size_m=64, seed=0, eval_every=100
    )
    hist = fedsim.run_training(fd, config, arch=arch)
    np.testing.assert_array_equal(hist.final_params.theta, theta_fed)
    elapsed = time.monotonic() - start
    assert elapsed < 10.0
    report(6, f"100 steps, max parameter gap {worst:.2e}, engine bitwise-consistent, {elapsed:.1f}s")


def _spectrum_samples():
    """Orthogonal feature groups with geometric scales: the curvature spectrum
    is log-uniform, which makes the deterministic min-gradient trajectory
    track the 1/(eta T) envelope instead of collapsing exponentially."""
    d = 14
    scales = 16.0 * (2.0 ** (-0.5 * np.arange(d)))
    samples, idx = [], 0
    for j, s in enumerate(scales):
        for sign in (1.0, -1.0):
            v = np.zeros(d)
            v[j] = sign * s
            maj = 1 if sign > 0 else 0
            for lab in (maj, maj, maj, 1 - maj):
                samples.append(Sample(v.copy(), lab, idx))
                idx += 1
    return samples


def test_c07_convergence_shape():
    start = time.monotonic()
    samples = _spectrum_samples()
    clients = [datagen.ClientDataset(list(samples), list(samples[:8])) for _ in range(3)]
    fd = datagen.FederatedDataset(clients)
    arch = LinearSoftmax(14, 2)
    horizons = [64, 256, 1024]
    mins = []
    for T in horizons:
        config = TrainConfig(
            algorithm=scalarize.fedavg(), rounds_T=T, lr_eta=0.5 / math.sqrt(T),
            batch_size_m=len(samples), seed=0, eval_every=1,
        )
        hist = fedsim.run_training(fd, config, arch=arch)
        mins.append(min(r.grad_norm_sq for r in hist.records))
    slope = float(np.polyfit(np.log(horizons), np.log(mins), 1)[0])
    assert -0.65 <= slope <= -0.35

    L_hat, _ = estimate_smoothness(samples, arch, 30, 1.0, np.random.default_rng(1))
    eta = 0.5 * fedsim.lr_bound_fedavg(L_hat, fd.client_weights(), np.ones(3))
    config = TrainConfig(
        algorithm=scalarize.fedavg(), rounds_T=200, lr_eta=eta,
        batch_size_m=len(samples), seed=0, eval_every=1,
    )
    hist = fedsim.run_training(fd, config, arch=arch)
    objective = [float(np.dot(fd.client_weights(), r.train_losses)) for r in hist.records]
    assert np.all(np.diff(objective) <= 1e-12)
    elapsed = time.monotonic() - start
    assert elapsed < 300.0
    report(7, f"log-log slope {slope:.3f} in [-0.65, -0.35]; descent monotone at eta={eta:.3g}, {elapsed:.1f}s")


def test_c08_theorem_constant_plumbing():
    # averaged-objective bound, single client, unit constants
    assert abs(fedsim.lr_bound_fedavg(1.0, [1.0], [1.0]) - 1.0 / 6.0) <= 1e-7
    expected_k10 = math.sqrt(1.0 / (24.0 * E_MINUS_2 * 1.0 * 10.0**4))
    assert abs(fedsim.lr_bound_fedavg(1.0, [1.0], [10.0]) - expected_k10) <= 1e-7
    assert abs(expected_k10 - 0.0024085016012531293) <= 1e-12
    # huberized-log bound constants
    eta_max, l_tilde = fedsim.lr_bound_propfair(2.0, 1.0, 1.0, [1.0], [1.0])
    assert abs(l_tilde - 4.0) <= 1e-7
    expected_eta = min(1.0 / 24.0, (1.0 / 32.0) * math.sqrt(1.0 / E_MINUS_2))
    assert abs(eta_max - expected_eta) <= 1e-7
    assert abs(expected_eta - 0.036872499798415004) <= 1e-12
    # homogeneity in 1/L and the large-M limit of L_tilde
    assert fedsim.lr_bound_fedavg(2.0, [0.5, 0.5], [2, 3]) == pytest.approx(
        fedsim.lr_bound_fedavg(1.0, [0.5, 0.5], [2, 3]) / 2.0, rel=1e-12
    )
    _, lt_large = fedsim.lr_bound_propfair(1e6, 1.0, 1.0, [1.0], [1.0])
    assert lt_large == pytest.approx(6.0 / 1e6, rel=1e-5)
    # variance terms
    got = fedsim.variance_terms(
        "fedavg", eta=0.1, p=[1.0], K=[1.0], m=1, L=1.0, sigma=0.0, sigma_i=[1.0]
    )
    assert abs(got - 0.0057182818284590466) <= 1e-7
    assert (
        fedsim.variance_terms(
            "propfair", eta=0.1, p=[1.0], K=[1.0], m=1, L=1.0, M=2.0, L0=1.0
        )
        == 0.0
    )
    report(8, "bounds and variance terms match hand-computed constants to 1e-7")


def test_c09_afl_failure_analogue():
    start = time.monotonic()
    tails = {"fedavg": [], "propfair": [], "afl": []}
    algos = {
        "fedavg": scalarize.fedavg(),
        "propfair": scalarize.propfair(2.0, 0.2),
        "afl": AflConfig(gamma_lambda=0.1),
    }
    seeds = list(range(5))
    for seed in seeds:
        fd = datagen.afl_failure_scenario(2000, seed)
        arch = LinearSoftmax(2, 2)
        for name, algo in algos.items():
            config = TrainConfig(
                algorithm=algo, rounds_T=160, lr_eta=0.1, batch_size_m=64,
                seed=seed, eval_every=8,
            )
            run = fedsim.run_afl if isinstance(algo, AflConfig) else fedsim.run_training
            hist = run(fd, config, arch=arch)
            accs = [r.global_test_accuracy for r in hist.records]
            # the worst-case loop hovers around its saddle, so the stable
            # summary is the mean accuracy over the tail of the run
            tails[name].append(float(np.mean(accs[len(accs) // 2 :])))
    mean = {k: float(np.mean(v)) for k, v in tails.items()}
    assert mean["fedavg"] >= 0.85
    assert mean["propfair"] >= 0.85
    assert mean["afl"] <= mean["fedavg"] - 0.15
    assert mean["afl"] <= mean["propfair"] - 0.15
    elapsed = time.monotonic() - start
    assert elapsed < 300.0
    report(
        9,
        f"seeds {seeds}: afl {mean['afl']:.3f} vs fedavg {mean['fedavg']:.3f} / "
        f"propfair {mean['propfair']:.3f}, {elapsed:.1f}s",
    )


def _heterogeneous_task(seed):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 77]))
    samples = datagen.gaussian_mixture_data(200, 5, 8, 2.0, rng)
    fd = datagen.dirichlet_partition(samples, 10, 0.3, 20, 200, rng)
    return datagen.split_train_test(fd, 0.8, rng)


def _run_pair(seed):
    fd = _heterogeneous_task(seed)
    arch = LinearSoftmax(8, 5)
    outcomes = {}
    for name, algo in [
        ("fedavg", scalarize.fedavg()),
        ("propfair", scalarize.propfair(2.0, 0.2)),
    ]:
        config = TrainConfig(
            algorithm=algo, rounds_T=40, lr_eta=0.1, batch_size_m=64,
            seed=seed, eval_every=40,
        )
        rec = fedsim.run_training(fd, config, arch=arch).final_record
        outcomes[name] = [
            metrics.ClientOutcome(
                i, c.n_i, float(rec.test_accuracies[i]), float(rec.test_losses[i])
            )
            for i, c in enumerate(fd.clients)
        ]
    return outcomes


def test_c10_pf_directionality():
    start = time.monotonic()
    seeds = list(range(5))
    aggregates = []
    for seed in seeds:
        outcomes = _run_pair(seed)
        cmp = metrics.pf_compare(outcomes["propfair"], outcomes["fedavg"])
        aggregates.append(cmp.weighted_aggregate)
    median = float(np.median(aggregates))
    elapsed = time.monotonic() - start
    assert elapsed < 900.0
    detail = (
        f"seeds {seeds}, aggregates {[round(a, 4) for a in aggregates]}, "
        f"median {median:.4f} (threshold +0.005), {elapsed:.1f}s"
    )
    soft_report(10, median <= 0.005, detail)


def test_c11_worst_client_balance():
    start = time.monotonic()
    seeds = list(range(5))
    hits = 0
    mean_gaps = []
    for seed in seeds:
        outcomes = _run_pair(seed)
        s_pf = metrics.summarize(outcomes["propfair"], 10)
        s_fa = metrics.summarize(outcomes["fedavg"], 10)
        hits += s_pf.worst_k >= s_fa.worst_k - 0.01
        mean_gaps.append(abs(s_pf.mean_unweighted - s_fa.mean_unweighted))
    elapsed = time.monotonic() - start
    ok = hits >= 4 and max(mean_gaps) <= 0.03
    detail = (
        f"seeds {seeds}: worst-10% holds in {hits}/5, max mean gap "
        f"{max(mean_gaps):.4f} (limit 0.03), {elapsed:.1f}s"
    )
    soft_report(11, ok, detail)


CONFIG_C12 = """\
[dataset]
generator = gaussian_mixture
n_per_class = 40
classes = 3
dim = 4
separation = 2.0
n_clients = 4
beta = 0.5
min_size = 8
train_frac = 0.8

[model]
arch = linear_softmax

[train]
algorithm = propfair
baseline_m = 5.0
epsilon = 0.2
rounds = 6
batch_size = 16
lr = 0.1
seeds = 0, 1

[output]
dir = unused
eval_every = 2
"""


def test_c12_determinism(tmp_path):
    cfg = tmp_path / "cfg.ini"
    cfg.write_text(CONFIG_C12)
    a = runner.cmd_run(str(cfg), out=str(tmp_path / "a"))
    b = runner.cmd_run(str(cfg), out=str(tmp_path / "b"))
    compared = []
    for rel in ("summary.json", "seed_0/rounds.csv", "seed_1/rounds.csv"):
        with open(os.path.join(a.out_dir, rel), "rb") as fa:
            with open(os.path.join(b.out_dir, rel), "rb") as fb:
                assert fa.read() == fb.read(), rel
        compared.append(rel)
    summary = json.load(open(a.summary_path))
    assert summary["algorithm_params"] == {"M": 5.0, "eps": 0.2}
    report(12, f"byte-identical reruns for {compared}")


def test_c13_primary_independent_of_plotkit():
    """Primary half of criterion 13: this suite never touches the figure
    package (its own tests cover byte-identical rendering)."""
    import sys

    import fairfedlab

    assert not any(name.split(".")[0] == "plotkit" for name in sys.modules)
    pkg_dir = os.path.dirname(fairfedlab.__file__)
    for root, _, files in os.walk(pkg_dir):
        for name in files:
            if name.endswith(".py"):
                with open(os.path.join(root, name)) as fh:
                    assert "plotkit" not in fh.read(), name
    report(13, "primary package and suite have no reference to the figure package")
