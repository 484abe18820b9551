"""Federated training engine: scalarized local SGD, aggregation, the
worst-case primal-dual loop, and the convergence-bound harness.

Every run is a pure function of (dataset, config, init): participant
sampling and each client's batch shuffles come from private streams seeded
by (seed, round, client_id), and all reductions run in ascending client
index, so reruns are bit-identical no matter how workers are scheduled.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import scalarize
from .datagen import FederatedDataset
from .errors import DimensionError, DomainError
from .model import Arch, LinearSoftmax, MLP1, ModelParams, Sample, as_arrays, init_params
from .scalarize import ScalarizerSpec

E_MINUS_2 = math.e - 2.0

_INIT_STREAM = 0x1A17
_PART_STREAM = 0x5E1E


@dataclass(frozen=True)
class AflConfig:
    """Worst-case combination objective: dual ascent rate and optional local lr."""

    gamma_lambda: float = 0.1
    gamma_w: float | None = None

    def __post_init__(self) -> None:
        if self.gamma_lambda < 0:
            raise DomainError("gamma_lambda must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    algorithm: ScalarizerSpec | AflConfig
    rounds_T: int
    lr_eta: float
    local_epochs: int = 1
    batch_size_m: int = 64
    participation_frac: float = 1.0
    seed: int = 0
    eval_every: int = 1

    def __post_init__(self) -> None:
        if self.rounds_T < 1:
            raise DomainError("rounds_T must be >= 1")
        if self.local_epochs < 1 or self.batch_size_m < 1:
            raise DomainError("local_epochs and batch_size_m must be >= 1")
        if self.lr_eta <= 0:
            raise DomainError("lr_eta must be positive")
        if not 0 < self.participation_frac <= 1:
            raise DomainError("participation_frac must lie in (0, 1]")
        if self.eval_every < 1:
            raise DomainError("eval_every must be >= 1")


@dataclass
class RoundRecord:
    """Snapshot of the post-aggregation model at one evaluated round."""

    round: int
    participants: list[int]
    train_losses: np.ndarray
    test_losses: np.ndarray
    test_accuracies: np.ndarray
    lam: np.ndarray
    grad_norm_sq: float
    assumption2_violations: int = 0
    global_test_accuracy: float | None = None


@dataclass
class RunHistory:
    config: TrainConfig
    records: list[RoundRecord]
    final_params: ModelParams

    @property
    def final_record(self) -> RoundRecord:
        return self.records[-1]


def _client_rng(seed: int, round_idx: int, client_id: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([seed & (2**63 - 1), round_idx, client_id])
    )


def _stream_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & (2**63 - 1), stream]))


@dataclass
class _ClientArrays:
    X: np.ndarray
    y: np.ndarray
    Xte: np.ndarray | None
    yte: np.ndarray | None
    n: int


def _prepare(fd: FederatedDataset) -> list[_ClientArrays]:
    out = []
    for c in fd.clients:
        X, y = as_arrays(c.train)
        if c.test:
            Xte, yte = as_arrays(c.test)
        else:
            Xte = yte = None
        out.append(_ClientArrays(X, y, Xte, yte, len(y)))
    return out


def _accuracy(arch: Arch, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    if isinstance(arch, LinearSoftmax):
        W, b = arch.unpack(theta)
        logits = X @ W.T + b
    elif isinstance(arch, MLP1):
        W1, b1, W2, b2 = arch.unpack(theta)
        logits = np.tanh(X @ W1.T + b1) @ W2.T + b2
    else:
        raise DimensionError("accuracy needs a classifier architecture")
    return float(np.mean(np.argmax(logits, axis=1) == y))


def _sgd_steps(
    arch: Arch,
    theta: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    spec: ScalarizerSpec | None,
    eta: float,
    local_epochs: int,
    batch_size: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, int]:
    """K = local_epochs * ceil(n/m) steps of theta -= eta_eff * slope * grad.

    The batch loss is averaged before the surrogate composition; on the
    huberized linear branch the learning rate shrinks to eta * eps / M.
    Returns the new parameters and the count of batches with loss > M/2.
    """
    n = len(y)
    violations = 0
    is_propfair = spec is not None and spec.kind == scalarize.PROPFAIR
    for _ in range(local_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            ix = np.sort(perm[start : start + batch_size])
            Xb, yb = X[ix], y[ix]
            loss = arch.batch_loss(theta, Xb, yb)
            eta_eff = eta
            if spec is None:
                slope = 1.0
            else:
                _, slope = scalarize.surrogate(spec, loss)
                if is_propfair:
                    if loss > spec.baseline_M / 2.0:
                        violations += 1
                    if loss > spec.baseline_M - spec.epsilon:
                        eta_eff = eta * spec.epsilon / spec.baseline_M
            grad = arch.batch_gradient(theta, Xb, yb)
            theta = theta - (eta_eff * slope) * grad
    return theta, violations


def local_update(
    client,
    theta: ModelParams,
    spec: ScalarizerSpec,
    eta: float,
    local_epochs: int,
    batch_size: int,
    rng: np.random.Generator,
) -> ModelParams:
    """One client's local pass; client may be a ClientDataset or sample list."""
    samples: Sequence[Sample] = getattr(client, "train", client)
    if len(samples) == 0:
        raise DomainError("client has no training samples")
    X, y = as_arrays(samples)
    new_theta, _ = _sgd_steps(
        theta.arch, theta.theta, X, y, spec, eta, local_epochs, batch_size, rng
    )
    return ModelParams(theta.arch, new_theta)


def aggregate(
    models: Sequence[ModelParams],
    n_i: Sequence[int],
    client_ids: Sequence[int] | None = None,
) -> ModelParams:
    """Sample-count-weighted average, reduced in ascending client-id order."""
    if len(models) == 0 or len(models) != len(n_i):
        raise DimensionError("aggregate needs one sample count per model")
    order = range(len(models))
    if client_ids is not None:
        order = sorted(order, key=lambda k: client_ids[k])
    counts = np.asarray(n_i, dtype=np.float64)
    total = counts.sum()
    theta = np.zeros_like(models[0].theta)
    for k in order:
        if models[k].theta.size != theta.size:
            raise DimensionError("models disagree on parameter length")
        theta += (counts[k] / total) * models[k].theta
    return ModelParams(models[0].arch, theta)


def simplex_project(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort and threshold)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise DomainError("simplex_project requires a nonempty vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    ranks = np.arange(1, v.size + 1)
    rho = int(np.nonzero(u * ranks > css - 1.0)[0][-1])
    tau = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def effective_dual_weights(
    algorithm: ScalarizerSpec, losses: np.ndarray, p: np.ndarray
) -> np.ndarray:
    """Per-client weights in effect at the given losses.

    Matches the closed-form dual weights on their domain; for propfair
    losses past the branch point the slope of the huberized surrogate
    stands in for 1/(M - f), keeping the geometric-mean normalization.
    """
    if algorithm.kind != scalarize.PROPFAIR:
        return scalarize.dual_weights(algorithm, scalarize.LossVector(losses, p))
    slopes = np.array(
        [
            -scalarize.huberized_log_grad(algorithm.baseline_M, algorithm.epsilon, f)
            for f in losses
        ]
    )
    mask = p > 0
    log_c = -float(np.dot(p[mask], np.log(slopes[mask])))
    lam = np.zeros_like(p)
    lam[mask] = np.exp(log_c + np.log(p[mask]) + np.log(slopes[mask]))
    return lam


def _objective_grad_norm_sq(
    arch: Arch,
    theta: np.ndarray,
    clients: list[_ClientArrays],
    weights: np.ndarray,
    slopes: np.ndarray,
) -> float:
    g = np.zeros_like(theta)
    for i, c in enumerate(clients):
        if weights[i] * slopes[i] == 0.0:
            continue
        g += (weights[i] * slopes[i]) * arch.batch_gradient(theta, c.X, c.y)
    return float(np.dot(g, g))


def _evaluate(
    arch: Arch,
    theta: np.ndarray,
    clients: list[_ClientArrays],
    p_full: np.ndarray,
    spec: ScalarizerSpec | None,
    lam_override: np.ndarray | None,
    round_idx: int,
    participants: list[int],
    violations: int,
    global_arrays: tuple[np.ndarray, np.ndarray] | None,
) -> RoundRecord:
    n = len(clients)
    train_losses = np.array([arch.batch_loss(theta, c.X, c.y) for c in clients])
    test_losses = np.full(n, np.nan)
    test_acc = np.full(n, np.nan)
    for i, c in enumerate(clients):
        if c.Xte is not None:
            test_losses[i] = arch.batch_loss(theta, c.Xte, c.yte)
            test_acc[i] = _accuracy(arch, theta, c.Xte, c.yte)
    if lam_override is not None:
        lam = lam_override.copy()
        weights, slopes = lam, np.ones(n)
    else:
        assert spec is not None
        lam = effective_dual_weights(spec, train_losses, p_full)
        slopes = np.array([scalarize.surrogate(spec, f)[1] for f in train_losses])
        weights = p_full
    grad_norm_sq = _objective_grad_norm_sq(arch, theta, clients, weights, slopes)
    global_acc = None
    if global_arrays is not None:
        global_acc = _accuracy(arch, theta, global_arrays[0], global_arrays[1])
    return RoundRecord(
        round=round_idx,
        participants=list(participants),
        train_losses=train_losses,
        test_losses=test_losses,
        test_accuracies=test_acc,
        lam=lam,
        grad_norm_sq=grad_norm_sq,
        assumption2_violations=violations,
        global_test_accuracy=global_acc,
    )


def _resolve_init(
    fd: FederatedDataset, init: ModelParams | None, arch: Arch | None, seed: int
) -> ModelParams:
    if init is not None:
        d = getattr(init.arch, "d", None)
        if d is not None and d != len(fd.clients[0].train[0].features):
            raise DimensionError("init parameters do not match the dataset dimension")
        return init
    if arch is None:
        raise DomainError("run needs either init params or an arch")
    return init_params(arch, _stream_rng(seed, _INIT_STREAM))


def _sample_participants(n: int, frac: float, seed: int, round_idx: int) -> list[int]:
    count = math.ceil(frac * n)
    if count >= n:
        return list(range(n))
    rng = np.random.default_rng(
        np.random.SeedSequence([seed & (2**63 - 1), round_idx, _PART_STREAM])
    )
    return sorted(int(i) for i in rng.choice(n, size=count, replace=False))


def _eval_rounds(T: int, every: int) -> set[int]:
    rounds = {t for t in range(every, T + 1, every)}
    rounds.add(T)
    return rounds


def run_training(
    fd: FederatedDataset,
    config: TrainConfig,
    init: ModelParams | None = None,
    arch: Arch | None = None,
) -> RunHistory:
    """Scalarized federated training (identity/power/tilted/huberized-log)."""
    spec = config.algorithm
    if not isinstance(spec, ScalarizerSpec):
        raise DomainError("run_training expects a ScalarizerSpec; use run_afl for AFL")
    params = _resolve_init(fd, init, arch, config.seed)
    clients = _prepare(fd)
    counts = np.array([c.n for c in clients], dtype=np.float64)
    p_full = counts / counts.sum()
    global_arrays = as_arrays(fd.global_test) if fd.global_test else None
    eval_at = _eval_rounds(config.rounds_T, config.eval_every)

    theta = params.theta.copy()
    records: list[RoundRecord] = []
    violations = 0
    for t in range(1, config.rounds_T + 1):
        part = _sample_participants(len(clients), config.participation_frac, config.seed, t)
        updated = []
        for i in part:
            rng = _client_rng(config.seed, t, i)
            new_theta, v = _sgd_steps(
                params.arch,
                theta,
                clients[i].X,
                clients[i].y,
                spec,
                config.lr_eta,
                config.local_epochs,
                config.batch_size_m,
                rng,
            )
            updated.append(new_theta)
            violations += v
        w = counts[part] / counts[part].sum()
        theta = np.zeros_like(theta)
        for k in range(len(part)):  # part is ascending, so is the reduction
            theta += w[k] * updated[k]
        if t in eval_at:
            records.append(
                _evaluate(
                    params.arch, theta, clients, p_full, spec, None, t, part,
                    violations, global_arrays,
                )
            )
            violations = 0
    return RunHistory(config, records, ModelParams(params.arch, theta))


def run_afl(
    fd: FederatedDataset,
    config: TrainConfig,
    init: ModelParams | None = None,
    arch: Arch | None = None,
) -> RunHistory:
    """Worst-case combination training: projected dual ascent on client
    losses alternating with lambda-weighted local SGD rounds."""
    afl = config.algorithm
    if not isinstance(afl, AflConfig):
        raise DomainError("run_afl expects an AflConfig algorithm")
    eta_local = afl.gamma_w if afl.gamma_w is not None else config.lr_eta
    params = _resolve_init(fd, init, arch, config.seed)
    clients = _prepare(fd)
    global_arrays = as_arrays(fd.global_test) if fd.global_test else None
    eval_at = _eval_rounds(config.rounds_T, config.eval_every)

    n = len(clients)
    lam = np.full(n, 1.0 / n)
    theta = params.theta.copy()
    records: list[RoundRecord] = []
    for t in range(1, config.rounds_T + 1):
        f_hat = np.array([params.arch.batch_loss(theta, c.X, c.y) for c in clients])
        lam = simplex_project(lam + afl.gamma_lambda * f_hat)
        part = _sample_participants(n, config.participation_frac, config.seed, t)
        updated = []
        for i in part:
            rng = _client_rng(config.seed, t, i)
            new_theta, _ = _sgd_steps(
                params.arch,
                theta,
                clients[i].X,
                clients[i].y,
                None,
                eta_local,
                config.local_epochs,
                config.batch_size_m,
                rng,
            )
            updated.append(new_theta)
        w = lam[part]
        total = w.sum()
        w = w / total if total > 0 else np.full(len(part), 1.0 / len(part))
        theta = np.zeros_like(theta)
        for k in range(len(part)):
            theta += w[k] * updated[k]
        if t in eval_at:
            records.append(
                _evaluate(
                    params.arch, theta, clients, lam, None, lam, t, part, 0,
                    global_arrays,
                )
            )
    return RunHistory(config, records, ModelParams(params.arch, theta))


def lr_bound_fedavg(L: float, p, K) -> float:
    """Largest local learning rate admitted by the averaged-objective theorem."""
    if L <= 0:
        raise DomainError("L must be positive")
    p = np.asarray(p, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    if np.any(K < 1):
        raise DomainError("every K_i must be >= 1")
    per_client = 1.0 / (6.0 * L * float(K.max()))
    variance = (1.0 / L) * math.sqrt(
        1.0 / (24.0 * E_MINUS_2 * float(np.sum(p**2)) * float(np.sum(K**4)))
    )
    return min(per_client, variance)


def lr_bound_propfair(M: float, L: float, L0: float, p, K) -> tuple[float, float]:
    """(eta_max, L_tilde) for the huberized-log objective theorem."""
    if M <= 0 or L <= 0 or L0 <= 0:
        raise DomainError("M, L and L0 must be positive")
    p = np.asarray(p, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    if np.any(K < 1):
        raise DomainError("every K_i must be >= 1")
    l_tilde = (4.0 / M**2) * (1.5 * M * L + L0**2)
    per_client = 1.0 / (6.0 * l_tilde * float(K.max()))
    variance = (1.0 / (8.0 * l_tilde)) * math.sqrt(
        1.0 / (E_MINUS_2 * float(np.sum(p**2)) * float(np.sum(K**4)))
    )
    return min(per_client, variance), l_tilde


def variance_terms(
    which: str,
    *,
    eta: float,
    p,
    K,
    m: int,
    L: float | None = None,
    sigma: float = 0.0,
    sigma_i=0.0,
    M: float | None = None,
    L0: float | None = None,
    sigma0: float = 0.0,
    sigma0_i=0.0,
) -> float:
    """The per-round variance floor of the convergence theorems.

    ``fedavg`` evaluates
    eta ||p||^2 [ sum K_i^2 (L eta s_i^2 / 2m + s^2)
                  + (e-2) eta^2 L^2 sum K_i^3 (s_i^2/m + 6 K_i s^2) ];
    ``propfair`` first maps the raw variances through the composed-surrogate
    constants (sigma_tilde_i, sigma_tilde, L_tilde) and evaluates
    eta ||p||^2 [ sum K_i^2 (st_i^2/m + 2 st^2)
                  + 16 (e-2) eta^2 Lt^2 sum K_i^4 (st_i^2/m + st^2) ].
    """
    p = np.asarray(p, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    s_i = np.broadcast_to(np.asarray(sigma_i, dtype=np.float64), K.shape)
    if sigma < 0 or np.any(s_i < 0) or sigma0 < 0:
        raise DomainError("variances must be nonnegative")
    pnorm2 = float(np.sum(p**2))
    if which == "fedavg":
        if L is None or L <= 0:
            raise DomainError("fedavg variance term needs L > 0")
        head = np.sum(K**2 * (L * eta * s_i**2 / (2.0 * m) + sigma**2))
        tail = E_MINUS_2 * eta**2 * L**2 * np.sum(K**3 * (s_i**2 / m + 6.0 * K * sigma**2))
        return float(eta * pnorm2 * (head + tail))
    if which == "propfair":
        if M is None or L is None or L0 is None:
            raise DomainError("propfair variance term needs M, L and L0")
        s0_i = np.broadcast_to(np.asarray(sigma0_i, dtype=np.float64), K.shape)
        if np.any(s0_i < 0):
            raise DomainError("variances must be nonnegative")
        st_i2 = (8.0 / M**4) * (9.0 * M**2 * s_i**2 + 4.0 * L0**2 * s0_i**2)
        st = (4.0 / M) * (1.5 * sigma + L0 * sigma0 / M)
        l_tilde = (4.0 / M**2) * (1.5 * M * L + L0**2)
        head = np.sum(K**2 * (st_i2 / m + 2.0 * st**2))
        tail = 16.0 * E_MINUS_2 * eta**2 * l_tilde**2 * np.sum(K**4 * (st_i2 / m + st**2))
        return float(eta * pnorm2 * (head + tail))
    raise DomainError(f"unknown variance term family {which!r}")


@dataclass
class SigmaEstimates:
    sigma: float
    sigma_i: np.ndarray
    sigma0: float
    sigma0_i: np.ndarray
    L0: float


def estimate_sigmas(
    fd: FederatedDataset,
    arch: Arch,
    theta0: np.ndarray,
    n_probes: int = 32,
    radius: float = 1.0,
    rng: np.random.Generator | None = None,
) -> SigmaEstimates:
    """Empirical variance estimates at random probes around theta0.

    sigma maxes pairwise client-gradient distances, sigma0 pairwise loss
    gaps, and the per-client terms max the mean squared per-sample deviation
    from the client mean. All are lower bounds on the assumption constants.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    clients = _prepare(fd)
    n = len(clients)
    sigma = sigma0 = l0 = 0.0
    sigma_i2 = np.zeros(n)
    sigma0_i2 = np.zeros(n)
    for _ in range(n_probes):
        step = rng.standard_normal(theta0.size)
        step *= radius * rng.uniform(0.0, 1.0) / max(np.linalg.norm(step), 1e-300)
        theta = theta0 + step
        grads = [arch.batch_gradient(theta, c.X, c.y) for c in clients]
        losses = [arch.batch_loss(theta, c.X, c.y) for c in clients]
        for i in range(n):
            l0 = max(l0, float(np.linalg.norm(grads[i])))
            for j in range(i + 1, n):
                sigma = max(sigma, float(np.linalg.norm(grads[i] - grads[j])))
                sigma0 = max(sigma0, abs(losses[i] - losses[j]))
        for i, c in enumerate(clients):
            sq_grad = 0.0
            sq_loss = 0.0
            for s in range(c.n):
                Xs, ys = c.X[s : s + 1], c.y[s : s + 1]
                g = arch.batch_gradient(theta, Xs, ys)
                sq_grad += float(np.sum((g - grads[i]) ** 2))
                sq_loss += (arch.batch_loss(theta, Xs, ys) - losses[i]) ** 2
            sigma_i2[i] = max(sigma_i2[i], sq_grad / c.n)
            sigma0_i2[i] = max(sigma0_i2[i], sq_loss / c.n)
    return SigmaEstimates(sigma, np.sqrt(sigma_i2), sigma0, np.sqrt(sigma0_i2), l0)


def local_step_counts(fd: FederatedDataset, config: TrainConfig) -> np.ndarray:
    """K_i = local_epochs * ceil(n_i / m) for every client."""
    return np.array(
        [config.local_epochs * math.ceil(c.n_i / config.batch_size_m) for c in fd.clients],
        dtype=np.float64,
    )


def _arch_to_dict(arch: Arch) -> dict:
    if isinstance(arch, LinearSoftmax):
        return {"kind": "linear_softmax", "d": arch.d, "C": arch.C}
    if isinstance(arch, MLP1):
        return {"kind": "mlp1", "d": arch.d, "h": arch.h, "C": arch.C}
    raise DimensionError("only linear_softmax and mlp1 checkpoints are supported")


def arch_from_dict(spec: dict) -> Arch:
    if spec["kind"] == "linear_softmax":
        return LinearSoftmax(int(spec["d"]), int(spec["C"]))
    if spec["kind"] == "mlp1":
        return MLP1(int(spec["d"]), int(spec["h"]), int(spec["C"]))
    raise DimensionError(f"unknown arch kind {spec['kind']!r}")


def save_checkpoint(
    prefix: str, params: ModelParams, round_idx: int, config_hash: str
) -> str:
    """Write <prefix>.json metadata plus <prefix>_params.txt, one f64 per line."""
    params_file = os.path.basename(prefix) + "_params.txt"
    tmp = prefix + "_params.txt.tmp"
    with open(tmp, "w") as fh:
        for v in params.theta:
            fh.write(format(v, ".17g") + "\n")
    os.replace(tmp, prefix + "_params.txt")
    meta = {
        "arch": _arch_to_dict(params.arch),
        "n_params": int(params.theta.size),
        "round": int(round_idx),
        "config_hash": config_hash,
        "params_file": params_file,
    }
    tmp = prefix + ".json.tmp"
    with open(tmp, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, prefix + ".json")
    return prefix + ".json"


def load_checkpoint(json_path: str) -> tuple[ModelParams, dict]:
    with open(json_path) as fh:
        meta = json.load(fh)
    arch = arch_from_dict(meta["arch"])
    params_path = os.path.join(os.path.dirname(json_path), meta["params_file"])
    with open(params_path) as fh:
        theta = np.array([float(line) for line in fh if line.strip()])
    return ModelParams(arch, theta), meta
