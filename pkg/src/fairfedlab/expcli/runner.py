"""Config-driven experiment runner and persistence layer.

Output layout per run directory:
    config_snapshot.ini       verbatim copy of the input config
    summary.json              per-seed metrics plus seed-aggregated mean/std
    seed_<seed>/rounds.csv    one row per evaluated round and client
    seed_<seed>/checkpoint.json + checkpoint_params.txt

All files are written atomically (temp + rename) and contain no timestamps,
so rerunning an identical config and seed reproduces every byte.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .. import datagen, fedsim, metrics, scalarize
from ..errors import DomainError
from ..fedsim import AflConfig, TrainConfig
from ..model import LinearSoftmax, MLP1, Sample, init_params
from .config import ExperimentConfig, load_config

_DATA_STREAM = 0xDA7A


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & (2**63 - 1), stream]))


def build_dataset(cfg: ExperimentConfig, seed: int) -> datagen.FederatedDataset:
    ds = cfg.dataset
    rng = _rng(seed, _DATA_STREAM)
    if ds["generator"] == "afl_failure":
        return datagen.afl_failure_scenario(ds["n_major"], rng)
    samples = datagen.gaussian_mixture_data(
        ds["n_per_class"], ds["classes"], ds["dim"], ds["separation"], rng
    )
    if ds["partition"] == "dirichlet":
        fd = datagen.dirichlet_partition(
            samples, ds["n_clients"], ds["beta"], ds["min_size"], ds["max_retries"], rng
        )
    else:
        fd = datagen.FederatedDataset([datagen.ClientDataset(list(samples))])
    fd = datagen.split_train_test(fd, ds["train_frac"], rng)
    if ds["global_test"] > 0:
        per_class = math.ceil(ds["global_test"] / ds["classes"])
        extra = datagen.gaussian_mixture_data(
            per_class, ds["classes"], ds["dim"], ds["separation"], rng
        )[: ds["global_test"]]
        offset = len(samples)
        fd.global_test = [Sample(s.features, s.label, s.idx + offset) for s in extra]
    return fd


def build_arch(cfg: ExperimentConfig):
    d, C = cfg.dataset["dim"], cfg.dataset["classes"]
    if cfg.model["arch"] == "mlp1":
        return MLP1(d, cfg.model["hidden"], C)
    return LinearSoftmax(d, C)


def build_algorithm(cfg: ExperimentConfig):
    t = cfg.train
    name = t["algorithm"]
    if name == "fedavg":
        return scalarize.fedavg()
    if name == "qffl":
        return scalarize.qffl(t["q"])
    if name == "term":
        return scalarize.term(t["alpha"])
    if name == "propfair":
        return scalarize.propfair(t["baseline_m"], t["epsilon"])
    return AflConfig(t["gamma_lambda"], t["gamma_w"] if t["gamma_w"] > 0 else None)


def build_train_config(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    t = cfg.train
    return TrainConfig(
        algorithm=build_algorithm(cfg),
        rounds_T=t["rounds"],
        lr_eta=t["lr"],
        local_epochs=t["local_epochs"],
        batch_size_m=t["batch_size"],
        participation_frac=t["participation"],
        seed=seed,
        eval_every=cfg.output["eval_every"],
    )


def run_seed(
    cfg: ExperimentConfig, seed: int, init=None
) -> tuple[fedsim.RunHistory, datagen.FederatedDataset]:
    fd = build_dataset(cfg, seed)
    tc = build_train_config(cfg, seed)
    runner = fedsim.run_afl if isinstance(tc.algorithm, AflConfig) else fedsim.run_training
    history = runner(fd, tc, init=init, arch=build_arch(cfg))
    return history, fd


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path: str, obj) -> None:
    _atomic_write(path, json.dumps(_sanitize(obj), indent=2, sort_keys=True) + "\n")


def _sanitize(obj):
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return None if math.isnan(f) else f
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    return obj


def _fmt(x: float) -> str:
    return repr(float(x))


def write_rounds_csv(path: str, history: fedsim.RunHistory, n_i: list[int]) -> None:
    lines = ["round,client_id,n_i,train_loss,test_loss,test_acc,lambda,grad_norm_sq_est"]
    for rec in history.records:
        for cid in range(len(n_i)):
            lines.append(
                ",".join(
                    [
                        str(rec.round),
                        str(cid),
                        str(n_i[cid]),
                        _fmt(rec.train_losses[cid]),
                        _fmt(rec.test_losses[cid]),
                        _fmt(rec.test_accuracies[cid]),
                        _fmt(rec.lam[cid]),
                        _fmt(rec.grad_norm_sq),
                    ]
                )
            )
    _atomic_write(path, "\n".join(lines) + "\n")


def read_final_outcomes(rounds_csv: str) -> list[metrics.ClientOutcome]:
    rows = []
    with open(rounds_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(row)
    if not rows:
        raise DomainError(f"{rounds_csv} is empty")
    last = max(int(r["round"]) for r in rows)
    return [
        metrics.ClientOutcome(
            client_id=int(r["client_id"]),
            n_i=int(r["n_i"]),
            test_accuracy=float(r["test_acc"]),
            test_loss=float(r["test_loss"]),
        )
        for r in rows
        if int(r["round"]) == last
    ]


def seed_summary(cfg: ExperimentConfig, history: fedsim.RunHistory, fd) -> dict:
    rec = history.final_record
    outcomes = [
        metrics.ClientOutcome(cid, c.n_i, float(rec.test_accuracies[cid]), float(rec.test_losses[cid]))
        for cid, c in enumerate(fd.clients)
    ]
    worst_k: dict[str, float] = {}
    best_k: dict[str, float] = {}
    for k in cfg.metrics["k_percent"]:
        stats = metrics.summarize(outcomes, k)
        worst_k[_k_key(k)] = stats.worst_k
        best_k[_k_key(k)] = stats.best_k
    base = metrics.summarize(outcomes, cfg.metrics["k_percent"][0])
    try:
        nash = metrics.nash_report(outcomes, cfg.metrics["nash_m"], rec.train_losses)
    except DomainError:
        nash = metrics.nash_report(outcomes, cfg.metrics["nash_m"], None)
    return {
        "manifest_hash": datagen.manifest_hash({"dataset": cfg.dataset, "seed": history.config.seed}),
        "mean_unweighted": base.mean_unweighted,
        "mean_weighted": base.mean_weighted,
        "std": base.std,
        "worst": base.worst,
        "best": base.best,
        "worst_k": worst_k,
        "best_k": best_k,
        "nash_product_losses": nash["nash_product_losses"],
        "nash_product_acc": nash["nash_product_acc"],
        "jensen_gap": nash["jensen_gap"],
        "clamp_count": nash["clamp_count"],
        "assumption2_violations": int(sum(r.assumption2_violations for r in history.records)),
        "global_test_accuracy": rec.global_test_accuracy,
    }


def _k_key(k: float) -> str:
    return format(k, "g")


_SCALAR_KEYS = (
    "mean_unweighted",
    "mean_weighted",
    "std",
    "worst",
    "best",
    "nash_product_losses",
    "nash_product_acc",
    "jensen_gap",
)


def aggregate_summaries(per_seed: dict[str, dict], k_keys: list[str]) -> dict:
    agg: dict = {}
    rows = list(per_seed.values())
    for key in _SCALAR_KEYS:
        vals = [r[key] for r in rows]
        if any(v is None for v in vals):
            agg[key] = None
            continue
        arr = np.array(vals, dtype=np.float64)
        agg[key] = {"mean": float(arr.mean()), "std": float(arr.std())}
    for side in ("worst_k", "best_k"):
        agg[side] = {}
        for kk in k_keys:
            arr = np.array([r[side][kk] for r in rows])
            agg[side][kk] = {"mean": float(arr.mean()), "std": float(arr.std())}
    return agg


@dataclass
class RunOutputs:
    out_dir: str
    summary_path: str
    summary: dict


def cmd_run(
    config_path: str,
    out: str | None = None,
    seed_index: int | None = None,
    init_checkpoint: str | None = None,
) -> RunOutputs:
    cfg = load_config(config_path)
    out_dir = out or cfg.output["dir"]
    os.makedirs(out_dir, exist_ok=True)
    _atomic_write(os.path.join(out_dir, "config_snapshot.ini"), cfg.raw_text)

    init = None
    provenance = None
    if init_checkpoint is not None:
        params, meta = fedsim.load_checkpoint(init_checkpoint)
        want = build_arch(cfg)
        if params.arch != want:
            raise DomainError(
                f"checkpoint arch {params.arch} does not match configured arch {want}"
            )
        init = params
        provenance = {
            "path": os.path.abspath(init_checkpoint),
            "config_hash": meta.get("config_hash"),
            "round": meta.get("round"),
        }

    seeds = cfg.seeds
    if seed_index is not None:
        if not 0 <= seed_index < len(seeds):
            raise DomainError(f"seed index {seed_index} out of range")
        seeds = [seeds[seed_index]]

    per_seed: dict[str, dict] = {}
    for seed in seeds:
        history, fd = run_seed(cfg, seed, init=init)
        seed_dir = os.path.join(out_dir, f"seed_{seed}")
        os.makedirs(seed_dir, exist_ok=True)
        write_rounds_csv(
            os.path.join(seed_dir, "rounds.csv"), history, [c.n_i for c in fd.clients]
        )
        fedsim.save_checkpoint(
            os.path.join(seed_dir, "checkpoint"),
            history.final_params,
            history.final_record.round,
            cfg.config_hash(),
        )
        per_seed[str(seed)] = seed_summary(cfg, history, fd)

    k_keys = [_k_key(k) for k in cfg.metrics["k_percent"]]
    summary = {
        "algorithm": cfg.train["algorithm"],
        "algorithm_params": _algorithm_params(cfg),
        "config_hash": cfg.config_hash(),
        "dataset_hash": cfg.dataset_hash(),
        "seeds": seeds,
        "per_seed": per_seed,
        "aggregate": aggregate_summaries(per_seed, k_keys),
    }
    if provenance is not None:
        summary["init_checkpoint"] = provenance
    name = "summary.json" if seed_index is None else f"summary_seed_{seeds[0]}.json"
    summary_path = os.path.join(out_dir, name)
    _write_json(summary_path, summary)
    return RunOutputs(out_dir, summary_path, summary)


def _algorithm_params(cfg: ExperimentConfig) -> dict:
    t = cfg.train
    name = t["algorithm"]
    if name == "qffl":
        return {"q": t["q"]}
    if name == "term":
        return {"alpha": t["alpha"]}
    if name == "propfair":
        return {"M": t["baseline_m"], "eps": t["epsilon"]}
    if name == "afl":
        return {"gamma_lambda": t["gamma_lambda"], "gamma_w": t["gamma_w"] or None}
    return {}


def cmd_finetune(
    config_path: str, init_checkpoint: str, out: str | None = None,
    seed_index: int | None = None,
) -> RunOutputs:
    return cmd_run(config_path, out=out, seed_index=seed_index, init_checkpoint=init_checkpoint)


def _load_summary(run_dir: str) -> dict:
    path = os.path.join(run_dir, "summary.json")
    with open(path) as fh:
        return json.load(fh)


def cmd_pf_compare(run_dir_base: str, run_dir_other: str, out: str | None = None) -> str:
    """Write pf_report.json comparing `other` against the reference run `base`."""
    base_summary = _load_summary(run_dir_base)
    other_summary = _load_summary(run_dir_other)
    if base_summary["dataset_hash"] != other_summary["dataset_hash"]:
        raise DomainError("dataset hashes differ; runs are not comparable")
    if base_summary["seeds"] != other_summary["seeds"]:
        raise DomainError("seed lists differ; runs are not comparable")

    per_seed = {}
    sums: dict[int, float] = {}
    aggregates = []
    clamp_total = 0
    for seed in base_summary["seeds"]:
        base_out = read_final_outcomes(os.path.join(run_dir_base, f"seed_{seed}", "rounds.csv"))
        other_out = read_final_outcomes(os.path.join(run_dir_other, f"seed_{seed}", "rounds.csv"))
        base_ids = {(o.client_id, o.n_i) for o in base_out}
        other_ids = {(o.client_id, o.n_i) for o in other_out}
        if base_ids != other_ids:
            raise DomainError(f"client sets differ at seed {seed}")
        cmp = metrics.pf_compare(base_out, other_out)
        per_seed[str(seed)] = {
            "per_client": [{"client_id": cid, "rel_change": rc} for cid, rc in cmp.per_client],
            "weighted_aggregate": cmp.weighted_aggregate,
            "clamp_count": cmp.clamp_count,
        }
        for cid, rc in cmp.per_client:
            sums[cid] = sums.get(cid, 0.0) + rc
        aggregates.append(cmp.weighted_aggregate)
        clamp_total += cmp.clamp_count

    n_seeds = len(base_summary["seeds"])
    report = {
        "base_run": os.path.abspath(run_dir_base),
        "other_run": os.path.abspath(run_dir_other),
        "per_client": [
            {"client_id": cid, "rel_change": sums[cid] / n_seeds} for cid in sorted(sums)
        ],
        "weighted_aggregate": float(np.mean(aggregates)),
        "clamp_count": clamp_total,
        "per_seed": per_seed,
    }
    out_dir = out or run_dir_other
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "pf_report.json")
    _write_json(path, report)
    return path


def cmd_bounds(config_path: str, out: str | None = None) -> str:
    """Estimate smoothness/variance constants and evaluate both step bounds."""
    cfg = load_config(config_path)
    seed = cfg.seeds[0]
    fd = build_dataset(cfg, seed)
    arch = build_arch(cfg)
    theta0 = init_params(arch, _rng(seed, 0x1A17)).theta
    rng = _rng(seed, 0xB0DD)
    l_hats, l0_hats = [], []
    from ..model import estimate_smoothness

    for c in fd.clients:
        lh, l0h = estimate_smoothness(c.train, arch, trials=16, radius=1.0, rng=rng)
        l_hats.append(lh)
        l0_hats.append(l0h)
    L_hat, L0_hat = max(l_hats), max(l0_hats)
    sig = fedsim.estimate_sigmas(fd, arch, theta0, n_probes=32, radius=1.0, rng=rng)
    K = fedsim.local_step_counts(fd, build_train_config(cfg, seed))
    p = fd.client_weights()
    eta = cfg.train["lr"]
    m = cfg.train["batch_size"]
    M = cfg.train["baseline_m"]
    bound_fedavg = fedsim.lr_bound_fedavg(L_hat, p, K)
    bound_propfair, l_tilde = fedsim.lr_bound_propfair(M, L_hat, L0_hat, p, K)
    psi = fedsim.variance_terms(
        "fedavg", eta=eta, p=p, K=K, m=m, L=L_hat, sigma=sig.sigma, sigma_i=sig.sigma_i
    )
    psi_tilde = fedsim.variance_terms(
        "propfair",
        eta=eta, p=p, K=K, m=m, L=L_hat, M=M, L0=L0_hat,
        sigma=sig.sigma, sigma_i=sig.sigma_i,
        sigma0=sig.sigma0, sigma0_i=sig.sigma0_i,
    )
    report = {
        "L_hat": L_hat,
        "L0_hat": L0_hat,
        "sigma": sig.sigma,
        "sigma_i": sig.sigma_i,
        "sigma0": sig.sigma0,
        "sigma0_i": sig.sigma0_i,
        "K": K,
        "p": p,
        "eta": eta,
        "batch_size": m,
        "M": M,
        "lr_bound_fedavg": bound_fedavg,
        "lr_bound_propfair": bound_propfair,
        "L_tilde": l_tilde,
        "psi_sigma": psi,
        "psi_sigma_tilde": psi_tilde,
        "eta_ok_fedavg": bool(eta <= 0.5 * bound_fedavg),
        "eta_ok_propfair": bool(eta <= 0.5 * bound_propfair),
        "safety_factor": 0.5,
    }
    out_dir = out or cfg.output["dir"]
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "bounds.json")
    _write_json(path, report)
    return path


def cmd_partition_stats(config_path: str, out: str | None = None) -> str:
    """Per-seed client sizes and label-marginal total-variation distances."""
    cfg = load_config(config_path)
    per_seed = {}
    for seed in cfg.seeds:
        fd = build_dataset(cfg, seed)
        C = cfg.dataset["classes"]
        global_counts = np.zeros(C)
        rows = []
        for cid, c in enumerate(fd.clients):
            counts = np.zeros(C)
            for s in c.train:
                counts[s.label] += 1
            global_counts += counts
            rows.append({"client_id": cid, "n_i": c.n_i, "marginal": counts / counts.sum()})
        global_marginal = global_counts / global_counts.sum()
        tvs = [0.5 * float(np.abs(r["marginal"] - global_marginal).sum()) for r in rows]
        per_seed[str(seed)] = {
            "sizes": [r["n_i"] for r in rows],
            "tv_distances": tvs,
            "mean_tv": float(np.mean(tvs)),
            "min_size": int(min(r["n_i"] for r in rows)),
            "max_size": int(max(r["n_i"] for r in rows)),
        }
    out_dir = out or cfg.output["dir"]
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "partition_stats.json")
    _write_json(path, {"dataset_hash": cfg.dataset_hash(), "per_seed": per_seed})
    return path
