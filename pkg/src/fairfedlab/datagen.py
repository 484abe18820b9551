"""Synthetic federated datasets: label-skew partitions and desk-scale tasks.

Generators are pure functions of their inputs and a seed; the same seed
always reproduces the same federation. Every produced sample carries a
globally unique ``idx`` so downstream reductions have a canonical order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, ExhaustionError
from .model import Sample


@dataclass
class ClientDataset:
    """Per-client train/test sample stores; n_i counts training samples."""

    train: list[Sample]
    test: list[Sample] = field(default_factory=list)

    @property
    def n_i(self) -> int:
        return len(self.train)


@dataclass
class FederatedDataset:
    clients: list[ClientDataset]
    global_test: list[Sample] | None = None

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    def client_weights(self) -> np.ndarray:
        n = np.array([c.n_i for c in self.clients], dtype=np.float64)
        return n / n.sum()


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def simplex_directions(C: int, d: int) -> np.ndarray:
    """C maximally spread unit vectors: regular simplex vertices when d >= C-1.

    For d < C-1 the vertices are truncated to the leading d coordinates and
    renormalized (degenerate rows fall back to alternating basis vectors).
    """
    if C < 2 or d < 1:
        raise DimensionError("simplex_directions requires C >= 2 and d >= 1")
    centered = np.eye(C) - 1.0 / C
    _, _, vt = np.linalg.svd(centered)
    coords = centered @ vt[: C - 1].T  # (C, C-1), pairwise angle arccos(-1/(C-1))
    dirs = np.zeros((C, d))
    take = min(d, C - 1)
    dirs[:, :take] = coords[:, :take]
    for k in range(C):
        norm = np.linalg.norm(dirs[k])
        if norm < 1e-9:
            dirs[k] = 0.0
            dirs[k, k % d] = 1.0 if (k // d) % 2 == 0 else -1.0
        else:
            dirs[k] /= norm
    return dirs


def gaussian_mixture_data(
    n_per_class: int, C: int, d: int, separation: float, rng
) -> list[Sample]:
    """Unit-covariance Gaussian classes whose means sit at distance
    ``separation`` from the origin along simplex-vertex directions."""
    if C < 2 or d < 1:
        raise DimensionError("gaussian_mixture_data requires C >= 2 and d >= 1")
    if n_per_class < 1:
        raise DomainError("n_per_class must be >= 1")
    rng = _as_rng(rng)
    means = separation * simplex_directions(C, d)
    samples: list[Sample] = []
    idx = 0
    for k in range(C):
        pts = means[k] + rng.standard_normal((n_per_class, d))
        for row in pts:
            samples.append(Sample(row, k, idx))
            idx += 1
    return samples


def rect_mixture_sample(label: int, rng) -> Sample:
    """One draw from the two-rectangle mixture; label +1/-1 maps to class 1/0.

    A positive label concentrates (mass 0.9) on the left half of the square
    [-1, 1]^2 and spills (mass 0.1) onto the right half; mirrored for -1.
    """
    if label not in (1, -1):
        raise DomainError("label must be +1 or -1")
    rng = _as_rng(rng)
    major_left = label == 1
    on_major = rng.uniform() < 0.9
    left = major_left == on_major
    x1 = rng.uniform(-1.0, 0.0) if left else rng.uniform(0.0, 1.0)
    x2 = rng.uniform(-1.0, 1.0)
    return Sample(np.array([x1, x2]), 1 if label == 1 else 0)


# The tiny outlier client: four points whose labels are flipped relative to
# the population rule (positive mass lives on the left half), so its
# empirical loss pulls the worst-case objective away from the good model.
OUTLIER_CLIENT_POINTS = (
    ((0.5, 0.5), 1),
    ((0.5, -0.5), 1),
    ((-0.5, 0.5), 0),
    ((-0.5, -0.5), 0),
)


def afl_failure_scenario(n_major: int, rng) -> FederatedDataset:
    """A large typical client plus a 4-point flipped outlier client.

    Weighted-average objectives barely notice the outlier (its weight is
    4/(n_major+4)); a worst-case objective chases its permanently high loss
    and lands near chance on the shared population test set.
    """
    if n_major < 100:
        raise DomainError("n_major must be >= 100")
    rng = _as_rng(rng)
    counter = 0

    def draw(n: int) -> list[Sample]:
        nonlocal counter
        out = []
        for _ in range(n):
            label = 1 if rng.uniform() < 0.5 else -1
            s = rect_mixture_sample(label, rng)
            out.append(Sample(s.features, s.label, counter))
            counter += 1
        return out

    major_train = draw(n_major)
    major_test = draw(1000)
    outlier_train = []
    for (x1, x2), cls in OUTLIER_CLIENT_POINTS:
        outlier_train.append(Sample(np.array([x1, x2]), cls, counter))
        counter += 1
    outlier_test = draw(250)
    global_test = draw(10_000)
    return FederatedDataset(
        clients=[
            ClientDataset(major_train, major_test),
            ClientDataset(outlier_train, outlier_test),
        ],
        global_test=global_test,
    )


def dirichlet_partition(
    samples: list[Sample],
    n_clients: int,
    beta: float,
    min_size: int,
    max_retries: int,
    rng,
) -> FederatedDataset:
    """Split each class across clients by a fresh symmetric Dirichlet draw.

    If any client ends below min_size the whole split is redrawn, up to
    max_retries; the union of client train sets is exactly the input multiset.
    """
    if n_clients < 1 or beta <= 0:
        raise DomainError("dirichlet_partition requires n_clients >= 1 and beta > 0")
    if min_size * n_clients > len(samples):
        raise DomainError("min_size * n_clients exceeds the sample count")
    rng = _as_rng(rng)
    by_class: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        by_class.setdefault(s.label, []).append(i)
    for _ in range(max_retries):
        parts: list[list[int]] = [[] for _ in range(n_clients)]
        for label in sorted(by_class):
            order = rng.permutation(by_class[label])
            props = rng.dirichlet(np.full(n_clients, beta))
            cuts = (np.cumsum(props)[:-1] * len(order)).astype(int)
            for cid, chunk in enumerate(np.split(order, cuts)):
                parts[cid].extend(int(i) for i in chunk)
        if min(len(part) for part in parts) >= min_size:
            clients = [ClientDataset([samples[i] for i in sorted(part)]) for part in parts]
            return FederatedDataset(clients)
    raise ExhaustionError(f"no valid split with min_size={min_size} after {max_retries} draws")


def split_train_test(fd: FederatedDataset, train_frac: float, rng) -> FederatedDataset:
    """Per-client shuffled split, nearest-integer sizes, at least 1 test sample."""
    if not 0 < train_frac < 1:
        raise DomainError("train_frac must lie in (0, 1)")
    rng = _as_rng(rng)
    clients = []
    for c in fd.clients:
        pool = c.train + c.test
        if len(pool) < 2:
            raise DomainError("every client needs >= 2 samples to split")
        order = rng.permutation(len(pool))
        n_train = int(round(train_frac * len(pool)))
        n_train = min(max(n_train, 1), len(pool) - 1)
        train = [pool[i] for i in sorted(order[:n_train])]
        test = [pool[i] for i in sorted(order[n_train:])]
        clients.append(ClientDataset(train, test))
    return FederatedDataset(clients, fd.global_test)


def manifest_hash(config: dict) -> str:
    """Stable hash of a generator configuration (sorted-key canonical JSON)."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _write_samples_csv(path: str, samples: list[Sample], d: int) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"feature_{j}" for j in range(d)] + ["label"])
        for s in samples:
            writer.writerow([format(v, ".17g") for v in s.features] + [s.label])
    os.replace(tmp, path)


def _read_samples_csv(path: str, start_idx: int) -> tuple[list[Sample], int]:
    samples = []
    idx = start_idx
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            samples.append(Sample(np.array([float(v) for v in row[:-1]]), int(row[-1]), idx))
            idx += 1
    return samples, idx


def export_csv(fd: FederatedDataset, dirpath: str, config: dict) -> str:
    """Write one CSV per client split plus a JSON manifest; returns the hash."""
    os.makedirs(dirpath, exist_ok=True)
    d = len(fd.clients[0].train[0].features)
    entries = []
    for cid, c in enumerate(fd.clients):
        train_file = f"client_{cid:03d}_train.csv"
        test_file = f"client_{cid:03d}_test.csv"
        _write_samples_csv(os.path.join(dirpath, train_file), c.train, d)
        _write_samples_csv(os.path.join(dirpath, test_file), c.test, d)
        entries.append(
            {
                "id": cid,
                "n_train": c.n_i,
                "n_test": len(c.test),
                "train_file": train_file,
                "test_file": test_file,
            }
        )
    global_file = None
    if fd.global_test:
        global_file = "global_test.csv"
        _write_samples_csv(os.path.join(dirpath, global_file), fd.global_test, d)
    manifest = {
        "config": config,
        "hash": manifest_hash(config),
        "dim": d,
        "clients": entries,
        "global_test_file": global_file,
    }
    tmp = os.path.join(dirpath, "manifest.json.tmp")
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, os.path.join(dirpath, "manifest.json"))
    return manifest["hash"]


def load_csv(dirpath: str) -> tuple[FederatedDataset, dict]:
    """Inverse of :func:`export_csv`; sample indices are reassigned in file order."""
    with open(os.path.join(dirpath, "manifest.json")) as fh:
        manifest = json.load(fh)
    idx = 0
    clients = []
    for entry in manifest["clients"]:
        train, idx = _read_samples_csv(os.path.join(dirpath, entry["train_file"]), idx)
        test, idx = _read_samples_csv(os.path.join(dirpath, entry["test_file"]), idx)
        clients.append(ClientDataset(train, test))
    global_test = None
    if manifest.get("global_test_file"):
        global_test, idx = _read_samples_csv(
            os.path.join(dirpath, manifest["global_test_file"]), idx
        )
    return FederatedDataset(clients, global_test), manifest
