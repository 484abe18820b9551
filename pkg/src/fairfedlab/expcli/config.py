"""Experiment configuration: INI-style sections, strict validation, hashing.

Every key is validated before any compute; unknown sections or keys are
errors that name the offending line. The config hash covers everything that
affects computed bytes (dataset, model, train, metrics, eval cadence); the
output directory is an override knob and stays out of the hash.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import dataclass

from ..errors import ConfigError

_GENERATORS = ("gaussian_mixture", "afl_failure")
_PARTITIONS = ("auto", "dirichlet", "none")
_ARCHS = ("linear_softmax", "mlp1")
_ALGORITHMS = ("fedavg", "qffl", "term", "propfair", "afl")

# (type, default) per key; REQUIRED marks keys without a usable default.
REQUIRED = object()
_SCHEMA: dict[str, dict[str, tuple]] = {
    "dataset": {
        "generator": (str, REQUIRED),
        "n_per_class": (int, 600),
        "classes": (int, 5),
        "dim": (int, 8),
        "separation": (float, 2.0),
        "n_major": (int, 2000),
        "partition": (str, "auto"),
        "n_clients": (int, 10),
        "beta": (float, 0.5),
        "min_size": (int, 0),  # 0 resolves to 2 * batch_size
        "max_retries": (int, 100),
        "train_frac": (float, 0.8),
        "global_test": (int, 0),
    },
    "model": {
        "arch": (str, "linear_softmax"),
        "hidden": (int, 16),
    },
    "train": {
        "algorithm": (str, REQUIRED),
        "q": (float, 0.1),
        "alpha": (float, 0.5),
        "baseline_m": (float, 2.0),
        "epsilon": (float, 0.2),
        "gamma_lambda": (float, 0.1),
        "gamma_w": (float, 0.0),  # 0 means "use lr"
        "rounds": (int, 200),
        "local_epochs": (int, 1),
        "batch_size": (int, 64),
        "lr": (float, REQUIRED),
        "participation": (float, 1.0),
        "seeds": (str, REQUIRED),
    },
    "metrics": {
        "k_percent": (str, "10"),
        "nash_m": (float, 0.0),  # 0 resolves to baseline_m for propfair, else 2.0
    },
    "output": {
        "dir": (str, "out"),
        "eval_every": (int, 1),
    },
}


@dataclass
class ExperimentConfig:
    dataset: dict
    model: dict
    train: dict
    metrics: dict
    output: dict
    seeds: list[int]
    raw_text: str

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "model": self.model,
            "train": self.train,
            "metrics": self.metrics,
            "eval_every": self.output["eval_every"],
            "seeds": self.seeds,
        }

    def config_hash(self) -> str:
        return _digest(self.to_dict())

    def dataset_hash(self) -> str:
        return _digest({"dataset": self.dataset, "seeds": self.seeds})


def _digest(obj: dict) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _find_line(text: str, needle: str) -> int:
    pattern = re.compile(rf"^\s*{re.escape(needle)}\s*[=:\[]?", re.IGNORECASE)
    for lineno, line in enumerate(text.splitlines(), start=1):
        if pattern.match(line):
            return lineno
    return 0


def _fail(text: str, needle: str, msg: str) -> None:
    lineno = _find_line(text, needle)
    where = f"line {lineno}: " if lineno else ""
    raise ConfigError(where + msg)


def parse_config_text(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc

    for section in parser.sections():
        if section not in _SCHEMA:
            _fail(text, f"[{section}", f"unknown section [{section}]")
    blocks: dict[str, dict] = {}
    for section, keys in _SCHEMA.items():
        block = {}
        present = dict(parser.items(section)) if parser.has_section(section) else {}
        for key in present:
            if key not in keys:
                _fail(text, key, f"unknown key {key!r} in section [{section}]")
        for key, (typ, default) in keys.items():
            if key in present:
                raw = present[key].strip()
                try:
                    block[key] = typ(raw)
                except ValueError:
                    _fail(text, key, f"key {key!r} expects {typ.__name__}, got {raw!r}")
            elif default is REQUIRED:
                _fail(text, f"[{section}", f"section [{section}] is missing required key {key!r}")
            else:
                block[key] = default
        blocks[section] = block

    return _validate(text, blocks)


def _validate(text: str, blocks: dict[str, dict]) -> ExperimentConfig:
    ds, model, train = blocks["dataset"], blocks["model"], blocks["train"]
    metrics_b, output = blocks["metrics"], blocks["output"]

    if ds["generator"] not in _GENERATORS:
        _fail(text, "generator", f"generator must be one of {_GENERATORS}")
    if ds["partition"] not in _PARTITIONS:
        _fail(text, "partition", f"partition must be one of {_PARTITIONS}")
    if ds["partition"] == "auto":
        ds["partition"] = "dirichlet" if ds["generator"] == "gaussian_mixture" else "none"
    if ds["generator"] == "afl_failure":
        if ds["partition"] != "none":
            _fail(text, "partition", "afl_failure fixes its own 2-client structure")
        ds["dim"], ds["classes"] = 2, 2
    if not 0 < ds["train_frac"] < 1:
        _fail(text, "train_frac", "train_frac must lie in (0, 1)")
    if ds["beta"] <= 0:
        _fail(text, "beta", "beta must be positive")

    if model["arch"] not in _ARCHS:
        _fail(text, "arch", f"arch must be one of {_ARCHS}")
    if model["hidden"] < 1:
        _fail(text, "hidden", "hidden must be >= 1")

    if train["algorithm"] not in _ALGORITHMS:
        _fail(text, "algorithm", f"algorithm must be one of {_ALGORITHMS}")
    if train["lr"] <= 0:
        _fail(text, "lr", "lr must be positive")
    if train["rounds"] < 1:
        _fail(text, "rounds", "rounds must be >= 1")
    if not 0 < train["participation"] <= 1:
        _fail(text, "participation", "participation must lie in (0, 1]")
    if train["q"] < 0:
        _fail(text, "q", "q must be >= 0")
    if train["alpha"] <= 0:
        _fail(text, "alpha", "alpha must be positive")
    if not 0 < train["epsilon"] < train["baseline_m"]:
        _fail(text, "epsilon", "epsilon must satisfy 0 < epsilon < baseline_m")
    try:
        seeds = [int(tok) & (2**63 - 1) for tok in train["seeds"].replace(",", " ").split()]
    except ValueError:
        _fail(text, "seeds", "seeds must be a list of integers")
    if not seeds:
        _fail(text, "seeds", "seeds must be nonempty")
    train = dict(train)
    train.pop("seeds")

    if ds["min_size"] == 0:
        ds["min_size"] = 2 * train["batch_size"]
    try:
        k_list = [float(tok) for tok in metrics_b["k_percent"].replace(",", " ").split()]
    except ValueError:
        _fail(text, "k_percent", "k_percent must be a list of numbers")
    if not k_list or any(not 0 < k <= 100 for k in k_list):
        _fail(text, "k_percent", "k_percent values must lie in (0, 100]")
    metrics_b = dict(metrics_b)
    metrics_b["k_percent"] = k_list
    if metrics_b["nash_m"] == 0.0:
        metrics_b["nash_m"] = (
            train["baseline_m"] if train["algorithm"] == "propfair" else 2.0
        )

    if output["eval_every"] < 1:
        _fail(text, "eval_every", "eval_every must be >= 1")

    return ExperimentConfig(
        dataset=ds,
        model=model,
        train=train,
        metrics=metrics_b,
        output=output,
        seeds=seeds,
        raw_text=text,
    )


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())
