"""Input schemas: the relative-change report and the run summary.

Validation is strict about required keys; the renderers never recompute a
statistic, they only draw what the files already contain.
"""

from __future__ import annotations

import json
import os


class SchemaError(ValueError):
    """An input file is missing a required key or has the wrong shape."""


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise SchemaError(f"missing key {key!r} in {where}")
    return obj[key]


def load_pf_report(path: str) -> dict:
    with open(path) as fh:
        report = json.load(fh)
    where = os.path.basename(path)
    for key in ("base_run", "other_run", "per_client", "weighted_aggregate", "clamp_count"):
        _require(report, key, where)
    if not isinstance(report["per_client"], list):
        raise SchemaError(f"per_client must be a list in {where}")
    for entry in report["per_client"]:
        _require(entry, "client_id", f"{where} per_client")
        _require(entry, "rel_change", f"{where} per_client")
    return report


def load_summary(path: str) -> dict:
    with open(path) as fh:
        summary = json.load(fh)
    where = os.path.basename(path)
    aggregate = _require(summary, "aggregate", where)
    mean = _require(aggregate, "mean_unweighted", f"{where} aggregate")
    _require(mean, "mean", f"{where} aggregate.mean_unweighted")
    _require(mean, "std", f"{where} aggregate.mean_unweighted")
    worst_k = _require(aggregate, "worst_k", f"{where} aggregate")
    if not worst_k:
        raise SchemaError(f"aggregate.worst_k is empty in {where}")
    for entry in worst_k.values():
        _require(entry, "mean", f"{where} aggregate.worst_k")
        _require(entry, "std", f"{where} aggregate.worst_k")
    return summary


def summary_label(summary: dict, path: str) -> str:
    label = summary.get("algorithm")
    if label:
        return str(label)
    return os.path.splitext(os.path.basename(path))[0]
