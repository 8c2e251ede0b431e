"""Run log documents and curve aggregation.

A run log is one self-contained JSON document: the config echo, the seed,
an environment stamp, methodology notes, and the per-round records.
Timing is deliberately kept out of the document (it goes to a sibling
timing.csv) so that identical configs and seeds produce byte-identical
logs.
"""
from __future__ import annotations

import csv
import io
import json
import platform
import statistics
from pathlib import Path

import numpy as np

from . import __version__
from .active_loop import RoundRecord
from .config import RunConfig
from .errors import AggregationError

RUNLOG_FORMAT = "shiftlab-runlog"
RUNLOG_VERSION = 1

# fixed methodology choices that are not obvious from the config alone
METHOD_NOTES = [
    "feature extractor is a dense stack on flat inputs; no convolutional layers",
    "k-means selection: seeded k-means++ init, Lloyd capped at 100 iterations "
    "or relative inertia change < 1e-6",
    "fine-tune scheme runs its second phase at 0.5x the base learning rates",
    "model is re-initialized from scratch every round unless warm_start is set",
]


def environment_stamp() -> dict:
    return {
        "package": f"shiftlab {__version__}",
        "python": platform.python_version(),
        "numpy": np.__version__,
        "platform": platform.platform(),
    }


def build_runlog(
    config: RunConfig,
    records: list[RoundRecord],
    *,
    pool_size: int,
    test_size: int,
    num_classes: int,
    input_dim: int,
    normalization: dict | None,
) -> dict:
    return {
        "format": RUNLOG_FORMAT,
        "version": RUNLOG_VERSION,
        "config": json.loads(config.model_dump_json()),
        "seed": config.seed,
        "environment": environment_stamp(),
        "notes": list(METHOD_NOTES),
        "data": {
            "pool_size": pool_size,
            "test_size": test_size,
            "num_classes": num_classes,
            "input_dim": input_dim,
            "normalization": normalization,
        },
        "rounds": [
            {
                "round": r.round,
                "selected": r.selected,
                "n_labeled": r.n_labeled,
                "accuracy": r.accuracy,
                "loss_traces": r.loss_traces,
                "scores": r.scores,
            }
            for r in records
        ],
        "final_accuracy": records[-1].accuracy if records else None,
    }


def runlog_json(doc: dict) -> str:
    """Canonical serialization: sorted keys, fixed indentation, no NaN."""
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"


def write_runlog(doc: dict, path: str | Path) -> None:
    Path(path).write_text(runlog_json(doc))


def load_runlog(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != RUNLOG_FORMAT:
        raise AggregationError(f"{path} is not a {RUNLOG_FORMAT} document")
    return doc


def timing_csv(records: list[RoundRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["round", "wall_clock_seconds"])
    for r in records:
        writer.writerow([r.round, f"{r.wall_clock_seconds:.6f}"])
    return buf.getvalue()


def scores_csv(score_rows: list[dict]) -> str:
    """Per-round candidate dump: index, score, both cues, selected flag.
    Cues that do not apply are left empty."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["index", "score", "diversity_cue", "uncertainty_cue", "selected"])
    for row in score_rows:
        writer.writerow(
            [
                row["index"],
                "" if row["score"] is None else repr(row["score"]),
                "" if row["diversity_cue"] is None else repr(row["diversity_cue"]),
                "" if row["uncertainty_cue"] is None else repr(row["uncertainty_cue"]),
                int(row["selected"]),
            ]
        )
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Curve aggregation

_COMPAT_KEYS = ("dataset", "schedule", "budgets", "max_rounds", "model")


def _compat_signature(doc: dict) -> str:
    cfg = doc["config"]
    sig = {k: cfg.get(k) for k in _COMPAT_KEYS}
    sig["dataset"] = dict(sig["dataset"] or {})
    sig["dataset"].pop("seed", None)  # per-run dataset seeds are expected to differ
    return json.dumps(sig, sort_keys=True)


def aggregate_curves(logs: list[dict]) -> list[dict]:
    """Mean/SD accuracy per round for every (scheme, strategy) group.

    All logs must share the dataset, model, and schedule blocks; seeds,
    schemes, and strategies may differ.
    """
    if not logs:
        raise AggregationError("no run logs to aggregate")
    signatures = {_compat_signature(doc) for doc in logs}
    if len(signatures) > 1:
        raise AggregationError(
            "run logs mix incompatible configurations (dataset, model, or schedule differ)"
        )
    groups: dict[tuple[str, str], list[dict]] = {}
    # seed order fixes the float summation order, so aggregation output is
    # independent of grid completion order
    for doc in sorted(logs, key=lambda d: d["config"]["seed"]):
        key = (doc["config"]["scheme"], doc["config"]["strategy"])
        groups.setdefault(key, []).append(doc)
    rows = []
    for (scheme, strategy), members in sorted(groups.items()):
        n_rounds = len(members[0]["rounds"])
        if any(len(m["rounds"]) != n_rounds for m in members):
            raise AggregationError("run logs disagree on the number of rounds")
        for r in range(n_rounds):
            accs = [m["rounds"][r]["accuracy"] for m in members]
            n_labeled = {m["rounds"][r]["n_labeled"] for m in members}
            if len(n_labeled) != 1:
                raise AggregationError("run logs disagree on labels bought per round")
            rows.append(
                {
                    "round": r,
                    "n_labeled": n_labeled.pop(),
                    "scheme": scheme,
                    "strategy": strategy,
                    "mean_acc": statistics.fmean(accs),
                    "sd_acc": statistics.stdev(accs) if len(accs) > 1 else 0.0,
                    "n_seeds": len(accs),
                }
            )
    return rows


CURVE_COLUMNS = ["round", "n_labeled", "scheme", "strategy", "mean_acc", "sd_acc", "n_seeds"]


def curves_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CURVE_COLUMNS)
    writer.writeheader()
    for row in rows:
        out = dict(row)
        out["mean_acc"] = repr(row["mean_acc"])
        out["sd_acc"] = repr(row["sd_acc"])
        writer.writerow(out)
    return buf.getvalue()
