"""Run and grid execution: dataset materialization, the active loop, file
outputs, and the bounded worker pool for grid cells."""
from __future__ import annotations

import concurrent.futures
import json
import multiprocessing
import os
from pathlib import Path

import numpy as np

from . import OUTPUT_ROOT_ENV, dann, runlog
from .active_loop import LoopInputs, Oracle, run_active_loop
from .config import GridConfig, RunConfig
from .data import DomainDataset, gen_shifted_pair, load_idx, split_pool_test, standardize
from .errors import ConfigError


def resolve_out_dir(requested: str | None, default_name: str) -> Path:
    """Explicit path wins; otherwise land under the output-root env var or,
    failing that, ./shiftlab-runs."""
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "shiftlab-runs"))
    if requested:
        path = Path(requested)
        return path if path.is_absolute() else root / path
    return root / default_name


def _subsample(ds: DomainDataset, max_rows: int | None, rng: np.random.Generator) -> DomainDataset:
    if max_rows is None or ds.n <= max_rows:
        return ds
    keep = np.sort(rng.permutation(ds.n)[:max_rows])
    return DomainDataset(
        ds.features[keep], ds.labels[keep], ds.domain,
        provenance=f"{ds.provenance} subsampled to {max_rows}",
    )


def materialize_datasets(config: RunConfig) -> tuple[DomainDataset, DomainDataset]:
    dcfg = config.dataset
    if dcfg.kind == "synthetic":
        return gen_shifted_pair(dcfg.to_shift_spec(config.seed))
    missing = [
        name
        for name in ("source_images", "source_labels", "target_images", "target_labels")
        if getattr(dcfg, name) is None
    ]
    if missing:
        raise ConfigError(f"idx dataset needs paths for: {', '.join(missing)}")
    source = load_idx(dcfg.source_images, dcfg.source_labels)
    target = load_idx(dcfg.target_images, dcfg.target_labels, domain="target")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 12]))
    return _subsample(source, dcfg.max_rows, rng), _subsample(target, dcfg.max_rows, rng)


def prepare_loop_inputs(config: RunConfig) -> tuple[LoopInputs, dict | None, dict]:
    """Datasets, split, normalization, and the assembled loop inputs.

    Returns (inputs, normalization doc, info dict with sizes)."""
    source, target = materialize_datasets(config)
    pool_idx, test_idx = split_pool_test(target.n, config.seed, config.test_fraction)
    norm_doc = None
    if config.standardize:
        (source, target), stats = standardize(source, target)
        norm_doc = stats.to_doc()
    num_classes = int(max(source.labels.max(), target.labels.max())) + 1
    inputs = LoopInputs(
        source_features=source.features,
        source_labels=source.labels,
        target_features=target.features,
        pool_indices=pool_idx,
        test_indices=test_idx,
        test_labels=target.labels[test_idx],
        oracle=Oracle(target.labels),
        model_spec=config.to_model_spec(source.dim, num_classes),
        scheme=config.scheme,
        strategy=config.strategy,
        schedule=config.schedule.to_schedule(),
        budgets=config.budget_list(),
        seed=config.seed,
        first_round_random=config.first_round_random,
        warm_start=config.warm_start,
        labeled_target_domain_label=config.labeled_target_domain_label,
        record_scores=config.record_scores,
    )
    info = {
        "pool_size": int(pool_idx.shape[0]),
        "test_size": int(test_idx.shape[0]),
        "num_classes": num_classes,
        "input_dim": source.dim,
    }
    return inputs, norm_doc, info


def execute_run(config: RunConfig, out_dir: str | Path | None = None) -> dict:
    """Run one configuration end to end and write its output files."""
    target_dir = (
        Path(out_dir)
        if out_dir is not None
        else resolve_out_dir(config.out_dir, f"run-seed{config.seed}")
    )
    inputs, norm_doc, info = prepare_loop_inputs(config)
    records, model = run_active_loop(inputs)
    doc = runlog.build_runlog(config, records, normalization=norm_doc, **info)

    target_dir.mkdir(parents=True, exist_ok=True)
    runlog_path = target_dir / "runlog.json"
    runlog.write_runlog(doc, runlog_path)
    (target_dir / "timing.csv").write_text(runlog.timing_csv(records))
    dann.save_checkpoint(model, target_dir / "checkpoint.json")
    scores_dir = target_dir / "scores"
    for record in records:
        if record.scores is not None:
            scores_dir.mkdir(exist_ok=True)
            (scores_dir / f"round_{record.round:03d}.csv").write_text(
                runlog.scores_csv(record.scores)
            )
    return {
        "out_dir": str(target_dir),
        "runlog_path": str(runlog_path),
        "final_accuracy": doc["final_accuracy"],
        "runlog": doc,
    }


def _cell_config(grid: GridConfig, scheme, strategy, seed) -> RunConfig:
    return grid.base.model_copy(
        update={"scheme": scheme, "strategy": strategy, "seed": seed, "out_dir": None}
    )


def _cell_name(scheme, strategy, seed) -> str:
    return f"{scheme.value}_{strategy.value}_seed{seed}"


def _grid_cell_worker(payload: tuple[str, str]) -> tuple[str, str]:
    """Subprocess entry point: run one cell, return (status, detail)."""
    config_json, cell_dir = payload
    try:
        config = RunConfig.model_validate_json(config_json)
        result = execute_run(config, out_dir=cell_dir)
        return "ok", result["runlog_path"]
    except Exception as err:  # cell failures must not abort siblings
        return "failed", f"{type(err).__name__}: {err}"


def execute_grid(grid: GridConfig, out_dir: str | Path | None = None) -> dict:
    """Cross schemes x strategies x seeds on a bounded worker pool.

    Each cell owns its own subdirectory; failures are reported per cell
    while the remaining cells keep running.
    """
    target_dir = (
        Path(out_dir) if out_dir is not None else resolve_out_dir(grid.out_dir, "grid")
    )
    target_dir.mkdir(parents=True, exist_ok=True)
    cells = grid.cells()
    payloads = []
    for scheme, strategy, seed in cells:
        config = _cell_config(grid, scheme, strategy, seed)
        cell_dir = target_dir / _cell_name(scheme, strategy, seed)
        payloads.append((config.model_dump_json(), str(cell_dir)))

    workers = grid.workers or os.cpu_count() or 1
    workers = min(workers, len(payloads))
    if workers <= 1:
        outcomes = [_grid_cell_worker(p) for p in payloads]
    else:
        ctx = multiprocessing.get_context("spawn")
        with concurrent.futures.ProcessPoolExecutor(workers, mp_context=ctx) as pool:
            outcomes = list(pool.map(_grid_cell_worker, payloads))

    cell_reports = []
    logs = []
    for (scheme, strategy, seed), (status, detail) in zip(cells, outcomes):
        report = {
            "scheme": scheme.value,
            "strategy": strategy.value,
            "seed": seed,
            "status": status,
            "out_dir": str(target_dir / _cell_name(scheme, strategy, seed)),
        }
        if status == "ok":
            logs.append(runlog.load_runlog(detail))
        else:
            report["error"] = detail
        cell_reports.append(report)

    curves_rows = runlog.aggregate_curves(logs) if logs else []
    curves_path = target_dir / "curves.csv"
    curves_path.write_text(runlog.curves_csv(curves_rows))
    (target_dir / "grid.json").write_text(
        json.dumps({"cells": cell_reports}, indent=1, sort_keys=True) + "\n"
    )
    return {
        "out_dir": str(target_dir),
        "curves_path": str(curves_path),
        "cells": cell_reports,
        "curves": curves_rows,
    }
