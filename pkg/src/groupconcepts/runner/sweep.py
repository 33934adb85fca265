"""Cartesian-product sweeps over config fields and seeds."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import os
import traceback
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

from ..metrics import confidence_interval
from .config import JOBS_ENV, ConfigError, RunConfig, config_from_dict
from .train import RunRecord, read_metric_log, run_experiment

log = logging.getLogger(__name__)

_FIELD_TYPES = {f.name: f.default for f in fields(RunConfig)}


def coerce_value(key: str, text: str):
    """Parse a CLI axis value according to the type of the config field."""
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown sweep axis {key!r}")
    default = _FIELD_TYPES[key]
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        return tuple(p for p in text.split(";") if p)
    return text


def parse_axis(spec: str) -> tuple[str, list]:
    """``"lr=1e-3,1e-4"`` -> ``("lr", [0.001, 0.0001])``."""
    if "=" not in spec:
        raise ConfigError(f"axis must look like key=v1,v2; got {spec!r}")
    key, values = spec.split("=", 1)
    key = key.strip()
    return key, [coerce_value(key, v.strip()) for v in values.split(",") if v.strip()]


def sweep_id(template: RunConfig, axes: dict, seeds: list[int]) -> str:
    blob = json.dumps({"template": template.identity_dict(), "axes": {k: list(v) for k, v in axes.items()},
                       "seeds": list(seeds)}, sort_keys=True, default=list)
    return "sweep-" + hashlib.sha256(blob.encode()).hexdigest()[:10]


def _run_cell(cfg_dict: dict, root: str) -> dict:
    try:
        cfg = config_from_dict(cfg_dict)
        return run_experiment(cfg, root).to_json()
    except Exception as exc:  # a failing cell must not take the sweep down
        return RunRecord(run_id=cfg_dict.get("run_id", "?"), config=cfg_dict, status="failed",
                         error=f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}").to_json()


def sweep(template: RunConfig, axes: dict[str, list], seeds, jobs: int | None = None,
          output_root=None) -> tuple[str, list[dict]]:
    """Run every axis combination for every seed; write ``sweep.json`` and ``aggregate.csv``."""
    seeds = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    for key in axes:
        if key not in _FIELD_TYPES or key == "seed":
            raise ConfigError(f"invalid sweep axis {key!r}")
    root = Path(output_root) if output_root is not None else template.output_root()
    sid = sweep_id(template, axes, seeds)
    sweep_dir = root / "sweeps" / sid
    sweep_dir.mkdir(parents=True, exist_ok=True)

    keys = list(axes)
    cells = []
    for combo in itertools.product(*(axes[k] for k in keys)):
        for seed in seeds:
            values = dict(zip(keys, combo))
            cfg = template.replace(**values, seed=seed)
            cells.append({"axes": values, "seed": seed, "config": cfg.to_dict(), "run_id": cfg.run_id})

    jobs = jobs or int(os.environ.get(JOBS_ENV, "1"))
    if jobs <= 1:
        results = [_run_cell(c["config"], str(root)) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, [c["config"] for c in cells], [str(root)] * len(cells)))

    for cell, res in zip(cells, results):
        cell["status"] = res["status"]
        cell["error"] = res.get("error")
    manifest = {"sweep_id": sid, "template": template.to_dict(), "axes": {k: list(v) for k, v in axes.items()},
                "seeds": seeds, "cells": [{k: v for k, v in c.items() if k != "config"} for c in cells]}
    (sweep_dir / "sweep.json").write_text(json.dumps(manifest, indent=1, sort_keys=True, default=list))
    aggregate(root, cells, sweep_dir / "aggregate.csv")
    return sid, results


def _series_key(row: dict) -> tuple:
    return (row["metric"], row["subpopulation"], row.get("layer") or "", row.get("mode") or "")


def aggregate_rows(rows_by_run: dict[str, list[dict]]) -> dict:
    """Group metric rows by (series, epoch) across runs."""
    table = defaultdict(list)
    for rows in rows_by_run.values():
        for r in rows:
            table[(_series_key(r), r["epoch"])].append(r["value"])
    return table


def aggregate(root: Path, cells: list[dict], out_path: Path) -> Path:
    groups = defaultdict(dict)
    for c in cells:
        if c.get("status") != "completed":
            continue
        log_path = root / c["run_id"] / "metrics.jsonl"
        if log_path.exists():
            groups[json.dumps(c["axes"], sort_keys=True, default=list)][c["run_id"]] = read_metric_log(log_path)
    with out_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "epoch", "metric", "subpopulation", "layer", "mode", "mean", "half_width", "n_seeds"])
        for cell_key, rows_by_run in sorted(groups.items()):
            table = aggregate_rows(rows_by_run)
            for (series, epoch), values in sorted(table.items(), key=lambda kv: (kv[0][0], kv[0][1])):
                if len(values) >= 2:
                    mean, half = confidence_interval(values)
                else:
                    mean, half = values[0], 0.0
                w.writerow([cell_key, epoch, *series, f"{mean:.6g}", f"{half:.6g}", len(values)])
    return out_path
