"""Tidy CSV exports and SVG figures for runs and sweeps."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from .. import plotting
from ..metrics import confidence_interval
from .train import read_metric_log

KINDS = ("curves", "similarity", "probes")
METRIC_COLUMNS = ["run_id", "epoch", "metric", "subpopulation", "layer", "mode", "value", "n"]
PROBE_COLUMNS = ["run_id", "epoch", "layer", "target", "seed", "accuracy", "train_accuracy", "calibration"]


class ReportError(RuntimeError):
    pass


def locate(target: str, root) -> tuple[Path, list[Path]]:
    """Resolve a run id or sweep id to (report base dir, run dirs)."""
    root = Path(root)
    run_dir = root / target
    if (run_dir / "metrics.jsonl").exists():
        return run_dir, [run_dir]
    sweep_dir = root / "sweeps" / target
    if (sweep_dir / "sweep.json").exists():
        manifest = json.loads((sweep_dir / "sweep.json").read_text())
        runs = [root / c["run_id"] for c in manifest["cells"] if c.get("status") == "completed"]
        if not runs:
            raise ReportError(f"sweep {target} has no completed runs")
        return sweep_dir, runs
    raise ReportError(f"no run or sweep named {target!r} under {root}")


def _read_jsonl(path: Path) -> list[dict]:
    return read_metric_log(path) if path.exists() else []


def series(rows_by_run: dict[str, list[dict]], metric: str, subpopulation: str, layer=None, mode=None):
    """Per-epoch mean and CI half-width across runs (half-width None for a single run)."""
    per_epoch = defaultdict(list)
    for rows in rows_by_run.values():
        for r in rows:
            if r["metric"] != metric or r["subpopulation"] != subpopulation:
                continue
            if layer is not None and r.get("layer") != layer:
                continue
            if mode is not None and r.get("mode") != mode:
                continue
            per_epoch[r["epoch"]].append(r["value"])
    if not per_epoch:
        return None
    epochs = sorted(per_epoch)
    means, halves = [], []
    for e in epochs:
        vals = per_epoch[e]
        if len(vals) >= 2:
            m, h = confidence_interval(vals)
        else:
            m, h = vals[0], 0.0
        means.append(m)
        halves.append(h)
    multi = len(rows_by_run) > 1
    return epochs, means, (halves if multi else None)


def _require(s, name: str):
    if s is None:
        raise ReportError(f"missing metric series {name}")
    return s


def write_tidy_csv(rows: list[dict], path: Path, columns: list[str]) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow(["" if r.get(c) is None else r.get(c) for c in columns])
    return path


def _data_table(named_series: dict) -> str:
    cols = {"series": [], "epoch": [], "mean": [], "half_width": []}
    for name, s in named_series.items():
        if s is None:
            continue
        epochs, means, halves = s
        for i, e in enumerate(epochs):
            cols["series"].append(name)
            cols["epoch"].append(e)
            cols["mean"].append(round(means[i], 6))
            cols["half_width"].append(round(halves[i], 6) if halves else 0.0)
    return plotting.table_csv(cols)


def _mode_for(rows_by_run, metric: str, subpop: str, preferred: str) -> str | None:
    modes = {r.get("mode") for rows in rows_by_run.values() for r in rows
             if r["metric"] == metric and r["subpopulation"] == subpop}
    if preferred in modes:
        return preferred
    return sorted(m for m in modes if m)[0] if any(modes) else None


def report_curves(rows_by_run, out_dir: Path) -> list[Path]:
    out = []
    sym = _require(series(rows_by_run, "symmetric_consistency", "global", mode="diag_excluded"),
                   "symmetric_consistency/global")
    ev_mode = _mode_for(rows_by_run, "equal_value_consistency", "global", "cap50")
    ev = _require(series(rows_by_run, "equal_value_consistency", "global", mode=ev_mode),
                  "equal_value_consistency/global")
    fig, ax = plotting.get_plot()
    plotting.band(ax, sym[0], sym[1], sym[2], label="symmetric consistency")
    plotting.band(ax, ev[0], ev[1], ev[2], label="equal value consistency")
    ax.set_xlabel("epoch")
    ax.set_ylabel("consistency")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(frameon=False, fontsize=9)
    out.append(plotting.save_svg(fig, out_dir / "consistency.svg", "Symmetric vs equal value consistency",
                                 _data_table({"symmetric": sym, "equal_value": ev})))

    ood = series(rows_by_run, "symmetric_consistency", "ood_commutativity", mode="diag_excluded")
    ood_id = series(rows_by_run, "accuracy", "ood_identity")
    for name, s, chance_sub, ylabel in (("ood_commutativity", ood, "ood_commutativity", "OOD symmetric consistency"),
                                        ("ood_identity", ood_id, "ood_identity", "OOD identity accuracy")):
        if s is None:
            continue
        chance = _require(series(rows_by_run, "chance_consistency", chance_sub), f"chance_consistency/{chance_sub}")
        fig, ax = plotting.get_plot()
        plotting.band(ax, s[0], s[1], s[2], label=ylabel)
        ax.plot(chance[0], chance[1], color="k", linestyle=":", linewidth=1, label="chance 1/|G|")
        ax.set_xlabel("epoch")
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False, fontsize=9)
        out.append(plotting.save_svg(fig, out_dir / f"{name}.svg", ylabel, _data_table({name: s, "chance": chance})))

    subs = sorted({r["subpopulation"] for rows in rows_by_run.values() for r in rows if r["metric"] == "accuracy"})
    acc = {s: series(rows_by_run, "accuracy", s) for s in subs}
    _require(acc.get("global"), "accuracy/global")
    fig, ax = plotting.get_plot()
    for i, (s, data) in enumerate(acc.items()):
        plotting.band(ax, data[0], data[1], data[2], label=s, color=plotting.LAYER_COLORS[i % 8])
    ax.set_xlabel("epoch")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(frameon=False, fontsize=9)
    out.append(plotting.save_svg(fig, out_dir / "accuracy.svg", "Accuracy by subpopulation", _data_table(acc)))
    return out


def report_similarity(rows_by_run, out_dir: Path) -> list[Path]:
    layers = sorted({r["layer"] for rows in rows_by_run.values() for r in rows
                     if r["metric"] == "symmetric_similarity" and r.get("layer")},
                    key=lambda s: (len(s), s))
    if not layers:
        raise ReportError("missing metric series symmetric_similarity")
    fig, ax = plotting.get_plot()
    table = {}
    for i, layer in enumerate(layers):
        color = plotting.LAYER_COLORS[i % 8]
        sym = series(rows_by_run, "symmetric_similarity", f"layer:{layer}", layer=layer)
        ev = _require(series(rows_by_run, "equal_value_similarity", f"layer:{layer}", layer=layer),
                      f"equal_value_similarity/{layer}")
        plotting.band(ax, sym[0], sym[1], sym[2], label=f"{layer} symmetric", color=color)
        plotting.band(ax, ev[0], ev[1], ev[2], label=f"{layer} equal value", color=color, linestyle="--")
        table[f"{layer}:symmetric"] = sym
        table[f"{layer}:equal_value"] = ev
    ax.set_xlabel("epoch")
    ax.set_ylabel("cosine similarity")
    ax.legend(frameon=False, fontsize=8, ncol=2)
    return [plotting.save_svg(fig, out_dir / "similarity.svg", "Representational similarity by layer",
                              _data_table(table))]


def probe_series(probe_rows: list[dict], layer: str, calibration: bool):
    per_epoch = defaultdict(list)
    for r in probe_rows:
        if r["layer"] == layer and bool(r["calibration"]) == calibration:
            per_epoch[r["epoch"]].append(r["accuracy"])
    if not per_epoch:
        return None
    epochs = sorted(per_epoch)
    means, halves = [], []
    for e in epochs:
        vals = per_epoch[e]
        m, h = confidence_interval(vals) if len(vals) >= 2 else (vals[0], 0.0)
        means.append(m)
        halves.append(h)
    return epochs, means, halves


def report_probes(probe_rows: list[dict], out_dir: Path) -> list[Path]:
    if not probe_rows:
        raise ReportError("missing probe reports (run `probe` first)")
    layers = sorted({r["layer"] for r in probe_rows}, key=lambda s: (len(s), s))
    fig, ax = plotting.get_plot()
    table = {}
    for i, layer in enumerate(layers):
        color = plotting.LAYER_COLORS[i % 8]
        sub = _require(probe_series(probe_rows, layer, False), f"probe/{layer}/subgroup")
        cal = probe_series(probe_rows, layer, True)
        plotting.band(ax, sub[0], sub[1], sub[2], label=f"{layer} subgroup", color=color)
        table[f"{layer}:subgroup"] = sub
        if cal is not None:
            plotting.band(ax, cal[0], cal[1], cal[2], label=f"{layer} random", color=color, linestyle="--")
            table[f"{layer}:random"] = cal
    ax.set_xlabel("epoch")
    ax.set_ylabel("probe accuracy")
    ax.set_ylim(0.3, 1.02)
    ax.legend(frameon=False, fontsize=8, ncol=2)
    return [plotting.save_svg(fig, out_dir / "probes.svg", "Linear probe accuracy", _data_table(table))]


def report(target: str, kind: str, root) -> list[Path]:
    if kind not in KINDS:
        raise ReportError(f"unknown report kind {kind!r}; choose from {KINDS}")
    base, run_dirs = locate(target, root)
    out_dir = base / "report"
    out_dir.mkdir(parents=True, exist_ok=True)
    if kind == "probes":
        rows = [r for d in run_dirs for r in _read_jsonl(d / "probes.jsonl")]
        paths = report_probes(rows, out_dir)
        paths.append(write_tidy_csv(rows, out_dir / "probes_tidy.csv", PROBE_COLUMNS))
        return paths
    rows_by_run = {d.name: _read_jsonl(d / "metrics.jsonl") for d in run_dirs}
    paths = report_curves(rows_by_run, out_dir) if kind == "curves" else report_similarity(rows_by_run, out_dir)
    all_rows = [r for rows in rows_by_run.values() for r in rows]
    name = "metrics.csv" if kind == "curves" else "similarity_metrics.csv"
    if kind == "similarity":
        all_rows = [r for r in all_rows if r["metric"].endswith("_similarity")]
    paths.append(write_tidy_csv(all_rows, out_dir / name, METRIC_COLUMNS))
    return paths


def final_values(rows: list[dict], metric: str, subpopulation: str, mode=None) -> float | None:
    """Value of a series at its last logged epoch."""
    best = None
    for r in rows:
        if r["metric"] == metric and r["subpopulation"] == subpopulation and (mode is None or r.get("mode") == mode):
            if best is None or r["epoch"] >= best["epoch"]:
                best = r
    return None if best is None else best["value"]


def epoch_means(rows: list[dict], metric: str, subpopulation: str) -> np.ndarray:
    return np.array([r["value"] for r in rows if r["metric"] == metric and r["subpopulation"] == subpopulation])
