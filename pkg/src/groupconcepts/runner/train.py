"""Training loop, periodic metric evaluation and run bookkeeping."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import metrics as M
from ..dataset import (
    HoldoutKind,
    HoldoutPlan,
    SplitDataset,
    default_identity_holdout,
    enumerate_pairs,
    ood_identity_examples,
    split,
    tag_subpopulations,
)
from ..groups import Group, build_group, build_subgroup
from ..models import Model, build_model
from ..numeric import AdamState, adam_step, cross_entropy
from ..probing import probe_sweep, write_probe_reports
from .checkpoint import CheckpointStore, save_checkpoint
from .config import RunConfig, dump_config

log = logging.getLogger(__name__)


@dataclass
class RunRecord:
    run_id: str
    config: dict
    status: str = "running"
    wall_clock: float = 0.0
    epochs_run: int = 0
    final_metrics: dict = field(default_factory=dict)
    error: str | None = None
    run_dir: str = ""

    def to_json(self) -> dict:
        return asdict(self)


class MetricLog:
    """Append-only JSONL writer; every line is flushed as it is written."""

    def __init__(self, path: Path, run_id: str):
        self.path = path
        self.run_id = run_id
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("")

    def write(self, records: list[M.MetricRecord], epoch: int):
        with self.path.open("a") as fh:
            for r in records:
                row = r.stamped(self.run_id, epoch).to_json()
                row["timestamp"] = round(time.time(), 3)
                fh.write(json.dumps(row) + "\n")


def read_metric_log(path) -> list[dict]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rows.append(json.loads(line))
    return rows


def make_holdout(cfg: RunConfig, group: Group) -> HoldoutPlan:
    kind = HoldoutKind(cfg.holdout)
    if kind is HoldoutKind.NONE:
        return HoldoutPlan.none()
    if kind is HoldoutKind.COMMUTATIVITY:
        if cfg.holdout_elements:
            return HoldoutPlan.commutativity(cfg.holdout_elements[0])
        rng = np.random.default_rng(cfg.seed + 7919)
        choices = [g for g in range(group.order) if g != group.identity]
        return HoldoutPlan.commutativity(int(rng.choice(choices)))
    if cfg.holdout_elements:
        return HoldoutPlan.identity(cfg.holdout_elements)
    return default_identity_holdout(group, cfg.seed)


class Evaluator:
    """Computes every logged statistic for one frozen model snapshot."""

    def __init__(self, cfg: RunConfig, group: Group, data: SplitDataset, subgroups):
        self.cfg = cfg
        self.group = group
        self.data = data
        self.test_tags = tag_subpopulations(data.test, group, subgroups)
        self.test_pairs = M.PairSet.from_examples(data.test, group.order, require_both=True)
        self.all_pairs = M.PairSet.all_pairs(group.order)
        self.plan = data.plan
        if self.plan.kind is HoldoutKind.COMMUTATIVITY:
            self.ood_pairs = M.PairSet.from_examples(data.held_out, group.order, require_both=True)
        if self.plan.kind is HoldoutKind.IDENTITY:
            self.ood_identity = ood_identity_examples(data, group)

    def evaluate(self, model: Model, train_loss: float | None, with_similarity: bool) -> list[M.MetricRecord]:
        cfg, g, data = self.cfg, self.group, self.data
        pred = M.CachedPredictor(model, g.order)
        out: list[M.MetricRecord] = []
        if train_loss is not None:
            out.append(M.MetricRecord("loss", "train", float(train_loss), len(data.train)))
        train_acc = M.accuracy(pred, data.train, subpopulation="train")
        out.append(M.MetricRecord("train_accuracy", "global", train_acc.value, train_acc.n))
        out += M.subpopulation_accuracies(pred, data.test, self.test_tags)
        if len(self.test_pairs):
            out += M.symmetric_consistency(pred, self.test_pairs, subpopulation="global")
        out += M.symmetric_consistency(pred, self.all_pairs, subpopulation="all_pairs")
        try:
            out.append(M.equal_value_consistency(pred, data.test, cap=cfg.equal_value_cap, seed=cfg.seed,
                                                 subpopulation="global"))
        except M.MetricError as exc:
            log.warning("equal-value consistency skipped: %s", exc)
        if self.plan.kind is HoldoutKind.COMMUTATIVITY:
            out += M.symmetric_consistency(pred, self.ood_pairs, subpopulation="ood_commutativity")
            out.append(M.chance_level(g.order, "ood_commutativity"))
        if self.plan.kind is HoldoutKind.IDENTITY and len(self.ood_identity):
            out.append(M.accuracy(pred, self.ood_identity, subpopulation="ood_identity"))
            out.append(M.chance_level(g.order, "ood_identity"))
        if with_similarity:
            for layer in model.layer_tags():
                sub = f"layer:{layer}"
                if len(self.test_pairs) and (~self.test_pairs.diagonal).any():
                    out.append(M.representational_similarity(pred, layer, "symmetric", pairs=self.test_pairs,
                                                              subpopulation=sub))
                try:
                    out.append(M.representational_similarity(pred, layer, "equal_value", examples=data.test,
                                                              cap=cfg.equal_value_cap, seed=cfg.seed,
                                                              subpopulation=sub))
                except M.MetricError:
                    pass
        return out


def _final_summary(records: list[M.MetricRecord]) -> dict:
    out = {}
    for r in records:
        key = f"{r.metric}/{r.subpopulation}"
        if r.mode:
            key += f"/{r.mode}"
        if r.layer and r.layer not in key:
            key += f"/{r.layer}"
        out[key] = r.value
    return out


def prepare(cfg: RunConfig):
    group = build_group(cfg.group_spec)
    subgroups = [build_subgroup(group, s) for s in cfg.subgroups]
    plan = make_holdout(cfg, group)
    data = split(enumerate_pairs(group), cfg.train_fraction, cfg.seed, plan, order=group.order)
    return group, subgroups, data


def train_epoch(model: Model, state: AdamState, x: np.ndarray, targets: np.ndarray, batch_size: int,
                rng: np.random.Generator) -> float:
    n = len(targets)
    order = rng.permutation(n) if batch_size < n else np.arange(n)
    total = 0.0
    for s in range(0, n, batch_size):
        idx = order[s:s + batch_size]
        leaves = model.leaves()
        # overflow shows up as a non-finite loss, handled below
        with np.errstate(over="ignore", invalid="ignore"):
            logits, _ = model.forward(x[idx], params=leaves)
            loss = cross_entropy(logits, targets[idx])
        lv = loss.item()
        if not np.isfinite(lv):
            return float("nan")
        loss.backward()
        adam_step(state, model.params, {k: t.grad for k, t in leaves.items()})
        total += lv * len(idx)
    return total / n


def run_experiment(cfg: RunConfig, output_root=None) -> RunRecord:
    """Train one model end to end, logging metrics and checkpoints under ``<root>/<run_id>``."""
    start = time.time()
    run_id = cfg.run_id
    root = Path(output_root) if output_root is not None else cfg.output_root()
    run_dir = root / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.toml").write_text(dump_config(cfg))
    (run_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
    record = RunRecord(run_id=run_id, config=cfg.to_dict(), run_dir=str(run_dir))
    metric_log = MetricLog(run_dir / "metrics.jsonl", run_id)

    group, subgroups, data = prepare(cfg)
    model = build_model(cfg.model_config(group.order))
    log.info("run %s: %s %s, %d params, %d train / %d test / %d held out", run_id, cfg.model, group.name,
             model.parameter_count(), len(data.train), len(data.test), len(data.held_out))
    evaluator = Evaluator(cfg, group, data, subgroups)
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay, decoupled=cfg.weight_decay_mode == "decoupled")
    x_train = model.encode(data.train.a, data.train.b)
    y_train = np.asarray(data.train.target)
    batch = cfg.resolved_batch_size(group.order, len(y_train))
    cadence = cfg.resolved_metric_every()
    sim_cadence = cfg.resolved_similarity_every()
    checkpoints = set(cfg.resolved_checkpoints())
    rng = np.random.default_rng(cfg.seed + 1)

    last_records: list[M.MetricRecord] = []
    train_loss = None
    epoch = 0
    try:
        for epoch in range(cfg.epochs + 1):
            if epoch > 0:
                train_loss = train_epoch(model, state, x_train, y_train, batch, rng)
                if not np.isfinite(train_loss):
                    raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            final = epoch == cfg.epochs
            if epoch % cadence == 0 or final:
                with_sim = sim_cadence > 0 and (epoch % sim_cadence == 0 or final)
                last_records = evaluator.evaluate(model, train_loss, with_sim)
                metric_log.write(last_records, epoch)
                test_acc = next(r.value for r in last_records if r.metric == "accuracy" and r.subpopulation == "global")
                train_acc = next(r.value for r in last_records if r.metric == "train_accuracy")
                log.debug("epoch %d loss %s train %.4f test %.4f", epoch, train_loss, train_acc, test_acc)
                stop = cfg.early_stop_accuracy > 0 and min(test_acc, train_acc) >= cfg.early_stop_accuracy
                if stop and not final:
                    if epoch not in checkpoints:
                        save_checkpoint(run_dir, run_id, epoch, model)
                    record.epochs_run = epoch
                    break
            if epoch in checkpoints:
                save_checkpoint(run_dir, run_id, epoch, model)
            record.epochs_run = epoch
        record.status = "completed"
    except FloatingPointError as exc:
        record.status = "failed"
        record.error = str(exc)
        log.error("run %s diverged: %s", run_id, exc)

    record.final_metrics = _final_summary(last_records)
    if record.status == "completed" and cfg.probe_subgroup:
        run_probes(run_dir, cfg, group=group)
    record.wall_clock = round(time.time() - start, 3)
    (run_dir / "record.json").write_text(json.dumps(record.to_json(), indent=1, sort_keys=True))
    return record


def run_probes(run_dir, cfg: RunConfig, subgroup: str | None = None, calibrations: int | None = None,
               group: Group | None = None):
    """Probe sweep over every saved checkpoint of a run; appends to ``probes.jsonl``."""
    run_dir = Path(run_dir)
    group = group or build_group(cfg.group_spec)
    sub = build_subgroup(group, subgroup or cfg.probe_subgroup)
    store = CheckpointStore(run_dir)
    reports = probe_sweep(
        store, enumerate_pairs(group), sub, group,
        layers=list(cfg.probe_layers) or None,
        n_calibrations=cfg.probe_calibrations if calibrations is None else calibrations,
        seed=cfg.seed,
    )
    write_probe_reports(reports, run_dir / "probes.jsonl", run_dir / "probes.csv", run_id=cfg.run_id)
    return reports


def load_run(run_dir) -> tuple[RunConfig, dict]:
    from .config import config_from_dict

    run_dir = Path(run_dir)
    cfg_dict = json.loads((run_dir / "config.json").read_text())
    record = json.loads((run_dir / "record.json").read_text()) if (run_dir / "record.json").exists() else {}
    return config_from_dict(cfg_dict), record
