"""Linear probes for subgroup membership on frozen activations."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .dataset import Examples
from .groups import CalibrationSubset, Group, Subgroup, random_calibration_subset
from .numeric import Tensor, binary_cross_entropy_with_logits, tsum

MIN_POSITIVES = 10


class ProbeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ProbeDataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    layer: str = ""
    epoch: int | None = None
    target: str = ""
    seed: int = 0
    positives_available: int = 0

    @property
    def class_balance(self) -> float:
        y = np.concatenate([self.train_y, self.test_y])
        return float(y.mean())


@dataclass
class LinearProbe:
    weight: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray
    final_loss: float = float("nan")

    def decision(self, x: np.ndarray) -> np.ndarray:
        return ((np.asarray(x, dtype=np.float64) - self.mean) / self.scale) @ self.weight + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (self.decision(x) > 0).astype(np.int64)


@dataclass(frozen=True)
class ProbeReport:
    layer: str
    epoch: int | None
    target: str
    seed: int
    accuracy: float
    train_accuracy: float
    class_balance: float
    n_test: int
    calibration: bool = False

    def to_json(self) -> dict:
        return asdict(self)


def subset_labels(examples: Examples, mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    return (mask[examples.a] & mask[examples.b]).astype(np.int64)


def collect_activations(model, examples: Examples, layer: str) -> np.ndarray:
    return model.activations(examples.a, examples.b, layer)


def build_probe_dataset(features: np.ndarray, examples: Examples, mask: Subgroup | CalibrationSubset | np.ndarray,
                        seed: int = 0, test_fraction: float = 0.2, layer: str = "",
                        epoch: int | None = None, target: str | None = None) -> ProbeDataset:
    """Label pairs by joint membership, balance by down-sampling, split stratified."""
    membership = getattr(mask, "membership", mask)
    name = target if target is not None else getattr(mask, "name", "mask")
    features = np.asarray(features)
    if len(features) != len(examples):
        raise ProbeError(f"{len(features)} feature rows for {len(examples)} examples")
    y = subset_labels(examples, membership)
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    if len(pos) < MIN_POSITIVES:
        raise ProbeError(f"only {len(pos)} positive pairs for {name}; need at least {MIN_POSITIVES}")
    if len(neg) < MIN_POSITIVES:
        raise ProbeError(f"only {len(neg)} negative pairs for {name}; mask covers (almost) the whole group")
    rng = np.random.default_rng(seed)
    k = min(len(pos), len(neg))
    pos = np.sort(rng.choice(pos, size=k, replace=False))
    neg = np.sort(rng.choice(neg, size=k, replace=False))

    def cut(idx):
        idx = rng.permutation(idx)
        n_test = int(round(test_fraction * len(idx)))
        return idx[n_test:], idx[:n_test]

    pos_tr, pos_te = cut(pos)
    neg_tr, neg_te = cut(neg)
    tr = np.concatenate([pos_tr, neg_tr])
    te = np.concatenate([pos_te, neg_te])
    return ProbeDataset(
        train_x=features[tr], train_y=y[tr], test_x=features[te], test_y=y[te],
        layer=layer, epoch=epoch, target=name, seed=seed, positives_available=int((y == 1).sum()),
    )


def standardization(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    # constant features carry no signal; leave them at zero after centering
    sd = np.where(sd > 1e-12, sd, 1.0)
    return mu, sd


def train_probe(ds: ProbeDataset, epochs: int = 500, lr: float = 0.1, l2: float = 1e-4) -> LinearProbe:
    """Full-batch gradient descent on the L2-regularized logistic loss."""
    mu, sd = standardization(ds.train_x)
    x = (np.asarray(ds.train_x, dtype=np.float64) - mu) / sd
    w = Tensor(np.zeros(x.shape[1]), requires_grad=True)
    b = Tensor(np.zeros(()), requires_grad=True)
    xt = Tensor(x)
    loss_value = float("nan")
    for _ in range(epochs):
        w.grad = b.grad = None
        z = xt @ w.reshape(-1, 1)
        loss = binary_cross_entropy_with_logits(z.reshape(-1) + b, ds.train_y)
        loss = loss + tsum(w * w) * (0.5 * l2)
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise ProbeError("probe loss became non-finite")
        loss.backward()
        w.data -= lr * w.grad
        b.data -= lr * b.grad
    return LinearProbe(weight=w.data.copy(), bias=float(b.data), mean=mu, scale=sd, final_loss=loss_value)


def evaluate_probe(probe: LinearProbe, ds: ProbeDataset, calibration: bool | None = None) -> ProbeReport:
    test_acc = float((probe.predict(ds.test_x) == ds.test_y).mean())
    train_acc = float((probe.predict(ds.train_x) == ds.train_y).mean())
    if calibration is None:
        calibration = ds.target.startswith("random:")
    return ProbeReport(
        layer=ds.layer, epoch=ds.epoch, target=ds.target, seed=ds.seed, accuracy=test_acc,
        train_accuracy=train_acc, class_balance=ds.class_balance, n_test=len(ds.test_y),
        calibration=calibration,
    )


def calibration_subsets(group: Group, size: int, count: int, seed: int = 0) -> list[CalibrationSubset]:
    return [random_calibration_subset(group, size, seed=seed * 1000 + c + 1) for c in range(count)]


def probe_sweep(checkpoints: Mapping, examples: Examples, subgroup: Subgroup, group: Group,
                epochs: list[int] | None = None, layers: list[str] | None = None, n_calibrations: int = 3,
                seed: int = 0, probe_epochs: int = 500, lr: float = 0.1, l2: float = 1e-4) -> list[ProbeReport]:
    """Probe every ``checkpoint x layer x (subgroup + calibration subsets)`` cell.

    ``checkpoints`` maps epoch to a frozen model; a missing epoch raises
    ``KeyError`` naming it. The calibration subsets are shared by all cells
    so that a dashed curve always tracks the same random labelling.
    """
    epochs = sorted(checkpoints) if epochs is None else list(epochs)
    targets: list = [subgroup] + calibration_subsets(group, subgroup.size, n_calibrations, seed)
    reports = []
    for epoch in epochs:
        if epoch not in checkpoints:
            raise KeyError(f"no checkpoint for epoch {epoch}")
        model = checkpoints[epoch]
        tags = layers if layers is not None else model.layer_tags()
        for li, layer in enumerate(tags):
            feats = collect_activations(model, examples, layer)
            for ti, target in enumerate(targets):
                cell_seed = seed * 1_000_003 + epoch * 1009 + li * 101 + ti
                ds = build_probe_dataset(feats, examples, target, seed=cell_seed, layer=layer, epoch=epoch)
                probe = train_probe(ds, epochs=probe_epochs, lr=lr, l2=l2)
                rep = evaluate_probe(probe, ds, calibration=ti > 0)
                reports.append(rep)
    return reports


def write_probe_reports(reports: list[ProbeReport], jsonl_path=None, csv_path=None, run_id: str | None = None):
    if jsonl_path is not None:
        jsonl_path = Path(jsonl_path)
        jsonl_path.parent.mkdir(parents=True, exist_ok=True)
        with jsonl_path.open("a") as fh:
            for r in reports:
                fh.write(json.dumps({"run_id": run_id, **r.to_json()}, sort_keys=True) + "\n")
    if csv_path is not None:
        csv_path = Path(csv_path)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        with csv_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "layer", "target", "seed", "accuracy", "calibration"])
            for r in reports:
                w.writerow([r.epoch, r.layer, r.target, r.seed, f"{r.accuracy:.6f}", int(r.calibration)])
