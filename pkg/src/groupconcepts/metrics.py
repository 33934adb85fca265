"""Accuracy, consistency and representational-similarity statistics.

Metric functions take a *predictor*: any object with
``predict_batch(a, b) -> ndarray`` and, for similarity statistics,
``activations(a, b, layer) -> ndarray``. Trained models satisfy this
directly; :class:`TablePredictor` wraps hand-built prediction tables and
:class:`CachedPredictor` memoizes a model over all ``|G|^2`` pairs.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .dataset import Examples

# Accuracies and consistencies live in [0, 1]; similarities in [-1, 1].
SIMILARITY_METRICS = {"symmetric_similarity", "equal_value_similarity"}
UNBOUNDED_METRICS = {"loss"}


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricRecord:
    metric: str
    subpopulation: str
    value: float
    n: int
    run_id: str | None = None
    epoch: int | None = None
    layer: str | None = None
    mode: str | None = None

    def __post_init__(self):
        if self.n <= 0:
            raise MetricError(f"{self.metric}/{self.subpopulation}: sample count must be positive")
        v = self.value
        if self.metric in SIMILARITY_METRICS:
            lo, hi = -1.0, 1.0
        elif self.metric in UNBOUNDED_METRICS:
            lo, hi = 0.0, math.inf
        else:
            lo, hi = 0.0, 1.0
        # cosine of float32 vectors may overshoot by an ulp
        if not (lo - 1e-6 <= v <= hi + 1e-6):
            raise MetricError(f"{self.metric}={v} outside [{lo}, {hi}]")

    def stamped(self, run_id: str, epoch: int) -> "MetricRecord":
        return replace(self, run_id=run_id, epoch=epoch)

    def to_json(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in ("run_id", "epoch", "metric", "subpopulation", "value", "n", "layer", "mode")
                if d[k] is not None or k in ("run_id", "epoch")}


class TablePredictor:
    """Predictions looked up from a ``|G| x |G|`` table.

    Optional ``features`` maps a layer name to a ``(|G|, |G|, d)`` array.
    """

    def __init__(self, table, features: dict[str, np.ndarray] | None = None):
        self.table = np.asarray(table, dtype=np.int64)
        self.features = features or {}

    @classmethod
    def constant(cls, order: int, value: int = 0) -> "TablePredictor":
        return cls(np.full((order, order), value))

    @classmethod
    def projection(cls, order: int) -> "TablePredictor":
        return cls(np.repeat(np.arange(order)[:, None], order, axis=1))

    @classmethod
    def lookup(cls, group) -> "TablePredictor":
        return cls(group.table)

    def predict_batch(self, a, b) -> np.ndarray:
        return self.table[np.asarray(a), np.asarray(b)]

    def layer_tags(self) -> list[str]:
        return list(self.features)

    def activations(self, a, b, layer: str) -> np.ndarray:
        if layer not in self.features:
            raise KeyError(f"unknown layer {layer!r}")
        return self.features[layer][np.asarray(a), np.asarray(b)]


class CachedPredictor:
    """Evaluate a frozen model once on every pair and serve lookups."""

    def __init__(self, model, order: int):
        self.model = model
        self.order = order
        m = order
        self._a = np.repeat(np.arange(m), m)
        self._b = np.tile(np.arange(m), m)
        self.table = model.predict_batch(self._a, self._b).reshape(m, m)
        self._acts: dict[str, np.ndarray] = {}

    def predict_batch(self, a, b) -> np.ndarray:
        return self.table[np.asarray(a), np.asarray(b)]

    def layer_tags(self) -> list[str]:
        return self.model.layer_tags()

    def activations(self, a, b, layer: str) -> np.ndarray:
        if layer not in self._acts:
            acts = self.model.activations(self._a, self._b, layer)
            self._acts[layer] = acts.reshape(self.order, self.order, -1)
        return self._acts[layer][np.asarray(a), np.asarray(b)]


# -- accuracy --------------------------------------------------------------

def accuracy(model, examples: Examples, mask=None, subpopulation: str = "global") -> MetricRecord:
    if mask is not None:
        examples = examples[np.flatnonzero(np.asarray(mask))]
    if len(examples) == 0:
        raise MetricError(f"empty subpopulation {subpopulation!r}")
    pred = model.predict_batch(examples.a, examples.b)
    return MetricRecord("accuracy", subpopulation, float((pred == examples.target).mean()), len(examples))


def subpopulation_accuracies(model, examples: Examples, tags) -> list[MetricRecord]:
    """Global, identity and per-subgroup accuracy; empty subpopulations are skipped."""
    pred = model.predict_batch(examples.a, examples.b)
    hit = pred == examples.target
    records = [MetricRecord("accuracy", "global", float(hit.mean()), len(hit))]
    masks = {"identity": tags.involves_identity}
    masks.update({f"subgroup:{k}": v for k, v in tags.in_subgroup.items()})
    for name, m in masks.items():
        if m.any():
            records.append(MetricRecord("accuracy", name, float(hit[m].mean()), int(m.sum())))
    return records


# -- pair sets -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PairSet:
    """Unordered pairs ``{(a, b), (b, a)}`` with ``a <= b``, each listed once."""

    a: np.ndarray
    b: np.ndarray

    def __len__(self):
        return len(self.a)

    @property
    def diagonal(self) -> np.ndarray:
        return self.a == self.b

    @classmethod
    def from_examples(cls, examples: Examples, order: int, require_both: bool = True) -> "PairSet":
        """Pairs drawn from ``examples``.

        With ``require_both`` an off-diagonal pair is kept only when both
        orderings occur in ``examples``; otherwise one ordering suffices.
        """
        keys = set(examples.keys(order).tolist())
        lo = np.minimum(examples.a, examples.b)
        hi = np.maximum(examples.a, examples.b)
        seen = set()
        out_a, out_b = [], []
        for x, y in zip(lo.tolist(), hi.tolist()):
            if (x, y) in seen:
                continue
            if require_both and not (x * order + y in keys and y * order + x in keys):
                continue
            seen.add((x, y))
            out_a.append(x)
            out_b.append(y)
        return cls(np.array(out_a, dtype=np.int64), np.array(out_b, dtype=np.int64))

    @classmethod
    def all_pairs(cls, order: int) -> "PairSet":
        a, b = np.triu_indices(order)
        return cls(a.astype(np.int64), b.astype(np.int64))


def symmetric_consistency(model, pairs: PairSet, subpopulation: str = "test") -> list[MetricRecord]:
    """Fraction of unordered pairs with ``f(a, b) == f(b, a)``.

    Returns the diagonal-included record and, when off-diagonal pairs exist,
    the diagonal-excluded one.
    """
    if len(pairs) == 0:
        raise MetricError("symmetric consistency over an empty pair set")
    same = model.predict_batch(pairs.a, pairs.b) == model.predict_batch(pairs.b, pairs.a)
    out = [MetricRecord("symmetric_consistency", subpopulation, float(same.mean()), len(same),
                        mode="diag_included")]
    off = ~pairs.diagonal
    if off.any():
        out.append(MetricRecord("symmetric_consistency", subpopulation, float(same[off].mean()),
                                int(off.sum()), mode="diag_excluded"))
    return out


# -- equal-value pairs -----------------------------------------------------

_ENUMERATE_LIMIT = 200_000


def equal_value_pairs(examples: Examples, cap: int | None = 50, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs ``(i, j)`` into ``examples`` with equal targets.

    Symmetric partners (``(a, b)`` with ``(b, a)``) are never paired. At most
    ``cap`` pairs are drawn per product value; ``cap=None`` keeps all.
    """
    rng = np.random.default_rng(seed)
    a, b, t = examples.a, examples.b, examples.target
    order_idx = np.argsort(t, kind="stable")
    values, starts = np.unique(t[order_idx], return_index=True)
    bounds = list(starts) + [len(t)]
    out_i, out_j = [], []
    for k in range(len(values)):
        idx = order_idx[bounds[k]:bounds[k + 1]]
        m = len(idx)
        if m < 2:
            continue
        total = m * (m - 1) // 2
        if cap is None or total <= _ENUMERATE_LIMIT:
            ii, jj = np.triu_indices(m, k=1)
            i, j = idx[ii], idx[jj]
            keep = ~((a[i] == b[j]) & (b[i] == a[j]))
            i, j = i[keep], j[keep]
            if cap is not None and len(i) > cap:
                pick = np.sort(rng.choice(len(i), size=cap, replace=False))
                i, j = i[pick], j[pick]
        else:
            chosen = set()
            while len(chosen) < cap:
                x, y = rng.choice(m, size=2, replace=False)
                x, y = (x, y) if x < y else (y, x)
                gi, gj = idx[x], idx[y]
                if a[gi] == b[gj] and b[gi] == a[gj]:
                    continue
                chosen.add((int(gi), int(gj)))
            pairs = sorted(chosen)
            i = np.array([p[0] for p in pairs], dtype=np.int64)
            j = np.array([p[1] for p in pairs], dtype=np.int64)
        out_i.append(i)
        out_j.append(j)
    if not out_i:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(out_i), np.concatenate(out_j)


def equal_value_consistency(model, examples: Examples, cap: int | None = 50, seed: int = 0,
                            subpopulation: str = "test") -> MetricRecord:
    i, j = equal_value_pairs(examples, cap, seed)
    if len(i) == 0:
        raise MetricError("no product value has two non-partner examples")
    pred = model.predict_batch(examples.a, examples.b)
    agree = pred[i] == pred[j]
    return MetricRecord("equal_value_consistency", subpopulation, float(agree.mean()), len(agree),
                        mode="all" if cap is None else f"cap{cap}")


# -- representational similarity ------------------------------------------

def cosine_rows(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity; zero vectors give 0."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    num = (u * v).sum(axis=1)
    den = np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return np.clip(out, -1.0, 1.0)


def representational_similarity(model, layer: str, mode: str, pairs: PairSet | None = None,
                                examples: Examples | None = None, cap: int | None = 50, seed: int = 0,
                                include_diagonal: bool = False, subpopulation: str = "test") -> MetricRecord:
    """Mean cosine similarity of layer activations.

    ``mode="symmetric"`` compares ``v(a, b)`` with ``v(b, a)`` over ``pairs``;
    ``mode="equal_value"`` compares seeded equal-target example pairs from
    ``examples`` (symmetric partners excluded).
    """
    if mode == "symmetric":
        if pairs is None:
            raise MetricError("symmetric similarity needs a PairSet")
        keep = np.ones(len(pairs), dtype=bool) if include_diagonal else ~pairs.diagonal
        pa, pb = pairs.a[keep], pairs.b[keep]
        if len(pa) == 0:
            raise MetricError("symmetric similarity over an empty pair set")
        sims = cosine_rows(model.activations(pa, pb, layer), model.activations(pb, pa, layer))
        name = "symmetric_similarity"
    elif mode == "equal_value":
        if examples is None:
            raise MetricError("equal-value similarity needs examples")
        i, j = equal_value_pairs(examples, cap, seed)
        if len(i) == 0:
            raise MetricError("no equal-value pairs available")
        acts = model.activations(examples.a, examples.b, layer)
        sims = cosine_rows(acts[i], acts[j])
        name = "equal_value_similarity"
    else:
        raise MetricError(f"unknown similarity mode {mode!r}")
    return MetricRecord(name, subpopulation, float(sims.mean()), len(sims), layer=layer, mode=mode)


# -- aggregation -------------------------------------------------------------

def confidence_interval(values) -> tuple[float, float]:
    """Mean and normal-approximation 95% half-width."""
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        raise MetricError("confidence interval needs at least two values")
    return float(x.mean()), float(1.96 * x.std(ddof=1) / math.sqrt(x.size))


def chance_level(order: int, subpopulation: str = "ood_commutativity") -> MetricRecord:
    """Agreement rate of two independent uniform guesses."""
    return MetricRecord("chance_consistency", subpopulation, 1.0 / order, order)
