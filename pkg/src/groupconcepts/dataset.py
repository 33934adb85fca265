"""All-pairs datasets, seeded splits, OOD holdouts and subpopulation tags."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .groups import CalibrationSubset, Group, Subgroup


@dataclass(frozen=True, eq=False)
class Examples:
    """Parallel arrays of operands and their product under the group."""

    a: np.ndarray
    b: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        for name in ("a", "b", "target"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.a)

    def __getitem__(self, idx) -> "Examples":
        return Examples(self.a[idx], self.b[idx], self.target[idx])

    def keys(self, order: int) -> np.ndarray:
        return self.a * order + self.b

    def tuples(self) -> list[tuple[int, int, int]]:
        return list(zip(self.a.tolist(), self.b.tolist(), self.target.tolist()))

    @classmethod
    def from_pairs(cls, group: Group, a, b) -> "Examples":
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        return cls(a, b, group.table[a, b])

    @classmethod
    def concat(cls, parts: list["Examples"]) -> "Examples":
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("a", "b", "target")))


def enumerate_pairs(group: Group) -> Examples:
    """Every ``(a, b)`` pair, ``a`` major, ``b`` minor."""
    m = group.order
    a = np.repeat(np.arange(m), m)
    b = np.tile(np.arange(m), m)
    return Examples.from_pairs(group, a, b)


class HoldoutKind(str, enum.Enum):
    NONE = "none"
    COMMUTATIVITY = "commutativity"
    IDENTITY = "identity"


@dataclass(frozen=True)
class HoldoutPlan:
    kind: HoldoutKind = HoldoutKind.NONE
    elements: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", HoldoutKind(self.kind))
        object.__setattr__(self, "elements", tuple(int(e) for e in self.elements))
        if self.kind is HoldoutKind.COMMUTATIVITY and len(self.elements) != 1:
            raise ValueError("commutativity holdout takes exactly one element")
        if self.kind is HoldoutKind.IDENTITY and not self.elements:
            raise ValueError("identity holdout needs at least one element")
        if self.kind is HoldoutKind.NONE and self.elements:
            raise ValueError("plan 'none' takes no elements")

    @classmethod
    def none(cls) -> "HoldoutPlan":
        return cls()

    @classmethod
    def commutativity(cls, element: int) -> "HoldoutPlan":
        return cls(HoldoutKind.COMMUTATIVITY, (element,))

    @classmethod
    def identity(cls, elements) -> "HoldoutPlan":
        return cls(HoldoutKind.IDENTITY, tuple(elements))

    def held_out_mask(self, examples: Examples) -> np.ndarray:
        if self.kind is HoldoutKind.NONE:
            return np.zeros(len(examples), dtype=bool)
        el = np.asarray(self.elements)
        return np.isin(examples.a, el) | np.isin(examples.b, el)


def default_identity_holdout(group: Group, seed: int = 0) -> HoldoutPlan:
    """``max(1, |G| // 20)`` seeded non-identity elements."""
    t = max(1, group.order // 20)
    candidates = np.array([g for g in range(group.order) if g != group.identity])
    rng = np.random.default_rng(seed)
    return HoldoutPlan.identity(sorted(rng.choice(candidates, size=t, replace=False).tolist()))


@dataclass(frozen=True, eq=False)
class SplitDataset:
    train: Examples
    test: Examples
    held_out: Examples
    fraction: float
    seed: int
    plan: HoldoutPlan = field(default_factory=HoldoutPlan)


def split(examples: Examples, fraction: float, seed: int, plan: HoldoutPlan | None = None,
          order: int | None = None) -> SplitDataset:
    """Remove the holdout, then shuffle-split the remainder with ``seed``."""
    plan = plan or HoldoutPlan()
    if not 0 < fraction < 1:
        raise ValueError(f"split fraction must lie in (0, 1), got {fraction}")
    if plan.elements:
        limit = order if order is not None else int(max(examples.a.max(), examples.b.max())) + 1
        bad = [e for e in plan.elements if not 0 <= e < limit]
        if bad:
            raise IndexError(f"holdout elements {bad} out of range")
    held = plan.held_out_mask(examples)
    rest = np.flatnonzero(~held)
    n_train = int(round(fraction * len(rest)))
    if n_train == 0 or n_train == len(rest):
        raise ValueError(f"split leaves an empty train or test set ({len(rest)} examples remain after holdout)")
    perm = np.random.default_rng(seed).permutation(rest)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return SplitDataset(
        train=examples[train_idx],
        test=examples[test_idx],
        held_out=examples[np.flatnonzero(held)],
        fraction=fraction,
        seed=seed,
        plan=plan,
    )


@dataclass(frozen=True, eq=False)
class SubpopulationTags:
    involves_identity: np.ndarray
    in_subgroup: dict[str, np.ndarray]
    symmetric_partner: np.ndarray  # index of (b, a) in the same set, -1 if absent

    def flags(self, i: int) -> list[str]:
        out = ["identity"] if self.involves_identity[i] else []
        out += [f"subgroup:{k}" for k, v in self.in_subgroup.items() if v[i]]
        return out


def symmetric_partners(examples: Examples, order: int) -> np.ndarray:
    keys = examples.keys(order)
    pos = {int(k): i for i, k in enumerate(keys)}
    swapped = examples.b * order + examples.a
    return np.array([pos.get(int(k), -1) for k in swapped], dtype=np.int64)


def tag_subpopulations(examples: Examples, group: Group,
                       subgroups: list[Subgroup | CalibrationSubset] = ()) -> SubpopulationTags:
    e = group.identity
    ident = (examples.a == e) | (examples.b == e)
    sub = {}
    for s in subgroups:
        if len(s.membership) != group.order:
            raise ValueError(f"subgroup {s.name} is defined over a different group")
        sub[s.name] = s.membership[examples.a] & s.membership[examples.b]
    return SubpopulationTags(
        involves_identity=ident,
        in_subgroup=sub,
        symmetric_partner=symmetric_partners(examples, group.order),
    )


def ood_identity_examples(ds: SplitDataset, group: Group) -> Examples:
    """Held-out pairs of the form ``g' * e`` or ``e * g'``."""
    if ds.plan.kind is not HoldoutKind.IDENTITY:
        raise ValueError("dataset has no identity holdout")
    h = ds.held_out
    e = group.identity
    el = np.asarray(ds.plan.elements)
    mask = ((h.a == e) & np.isin(h.b, el)) | ((h.b == e) & np.isin(h.a, el))
    return h[np.flatnonzero(mask)]


def dump_csv(ds: SplitDataset, group: Group, path, subgroups=()) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["a", "b", "target", "split", "flags"])
        for name in ("train", "test", "held_out"):
            part = getattr(ds, name)
            tags = tag_subpopulations(part, group, subgroups)
            for i, (a, b, t) in enumerate(part.tuples()):
                writer.writerow([a, b, t, name, ";".join(tags.flags(i))])
    return path
