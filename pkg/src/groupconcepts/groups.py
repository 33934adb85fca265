"""Finite groups as dense Cayley tables.

Elements are integer indices ``0..|G|-1``. Conventions:

* ``C_n``: index ``i`` is the residue ``i``.
* ``S_n``: permutations in lexicographic order of one-line notation,
  composed right-to-left, ``(s*t)(x) = s(t(x))``.
* ``D_n``: ``0..n-1`` are rotations ``r^i``, ``n..2n-1`` are reflections
  ``s r^(i-n)``, with ``r^n = s^2 = e`` and ``s r s = r^-1``.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

MAX_SYMMETRIC = 7
DEFAULT_EXHAUSTIVE_CAP = 120
SAMPLED_TRIPLES = 1_000_000


class GroupError(ValueError):
    pass


class Family(str, enum.Enum):
    CYCLIC = "cyclic"
    SYMMETRIC = "symmetric"
    DIHEDRAL = "dihedral"

    @classmethod
    def parse(cls, name: str) -> "Family":
        key = name.strip().lower()
        aliases = {"c": cls.CYCLIC, "s": cls.SYMMETRIC, "d": cls.DIHEDRAL}
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise GroupError(f"unknown group family {name!r}") from None


@dataclass(frozen=True)
class GroupSpec:
    family: Family
    n: int

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family) if isinstance(self.family, str) else self.family)
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise GroupError(f"{self.family.value} parameter must be >= 1, got {self.n}")
        if self.family is Family.SYMMETRIC and self.n > MAX_SYMMETRIC:
            raise GroupError(f"symmetric parameter must be <= {MAX_SYMMETRIC}, got {self.n}")

    @property
    def name(self) -> str:
        return f"{self.family.value[0].upper()}_{self.n}"

    @classmethod
    def parse(cls, text: str) -> "GroupSpec":
        """Parse ``"C_100"``, ``"S5"`` or ``"dihedral:30"``."""
        text = text.strip()
        for sep in ("_", ":"):
            if sep in text:
                fam, n = text.split(sep, 1)
                return cls(Family.parse(fam), int(n))
        return cls(Family.parse(text[0]), int(text[1:]))


# The roster of groups used in the experiments.
ROSTER = tuple(
    [GroupSpec(Family.CYCLIC, n) for n in (64, 67, 100, 256, 257, 508, 512)]
    + [GroupSpec(Family.SYMMETRIC, n) for n in (4, 5, 6)]
    + [GroupSpec(Family.DIHEDRAL, n) for n in (30, 50, 60, 120, 240)]
)


@dataclass(frozen=True, eq=False)
class Group:
    spec: GroupSpec
    table: np.ndarray
    identity: int
    labels: tuple[str, ...]
    inverse: np.ndarray = field(default=None)

    def __post_init__(self):
        table = np.asarray(self.table)
        m = len(self.labels)
        if table.shape != (m, m):
            raise GroupError(f"table shape {table.shape} does not match {m} labels")
        if table.min() < 0 or table.max() >= m:
            raise GroupError("table entries must lie in [0, |G|)")
        table = table.astype(np.int32, copy=True)
        table.setflags(write=False)
        object.__setattr__(self, "table", table)
        if self.inverse is None:
            inv = np.argmax(table == self.identity, axis=1).astype(np.int32)
        else:
            inv = np.asarray(self.inverse, dtype=np.int32).copy()
        inv.setflags(write=False)
        object.__setattr__(self, "inverse", inv)

    @property
    def order(self) -> int:
        return len(self.labels)

    @property
    def name(self) -> str:
        return self.spec.name

    def op(self, a: int, b: int) -> int:
        return group_op(self, a, b)

    def to_json(self) -> dict:
        return {
            "family": self.spec.family.value,
            "parameter": int(self.spec.n),
            "order": self.order,
            "identity": int(self.identity),
            "labels": list(self.labels),
            "table": self.table.ravel().tolist(),
        }


def permutations_lex(n: int) -> np.ndarray:
    """All permutations of ``range(n)`` in lexicographic order, one per row."""
    return np.array(list(itertools.permutations(range(n))), dtype=np.int64).reshape(-1, n)


def _perm_codes(perms: np.ndarray, n: int) -> np.ndarray:
    # base-n positional code; monotone in lexicographic order
    weights = n ** np.arange(n - 1, -1, -1, dtype=np.int64)
    return perms @ weights


def _cyclic(n: int):
    idx = np.arange(n)
    table = (idx[:, None] + idx[None, :]) % n
    return table, 0, tuple(str(i) for i in range(n))


def _symmetric(n: int):
    perms = permutations_lex(n)
    m = len(perms)
    codes = _perm_codes(perms, n)
    table = np.empty((m, m), dtype=np.int32)
    for i in range(m):
        # row i: perms[i] o perms[j], i.e. x -> perms[i][perms[j][x]]
        composed = perms[i][perms]
        table[i] = np.searchsorted(codes, _perm_codes(composed, n))
    labels = tuple("[" + " ".join(map(str, p)) + "]" for p in perms)
    return table, 0, labels


def _dihedral(n: int):
    idx = np.arange(2 * n)
    flip, rot = idx // n, idx % n
    f1, f2 = flip[:, None], flip[None, :]
    r1, r2 = rot[:, None], rot[None, :]
    # (s^f1 r^i1)(s^f2 r^i2) = s^(f1+f2) r^((-1)^f2 i1 + i2)
    sign = np.where(f2 == 1, -1, 1)
    table = ((f1 + f2) % 2) * n + (sign * r1 + r2) % n
    labels = tuple(
        ("e" if i == 0 else f"r^{i}") if f == 0 else ("s" if i == 0 else f"s r^{i}")
        for f, i in zip(flip, rot)
    )
    return table, 0, labels


def build_group(spec: GroupSpec) -> Group:
    """Materialize the Cayley table of ``spec``."""
    builders = {Family.CYCLIC: _cyclic, Family.SYMMETRIC: _symmetric, Family.DIHEDRAL: _dihedral}
    table, identity, labels = builders[spec.family](spec.n)
    return Group(spec=spec, table=table, identity=identity, labels=labels)


def group_op(g: Group, a: int, b: int) -> int:
    m = g.order
    if not (0 <= a < m and 0 <= b < m):
        raise IndexError(f"operands ({a}, {b}) out of range for group of order {m}")
    return int(g.table[a, b])


@dataclass
class AxiomReport:
    group: str
    identity_ok: bool
    inverse_ok: bool
    latin_ok: bool
    associativity_exhaustive: bool
    triples_checked: int
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_axioms(g: Group, exhaustive_order_cap: int = DEFAULT_EXHAUSTIVE_CAP, seed: int = 0,
                  max_reported: int = 20) -> AxiomReport:
    """Check identity, inverse and associativity axioms against the table.

    Associativity is exhaustive for groups of order at most
    ``exhaustive_order_cap`` and otherwise uses a seeded sample of
    ``SAMPLED_TRIPLES`` triples. Violations are collected, never raised.
    """
    t = g.table.astype(np.int64)
    m = g.order
    e = g.identity
    elems = np.arange(m)
    violations: list = []

    bad = np.flatnonzero((t[e] != elems) | (t[:, e] != elems))
    identity_ok = bad.size == 0
    violations += [("identity", (int(x),)) for x in bad[:max_reported]]

    inv = g.inverse.astype(np.int64)
    bad = np.flatnonzero((t[elems, inv] != e) | (t[inv, elems] != e))
    inverse_ok = bad.size == 0
    violations += [("inverse", (int(x),)) for x in bad[:max_reported]]

    sorted_rows = np.sort(t, axis=1)
    sorted_cols = np.sort(t, axis=0)
    latin_ok = bool((sorted_rows == elems).all() and (sorted_cols == elems[:, None]).all())
    if not latin_ok:
        violations.append(("latin", ()))

    exhaustive = m <= exhaustive_order_cap
    assoc_bad: list = []
    if exhaustive:
        checked = m ** 3
        for a in range(m):
            # (a*b)*c vs a*(b*c) for all b, c
            left = t[t[a]]
            right = t[a][t]
            bb, cc = np.nonzero(left != right)
            assoc_bad += [(a, int(b), int(c)) for b, c in zip(bb, cc)]
            if len(assoc_bad) >= max_reported:
                break
    else:
        rng = np.random.default_rng(seed)
        checked = SAMPLED_TRIPLES
        a, b, c = rng.integers(0, m, size=(3, SAMPLED_TRIPLES))
        mism = np.flatnonzero(t[t[a, b], c] != t[a, t[b, c]])
        assoc_bad = [(int(a[i]), int(b[i]), int(c[i])) for i in mism]
    violations += [("associativity", trip) for trip in assoc_bad[:max_reported]]

    return AxiomReport(
        group=g.name,
        identity_ok=identity_ok,
        inverse_ok=inverse_ok,
        latin_ok=latin_ok,
        associativity_exhaustive=exhaustive,
        triples_checked=checked,
        violations=violations,
    )


def is_commutative(g: Group) -> bool:
    return bool((g.table == g.table.T).all())


def is_closed(g: Group, mask: np.ndarray) -> bool:
    """True if the masked subset is non-empty and closed under the operation."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return False
    return bool(mask[g.table[np.ix_(idx, idx)]].all())


# Subgroup kinds ------------------------------------------------------------

@dataclass(frozen=True)
class CyclicGenerated:
    k: int

    @property
    def name(self) -> str:
        return f"gen:{self.k}"


@dataclass(frozen=True)
class Alternating:
    name: str = "alternating"


@dataclass(frozen=True)
class Rotations:
    name: str = "rotations"


SubgroupKind = CyclicGenerated | Alternating | Rotations


def parse_subgroup_kind(text: str) -> SubgroupKind:
    """``"gen:2"`` (or ``"gen2"``), ``"alternating"``, ``"rotations"``."""
    key = text.strip().lower()
    if key in ("alternating", "alt", "a_n"):
        return Alternating()
    if key in ("rotations", "rot"):
        return Rotations()
    if key.startswith("gen"):
        return CyclicGenerated(int(key[3:].lstrip(":")))
    raise GroupError(f"unknown subgroup kind {text!r}")


@dataclass(frozen=True, eq=False)
class Subgroup:
    name: str
    membership: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.membership, dtype=bool).copy()
        mask.setflags(write=False)
        object.__setattr__(self, "membership", mask)

    @property
    def size(self) -> int:
        return int(self.membership.sum())


@dataclass(frozen=True, eq=False)
class CalibrationSubset:
    membership: np.ndarray
    seed: int

    def __post_init__(self):
        mask = np.asarray(self.membership, dtype=bool).copy()
        mask.setflags(write=False)
        object.__setattr__(self, "membership", mask)

    @property
    def size(self) -> int:
        return int(self.membership.sum())

    @property
    def name(self) -> str:
        return f"random:{self.seed}"


def permutation_parity(perms: np.ndarray) -> np.ndarray:
    """Inversion-count parity (0 even, 1 odd) for each row."""
    n = perms.shape[1]
    inversions = np.zeros(len(perms), dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            inversions += perms[:, i] > perms[:, j]
    return inversions % 2


def build_subgroup(g: Group, kind: SubgroupKind | str) -> Subgroup:
    if isinstance(kind, str):
        kind = parse_subgroup_kind(kind)
    fam, n = g.spec.family, g.spec.n
    if isinstance(kind, CyclicGenerated):
        if fam is not Family.CYCLIC:
            raise GroupError(f"{kind.name} requires a cyclic group, got {g.name}")
        if kind.k < 1 or n % kind.k:
            raise GroupError(f"generator {kind.k} must divide {n}")
        mask = np.arange(n) % kind.k == 0
    elif isinstance(kind, Alternating):
        if fam is not Family.SYMMETRIC:
            raise GroupError(f"alternating subgroup requires a symmetric group, got {g.name}")
        mask = permutation_parity(permutations_lex(n)) == 0
    elif isinstance(kind, Rotations):
        if fam is not Family.DIHEDRAL:
            raise GroupError(f"rotation subgroup requires a dihedral group, got {g.name}")
        mask = np.arange(2 * n) < n
    else:
        raise GroupError(f"unsupported subgroup kind {kind!r}")
    return Subgroup(name=kind.name, membership=mask)


def random_calibration_subset(g: Group, size: int, seed: int, max_attempts: int = 100) -> CalibrationSubset:
    """Uniform random ``size``-subset of ``g`` that is not itself a subgroup."""
    if not 1 < size < g.order:
        raise GroupError(f"calibration size must satisfy 1 < size < {g.order}, got {size}")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        mask = np.zeros(g.order, dtype=bool)
        mask[rng.choice(g.order, size=size, replace=False)] = True
        if not is_closed(g, mask):
            return CalibrationSubset(membership=mask, seed=seed)
    raise GroupError(f"no non-closed subset of size {size} found in {max_attempts} attempts")


def is_member(s: Subgroup | CalibrationSubset, g: int) -> bool:
    if not 0 <= g < len(s.membership):
        raise IndexError(f"element {g} out of range for mask of length {len(s.membership)}")
    return bool(s.membership[g])


def expected_order(spec: GroupSpec) -> int:
    return {Family.CYCLIC: spec.n, Family.SYMMETRIC: math.factorial(spec.n),
            Family.DIHEDRAL: 2 * spec.n}[spec.family]
