import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupconcepts.groups import (
    ROSTER,
    Alternating,
    CyclicGenerated,
    Family,
    Group,
    GroupError,
    GroupSpec,
    Rotations,
    build_group,
    build_subgroup,
    group_op,
    is_closed,
    is_commutative,
    is_member,
    permutations_lex,
    random_calibration_subset,
    verify_axioms,
)


def G(name):
    return build_group(GroupSpec.parse(name))


def test_cyclic_op():
    assert G("C_100").op(30, 80) == 10
    assert group_op(G("C_67"), 0, 41) == 41


@pytest.mark.parametrize("name, order", [("S_5", 120), ("D_30", 60), ("C_257", 257), ("S_4", 24), ("D_1", 2)])
def test_orders(name, order):
    assert G(name).order == order


def test_spec_bounds():
    with pytest.raises(GroupError, match="<= 7"):
        GroupSpec(Family.SYMMETRIC, 8)
    with pytest.raises(GroupError, match=">= 1"):
        GroupSpec(Family.DIHEDRAL, 0)
    with pytest.raises(GroupError, match=">= 1"):
        GroupSpec(Family.CYCLIC, 0)


def test_op_range_error():
    with pytest.raises(IndexError):
        group_op(G("C_5"), 5, 0)


def test_d3_associativity_triple_loop():
    g = G("D_3")
    t = g.table
    for a, b, c in itertools.product(range(6), repeat=3):
        assert t[t[a, b], c] == t[a, t[b, c]]
    assert verify_axioms(g).ok


def test_dihedral_presentation():
    n = 7
    g = G(f"D_{n}")
    r, s, e = 1, n, g.identity
    power = e
    for _ in range(n):
        power = g.op(power, r)
    assert power == e
    assert g.op(s, s) == e
    assert g.op(g.op(s, r), s) == g.inverse[r] == n - 1
    # index n + i is s r^i
    for i in range(n):
        x = s
        for _ in range(i):
            x = g.op(x, r)
        assert x == n + i


def test_d3_noncommutative_witness():
    g = G("D_3")
    r, s = 1, 3
    assert g.op(s, r) != g.op(r, s)


def test_symmetric_composition_convention():
    perms = permutations_lex(4)
    g = G("S_4")
    index = {tuple(p): i for i, p in enumerate(perms.tolist())}
    for i, j in [(3, 17), (5, 5), (23, 1)]:
        sigma, tau = perms[i], perms[j]
        composed = tuple(int(sigma[tau[x]]) for x in range(4))
        assert g.op(i, j) == index[composed]


def test_symmetric_inverse_by_one_line_inversion():
    perms = permutations_lex(4)
    g = G("S_4")
    index = {tuple(p): i for i, p in enumerate(perms.tolist())}
    for i, p in enumerate(perms):
        inv = np.empty(4, dtype=int)
        inv[p] = np.arange(4)
        j = index[tuple(inv.tolist())]
        assert g.op(i, j) == g.identity == g.op(j, i)
        assert g.inverse[i] == j


@pytest.mark.parametrize("spec", ROSTER, ids=lambda s: s.name)
def test_roster_axioms(spec):
    g = build_group(spec)
    rep = verify_axioms(g)
    assert rep.ok, rep.violations
    assert rep.associativity_exhaustive == (g.order <= 120)
    assert is_commutative(g) == (spec.family is Family.CYCLIC)


def test_latin_square_exhaustive_small():
    for name in ["C_12", "S_3", "S_4", "D_5", "D_30"]:
        g = G(name)
        m = g.order
        for row in g.table:
            assert sorted(row.tolist()) == list(range(m))
        for col in g.table.T:
            assert sorted(col.tolist()) == list(range(m))


def test_corrupted_table_reports_violation():
    g = G("C_6")
    table = g.table.copy()
    table[1, 1] = 3
    bad = Group(spec=g.spec, table=table, identity=0, labels=g.labels)
    rep = verify_axioms(bad)
    assert not rep.ok
    kinds = {v[0] for v in rep.violations}
    assert "associativity" in kinds


def test_s6_sampled_associativity():
    rep = verify_axioms(G("S_6"))
    assert not rep.associativity_exhaustive
    assert rep.triples_checked == 1_000_000
    assert rep.ok


def test_commutativity():
    assert is_commutative(G("C_256"))
    assert not is_commutative(G("S_4"))
    assert not is_commutative(G("D_30"))
    for n in range(3, 8):
        assert not is_commutative(G(f"D_{n}"))
    assert not is_commutative(G("S_3"))


@pytest.mark.parametrize("group, kind, size", [
    ("C_100", CyclicGenerated(2), 50),
    ("C_100", CyclicGenerated(5), 20),
    ("S_5", Alternating(), 60),
    ("S_4", Alternating(), 12),
    ("D_30", Rotations(), 30),
    ("D_50", Rotations(), 50),
])
def test_subgroup_sizes_and_closure(group, kind, size):
    g = G(group)
    h = build_subgroup(g, kind)
    assert h.size == size == int(h.membership.sum())
    assert h.membership[g.identity]
    idx = np.flatnonzero(h.membership)
    assert h.membership[g.table[np.ix_(idx, idx)]].all()
    assert h.membership[g.inverse[idx]].all()


def test_alternating_matches_independent_parity():
    n = 5
    g = G("S_5")
    h = build_subgroup(g, "alternating")
    for i, p in enumerate(itertools.permutations(range(n))):
        # parity from cycle decomposition
        seen, cycles = set(), 0
        for start in range(n):
            if start in seen:
                continue
            cycles += 1
            x = start
            while x not in seen:
                seen.add(x)
                x = p[x]
        even = (n - cycles) % 2 == 0
        assert h.membership[i] == even


def test_subgroup_errors():
    with pytest.raises(GroupError):
        build_subgroup(G("C_100"), CyclicGenerated(3))
    with pytest.raises(GroupError):
        build_subgroup(G("C_10"), Alternating())
    with pytest.raises(GroupError):
        build_subgroup(G("S_4"), Rotations())


@pytest.mark.parametrize("n, k", [(12, 2), (12, 3), (12, 4), (30, 5), (64, 8)])
def test_cyclic_subgroup_size(n, k):
    assert build_subgroup(G(f"C_{n}"), CyclicGenerated(k)).size == n // k


def test_calibration_subset():
    g = G("C_100")
    r = random_calibration_subset(g, 50, seed=0)
    assert r.size == 50
    assert not is_closed(g, r.membership)
    r2 = random_calibration_subset(g, 50, seed=0)
    assert np.array_equal(r.membership, r2.membership)
    with pytest.raises(GroupError):
        random_calibration_subset(g, 100, seed=0)
    with pytest.raises(GroupError):
        random_calibration_subset(g, 1, seed=0)


def test_is_member():
    g = G("C_100")
    h = build_subgroup(g, CyclicGenerated(2))
    assert is_member(h, g.identity)
    assert not is_member(h, 51)
    with pytest.raises(IndexError):
        is_member(h, 100)
    s5 = G("S_5")
    alt = build_subgroup(s5, Alternating())
    perms = permutations_lex(5)
    transpositions = [i for i, p in enumerate(perms) if (p != np.arange(5)).sum() == 2]
    assert len(transpositions) == math.comb(5, 2)
    assert not any(is_member(alt, t) for t in transpositions)


def test_json_export():
    d = G("D_3").to_json()
    assert d["order"] == 6 and d["family"] == "dihedral" and d["parameter"] == 3
    assert len(d["table"]) == 36 and d["labels"][0] == "e"


@settings(max_examples=30, deadline=None)
@given(family=st.sampled_from(["C", "D"]), n=st.integers(1, 25))
def test_random_small_groups_are_groups(family, n):
    g = build_group(GroupSpec(Family.parse(family), n))
    assert verify_axioms(g).ok


@settings(max_examples=25, deadline=None)
@given(n=st.integers(3, 40), seed=st.integers(0, 10_000))
def test_calibration_never_closed(n, seed):
    g = build_group(GroupSpec(Family.DIHEDRAL, n))
    r = random_calibration_subset(g, n, seed)
    assert r.size == n and not is_closed(g, r.membership)
