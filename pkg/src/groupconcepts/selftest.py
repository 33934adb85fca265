"""Quick self-checks: group axioms, gradients, metric oracles."""

from __future__ import annotations

import time

import numpy as np

from . import metrics as M
from .dataset import enumerate_pairs
from .groups import ROSTER, build_group, build_subgroup, verify_axioms
from .models import MLP, MlpConfig, Transformer, TransformerConfig
from .numeric import cross_entropy, grad_check

SUBGROUP_SIZES = [("C_100", "gen:2", 50), ("C_100", "gen:5", 20), ("S_5", "alternating", 60),
                  ("D_30", "rotations", 30), ("D_50", "rotations", 50)]


def check_axioms() -> tuple[bool, str]:
    bad = []
    for spec in ROSTER:
        rep = verify_axioms(build_group(spec))
        if not rep.ok:
            bad.append(spec.name)
    for gname, kind, size in SUBGROUP_SIZES:
        from .groups import GroupSpec

        got = build_subgroup(build_group(GroupSpec.parse(gname)), kind).size
        if got != size:
            bad.append(f"{gname}/{kind}={got}")
    return not bad, f"{len(ROSTER)} roster groups, {len(SUBGROUP_SIZES)} subgroup sizes" + (f"; failed {bad}" if bad else "")


def model_grad_check(model, order: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, order, 6)
    b = rng.integers(0, order, 6)
    t = rng.integers(0, order, 6)
    m64 = model.astype(np.float64)
    x = m64.encode(a, b)
    if x.dtype.kind == "f":
        x = x.astype(np.float64)
    return grad_check(lambda p: cross_entropy(m64.forward(x, params=p)[0], t), m64.params, tolerance=1e-4)


def check_gradients() -> tuple[bool, str]:
    mlp = model_grad_check(MLP(MlpConfig(order=7, depth=2, width=16, seed=0)), 7)
    tr = model_grad_check(Transformer(TransformerConfig(order=7, blocks=1, d_model=32, heads=2, seed=0)), 7)
    ok = mlp.passed and tr.passed
    return ok, f"mlp max rel err {mlp.max_rel_error:.2e}, transformer {tr.max_rel_error:.2e}"


def brute_symmetric(table: np.ndarray, include_diag: bool) -> float:
    n = len(table)
    hits = total = 0
    for a in range(n):
        for b in range(a if include_diag else a + 1, n):
            total += 1
            hits += table[a, b] == table[b, a]
    return hits / total


def brute_equal_value(table: np.ndarray, group_table: np.ndarray) -> float:
    n = len(table)
    pairs = [(a, b) for a in range(n) for b in range(n)]
    hits = total = 0
    for i, (a, b) in enumerate(pairs):
        for c, d in pairs[i + 1:]:
            if group_table[a, b] != group_table[c, d] or (a, b) == (d, c):
                continue
            total += 1
            hits += table[a, b] == table[c, d]
    return hits / total


def check_metric_oracles() -> tuple[bool, str]:
    from .groups import GroupSpec

    g = build_group(GroupSpec.parse("C_6"))
    ex = enumerate_pairs(g)
    pairs = M.PairSet.all_pairs(6)
    bad = []
    for name, pred in (("constant", M.TablePredictor.constant(6)), ("projection", M.TablePredictor.projection(6)),
                       ("lookup", M.TablePredictor.lookup(g))):
        sym = {r.mode: r.value for r in M.symmetric_consistency(pred, pairs)}
        ev = M.equal_value_consistency(pred, ex, cap=None).value
        acc = M.accuracy(pred, ex).value
        brute_acc = float(np.mean([pred.table[a, b] == g.table[a, b] for a in range(6) for b in range(6)]))
        if sym["diag_included"] != brute_symmetric(pred.table, True):
            bad.append(f"{name}:sym+diag")
        if sym["diag_excluded"] != brute_symmetric(pred.table, False):
            bad.append(f"{name}:sym-diag")
        if ev != brute_equal_value(pred.table, g.table):
            bad.append(f"{name}:equal_value")
        if acc != brute_acc:
            bad.append(f"{name}:accuracy")
    return not bad, "C_6 constant/projection/lookup" + (f"; failed {bad}" if bad else "")


CHECKS = [("algebra axioms", check_axioms), ("gradient checks", check_gradients),
          ("metric oracles", check_metric_oracles)]


def run_selftest(verbose: bool = True) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        t0 = time.time()
        ok, detail = fn()
        all_ok &= ok
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail} ({time.time() - t0:.1f}s)")
    return all_ok
