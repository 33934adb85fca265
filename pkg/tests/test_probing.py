import csv
import json

import numpy as np
import pytest

from groupconcepts.dataset import enumerate_pairs
from groupconcepts.groups import GroupSpec, build_group, build_subgroup
from groupconcepts.models import INPUT_TAG, MLP, MlpConfig
from groupconcepts.probing import (
    LinearProbe,
    ProbeDataset,
    ProbeError,
    build_probe_dataset,
    calibration_subsets,
    collect_activations,
    evaluate_probe,
    probe_sweep,
    standardization,
    subset_labels,
    train_probe,
    write_probe_reports,
)


def G(name):
    return build_group(GroupSpec.parse(name))


def synthetic(n=400, seed=0, shuffle=False):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(np.int64)
    x[y == 1] += 0.5 * np.array([1.0, 0.5])  # margin
    if shuffle:
        y = rng.permutation(y)
    k = int(0.8 * n)
    return ProbeDataset(x[:k], y[:k], x[k:], y[k:], target="synthetic", seed=seed)


def test_separable_data_is_learned():
    ds = synthetic()
    rep = evaluate_probe(train_probe(ds), ds)
    assert rep.accuracy == 1.0 and rep.train_accuracy == 1.0


def test_shuffled_labels_near_chance():
    accs = []
    for seed in range(5):
        # high-dimensional noise features, balanced shuffled labels
        rng = np.random.default_rng(100 + seed)
        x = rng.standard_normal((1000, 32))
        y = rng.permutation(np.repeat([0, 1], 500))
        ds = ProbeDataset(x[:800], y[:800], x[800:], y[800:], seed=seed)
        accs.append(evaluate_probe(train_probe(ds), ds).accuracy)
    assert 0.4 <= float(np.mean(accs)) <= 0.6
    assert all(0.35 <= a <= 0.65 for a in accs)


def test_zero_probe_gives_half_on_balanced_data():
    ds = synthetic()
    y = np.repeat([0, 1], 40)
    ds = ProbeDataset(ds.train_x, ds.train_y, np.zeros((80, 2)) + 1.0, y)
    zero = LinearProbe(weight=np.zeros(2), bias=0.0, mean=np.zeros(2), scale=np.ones(2))
    assert evaluate_probe(zero, ds).accuracy == 0.5


def test_positive_count_and_balance():
    g = G("C_100")
    h = build_subgroup(g, "gen:2")
    ex = enumerate_pairs(g)
    y = subset_labels(ex, h.membership)
    assert y.sum() == 2500
    feats = np.zeros((len(ex), 3))
    ds = build_probe_dataset(feats, ex, h, seed=0)
    assert ds.positives_available == 2500
    assert abs(ds.train_y.sum() - (len(ds.train_y) - ds.train_y.sum())) <= 1
    assert abs(ds.test_y.sum() - (len(ds.test_y) - ds.test_y.sum())) <= 1
    assert len(ds.train_y) + len(ds.test_y) == 5000
    assert len(ds.test_y) == 1000
    assert ds.class_balance == 0.5


def test_labels_are_pure_function_of_pairs():
    g = G("D_30")
    h = build_subgroup(g, "rotations")
    ex = enumerate_pairs(g)
    feats = np.stack([ex.a, ex.b], axis=1).astype(float)  # features encode the pair
    ds = build_probe_dataset(feats, ex, h, seed=4)
    for x, y in ((ds.train_x, ds.train_y), (ds.test_x, ds.test_y)):
        a, b = x[:, 0].astype(int), x[:, 1].astype(int)
        assert np.array_equal(y, (h.membership[a] & h.membership[b]).astype(int))
    # disjoint train/test rows
    tr = set(map(tuple, ds.train_x.tolist()))
    te = set(map(tuple, ds.test_x.tolist()))
    assert not tr & te


def test_degenerate_masks():
    g = G("C_10")
    ex = enumerate_pairs(g)
    with pytest.raises(ProbeError, match="negative"):
        build_probe_dataset(np.zeros((100, 2)), ex, np.ones(10, bool))
    one = np.zeros(10, bool)
    one[0] = True
    with pytest.raises(ProbeError, match="positive"):
        build_probe_dataset(np.zeros((100, 2)), ex, one)


def test_no_standardization_leakage():
    ds = synthetic(seed=3)
    test_x = ds.test_x + 100.0  # shift test rows only
    shifted = ProbeDataset(ds.train_x, ds.train_y, test_x, ds.test_y)
    p1, p2 = train_probe(ds), train_probe(shifted)
    mu, sd = standardization(ds.train_x)
    for p in (p1, p2):
        np.testing.assert_array_equal(p.mean, mu)
        np.testing.assert_array_equal(p.scale, sd)
    np.testing.assert_array_equal(p1.weight, p2.weight)


def test_probe_deterministic():
    ds = synthetic(seed=2)
    assert np.array_equal(train_probe(ds).weight, train_probe(ds).weight)


def test_input_space_probe_is_easy():
    g = G("D_30")
    h = build_subgroup(g, "rotations")
    ex = enumerate_pairs(g)
    m = MLP(MlpConfig(order=60, width=8))
    feats = collect_activations(m, ex, INPUT_TAG)
    ds = build_probe_dataset(feats, ex, h, seed=0)
    assert evaluate_probe(train_probe(ds), ds).accuracy >= 0.95


def test_calibration_subsets():
    g = G("D_30")
    subs = calibration_subsets(g, 30, 3, seed=0)
    assert [s.size for s in subs] == [30, 30, 30]
    assert len({s.name for s in subs}) == 3
    assert [s.name for s in subs] == [s.name for s in calibration_subsets(g, 30, 3, seed=0)]


def test_probe_sweep_count_and_export(tmp_path):
    g = G("D_30")
    h = build_subgroup(g, "rotations")
    ex = enumerate_pairs(g)
    ckpts = {e: MLP(MlpConfig(order=60, depth=2, width=16, seed=e)) for e in range(10)}
    reports = probe_sweep(ckpts, ex, h, g, n_calibrations=3, probe_epochs=50)
    assert len(reports) == 80
    assert sum(r.calibration for r in reports) == 60
    assert all(0 <= r.accuracy <= 1 for r in reports)
    assert {r.target for r in reports if not r.calibration} == {"rotations"}
    assert all(r.target.startswith("random:") for r in reports if r.calibration)

    write_probe_reports(reports, tmp_path / "p.jsonl", tmp_path / "p.csv", run_id="abc")
    rows = list(csv.DictReader((tmp_path / "p.csv").open()))
    assert len(rows) == 80
    assert set(rows[0]) >= {"epoch", "layer", "target", "seed", "accuracy"}
    lines = (tmp_path / "p.jsonl").read_text().splitlines()
    assert len(lines) == 80 and json.loads(lines[0])["run_id"] == "abc"

    with pytest.raises(KeyError, match="42"):
        probe_sweep(ckpts, ex, h, g, epochs=[0, 42], probe_epochs=5)
