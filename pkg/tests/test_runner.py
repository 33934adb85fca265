import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from groupconcepts import cli
from groupconcepts.models import TransformerConfig, transformer_parameter_count
from groupconcepts.runner.checkpoint import (
    CheckpointError,
    CheckpointStore,
    checkpoint_paths,
    list_checkpoints,
    load_checkpoint,
    save_checkpoint,
)
from groupconcepts.runner.config import (
    PRESETS,
    ConfigError,
    RunConfig,
    config_from_dict,
    default_checkpoints,
    dump_config,
    load_config,
)
from groupconcepts.runner.report import ReportError, report
from groupconcepts.runner.sweep import parse_axis, sweep
from groupconcepts.runner.train import read_metric_log, run_experiment
from groupconcepts.models import MLP, MlpConfig, Transformer

TINY = dict(group="C_7", width=16, epochs=12, metric_every=3, lr=1e-2)


def tiny(**kw):
    kw = {**TINY, **kw}
    kw.setdefault("checkpoint_epochs", (0, kw["epochs"] // 2, kw["epochs"]))
    return RunConfig(**kw)


def strip_timestamps(rows):
    return [{k: v for k, v in r.items() if k != "timestamp"} for r in rows]


# -- config ------------------------------------------------------------------

def test_presets():
    t = load_config("appendix-transformer")
    assert (t.group, t.model, t.blocks, t.d_model, t.heads, t.lr, t.weight_decay, t.train_fraction) == \
        ("C_100", "transformer", 4, 1000, 8, 1e-4, 1e-3, 0.8)
    m = load_config("appendix-mlp")
    assert (m.group, m.model, m.depth, m.width, m.lr, m.weight_decay) == ("D_30", "mlp", 2, 1000, 1e-3, 5e-4)
    d = load_config("desk")
    assert (d.group, d.depth, d.width, d.lr, d.weight_decay, d.epochs, d.seed) == ("C_64", 2, 256, 1e-3, 5e-4, 2000, 0)
    assert d.resolved_batch_size(64, 3277) == 3277
    for name in PRESETS:
        load_config(name)


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('group = "C_10"\nwidht = 12\n')
    with pytest.raises(ConfigError, match="widht"):
        load_config(p)


def test_invalid_values_name_the_field():
    with pytest.raises(ConfigError, match="subgroups"):
        RunConfig(group="C_10", subgroups=("gen:3",))
    with pytest.raises(ConfigError, match="checkpoint_epochs"):
        RunConfig(epochs=10, checkpoint_epochs=(20,))
    with pytest.raises(ConfigError, match="train_fraction"):
        RunConfig(train_fraction=1.5)


def test_toml_roundtrip_and_run_id(tmp_path):
    cfg = tiny(subgroups=("gen:7",))
    p = tmp_path / "c.toml"
    p.write_text(dump_config(cfg))
    again = load_config(p)
    assert again == cfg and again.run_id == cfg.run_id
    assert cfg.replace(output_dir="elsewhere").run_id == cfg.run_id
    assert cfg.replace(seed=1).run_id != cfg.run_id
    assert cfg.replace(lr=2e-2).run_id != cfg.run_id
    assert config_from_dict({"preset": "desk", "seed": 3}).seed == 3


def test_default_checkpoints():
    assert default_checkpoints(2000) == [0, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000]
    assert default_checkpoints(7) == [0, 1, 2, 5, 7]


# -- checkpoints -------------------------------------------------------------

@pytest.mark.parametrize("model", [MLP(MlpConfig(order=9, width=12, seed=1)),
                                   Transformer(TransformerConfig(order=9, blocks=2, d_model=16, heads=2, seed=1))])
def test_checkpoint_roundtrip_bit_exact(tmp_path, model):
    save_checkpoint(tmp_path, "rid", 5, model)
    back = load_checkpoint(tmp_path, 5)
    rng = np.random.default_rng(0)
    a, b = rng.integers(0, 9, 100), rng.integers(0, 9, 100)
    assert np.array_equal(model.logits(a, b), back.logits(a, b))
    manifest = json.loads(checkpoint_paths(tmp_path, 5)[0].read_text())
    assert manifest["parameter_count"] == model.parameter_count()
    assert list_checkpoints(tmp_path) == [5]
    assert 5 in CheckpointStore(tmp_path)


def test_checkpoint_manifest_offsets_tile(tmp_path):
    cfg = TransformerConfig(order=11, blocks=1, d_model=8, heads=2)
    save_checkpoint(tmp_path, "rid", 0, Transformer(cfg))
    manifest_path, data_path = checkpoint_paths(tmp_path, 0)
    manifest = json.loads(manifest_path.read_text())
    offset = 0
    for entry in manifest["parameters"]:
        assert entry["offset"] == offset
        offset += entry["length"]
    assert offset == data_path.stat().st_size
    assert manifest["parameter_count"] == transformer_parameter_count(cfg)


def test_checkpoint_corruption(tmp_path):
    save_checkpoint(tmp_path, "rid", 1, MLP(MlpConfig(order=5, width=4)))
    _, data = checkpoint_paths(tmp_path, 1)
    data.write_bytes(data.read_bytes()[:-4])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path, 1)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path, 2)


# -- training ---------------------------------------------------------------

def test_run_experiment_outputs(tmp_path):
    cfg = tiny(subgroups=("gen:7",))
    rec = run_experiment(cfg, tmp_path)
    assert rec.status == "completed" and rec.epochs_run == 12
    run_dir = tmp_path / rec.run_id
    for f in ("config.toml", "config.json", "metrics.jsonl", "record.json"):
        assert (run_dir / f).exists()
    assert list_checkpoints(run_dir) == [0, 6, 12]
    rows = read_metric_log(run_dir / "metrics.jsonl")
    assert {r["epoch"] for r in rows} == {0, 3, 6, 9, 12}
    keys = {(r["metric"], r["subpopulation"]) for r in rows}
    for k in [("accuracy", "global"), ("accuracy", "identity"), ("symmetric_consistency", "global"),
              ("symmetric_consistency", "all_pairs"), ("equal_value_consistency", "global"),
              ("loss", "train"), ("train_accuracy", "global")]:
        assert k in keys
    assert any(r["metric"] == "symmetric_similarity" for r in rows)
    assert all({"run_id", "epoch", "metric", "subpopulation", "value", "n", "timestamp"} <= set(r) for r in rows)
    assert all(r["run_id"] == rec.run_id for r in rows)


def test_determinism(tmp_path):
    cfg = tiny()
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    a = strip_timestamps(read_metric_log(tmp_path / "a" / cfg.run_id / "metrics.jsonl"))
    b = strip_timestamps(read_metric_log(tmp_path / "b" / cfg.run_id / "metrics.jsonl"))
    assert a == b


def test_holdout_runs_log_ood_metrics(tmp_path):
    rec = run_experiment(tiny(holdout="commutativity", holdout_elements=(3,)), tmp_path)
    rows = read_metric_log(tmp_path / rec.run_id / "metrics.jsonl")
    ood = [r for r in rows if r["subpopulation"] == "ood_commutativity"]
    assert {r["metric"] for r in ood} == {"symmetric_consistency", "chance_consistency"}
    assert all(r["value"] == pytest.approx(1 / 7) for r in ood if r["metric"] == "chance_consistency")

    rec = run_experiment(tiny(group="C_40", holdout="identity"), tmp_path)
    rows = read_metric_log(tmp_path / rec.run_id / "metrics.jsonl")
    assert any(r["metric"] == "accuracy" and r["subpopulation"] == "ood_identity" for r in rows)


def test_divergence_marks_run_failed(tmp_path):
    rec = run_experiment(tiny(lr=1e30, epochs=6), tmp_path)
    assert rec.status == "failed" and "non-finite" in rec.error
    assert read_metric_log(tmp_path / rec.run_id / "metrics.jsonl")  # partial log still parses


def test_probe_sweep_via_run(tmp_path):
    cfg = tiny(group="D_5", probe_subgroup="rotations", probe_calibrations=2, similarity_every=-1)
    rec = run_experiment(cfg, tmp_path)
    lines = (tmp_path / rec.run_id / "probes.jsonl").read_text().splitlines()
    assert len(lines) == 3 * 2 * 3  # checkpoints x layers x (subgroup + 2 calibrations)


# -- sweep & report --------------------------------------------------------

def test_parse_axis():
    assert parse_axis("lr=1e-3,1e-4") == ("lr", [1e-3, 1e-4])
    assert parse_axis("layer_norm=true,false") == ("layer_norm", [True, False])
    with pytest.raises(ConfigError):
        parse_axis("widht=3")


def test_sweep_and_reports(tmp_path):
    sid, results = sweep(tiny(), {"width": [8, 16]}, seeds=2, jobs=1, output_root=tmp_path)
    assert len(results) == 4 and all(r["status"] == "completed" for r in results)
    agg = list(csv.DictReader((tmp_path / "sweeps" / sid / "aggregate.csv").open()))
    assert {r["n_seeds"] for r in agg} == {"2"}
    paths = report(sid, "curves", tmp_path)
    names = {p.name for p in paths}
    assert {"consistency.svg", "accuracy.svg", "metrics.csv"} <= names
    n_rows = sum(len(read_metric_log(tmp_path / r["run_id"] / "metrics.jsonl")) for r in results)
    tidy = list(csv.DictReader((tmp_path / "sweeps" / sid / "report" / "metrics.csv").open()))
    assert len(tidy) == n_rows
    svg = tmp_path / "sweeps" / sid / "report" / "consistency.svg"
    ET.parse(svg)  # well-formed
    paths = report(sid, "similarity", tmp_path)
    assert any(p.name == "similarity.svg" for p in paths)
    with pytest.raises(ReportError):
        report("nope", "curves", tmp_path)


def test_empty_axes_single_run_per_seed(tmp_path):
    _, results = sweep(tiny(epochs=3), {}, seeds=[0, 1], output_root=tmp_path)
    assert len(results) == 2


def test_sweep_records_failures(tmp_path):
    _, results = sweep(tiny(epochs=3), {"lr": [1e-2, 1e30]}, seeds=1, output_root=tmp_path)
    assert sorted(r["status"] for r in results) == ["completed", "failed"]


def test_probe_report(tmp_path):
    rec = run_experiment(tiny(group="D_5", probe_subgroup="rotations", probe_calibrations=1,
                              similarity_every=-1), tmp_path)
    paths = report(rec.run_id, "probes", tmp_path)
    assert {p.name for p in paths} == {"probes.svg", "probes_tidy.csv"}


# -- CLI ---------------------------------------------------------------------

def test_cli_build_group(tmp_path, capsys):
    assert cli.main(["build-group", "--family", "dihedral", "--n", "4"]) == 0
    assert "order 8" in capsys.readouterr().out
    out = tmp_path / "d4.json"
    assert cli.main(["build-group", "--family", "S", "--n", "3", "--dump", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["order"] == 6 and len(data["table"]) == 36
    assert cli.main(["build-group", "--family", "symmetric", "--n", "9"]) == 2


def test_cli_train_probe_report(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("GROUPCONCEPTS_OUTPUT", str(tmp_path))
    cfg = tmp_path / "c.toml"
    cfg.write_text(dump_config(tiny(group="D_4", similarity_every=-1)))
    assert cli.main(["train", "--config", str(cfg), "--seed", "2", "--epochs", "6"]) == 0
    out = capsys.readouterr().out
    run_dirs = [p for p in tmp_path.iterdir() if (p / "metrics.jsonl").exists()]
    assert len(run_dirs) == 1
    rid = run_dirs[0].name
    assert rid in out
    assert cli.main(["probe", "--run", rid, "--subgroup", "rotations", "--calibrations", "1"]) == 0
    assert cli.main(["report", "--run", rid, "--kind", "curves"]) == 0
    assert cli.main(["report", "--run", rid, "--kind", "probes"]) == 0
    assert (run_dirs[0] / "report" / "probes.svg").exists()
    assert cli.main(["report", "--run", "missing", "--kind", "curves"]) == 2


def test_cli_bad_config(tmp_path, capsys):
    p = tmp_path / "c.toml"
    p.write_text("widht = 3\n")
    assert cli.main(["train", "--config", str(p)]) == 2
    assert "widht" in capsys.readouterr().err


def test_cli_sweep(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text(dump_config(tiny(epochs=3)))
    assert cli.main(["--output", str(tmp_path), "sweep", "--config", str(cfg), "--axis", "width=4,8",
                     "--seeds", "1", "--jobs", "2"]) == 0
    assert "2 runs, 0 failed" in capsys.readouterr().out
    assert len(list((tmp_path / "sweeps").iterdir())) == 1
