"""Checkpoints: a JSON manifest plus one raw little-endian float32 file."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..models import Model, build_model, model_from_dict

FORMAT_TAG = "float32-le"
_DTYPE = np.dtype("<f4")


class CheckpointError(RuntimeError):
    pass


def checkpoint_paths(run_dir, epoch: int) -> tuple[Path, Path]:
    base = Path(run_dir) / "checkpoints" / f"epoch_{epoch:06d}"
    return base.with_suffix(".json"), base.with_suffix(".bin")


def save_checkpoint(run_dir, run_id: str, epoch: int, model: Model) -> Path:
    manifest_path, data_path = checkpoint_paths(run_dir, epoch)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    inventory = []
    offset = 0
    with data_path.open("wb") as fh:
        for name, arr in model.params.items():
            raw = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
            fh.write(raw)
            inventory.append({"name": name, "shape": list(arr.shape), "offset": offset, "length": len(raw)})
            offset += len(raw)
    manifest = {
        "run_id": run_id,
        "epoch": epoch,
        "format": FORMAT_TAG,
        "data_file": data_path.name,
        "model": model.config.to_dict(),
        "parameter_count": model.parameter_count(),
        "parameters": inventory,
    }
    manifest_path.write_text(json.dumps(manifest, indent=1))
    return manifest_path


def load_checkpoint(run_dir, epoch: int) -> Model:
    manifest_path, _ = checkpoint_paths(run_dir, epoch)
    if not manifest_path.exists():
        raise CheckpointError(f"no checkpoint manifest for epoch {epoch} in {run_dir}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT_TAG:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")
    raw = (manifest_path.parent / manifest["data_file"]).read_bytes()
    expected = 0
    for entry in manifest["parameters"]:
        if entry["offset"] != expected:
            raise CheckpointError(f"checkpoint corrupted: {entry['name']} does not start at byte {expected}")
        expected += entry["length"]
    if expected != len(raw):
        raise CheckpointError(f"checkpoint corrupted: manifest covers {expected} bytes, data file has {len(raw)}")
    params = {}
    for entry in manifest["parameters"]:
        chunk = raw[entry["offset"]:entry["offset"] + entry["length"]]
        arr = np.frombuffer(chunk, dtype=_DTYPE).astype(np.float32)
        if arr.size != int(np.prod(entry["shape"], dtype=np.int64)):
            raise CheckpointError(f"checkpoint corrupted: {entry['name']} length does not match its shape")
        params[entry["name"]] = arr.reshape(entry["shape"])
    model = build_model(model_from_dict(manifest["model"]))
    if set(params) != set(model.params):
        raise CheckpointError("checkpoint parameter names do not match the model architecture")
    return type(model)(model.config, {k: params[k] for k in model.params})


def list_checkpoints(run_dir) -> list[int]:
    d = Path(run_dir) / "checkpoints"
    if not d.exists():
        return []
    return sorted(int(p.stem.split("_")[1]) for p in d.glob("epoch_*.json"))


class CheckpointStore:
    """Lazy epoch -> model mapping over a run directory."""

    def __init__(self, run_dir):
        self.run_dir = Path(run_dir)
        self._epochs = list_checkpoints(run_dir)

    def __contains__(self, epoch) -> bool:
        return epoch in self._epochs

    def __iter__(self):
        return iter(self._epochs)

    def __len__(self):
        return len(self._epochs)

    def __getitem__(self, epoch: int) -> Model:
        if epoch not in self._epochs:
            raise KeyError(f"no checkpoint for epoch {epoch}")
        return load_checkpoint(self.run_dir, epoch)
