"""Run configuration: TOML files, presets, validation and content hashing."""

from __future__ import annotations

import dataclasses
import difflib
import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from ..dataset import HoldoutKind
from ..groups import GroupSpec, build_subgroup, parse_subgroup_kind
from ..models import MlpConfig, TransformerConfig

OUTPUT_ENV = "GROUPCONCEPTS_OUTPUT"
JOBS_ENV = "GROUPCONCEPTS_JOBS"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    group: str = "C_64"
    model: str = "mlp"
    # mlp
    depth: int = 2
    width: int = 256
    # transformer
    blocks: int = 4
    d_model: int = 1000
    heads: int = 8
    mlp_ratio: int = 4
    layer_norm: bool = True
    pos_embed: bool = True
    # data
    train_fraction: float = 0.8
    holdout: str = "none"
    holdout_elements: tuple = ()
    # optimization
    lr: float = 1e-3
    weight_decay: float = 5e-4
    weight_decay_mode: str = "coupled"  # "coupled" (L2 in the gradient) or "decoupled" (AdamW)
    batch_size: int = 0
    epochs: int = 2000
    seed: int = 0
    early_stop_accuracy: float = 0.0
    # logging
    checkpoint_epochs: tuple = ()
    metric_every: int = 0
    similarity_every: int = 0
    subgroups: tuple = ()
    equal_value_cap: int = 50
    # probing
    probe_subgroup: str = ""
    probe_calibrations: int = 3
    probe_layers: tuple = ()
    output_dir: str = ""

    def __post_init__(self):
        for name in ("holdout_elements", "checkpoint_epochs", "subgroups", "probe_layers"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        validate(self)

    # -- derived ----------------------------------------------------------
    @property
    def group_spec(self) -> GroupSpec:
        return GroupSpec.parse(self.group)

    def model_config(self, order: int) -> MlpConfig | TransformerConfig:
        if self.model == "mlp":
            return MlpConfig(order=order, depth=self.depth, width=self.width, seed=self.seed)
        return TransformerConfig(order=order, blocks=self.blocks, d_model=self.d_model, heads=self.heads,
                                 mlp_ratio=self.mlp_ratio, layer_norm=self.layer_norm,
                                 pos_embed=self.pos_embed, seed=self.seed)

    def resolved_batch_size(self, order: int, n_train: int) -> int:
        if self.batch_size > 0:
            return self.batch_size
        return n_train if order <= 128 else 512

    def resolved_metric_every(self) -> int:
        if self.metric_every > 0:
            return self.metric_every
        return 1 if self.epochs <= 500 else 5

    def resolved_similarity_every(self) -> int:
        return self.similarity_every if self.similarity_every != 0 else self.resolved_metric_every()

    def resolved_checkpoints(self) -> list[int]:
        if self.checkpoint_epochs:
            return sorted(set(self.checkpoint_epochs))
        return default_checkpoints(self.epochs)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def identity_dict(self) -> dict:
        d = self.to_dict()
        d.pop("output_dir")
        return d

    @property
    def run_id(self) -> str:
        blob = json.dumps(self.identity_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def output_root(self) -> Path:
        return Path(self.output_dir or os.environ.get(OUTPUT_ENV, "runs"))

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def default_checkpoints(epochs: int) -> list[int]:
    """Log-spaced 1-2-5 epochs plus the final one."""
    out = {0, epochs}
    scale = 1
    while scale <= epochs:
        for m in (1, 2, 5):
            if m * scale <= epochs:
                out.add(m * scale)
        scale *= 10
    return sorted(out)


def validate(cfg: RunConfig):
    try:
        spec = GroupSpec.parse(cfg.group)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"group: {exc}") from None
    from ..groups import build_group, expected_order

    order = expected_order(spec)
    if cfg.model not in ("mlp", "transformer"):
        raise ConfigError(f"model: expected 'mlp' or 'transformer', got {cfg.model!r}")
    if cfg.model == "mlp" and (cfg.depth < 1 or cfg.width < 1):
        raise ConfigError("depth/width: must be >= 1")
    if cfg.model == "transformer" and cfg.d_model % cfg.heads:
        raise ConfigError(f"d_model: {cfg.d_model} not divisible by heads={cfg.heads}")
    if not 0 < cfg.train_fraction < 1:
        raise ConfigError(f"train_fraction: must lie in (0, 1), got {cfg.train_fraction}")
    try:
        kind = HoldoutKind(cfg.holdout)
    except ValueError:
        raise ConfigError(f"holdout: expected one of none/commutativity/identity, got {cfg.holdout!r}") from None
    if kind is HoldoutKind.NONE and cfg.holdout_elements:
        raise ConfigError("holdout_elements: given without a holdout")
    if kind is HoldoutKind.COMMUTATIVITY and len(cfg.holdout_elements) > 1:
        raise ConfigError("holdout_elements: commutativity holdout takes one element")
    if any(not 0 <= e < order for e in cfg.holdout_elements):
        raise ConfigError(f"holdout_elements: must lie in [0, {order})")
    if cfg.weight_decay_mode not in ("coupled", "decoupled"):
        raise ConfigError(f"weight_decay_mode: expected 'coupled' or 'decoupled', got {cfg.weight_decay_mode!r}")
    if cfg.lr <= 0 or cfg.weight_decay < 0:
        raise ConfigError("lr/weight_decay: lr must be > 0 and weight_decay >= 0")
    if cfg.epochs < 1 or cfg.batch_size < 0:
        raise ConfigError("epochs/batch_size: epochs must be >= 1, batch_size >= 0 (0 = auto)")
    if any(not 0 <= e <= cfg.epochs for e in cfg.checkpoint_epochs):
        raise ConfigError(f"checkpoint_epochs: must lie in [0, {cfg.epochs}]")
    if cfg.equal_value_cap < 1:
        raise ConfigError("equal_value_cap: must be >= 1")
    group = None
    for name in tuple(cfg.subgroups) + ((cfg.probe_subgroup,) if cfg.probe_subgroup else ()):
        try:
            kind = parse_subgroup_kind(name)
            group = group or build_group(spec)
            build_subgroup(group, kind)
        except ValueError as exc:
            raise ConfigError(f"subgroups: {exc}") from None


PRESETS: dict[str, dict] = {
    "desk": dict(group="C_64", model="mlp", depth=2, width=256, lr=1e-3, weight_decay=5e-4,
                 epochs=2000, subgroups=["gen:2"]),
    "desk-probe": dict(group="D_30", model="mlp", depth=2, width=512, lr=1e-3, weight_decay=5e-4,
                       epochs=1000, subgroups=["rotations"], probe_subgroup="rotations",
                       similarity_every=-1),
    "appendix-transformer": dict(group="C_100", model="transformer", blocks=4, d_model=1000, heads=8,
                                 lr=1e-4, weight_decay=1e-3, epochs=300, subgroups=["gen:2", "gen:5"]),
    "appendix-transformer-s5": dict(group="S_5", model="transformer", blocks=4, d_model=1000, heads=8,
                                    lr=1e-4, weight_decay=1e-3, epochs=300, subgroups=["alternating"],
                                    probe_subgroup="alternating", similarity_every=-1),
    "appendix-mlp": dict(group="D_30", model="mlp", depth=2, width=1000, lr=1e-3, weight_decay=5e-4,
                         epochs=500, subgroups=["rotations"], probe_subgroup="rotations",
                         similarity_every=-1),
}

FIELD_NAMES = {f.name for f in fields(RunConfig)}


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data)
    preset = data.pop("preset", None)
    base: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        base = dict(PRESETS[preset])
    unknown = sorted(set(data) - FIELD_NAMES)
    if unknown:
        hints = []
        for key in unknown:
            close = difflib.get_close_matches(key, sorted(FIELD_NAMES), n=1)
            hints.append(f"{key} (did you mean {close[0]!r}?)" if close else key)
        raise ConfigError(f"unknown config keys: {', '.join(hints)}")
    base.update(data)
    try:
        return RunConfig(**base)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    """Read a TOML config (or a bare preset name) with every default applied."""
    p = Path(path)
    if not p.exists() and str(path) in PRESETS:
        return config_from_dict({"preset": str(path)})
    if not p.exists():
        raise ConfigError(f"config file {path} does not exist")
    with p.open("rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data)


def dump_config(cfg: RunConfig) -> str:
    """Render the fully-resolved config as TOML."""
    lines = []
    for k, v in cfg.to_dict().items():
        lines.append(f"{k} = {_toml_value(v)}")
    return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)
