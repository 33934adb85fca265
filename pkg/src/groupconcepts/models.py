"""ReLU MLP and decoder-only transformer over group-element pairs.

Both models share one surface: ``encode`` turns operand index arrays into a
model input batch, ``forward`` returns logits over the ``|G|`` elements plus
an optional activation trace, and ``activations`` extracts one traced layer.

Trace tags:

* MLP: ``relu1 .. reluD`` (post-ReLU output of each hidden layer).
* Transformer: ``attn1 .. attnB`` (residual stream at the final ``=``
  position right after each attention sublayer).

The raw input representation is available under the extra tag ``input``
(MLP one-hot encoding, or the transformer's ``=``-position embedding before
any attention). It is not part of ``layer_tags()``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .numeric import Tensor, embedding, gelu, layer_norm, no_grad, relu, softmax

INPUT_TAG = "input"


@dataclass(frozen=True)
class MlpConfig:
    order: int
    depth: int = 2
    width: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.order < 1 or self.depth < 1 or self.width < 1:
            raise ValueError(f"invalid MlpConfig {self}")

    @property
    def input_dim(self) -> int:
        return 2 * self.order

    def to_dict(self) -> dict:
        return {"kind": "mlp", **asdict(self)}


@dataclass(frozen=True)
class TransformerConfig:
    order: int
    blocks: int = 4
    d_model: int = 1000
    heads: int = 8
    mlp_ratio: int = 4
    layer_norm: bool = True
    pos_embed: bool = True
    seed: int = 0
    seq_len: int = 3

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by heads {self.heads}")
        if self.seq_len != 3:
            raise ValueError("sequence length is fixed at 3")
        if self.order < 1 or self.blocks < 1 or self.mlp_ratio < 1:
            raise ValueError(f"invalid TransformerConfig {self}")

    @property
    def vocab(self) -> int:
        return self.order + 1

    @property
    def eq_token(self) -> int:
        return self.order

    def to_dict(self) -> dict:
        return {"kind": "transformer", **asdict(self)}


def _check_range(order: int, a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"operand shapes differ: {a.shape} vs {b.shape}")
    for x in (a, b):
        if x.size and (x.min() < 0 or x.max() >= order):
            raise IndexError(f"operands must lie in [0, {order})")
    return a.astype(np.int64), b.astype(np.int64)


def encode_input_mlp(order: int, a, b, dtype=np.float32) -> np.ndarray:
    """Concatenated one-hot encodings; scalar operands give a single vector."""
    scalar = np.ndim(a) == 0
    a, b = _check_range(order, np.atleast_1d(a), np.atleast_1d(b))
    x = np.zeros((a.size, 2 * order), dtype=dtype)
    rows = np.arange(a.size)
    x[rows, a] = 1
    x[rows, order + b] = 1
    return x[0] if scalar else x


def encode_input_transformer(order: int, a, b) -> np.ndarray:
    """Token ids ``[a, b, =]`` with ``=`` as id ``order``."""
    scalar = np.ndim(a) == 0
    a, b = _check_range(order, np.atleast_1d(a), np.atleast_1d(b))
    ids = np.stack([a, b, np.full_like(a, order)], axis=1)
    return ids[0] if scalar else ids


class Model:
    config = None

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = params

    @property
    def order(self) -> int:
        return self.config.order

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def leaves(self) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=True) for k, v in self.params.items()}

    def astype(self, dtype) -> "Model":
        return type(self)(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "Model":
        return type(self)(self.config, {k: v.copy() for k, v in self.params.items()})

    def layer_tags(self) -> list[str]:
        raise NotImplementedError

    def encode(self, a, b) -> np.ndarray:
        raise NotImplementedError

    def forward(self, inputs, trace: bool = False, params: dict[str, Tensor] | None = None):
        raise NotImplementedError

    def logits(self, a, b, batch_size: int = 4096) -> np.ndarray:
        a, b = np.atleast_1d(a), np.atleast_1d(b)
        out = []
        with no_grad():
            for s in range(0, len(a), batch_size):
                logits, _ = self.forward(self.encode(a[s:s + batch_size], b[s:s + batch_size]))
                out.append(logits.data)
        return np.concatenate(out) if out else np.zeros((0, self.order), dtype=np.float32)

    def predict_batch(self, a, b) -> np.ndarray:
        # np.argmax picks the first maximal index
        return np.argmax(self.logits(a, b), axis=1)

    def activations(self, a, b, layer: str, batch_size: int = 4096) -> np.ndarray:
        if layer != INPUT_TAG and layer not in self.layer_tags():
            raise KeyError(f"unknown layer {layer!r}; available: {[INPUT_TAG] + self.layer_tags()}")
        a, b = np.atleast_1d(a), np.atleast_1d(b)
        out = []
        with no_grad():
            for s in range(0, len(a), batch_size):
                _, tr = self.forward(self.encode(a[s:s + batch_size], b[s:s + batch_size]), trace=True)
                out.append(tr[layer])
        return np.concatenate(out)


def _normal(rng, shape, std, dtype=np.float32):
    return (rng.standard_normal(shape) * std).astype(dtype)


class MLP(Model):
    def __init__(self, config: MlpConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        if params is None:
            params = self._init_params(config)
        super().__init__(params)

    @staticmethod
    def _init_params(cfg: MlpConfig) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(cfg.seed)
        dims = [cfg.input_dim] + [cfg.width] * cfg.depth + [cfg.order]
        params = {}
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            name = f"h{i + 1}" if i < cfg.depth else "out"
            params[f"{name}.w"] = _normal(rng, (fan_in, fan_out), 1 / math.sqrt(fan_in))
            params[f"{name}.b"] = np.zeros(fan_out, dtype=np.float32)
        return params

    def layer_tags(self) -> list[str]:
        return [f"relu{i + 1}" for i in range(self.config.depth)]

    def encode(self, a, b) -> np.ndarray:
        return encode_input_mlp(self.order, a, b)

    def forward(self, inputs, trace: bool = False, params: dict[str, Tensor] | None = None):
        p = params if params is not None else {k: Tensor(v) for k, v in self.params.items()}
        x = inputs if isinstance(inputs, Tensor) else Tensor(np.asarray(inputs, dtype=p["out.w"].dtype))
        tr = {INPUT_TAG: x.data} if trace else None
        h = x
        for i in range(self.config.depth):
            h = relu(h @ p[f"h{i + 1}.w"] + p[f"h{i + 1}.b"])
            if trace:
                tr[f"relu{i + 1}"] = h.data
        logits = h @ p["out.w"] + p["out.b"]
        return logits, tr


class Transformer(Model):
    def __init__(self, config: TransformerConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        if params is None:
            params = self._init_params(config)
        super().__init__(params)
        mask = np.triu(np.ones((3, 3), dtype=bool), k=1)
        self._mask = mask

    @staticmethod
    def _init_params(cfg: TransformerConfig) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(cfg.seed)
        d, hid = cfg.d_model, cfg.d_model * cfg.mlp_ratio
        p = {"tok_emb": _normal(rng, (cfg.vocab, d), 0.02)}
        if cfg.pos_embed:
            p["pos_emb"] = _normal(rng, (cfg.seq_len, d), 0.02)

        def affine(name, fan_in, fan_out):
            p[f"{name}.w"] = _normal(rng, (fan_in, fan_out), 1 / math.sqrt(fan_in))
            p[f"{name}.b"] = np.zeros(fan_out, dtype=np.float32)

        def norm(name):
            if cfg.layer_norm:
                p[f"{name}.g"] = np.ones(d, dtype=np.float32)
                p[f"{name}.b"] = np.zeros(d, dtype=np.float32)

        for i in range(cfg.blocks):
            blk = f"blk{i + 1}"
            norm(f"{blk}.ln1")
            affine(f"{blk}.qkv", d, 3 * d)
            affine(f"{blk}.proj", d, d)
            norm(f"{blk}.ln2")
            affine(f"{blk}.fc1", d, hid)
            affine(f"{blk}.fc2", hid, d)
        norm("ln_f")
        # embedding-scale unembedding keeps the initial loss near ln|G|
        p["unembed.w"] = _normal(rng, (d, cfg.order), 0.02)
        p["unembed.b"] = np.zeros(cfg.order, dtype=np.float32)
        return p

    def layer_tags(self) -> list[str]:
        return [f"attn{i + 1}" for i in range(self.config.blocks)]

    def encode(self, a, b) -> np.ndarray:
        return encode_input_transformer(self.order, a, b)

    def _norm(self, x: Tensor, p, name: str) -> Tensor:
        if not self.config.layer_norm:
            return x
        return layer_norm(x) * p[f"{name}.g"] + p[f"{name}.b"]

    def forward(self, inputs, trace: bool = False, params: dict[str, Tensor] | None = None):
        cfg = self.config
        p = params if params is not None else {k: Tensor(v) for k, v in self.params.items()}
        ids = np.asarray(inputs)
        if ids.ndim != 2 or ids.shape[1] != cfg.seq_len:
            raise ValueError(f"transformer input must have shape (batch, 3), got {ids.shape}")
        bsz, t, d, h = ids.shape[0], cfg.seq_len, cfg.d_model, cfg.heads
        dh = d // h
        x = embedding(p["tok_emb"], ids)
        if cfg.pos_embed:
            x = x + p["pos_emb"]
        tr = {INPUT_TAG: x.data[:, -1]} if trace else None
        dtype = x.dtype
        neg_mask = np.where(self._mask, dtype.type(-1e9), dtype.type(0))
        inv_sqrt = dtype.type(1 / math.sqrt(dh))

        for i in range(cfg.blocks):
            blk = f"blk{i + 1}"
            hdn = self._norm(x, p, f"{blk}.ln1")
            qkv = hdn @ p[f"{blk}.qkv.w"] + p[f"{blk}.qkv.b"]
            qkv = qkv.reshape(bsz, t, 3, h, dh).transpose(2, 0, 3, 1, 4)
            q, k, v = qkv[0], qkv[1], qkv[2]
            scores = (q @ k.transpose(0, 1, 3, 2)) * inv_sqrt + neg_mask
            attn = softmax(scores) @ v
            attn = attn.transpose(0, 2, 1, 3).reshape(bsz, t, d)
            x = x + (attn @ p[f"{blk}.proj.w"] + p[f"{blk}.proj.b"])
            if trace:
                tr[f"attn{i + 1}"] = x.data[:, -1]
            hdn = self._norm(x, p, f"{blk}.ln2")
            hdn = gelu(hdn @ p[f"{blk}.fc1.w"] + p[f"{blk}.fc1.b"])
            x = x + (hdn @ p[f"{blk}.fc2.w"] + p[f"{blk}.fc2.b"])

        x = self._norm(x, p, "ln_f")
        last = x[:, -1]
        logits = last @ p["unembed.w"] + p["unembed.b"]
        return logits, tr


def transformer_parameter_count(cfg: TransformerConfig) -> int:
    """Closed-form parameter count, independent of the constructed arrays."""
    d, hid, g = cfg.d_model, cfg.d_model * cfg.mlp_ratio, cfg.order
    ln = 2 * d if cfg.layer_norm else 0
    per_block = 2 * ln + (3 * d * d + 3 * d) + (d * d + d) + (d * hid + hid) + (hid * d + d)
    return (cfg.vocab * d + (cfg.seq_len * d if cfg.pos_embed else 0)
            + cfg.blocks * per_block + ln + d * g + g)


def mlp_parameter_count(cfg: MlpConfig) -> int:
    dims = [cfg.input_dim] + [cfg.width] * cfg.depth + [cfg.order]
    return sum(i * o + o for i, o in zip(dims[:-1], dims[1:]))


def build_model(config: MlpConfig | TransformerConfig) -> Model:
    if isinstance(config, MlpConfig):
        return MLP(config)
    if isinstance(config, TransformerConfig):
        return Transformer(config)
    raise TypeError(f"unsupported model config {type(config).__name__}")


def model_from_dict(d: dict) -> MlpConfig | TransformerConfig:
    d = dict(d)
    kind = d.pop("kind")
    return MlpConfig(**d) if kind == "mlp" else TransformerConfig(**d)


def predict(model: Model, a: int, b: int) -> int:
    return int(model.predict_batch([a], [b])[0])


def predict_from_logits(logits) -> int:
    return int(np.argmax(np.asarray(logits)))
