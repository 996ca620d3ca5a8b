"""The FANTF encoder: embedding, stacked fuzzy-attention blocks, task heads.

The default inverted (``variate``) layout turns each variate's lookback window
into one token, so attention mixes variates. The ``temporal`` layout makes one
token per time step and adds a fixed sinusoidal positional encoding.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .attention import AttentionConfig, FuzzyAttentionLayer, attend, xavier_uniform
from .errors import ContractError, DataError, DimensionError
from .fuzziness import FuzzinessMode, FuzzTag
from .rng import RngState
from .tensor import Tensor, add, as_tensor, layer_norm_lastdim, matmul, mean, relu, transpose

TASKS = ("forecast", "classify", "anomaly")
TOKEN_MODES = ("variate", "temporal")


@dataclass(frozen=True)
class ModelConfig:
    n_variates: int
    lookback: int
    horizon: int = 0
    token_mode: str = "variate"
    d_model: int = 16
    depth: int = 1
    n_heads: int = 2
    d_ff: int = 32
    dropout_p: float = 0.1
    task: str = "forecast"
    n_classes: int = 2
    layer_norm_eps: float = 1e-5
    causal: bool = False
    fuzziness: FuzzinessMode = field(default_factory=FuzzinessMode)

    def __post_init__(self):
        def bad(msg):
            raise ContractError(f"model config: {msg}", module="model")

        if self.task not in TASKS:
            bad(f"unknown task {self.task!r}")
        if self.token_mode not in TOKEN_MODES:
            bad(f"unknown token_mode {self.token_mode!r}")
        if self.n_variates < 1 or self.lookback < 1:
            bad("n_variates and lookback must be >= 1")
        if self.task == "forecast" and self.horizon < 1:
            bad("forecasting needs horizon >= 1")
        if self.depth < 1:
            bad("depth must be >= 1")
        if self.d_ff < self.d_model:
            bad(f"d_ff={self.d_ff} must be >= d_model={self.d_model}")
        if self.task == "classify" and self.n_classes < 2:
            bad("classification needs n_classes >= 2")
        if not self.layer_norm_eps > 0:
            bad("layer_norm_eps must be > 0")
        if self.d_model < 2:
            bad("d_model must be >= 2 for layer normalization")
        self.attention_config()

    @property
    def in_dim(self) -> int:
        return self.lookback if self.token_mode == "variate" else self.n_variates

    @property
    def n_tokens(self) -> int:
        return self.n_variates if self.token_mode == "variate" else self.lookback

    def attention_config(self) -> AttentionConfig:
        return AttentionConfig(self.d_model, self.n_heads, self.dropout_p, self.causal, self.fuzziness)

    def replace(self, **changes) -> "ModelConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ModelConfig(**values)

    def to_items(self) -> list[tuple[str, str]]:
        items = [(f.name, _fmt(getattr(self, f.name))) for f in fields(self) if f.name != "fuzziness"]
        items += [(f"fuzziness.{k}", _fmt(v.value if k == "tag" else v))
                  for k, v in asdict(self.fuzziness).items()]
        return items

    @classmethod
    def from_items(cls, items) -> "ModelConfig":
        raw = dict(items)
        fuzz_raw = {k.split(".", 1)[1]: v for k, v in raw.items() if k.startswith("fuzziness.")}
        fuzz_kwargs = {}
        for f in fields(FuzzinessMode):
            if f.name in fuzz_raw:
                fuzz_kwargs[f.name] = fuzz_raw[f.name] if f.name == "tag" else float(fuzz_raw[f.name])
        kwargs = {}
        for f in fields(cls):
            if f.name == "fuzziness" or f.name not in raw:
                continue
            kwargs[f.name] = _parse_like(getattr(_DEFAULT_PROBE, f.name), raw[f.name])
        return cls(fuzziness=FuzzinessMode(**fuzz_kwargs), **kwargs)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_like(proto, text: str):
    if isinstance(proto, bool):
        return text.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(proto, int):
        return int(text)
    if isinstance(proto, float):
        return float(text)
    return text


_DEFAULT_PROBE = ModelConfig(n_variates=1, lookback=1, horizon=1)


class EncoderBlock:
    def __init__(self, attention: FuzzyAttentionLayer, ffn_w1, ffn_b1, ffn_w2, ffn_b2, eps: float = 1e-5):
        self.attention = attention
        self.ffn_w1, self.ffn_b1, self.ffn_w2, self.ffn_b2 = ffn_w1, ffn_b1, ffn_w2, ffn_b2
        self.norm1_eps = eps
        self.norm2_eps = eps

    def named_parameters(self):
        out = [(f"attn.{n}", p) for n, p in self.attention.named_parameters()]
        out += [("ffn.w1", self.ffn_w1), ("ffn.b1", self.ffn_b1), ("ffn.w2", self.ffn_w2), ("ffn.b2", self.ffn_b2)]
        return out


class FantfModel:
    def __init__(self, config: ModelConfig, embed_w, embed_b, blocks, head):
        self.config = config
        self.embed_w = embed_w
        self.embed_b = embed_b
        self.blocks = list(blocks)
        self.head = dict(head)
        self._positional = positional_encoding(config.lookback, config.d_model) \
            if config.token_mode == "temporal" else None

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [("embed.w", self.embed_w), ("embed.b", self.embed_b)]
        for i, block in enumerate(self.blocks):
            out += [(f"blocks.{i}.{n}", p) for n, p in block.named_parameters()]
        out += [(f"head.{n}", p) for n, p in self.head.items()]
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def parameter_vector(self) -> np.ndarray:
        return np.concatenate([p.data.reshape(-1) for p in self.parameters()])

    def parameter_hash(self) -> str:
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        return h.hexdigest()

    def __call__(self, x, rng=None, training=False):
        return forward(self, x, rng, training)


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    div = np.exp(np.arange(0, d_model, 2) * (-math.log(10000.0) / d_model))
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div)[:, : d_model // 2]
    return pe


def _bias(n, name=None):
    return Tensor(np.zeros(n), requires_grad=True, name=name)


def _head_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    d = cfg.d_model
    if cfg.task == "classify":
        return {"w": (d, cfg.n_classes), "b": (cfg.n_classes,)}
    if cfg.token_mode == "variate":
        out = cfg.horizon if cfg.task == "forecast" else cfg.lookback
        return {"w": (d, out), "b": (out,)}
    shapes = {"w": (d, cfg.n_variates), "b": (cfg.n_variates,)}
    if cfg.task == "forecast":
        shapes.update(time_w=(cfg.lookback, cfg.horizon), time_b=(cfg.horizon,))
    return shapes


def init_weights(config: ModelConfig, rng: RngState) -> FantfModel:
    """Xavier-uniform weights, zero biases, fuzziness parameters from the mode."""
    embed_w = xavier_uniform(rng, config.in_dim, config.d_model)
    embed_b = _bias(config.d_model)
    blocks = []
    for _ in range(config.depth):
        attn = FuzzyAttentionLayer.init(config.attention_config(), rng)
        blocks.append(EncoderBlock(
            attn,
            xavier_uniform(rng, config.d_model, config.d_ff), _bias(config.d_ff),
            xavier_uniform(rng, config.d_ff, config.d_model), _bias(config.d_model),
            config.layer_norm_eps,
        ))
    head = {}
    for name, shape in _head_shapes(config).items():
        head[name] = xavier_uniform(rng, *shape) if len(shape) == 2 else _bias(shape)
    return FantfModel(config, embed_w, embed_b, blocks, head)


def _check_input(model: FantfModel, x: Tensor):
    cfg = model.config
    if x.ndim != 3 or x.shape[1:] != (cfg.lookback, cfg.n_variates):
        raise DimensionError(
            f"model: input shape {x.shape} does not match [B, {cfg.lookback}, {cfg.n_variates}]", module="model")


def embed(model: FantfModel, x) -> Tensor:
    """[B, L, N] input to [B, tokens, D] embeddings."""
    x = as_tensor(x)
    _check_input(model, x)
    if model.config.token_mode == "variate":
        return add(matmul(transpose(x, (0, 2, 1)), model.embed_w), model.embed_b)
    return add(add(matmul(x, model.embed_w), model.embed_b), model._positional)


def ffn(block: EncoderBlock, h: Tensor) -> Tensor:
    hidden = relu(add(matmul(h, block.ffn_w1), block.ffn_b1))
    return add(matmul(hidden, block.ffn_w2), block.ffn_b2)


def encoder_block(block: EncoderBlock, h: Tensor, rng: RngState | None = None, training: bool = False) -> Tensor:
    """Post-norm residual block: norm(attn(h) + h), then norm(ffn(.) + .)."""
    attn = attend(block.attention, h, rng, training).output
    h1 = layer_norm_lastdim(add(attn, h), block.norm1_eps)
    return layer_norm_lastdim(add(ffn(block, h1), h1), block.norm2_eps)


def encode(model: FantfModel, x, rng=None, training=False) -> Tensor:
    h = embed(model, x)
    if rng is None:
        rng = RngState(0)
    for block, block_rng in zip(model.blocks, rng.split(len(model.blocks))):
        h = encoder_block(block, h, block_rng, training)
    return h


def forward(model: FantfModel, x, rng: RngState | None = None, training: bool = False) -> Tensor:
    """Task output for a batch ``x`` of shape [B, L, N].

    forecast -> [B, H, N]; classify -> logits [B, C]; anomaly -> reconstruction [B, L, N].
    """
    cfg = model.config
    h = encode(model, x, rng, training)
    head = model.head
    if cfg.task == "classify":
        return add(matmul(mean(h, axis=1), head["w"]), head["b"])
    out = add(matmul(h, head["w"]), head["b"])
    if cfg.token_mode == "variate":
        return transpose(out, (0, 2, 1))
    if cfg.task == "forecast":
        # [B, L, N] -> [B, N, L] -> [B, N, H] -> [B, H, N]
        per_variate = add(matmul(transpose(out, (0, 2, 1)), head["time_w"]), head["time_b"])
        return transpose(per_variate, (0, 2, 1))
    return out


def parameter_count(config: ModelConfig) -> int:
    """Closed-form parameter count."""
    d, f = config.d_model, config.d_ff
    n = config.in_dim * d + d
    per_block = 4 * d * d + 1 + (d * f + f + f * d + d)
    if config.fuzziness.tag is FuzzTag.LEARNABLE_SIGMOID:
        per_block += 2
    n += config.depth * per_block
    n += sum(int(np.prod(s)) for s in _head_shapes(config).values())
    return n


# checkpoint format: b"FANTF1", u32 config length, UTF-8 "key=value\n" block,
# u32 parameter count, then per parameter: u32 name length, UTF-8 name,
# u32 ndim, ndim x u32 extents, little-endian float64 values.

MAGIC = b"FANTF1"


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save_checkpoint(model: FantfModel, path):
    config_block = "".join(f"{k}={v}\n" for k, v in model.config.to_items())
    chunks = [MAGIC, _pack_str(config_block)]
    params = model.named_parameters()
    chunks.append(struct.pack("<I", len(params)))
    for name, p in params:
        chunks.append(_pack_str(name))
        chunks.append(struct.pack("<I", p.ndim) + struct.pack(f"<{p.ndim}I", *p.shape))
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise DataError("checkpoint: truncated file", module="model")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def load_checkpoint(path) -> FantfModel:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(len(MAGIC)) != MAGIC:
        raise DataError("checkpoint: bad magic, not a FANTF1 file", module="model")
    items = [line.split("=", 1) for line in reader.text().splitlines() if line]
    config = ModelConfig.from_items(items)
    model = init_weights(config, RngState(0))
    expected = dict(model.named_parameters())
    count = reader.u32()
    if count != len(expected):
        raise DataError(f"checkpoint: {count} parameters, config implies {len(expected)}", module="model")
    for _ in range(count):
        name = reader.text()
        ndim = reader.u32()
        shape = struct.unpack(f"<{ndim}I", reader.take(4 * ndim))
        target = expected.get(name)
        if target is None or target.shape != shape:
            raise DataError(f"checkpoint: unexpected parameter {name} {shape}", module="model")
        n = int(np.prod(shape, dtype=np.int64))
        target.data = np.frombuffer(reader.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    return model
