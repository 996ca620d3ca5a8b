"""Fuzzy multi-head scaled dot-product attention."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError
from .fuzziness import FuzzinessMode, FuzzTag, fuzz_term
from .rng import RngState
from .tensor import (Tensor, add, as_tensor, masked_fill, matmul, mul, reshape, scale,
                     softmax_lastdim, swap_last, transpose)

MASK_VALUE = -1e9


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int
    n_heads: int = 1
    dropout_p: float = 0.1
    causal: bool = False
    fuzziness: FuzzinessMode = field(default_factory=FuzzinessMode)

    def __post_init__(self):
        if self.d_model < 1 or self.n_heads < 1:
            raise ContractError("attention: d_model and n_heads must be positive", module="fuzzy_attention")
        if self.d_model % self.n_heads:
            raise ContractError(
                f"attention: d_model={self.d_model} is not divisible by n_heads={self.n_heads}",
                module="fuzzy_attention")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ContractError(f"attention: dropout_p={self.dropout_p} outside [0, 1)", module="fuzzy_attention")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads


def xavier_uniform(rng: RngState, fan_in: int, fan_out: int, name=None) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform((fan_in, fan_out), -bound, bound), requires_grad=True, name=name)


class FuzzyAttentionLayer:
    """Projection weights plus the fuzziness parameters of one attention layer.

    One ``delta`` is shared by all heads. It exists in every mode so that
    parameter lists (and their hashes) do not depend on the fuzziness choice;
    only the learnable-delta mode reads it.
    """

    def __init__(self, config: AttentionConfig, w_q, w_k, w_v, w_o, delta=None, theta=None):
        d = config.d_model
        for label, w in (("w_q", w_q), ("w_k", w_k), ("w_v", w_v), ("w_o", w_o)):
            if w.shape != (d, d):
                raise DimensionError(f"attention: {label} has shape {w.shape}, expected {(d, d)}")
        self.config = config
        self.w_q, self.w_k, self.w_v, self.w_o = w_q, w_k, w_v, w_o
        mode = config.fuzziness
        self.delta = delta if delta is not None else Tensor([mode.delta], requires_grad=True)
        self.theta1 = self.theta2 = None
        if mode.tag is FuzzTag.LEARNABLE_SIGMOID:
            t1, t2 = theta if theta is not None else (Tensor([mode.theta1], True), Tensor([mode.theta2], True))
            self.theta1, self.theta2 = t1, t2

    @classmethod
    def init(cls, config: AttentionConfig, rng: RngState) -> "FuzzyAttentionLayer":
        d = config.d_model
        return cls(config, *(xavier_uniform(rng, d, d) for _ in range(4)))

    def named_parameters(self):
        out = [("w_q", self.w_q), ("w_k", self.w_k), ("w_v", self.w_v), ("w_o", self.w_o),
               ("delta", self.delta)]
        if self.theta1 is not None:
            out += [("theta1", self.theta1), ("theta2", self.theta2)]
        return out

    def fuzz_params(self) -> dict:
        params = {"delta": self.delta}
        if self.theta1 is not None:
            params.update(theta1=self.theta1, theta2=self.theta2)
        return params


@dataclass
class AttentionOutput:
    output: Tensor
    weights: Tensor


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, n, d = x.shape
    return transpose(reshape(x, (b, n, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, dk = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, n, h * dk))


def project_qkv(layer: FuzzyAttentionLayer, s) -> tuple[Tensor, Tensor, Tensor]:
    """Project ``s`` [B, N, d_model] to per-head q, k, v of shape [B, h, N, d_k]."""
    s = as_tensor(s)
    d = layer.config.d_model
    if s.ndim != 3 or s.shape[-1] != d:
        raise DimensionError(f"attention: input shape {s.shape} does not end in d_model={d}")
    h = layer.config.n_heads
    return tuple(_split_heads(matmul(s, w), h) for w in (layer.w_q, layer.w_k, layer.w_v))


def fuzzy_scores(q: Tensor, k: Tensor, layer_or_delta, mode: FuzzinessMode | None = None,
                 rng: RngState | None = None, training: bool = False) -> Tensor:
    """``q k^T / sqrt(d_k)`` plus the fuzziness term."""
    if q.shape != k.shape:
        raise DimensionError(f"attention: q shape {q.shape} != k shape {k.shape}")
    if isinstance(layer_or_delta, FuzzyAttentionLayer):
        mode = layer_or_delta.config.fuzziness if mode is None else mode
        params = layer_or_delta.fuzz_params()
    else:
        params = {"delta": as_tensor(layer_or_delta)}
    base = scale(matmul(q, swap_last(k)), 1.0 / math.sqrt(q.shape[-1]))
    if mode is None or mode.tag is FuzzTag.NONE:
        return base
    return add(base, fuzz_term(mode, base.shape, rng, training, scores=base, params=params))


def causal_mask(n: int) -> np.ndarray:
    """True where the key index exceeds the query index."""
    return np.triu(np.ones((n, n), dtype=bool), k=1)


def apply_causal_mask(scores: Tensor) -> Tensor:
    if scores.ndim < 2 or scores.shape[-1] != scores.shape[-2]:
        raise DimensionError(f"causal mask: score matrix {scores.shape} is not square")
    return masked_fill(scores, causal_mask(scores.shape[-1]), MASK_VALUE)


def attend(layer: FuzzyAttentionLayer, s, rng: RngState | None = None, training: bool = False) -> AttentionOutput:
    """Multi-head fuzzy self-attention over the token axis of ``s``.

    Noise and dropout draw from two child streams split off ``rng``, so the
    dropout masks do not depend on whether noise was sampled.
    """
    cfg = layer.config
    if rng is None:
        rng = RngState(0)
    noise_rng, drop_rng = rng.split(2)
    q, k, v = project_qkv(layer, s)
    scores = fuzzy_scores(q, k, layer, cfg.fuzziness, noise_rng, training)
    if cfg.causal:
        scores = apply_causal_mask(scores)
    weights = softmax_lastdim(scores)
    attn = weights
    if training and cfg.dropout_p > 0:
        keep = drop_rng.random(weights.shape) >= cfg.dropout_p
        attn = mul(weights, keep / (1.0 - cfg.dropout_p))
    heads = matmul(attn, v)
    return AttentionOutput(matmul(_merge_heads(heads), layer.w_o), weights)
