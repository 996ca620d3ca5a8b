"""Built-in invariant suite: gradient checks, attention oracles, metric oracles.

Each registered property returns ``(ok, detail)``; ``run_selftest`` prints one
verdict line per property.
"""
from __future__ import annotations

import os
import sys
import tempfile
from typing import Callable

import numpy as np

from . import metrics
from .attention import AttentionConfig, FuzzyAttentionLayer, attend
from .fuzziness import FuzzinessMode, FuzzTag
from .gradcheck import grad_check_many
from .model import ModelConfig, forward, init_weights, load_checkpoint, save_checkpoint
from .rng import RngState
from .tensor import Tensor, layer_norm_lastdim, mul, softmax_lastdim, tensor_sum

GRAD_TOL = 1e-4
PROPERTIES: dict[str, Callable[[], tuple[bool, str]]] = {}


def prop(name: str):
    def register(fn):
        PROPERTIES[name] = fn
        return fn
    return register


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return tensor_sum(mul(out, weights))


def _grad_verdict(errors) -> tuple[bool, str]:
    worst = max(errors)
    return worst < GRAD_TOL, f"max rel err {worst:.2e}"


def reference_attention(x, w_q, w_k, w_v, w_o, n_heads, causal=False):
    """Plain numpy scaled dot-product attention, looped per batch item and head."""
    batch, n, d = x.shape
    dk = d // n_heads
    out = np.zeros((batch, n, d))
    for b in range(batch):
        q, k, v = x[b] @ w_q, x[b] @ w_k, x[b] @ w_v
        heads = []
        for h in range(n_heads):
            cols = slice(h * dk, (h + 1) * dk)
            s = q[:, cols] @ k[:, cols].T / np.sqrt(dk)
            if causal:
                s = np.where(np.triu(np.ones((n, n), bool), 1), -1e9, s)
            s = s - s.max(axis=1, keepdims=True)
            w = np.exp(s) / np.exp(s).sum(axis=1, keepdims=True)
            heads.append(w @ v[:, cols])
        out[b] = np.concatenate(heads, axis=1) @ w_o
    return out


def _layer(rng, d, heads, mode=FuzzTag.LEARNABLE_DELTA_GAUSSIAN, delta=0.1, causal=False, dropout=0.0):
    cfg = AttentionConfig(d, heads, dropout, causal, FuzzinessMode(mode, delta=delta))
    return FuzzyAttentionLayer.init(cfg, rng)


@prop("grad.softmax")
def _grad_softmax(trials=5):
    rng = RngState(11)
    errs = []
    for _ in range(trials):
        x = Tensor(rng.normal((3, 5)), requires_grad=True)
        w = rng.normal((3, 5))
        errs.append(grad_check_many(lambda: _weighted_sum(softmax_lastdim(x), w), [x]))
    return _grad_verdict(errs)


@prop("grad.layer_norm")
def _grad_layer_norm(trials=5):
    rng = RngState(12)
    errs = []
    for _ in range(trials):
        x = Tensor(rng.normal((4, 6)), requires_grad=True)
        w = rng.normal((4, 6))
        errs.append(grad_check_many(lambda: _weighted_sum(layer_norm_lastdim(x), w), [x]))
    return _grad_verdict(errs)


@prop("grad.fan_layer_weights")
def _grad_fan_layer(trials=3):
    rng = RngState(13)
    errs = []
    for t in range(trials):
        layer = _layer(rng, 4, 2)
        x = Tensor(rng.normal((2, 3, 4)), requires_grad=True)
        w = rng.normal((2, 3, 4))
        f = lambda: _weighted_sum(attend(layer, x, RngState(100 + t), training=True).output, w)
        errs.append(grad_check_many(f, [x, layer.w_q, layer.w_k, layer.w_v, layer.w_o]))
    return _grad_verdict(errs)


@prop("grad.delta_frozen_noise")
def _grad_delta(trials=3):
    rng = RngState(14)
    errs = []
    for t in range(trials):
        layer = _layer(rng, 4, 2, delta=0.3)
        x = rng.normal((2, 3, 4)) * 2.0
        w = rng.normal((2, 3, 4))
        f = lambda: _weighted_sum(attend(layer, x, RngState(200 + t), training=True).output, w)
        errs.append(grad_check_many(f, [layer.delta]))
    return _grad_verdict(errs)


@prop("grad.full_model_depth2")
def _grad_model(trials=2):
    rng = RngState(15)
    errs = []
    for t in range(trials):
        cfg = ModelConfig(n_variates=3, lookback=6, horizon=2, d_model=4, depth=2, n_heads=2, d_ff=8,
                          dropout_p=0.0)
        model = init_weights(cfg, rng)
        x = rng.normal((2, 6, 3))
        w = rng.normal((2, 2, 3))
        params = [p for name, p in model.named_parameters() if not name.endswith(".delta")]
        f = lambda: _weighted_sum(forward(model, x, RngState(300 + t), training=True), w)
        errs.append(grad_check_many(f, params))
    return _grad_verdict(errs)


@prop("attention.vanilla_oracle")
def _vanilla_oracle(trials=10):
    rng = RngState(21)
    worst = 0.0
    for _ in range(trials):
        layer = _layer(rng, 8, 2, delta=0.0)
        x = rng.normal((3, 5, 8))
        got = attend(layer, x, RngState(1), training=True).output.data
        want = reference_attention(x, layer.w_q.data, layer.w_k.data, layer.w_v.data, layer.w_o.data, 2)
        worst = max(worst, float(np.max(np.abs(got - want))))
    return worst < 1e-10, f"max abs err {worst:.2e}"


@prop("attention.row_stochastic")
def _row_stochastic(trials=10):
    rng = RngState(22)
    worst = 0.0
    for t in range(trials):
        layer = _layer(rng, 4, 2, delta=1.0, causal=bool(t % 2))
        weights = attend(layer, rng.normal((2, 5, 4)), RngState(t), training=True).weights.data
        worst = max(worst, float(np.max(np.abs(weights.sum(axis=-1) - 1.0))))
    return worst < 1e-6, f"max |row sum - 1| {worst:.2e}"


@prop("attention.causal_future_blind")
def _causal(trials=10):
    rng = RngState(23)
    for _ in range(trials):
        layer = _layer(rng, 4, 2, delta=0.0, causal=True)
        x = rng.normal((1, 6, 4))
        t = int(rng.integers(0, 5))
        y = x.copy()
        y[:, t + 1:] += rng.normal(y[:, t + 1:].shape)
        a = attend(layer, x).output.data[:, :t + 1]
        b = attend(layer, y).output.data[:, :t + 1]
        if not np.array_equal(a, b):
            return False, f"position {t} saw the future"
    return True, f"{trials} trials"


@prop("attention.batch_equivariance")
def _batch_equivariance(trials=10):
    rng = RngState(24)
    for _ in range(trials):
        layer = _layer(rng, 4, 2)
        x = rng.normal((4, 3, 4))
        perm = rng.permutation(4)
        a = attend(layer, x).output.data[perm]
        b = attend(layer, x[perm]).output.data
        if np.max(np.abs(a - b)) > 1e-12:
            return False, "batch permutation changed outputs"
    return True, f"{trials} trials"


@prop("metrics.detect_oracle")
def _detect(trials=50):
    rng = RngState(31)
    for _ in range(trials):
        scores = np.round(rng.normal((int(rng.integers(1, 40)),)), 1)
        eps = float(np.round(rng.normal(), 1))
        brute = [i for i, s in enumerate(scores) if s > eps]
        if metrics.detect_anomalies(scores, eps) != brute:
            return False, f"mismatch at epsilon {eps}"
    return True, f"{trials} pairs"


@prop("metrics.smape_closed_form")
def _smape():
    value = metrics.smape([110.0], [100.0])
    return abs(value - 200.0 * 10 / 210) < 1e-12, f"smape(100->110) = {value:.6f}"


@prop("metrics.owa_self")
def _owa():
    m = metrics.M4Metrics(smape=12.5, mape=3.0, mase=0.8)
    value = metrics.owa(m, m)
    return value == 1.0, f"owa(self, self) = {value!r}"


@prop("metrics.mase_periodic")
def _mase():
    t = np.arange(60, dtype=np.float64)
    series = np.sin(2 * np.pi * t / 12) + 0.3 * np.cos(2 * np.pi * t / 6)
    insample = series[:48, None]
    pred = metrics.seasonal_naive(insample, 12, m=12)
    value = metrics.mase(pred, series[48:, None], insample, m=1)
    return value <= 1e-9, f"mase = {value:.2e}"


@prop("metrics.f1_harmonic")
def _f1(trials=200):
    rng = RngState(32)
    for _ in range(trials):
        tp, fp, fn = (int(v) for v in rng.integers(1, 50, (3,)))
        p, r, f1 = metrics.f1_from_counts(tp, fp, fn)
        if abs(f1 - 2 * p * r / (p + r)) > 1e-12 or abs(f1 - 2 * tp / (2 * tp + fp + fn)) > 1e-12:
            return False, f"counts {(tp, fp, fn)}"
    return True, f"{trials} confusion counts"


@prop("rng.reproducible")
def _rng():
    a, b = RngState(7), RngState(7)
    same = np.array_equal(a.normal((64,)), b.normal((64,))) and np.array_equal(a.permutation(20), b.permutation(20))
    return same, "same seed, same stream" if same else "streams diverged"


@prop("model.checkpoint_roundtrip")
def _checkpoint():
    cfg = ModelConfig(n_variates=2, lookback=5, horizon=2, d_model=4, n_heads=2, d_ff=8)
    model = init_weights(cfg, RngState(41))
    fd, path = tempfile.mkstemp(suffix=".fantf")
    os.close(fd)
    try:
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
    finally:
        os.unlink(path)
    same = loaded.config == cfg and all(
        np.array_equal(p.data, q.data) for (_, p), (_, q) in zip(model.named_parameters(), loaded.named_parameters()))
    return same, "bit-exact" if same else "parameters changed"


def run_selftest(stream=None) -> tuple[bool, list[str]]:
    """Run every registered property and print ``PASS``/``FAIL`` lines."""
    stream = stream if stream is not None else sys.stdout
    lines, all_ok = [], True
    for name, check in PROPERTIES.items():
        try:
            ok, detail = check()
        except Exception as exc:  # a crashing property is a failing property
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= bool(ok)
        lines.append(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        print(lines[-1], file=stream)
    return all_ok, lines
