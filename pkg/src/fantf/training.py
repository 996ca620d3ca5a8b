"""Losses, Adam, and the train / evaluate loops."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import metrics
from .data import WindowSet
from .errors import ContractError, DimensionError, NumericError
from .model import FantfModel, forward
from .rng import RngState, derive_seed
from .tensor import (Tensor, absolute, as_tensor, backward, get_tape, log_softmax_lastdim, mean, mul,
                     no_grad, scale, square, sub, tensor_sum)

log = logging.getLogger(__name__)

LOSSES = ("mse", "mae", "cross_entropy")
DEFAULT_LOSS = {"forecast": "mse", "anomaly": "mse", "classify": "cross_entropy"}


@dataclass
class TrainConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps_adam: float = 1e-8
    epochs: int = 10
    batch_size: int = 32
    grad_clip: float | None = None
    seed: int = 0
    loss: str | None = None

    def __post_init__(self):
        if self.lr < 0:
            raise ContractError(f"train config: lr must be >= 0, got {self.lr}", module="training")
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("train config: epochs and batch_size must be >= 1", module="training")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ContractError("train config: grad_clip must be > 0", module="training")
        if self.loss is not None and self.loss not in LOSSES:
            raise ContractError(f"train config: unknown loss {self.loss!r}", module="training")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ContractError("train config: betas must lie in [0, 1)", module="training")


def loss(kind: str, pred, target) -> Tensor:
    """Scalar loss. For cross entropy ``target`` holds integer class ids."""
    pred = as_tensor(pred)
    if kind == "cross_entropy":
        labels = np.asarray(target.data if isinstance(target, Tensor) else target).astype(np.int64)
        if pred.ndim != 2 or labels.shape != (pred.shape[0],):
            raise DimensionError(f"cross_entropy: logits {pred.shape} vs labels {labels.shape}", module="training")
        n_classes = pred.shape[1]
        if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
            raise IndexError(f"cross_entropy: class index outside [0, {n_classes})")
        onehot = np.zeros(pred.shape)
        onehot[np.arange(labels.size), labels] = 1.0
        picked = tensor_sum(mul(log_softmax_lastdim(pred), onehot))
        return scale(picked, -1.0 / labels.size)
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"{kind}: pred {pred.shape} vs target {target.shape}", module="training")
    diff = sub(pred, target)
    if kind == "mse":
        return mean(square(diff))
    if kind == "mae":
        return mean(absolute(diff))
    raise ContractError(f"unknown loss {kind!r}", module="training")


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Rescale ``grads`` jointly so their global L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if norm > max_norm:
        factor = max_norm / norm
        grads = [g * factor for g in grads]
    return grads, norm


def adam_step(state: OptimizerState, params: list[tuple[str, Tensor]], cfg: TrainConfig) -> float:
    """One bias-corrected Adam update, in place. Returns the pre-clip gradient norm.

    Missing gradients count as zeros.
    """
    grads = []
    for name, p in params:
        g = np.zeros_like(p.data) if p.grad is None else p.grad
        if not np.all(np.isfinite(g)):
            raise NumericError(f"adam: non-finite gradient for parameter {name}", module="training")
        grads.append(g)
    if cfg.grad_clip is not None:
        grads, norm = clip_grad_norm(grads, cfg.grad_clip)
    else:
        norm = global_norm(grads)
    b1, b2 = cfg.betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for (name, p), g in zip(params, grads):
        m = state.m.get(name, 0.0) * b1 + (1.0 - b1) * g
        v = state.v.get(name, 0.0) * b2 + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps_adam)
    return norm


def _targets(task: str, windows: WindowSet):
    if task == "forecast":
        return windows.targets
    if task == "anomaly":
        return windows.inputs
    return windows.labels


def train(model: FantfModel, windows: WindowSet, cfg: TrainConfig, progress: Callable | None = None):
    """Mini-batch Adam training. Returns ``(model, per-epoch mean losses)``.

    Batch order for epoch ``e`` comes from the stream seeded by ``seed ^ e``;
    noise and dropout come from one forward stream derived from the seed.
    """
    if len(windows) == 0:
        raise ContractError("train: dataset has no windows", module="training")
    task = model.config.task
    kind = cfg.loss or DEFAULT_LOSS[task]
    targets = _targets(task, windows)
    if targets is None:
        raise ContractError(f"train: windows carry no targets for task {task}", module="training")
    params = model.named_parameters()
    state = OptimizerState()
    fwd_rng = RngState(derive_seed(cfg.seed, "forward"))
    trace = []
    tape = get_tape()
    for epoch in range(cfg.epochs):
        order = RngState(cfg.seed ^ epoch).permutation(len(windows))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            tape.clear()
            model.zero_grad()
            out = forward(model, windows.inputs[idx], fwd_rng, training=True)
            value = loss(kind, out, targets[idx])
            if not np.isfinite(value.item()):
                raise NumericError(f"train: non-finite loss at epoch {epoch}", module="training")
            backward(value)
            adam_step(state, params, cfg)
            total += value.item() * len(idx)
            count += len(idx)
        trace.append(total / count)
        if progress is not None:
            progress(epoch, trace[-1])
        log.debug("epoch %d loss %.6g", epoch, trace[-1])
    return model, trace


def predict(model: FantfModel, inputs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Deterministic inference (no noise, no dropout)."""
    outs = []
    with no_grad():
        for start in range(0, len(inputs), batch_size):
            outs.append(forward(model, inputs[start:start + batch_size], None, training=False).data)
    return np.concatenate(outs, axis=0)


def reconstruction_scores(recon: np.ndarray, windows: WindowSet) -> tuple[np.ndarray, np.ndarray | None]:
    """Per-time-step anomaly scores and labels from (possibly overlapping) windows.

    A window's score at each step is the mean squared reconstruction error
    across variates; steps covered by several windows take the average.
    Steps covered by no window are dropped.
    """
    errors = np.mean((recon - windows.inputs) ** 2, axis=-1)
    lookback = errors.shape[1]
    start = int(windows.offsets.min())
    span = int(windows.offsets.max()) + lookback - start
    total = np.zeros(span)
    count = np.zeros(span)
    marks = np.zeros(span)
    for offset, err, lab in zip(windows.offsets - start, errors,
                                windows.labels if windows.labels is not None else [None] * len(errors)):
        total[offset:offset + lookback] += err
        count[offset:offset + lookback] += 1
        if lab is not None:
            marks[offset:offset + lookback] = np.maximum(marks[offset:offset + lookback], lab)
    covered = count > 0
    labels = marks[covered].astype(np.int64) if windows.labels is not None else None
    return total[covered] / count[covered], labels


def evaluate(model: FantfModel | None, windows: WindowSet, task: str | None = None, normalizer=None,
             val_windows: WindowSet | None = None, quantile: float = 0.99, season_m: int = 1,
             predict_fn: Callable[[np.ndarray], np.ndarray] | None = None) -> dict:
    """Task metrics for ``windows``.

    ``predict_fn`` replaces model inference (it receives the raw input batch).
    Forecast metrics are computed after undoing ``normalizer``. Anomaly
    scores average over overlapping windows; the threshold is the ``quantile`` of the
    scores on ``val_windows`` (or on ``windows`` when no validation set is
    given).
    """
    task = task or model.config.task
    run = predict_fn or (lambda x: predict(model, x))
    if task == "forecast":
        pred = run(windows.inputs)
        target, insample = windows.targets, windows.inputs
        if normalizer is not None:
            pred, target, insample = (normalizer.inverse(a) for a in (pred, target, insample))
        return metrics.forecast_bundle(pred, target, insample, season_m)
    if task == "classify":
        logits = run(windows.inputs)
        report = metrics.accuracy(np.argmax(logits, axis=-1), windows.labels)
        return {"accuracy": report.accuracy}
    if task == "anomaly":
        test_scores, truth = reconstruction_scores(run(windows.inputs), windows)
        if truth is None:
            raise ContractError("evaluate: anomaly windows carry no labels", module="training")
        ref = val_windows if val_windows is not None else windows
        val_scores, _ = reconstruction_scores(run(ref.inputs), ref)
        epsilon = metrics.select_epsilon(val_scores, quantile)
        detected = metrics.detect_anomalies(test_scores, epsilon)
        raw = metrics.anomaly_f1(detected, truth, point_adjusted=False)
        adjusted = metrics.anomaly_f1(detected, truth, point_adjusted=True)
        raw.epsilon = adjusted.epsilon = epsilon
        return {"precision": raw.precision, "recall": raw.recall, "f1": raw.f1,
                "f1_adjusted": adjusted.f1, "epsilon": epsilon}
    raise ContractError(f"evaluate: unknown task {task!r}", module="training")
