"""Forecast, M4-style, anomaly and classification metrics.

All functions take plain array-likes and return floats or small report
dataclasses; none of them touch the differentiation tape.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, UndefinedMetricError

log = logging.getLogger(__name__)

METRIC_KEYS = ("mse", "mae", "smape", "mape", "mase", "owa", "precision", "recall", "f1",
               "f1_adjusted", "accuracy", "epsilon")


@dataclass
class ForecastMetrics:
    mse: float
    mae: float


@dataclass
class M4Metrics:
    smape: float
    mape: float
    mase: float
    owa: float | None = None
    season_m: int = 1


@dataclass
class AnomalyReport:
    precision: float
    recall: float
    f1: float
    anomaly_set: list[int]
    point_adjusted: bool
    epsilon: float | None = None


@dataclass
class ClassificationReport:
    accuracy: float
    correct: int
    total: int
    per_class: dict = field(default_factory=dict)


def _pair(pred, target, name):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"{name}: shapes {pred.shape} and {target.shape} differ", module="metrics")
    if pred.size == 0:
        raise ContractError(f"{name}: empty input", module="metrics")
    return pred, target


def forecast_errors(pred, target) -> ForecastMetrics:
    pred, target = _pair(pred, target, "forecast_errors")
    diff = pred - target
    return ForecastMetrics(float(np.mean(diff * diff)), float(np.mean(np.abs(diff))))


def smape(pred, target) -> float:
    """Symmetric MAPE on the 0-200 scale; terms with |y| + |yhat| == 0 count as 0."""
    pred, target = _pair(pred, target, "smape")
    denom = np.abs(target) + np.abs(pred)
    safe = np.where(denom == 0, 1.0, denom)
    terms = np.where(denom == 0, 0.0, np.abs(pred - target) / safe)
    return float(200.0 * np.mean(terms))


def mape(pred, target) -> float:
    """MAPE in percent over points with nonzero target."""
    pred, target = _pair(pred, target, "mape")
    valid = target != 0
    if not valid.any():
        raise UndefinedMetricError("mape: every target is zero")
    skipped = int(valid.size - valid.sum())
    if skipped:
        log.debug("mape: skipped %d zero-target points", skipped)
    return float(100.0 * np.mean(np.abs(pred[valid] - target[valid]) / np.abs(target[valid])))


def naive_scale(insample, m: int = 1) -> float:
    insample = np.asarray(insample, dtype=np.float64).reshape(-1)
    if m < 1 or insample.size <= m:
        raise ContractError(f"mase: insample length {insample.size} must exceed m={m}", module="metrics")
    return float(np.mean(np.abs(insample[m:] - insample[:-m])))


def mase(pred, target, insample, m: int = 1) -> float:
    pred, target = _pair(pred, target, "mase")
    scale = naive_scale(insample, m)
    if scale == 0:
        raise UndefinedMetricError("mase: in-sample seasonal naive error is zero")
    return float(np.mean(np.abs(pred - target)) / scale)


def owa(model: M4Metrics, naive2: M4Metrics) -> float:
    """Overall weighted average of sMAPE and MASE relative to a baseline."""
    if not (naive2.smape > 0 and naive2.mase > 0):
        raise UndefinedMetricError("owa: baseline sMAPE and MASE must be positive")
    return 0.5 * (model.smape / naive2.smape + model.mase / naive2.mase)


def seasonal_naive(insample: np.ndarray, horizon: int, m: int = 1) -> np.ndarray:
    """Repeat the last ``m`` in-sample steps along axis -2 (time)."""
    last = insample[..., -m:, :]
    reps = -(-horizon // m)
    return np.concatenate([last] * reps, axis=-2)[..., :horizon, :]


def _mean_mase(pred, target, insample, m):
    """Average MASE over (window, variate) series, skipping ones with a flat in-sample."""
    values = []
    for w in range(pred.shape[0]):
        for n in range(pred.shape[-1]):
            scale = naive_scale(insample[w, :, n], m)
            if scale > 0:
                values.append(np.mean(np.abs(pred[w, :, n] - target[w, :, n])) / scale)
    if not values:
        raise UndefinedMetricError("mase: every series has a flat in-sample window")
    return float(np.mean(values))


def m4_metrics(pred, target, insample, m: int = 1) -> M4Metrics:
    """sMAPE, MAPE, MASE and OWA for windowed forecasts of shape [W, H, N].

    The OWA baseline is the seasonal-naive forecast of the in-sample window.
    """
    pred, target = _pair(pred, target, "m4_metrics")
    insample = np.asarray(insample, dtype=np.float64)
    naive = seasonal_naive(insample, pred.shape[-2], m)

    def bundle(p):
        try:
            mp = mape(p, target)
        except UndefinedMetricError:
            mp = None
        return M4Metrics(smape(p, target), mp, _mean_mase(p, target, insample, m), season_m=m)

    result = bundle(pred)
    try:
        result.owa = owa(result, bundle(naive))
    except UndefinedMetricError:
        result.owa = None
    return result


def forecast_bundle(pred, target, insample, m: int = 1) -> dict:
    errors = forecast_errors(pred, target)
    out = {"mse": errors.mse, "mae": errors.mae}
    try:
        m4 = m4_metrics(pred, target, insample, m)
        out.update(smape=m4.smape, mape=m4.mape, mase=m4.mase, owa=m4.owa)
    except UndefinedMetricError:
        out.update(smape=smape(pred, target), mape=None, mase=None, owa=None)
    return out


def detect_anomalies(scores, epsilon: float) -> list[int]:
    """Indices whose score strictly exceeds ``epsilon``."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    return np.flatnonzero(scores > epsilon).tolist()


def select_epsilon(validation_scores, quantile: float = 0.99) -> float:
    """Linear-interpolation empirical quantile of validation scores."""
    scores = np.asarray(validation_scores, dtype=np.float64).reshape(-1)
    if scores.size == 0:
        raise ContractError("select_epsilon: no validation scores", module="metrics")
    if not 0 < quantile < 1:
        raise ContractError(f"select_epsilon: quantile {quantile} outside (0, 1)", module="metrics")
    return float(np.quantile(scores, quantile, method="linear"))


def _segments(truth: np.ndarray):
    """(start, stop) pairs of contiguous runs of ones."""
    padded = np.concatenate([[0], truth.astype(np.int8), [0]])
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[0::2], edges[1::2]))


def point_adjust(predicted: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Mark a whole true-anomaly segment as detected if any point in it is flagged."""
    adjusted = predicted.copy()
    for start, stop in _segments(truth):
        if adjusted[start:stop].any():
            adjusted[start:stop] = True
    return adjusted


def f1_from_counts(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def anomaly_f1(detected, truth, point_adjusted: bool = False) -> AnomalyReport:
    truth = np.asarray(truth).reshape(-1).astype(bool)
    predicted = np.zeros(truth.size, dtype=bool)
    detected = list(detected)
    if detected and (min(detected) < 0 or max(detected) >= truth.size):
        raise ContractError("anomaly_f1: detected index outside the label range", module="metrics")
    predicted[detected] = True
    if point_adjusted:
        predicted = point_adjust(predicted, truth)
    tp = int(np.sum(predicted & truth))
    fp = int(np.sum(predicted & ~truth))
    fn = int(np.sum(~predicted & truth))
    precision, recall, f1 = f1_from_counts(tp, fp, fn)
    return AnomalyReport(precision, recall, f1, np.flatnonzero(predicted).tolist(), point_adjusted)


def accuracy(pred_labels, true_labels) -> ClassificationReport:
    pred = np.asarray(pred_labels).reshape(-1)
    true = np.asarray(true_labels).reshape(-1)
    if pred.shape != true.shape:
        raise DimensionError(f"accuracy: {pred.size} predictions for {true.size} labels", module="metrics")
    if true.size == 0:
        raise ContractError("accuracy: no labels", module="metrics")
    hits = pred == true
    per_class = {}
    for c in np.unique(true):
        mask = true == c
        per_class[int(c)] = {"correct": int(np.sum(hits & mask)), "total": int(np.sum(mask))}
    correct = int(hits.sum())
    return ClassificationReport(correct / true.size, correct, int(true.size), per_class)
