"""End-to-end experiment runs, FAN-vs-base comparison, and result persistence."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .data import (SeriesDataset, WindowSpec, fit_apply_normalizer, load_csv, make_windows, split,
                   synthesize)
from .errors import ContractError
from .fuzziness import FuzzTag
from .metrics import METRIC_KEYS
from .model import init_weights, save_checkpoint
from .rng import RngState, derive_seed
from .training import evaluate, predict, train

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
N_STORED_WINDOWS = 10

_NUM = {"type": ["number", "null"]}
RESULT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "fantf RunResult",
    "type": "object",
    "required": ["schema_version", "config", "config_hash", "seed", "task", "train_loss", "metrics",
                 "wall_clock_seconds", "version", "initial_param_hash", "final_param_hash", "predictions"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "config": {"type": "object", "additionalProperties": {"type": "string"}},
        "config_hash": {"type": "string", "pattern": "^[0-9a-f]{40}$"},
        "seed": {"type": "integer", "minimum": 0},
        "task": {"enum": ["forecast", "classify", "anomaly"]},
        "train_loss": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "metrics": {"type": "object", "propertyNames": {"enum": list(METRIC_KEYS)},
                    "additionalProperties": _NUM},
        "wall_clock_seconds": {"type": "number", "minimum": 0},
        "version": {"type": "string"},
        "initial_param_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "final_param_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "predictions": {
            "type": "object",
            "required": ["variates", "offsets", "ground_truth", "prediction"],
            "properties": {
                "variates": {"type": "array", "items": {"type": "string"}},
                "offsets": {"type": "array", "items": {"type": "integer"}},
                "ground_truth": {"type": "array"},
                "prediction": {"type": "array"},
            },
        },
    },
    "additionalProperties": False,
}

COMPARE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "fantf comparison",
    "type": "object",
    "required": ["schema_version", "seed", "base_hash", "fan_hash", "same_init", "table"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer"},
        "base_hash": {"type": "string"},
        "fan_hash": {"type": "string"},
        "same_init": {"type": "boolean"},
        "table": {"type": "array", "items": {
            "type": "object", "required": ["metric", "base", "fan", "difference_pct"],
            "properties": {"metric": {"enum": list(METRIC_KEYS)}, "base": _NUM, "fan": _NUM,
                           "difference_pct": _NUM},
            "additionalProperties": False}},
    },
    "additionalProperties": False,
}


@dataclass
class RunResult:
    config: dict
    config_hash: str
    seed: int
    task: str
    train_loss: list[float]
    metrics: dict
    wall_clock_seconds: float
    initial_param_hash: str
    final_param_hash: str
    predictions: dict
    version: str = __version__
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "task": self.task,
            "train_loss": self.train_loss,
            "metrics": self.metrics,
            "wall_clock_seconds": self.wall_clock_seconds,
            "version": self.version,
            "initial_param_hash": self.initial_param_hash,
            "final_param_hash": self.final_param_hash,
            "predictions": self.predictions,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        fields = {k: d[k] for k in ("config", "config_hash", "seed", "task", "train_loss", "metrics",
                                    "wall_clock_seconds", "initial_param_hash", "final_param_hash",
                                    "predictions", "version", "schema_version")}
        return cls(**fields)

    def metrics_json(self) -> str:
        return dumps(self.metrics)


@dataclass
class Comparison:
    base: RunResult
    fan: RunResult
    table: list[dict] = field(default_factory=list)

    @property
    def same_init(self) -> bool:
        return self.base.initial_param_hash == self.fan.initial_param_hash

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "seed": self.base.seed,
                "base_hash": self.base.initial_param_hash, "fan_hash": self.fan.initial_param_hash,
                "same_init": self.same_init, "table": self.table}


# JSON with 17 significant digits so floats round-trip exactly.
def _encode(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return "null"
        text = "%.17g" % value
        return text if any(c in text for c in ".en") else text + ".0"
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, dict):
        return "{" + ", ".join(f"{json.dumps(str(k), ensure_ascii=False)}: {_encode(v)}"
                               for k, v in value.items()) + "}"
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_encode(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps(value) -> str:
    return _encode(value)


def write_atomic(path, text: str):
    """Write UTF-8 text via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_result(result: RunResult, path):
    write_atomic(path, dumps(result.to_dict()) + "\n")


def load_result(path) -> RunResult:
    try:
        with open(path, encoding="utf-8") as fh:
            return RunResult.from_dict(json.load(fh))
    except (OSError, ValueError, KeyError) as exc:
        raise ContractError(f"cannot read result {path}: {exc}", module="cli") from None


def load_dataset(config: ExperimentConfig) -> SeriesDataset:
    if config.data_source == "csv":
        return load_csv(config.data_path, has_header=config.has_header, timestamp_col=config.timestamp_col)
    return synthesize(config.data_kind, config.data_params, seed=derive_seed(config.seed, "data"))


def _check_length(task_split: SeriesDataset, spec: WindowSpec, name: str):
    need = spec.lookback + spec.horizon
    if need > task_split.length:
        raise ContractError(f"{name} split has {task_split.length} rows, window needs L+H = {need}", module="cli")


def run(config: ExperimentConfig, out_dir=None, write: bool = True, progress=None) -> RunResult:
    """Load, split, normalize, window, train, evaluate and (optionally) persist one experiment."""
    started = time.perf_counter()
    dataset = load_dataset(config)
    need = config.window.lookback + config.window.horizon
    if need > dataset.length:
        raise ContractError(f"window needs L+H = {need} rows, series has {dataset.length}", module="cli")
    train_ds, val_ds, test_ds = split(dataset, config.split)
    raw_test = test_ds
    normalizer, _ = fit_apply_normalizer(train_ds, train_ds)
    train_ds, val_ds, test_ds = (d.with_values(normalizer.transform(d.values)) for d in (train_ds, val_ds, test_ds))
    eval_spec = WindowSpec(config.window.lookback, config.window.horizon, config.eval_stride)
    for name, part in (("train", train_ds), ("val", val_ds), ("test", test_ds)):
        _check_length(part, config.window, name)
    train_w = make_windows(train_ds, config.window)
    val_w = make_windows(val_ds, eval_spec)
    test_w = make_windows(test_ds, eval_spec)

    model_cfg = config.model_config(dataset.n_variates)
    model = init_weights(model_cfg, RngState(derive_seed(config.seed, "init")))
    initial_hash = model.parameter_hash()
    model, trace = train(model, train_w, config.train, progress=progress)
    scores = evaluate(model, test_w, normalizer=normalizer if config.task == "forecast" else None,
                      val_windows=val_w, quantile=config.quantile, season_m=config.season_m)
    result = RunResult(
        config=dict(sorted(config.entries.items())), config_hash=config.config_hash, seed=config.seed,
        task=config.task, train_loss=[float(v) for v in trace],
        metrics={k: scores[k] for k in METRIC_KEYS if k in scores},
        wall_clock_seconds=0.0, initial_param_hash=initial_hash, final_param_hash=model.parameter_hash(),
        predictions=_stored_predictions(model, test_w, make_windows(raw_test, eval_spec), normalizer,
                                        dataset.variate_names, config.task),
    )
    result.wall_clock_seconds = time.perf_counter() - started
    if write:
        out = Path(out_dir if out_dir is not None else config.output_dir)
        save_result(result, out / "result.json")
        save_checkpoint(model, out / "model.fantf")
    return result


def _stored_predictions(model, windows, raw_windows, normalizer, names, task) -> dict:
    """First few test windows in data units: forecasts, or reconstructions for anomaly.

    Ground truth comes straight from the raw series so it matches the source bit for bit.
    """
    head = windows.subset(slice(0, N_STORED_WINDOWS))
    raw = raw_windows.subset(slice(0, N_STORED_WINDOWS))
    out = predict(model, head.inputs)
    if task == "forecast":
        truth, pred = raw.targets, normalizer.inverse(out)
    elif task == "anomaly":
        truth, pred = raw.inputs, normalizer.inverse(out)
    else:
        truth, pred = head.labels, np.argmax(out, axis=-1)
    return {"variates": list(names), "offsets": [int(o) for o in head.offsets],
            "ground_truth": np.asarray(truth).tolist(), "prediction": np.asarray(pred).tolist()}


def difference_pct(base, fan):
    """100 * (base - fan) / base; positive means FAN lowered the metric."""
    if base is None or fan is None or base == 0:
        return None
    return 100.0 * (base - fan) / base


def difference_table(base: dict, fan: dict) -> list[dict]:
    keys = [k for k in METRIC_KEYS if k in base or k in fan]
    return [{"metric": k, "base": base.get(k), "fan": fan.get(k),
             "difference_pct": difference_pct(base.get(k), fan.get(k))} for k in keys]


def compare_fan(config: ExperimentConfig, out_dir=None, write: bool = True,
                base_mode: str = FuzzTag.NONE.value,
                fan_mode: str = FuzzTag.LEARNABLE_DELTA_GAUSSIAN.value) -> Comparison:
    """Train the same seed twice, without and with the fuzz term, and tabulate the change."""
    out = Path(out_dir if out_dir is not None else config.output_dir)
    base = run(config.with_overrides(**{"fuzz.mode": base_mode}), out / "base", write=write)
    fan = run(config.with_overrides(**{"fuzz.mode": fan_mode}), out / "fan", write=write)
    comparison = Comparison(base, fan, difference_table(base.metrics, fan.metrics))
    if not comparison.same_init:
        log.warning("compare: arms started from different parameters")
    if write:
        write_atomic(out / "compare.json", dumps(comparison.to_dict()) + "\n")
    return comparison


def emit_plot_data(result: RunResult, out_dir, window: int = 0) -> list[Path]:
    """One CSV per variate with columns t, ground_truth, prediction for one stored window."""
    preds = result.predictions or {}
    truth, pred = preds.get("ground_truth"), preds.get("prediction")
    if not truth or not pred:
        raise ContractError("plot: result has no stored predictions", module="cli")
    if result.task == "classify":
        raise ContractError("plot: classification results carry labels, not series", module="cli")
    if not 0 <= window < len(truth):
        raise ContractError(f"plot: window {window} outside the {len(truth)} stored windows", module="cli")
    truth, pred = np.asarray(truth[window]), np.asarray(pred[window])
    out_dir = Path(out_dir)
    paths = []
    for n, name in enumerate(preds["variates"]):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "ground_truth", "prediction"])
        for t in range(truth.shape[0]):
            writer.writerow([t, "%.17g" % truth[t, n], "%.17g" % pred[t, n]])
        path = out_dir / f"plot_w{window}_{_safe(name)}.csv"
        write_atomic(path, buf.getvalue())
        paths.append(path)
    return paths


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name) or "var"
