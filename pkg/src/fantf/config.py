"""Flat ``key=value`` experiment configuration.

One setting per line, dotted namespaces (``model.d_model=16``), ``#`` starts a
comment. Unknown keys are rejected so typos fail before any compute.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

from .data import SplitSpec, WindowSpec
from .errors import ConfigError, ContractError
from .fuzziness import FuzzinessMode, FuzzTag
from .model import ModelConfig
from .training import TrainConfig

# key -> (default, parser)
_INT, _FLOAT, _STR = int, float, str


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none") else float(text)


SCHEMA: dict[str, tuple[str, object]] = {
    "task": ("forecast", _STR),
    "seed": ("0", _INT),
    "data.source": ("synthetic", _STR),
    "data.kind": ("sine_mix", _STR),
    "data.path": ("", _STR),
    "data.has_header": ("true", _bool),
    "data.timestamp_col": ("", _STR),
    "data.length": ("", _INT),
    "data.n_variates": ("", _INT),
    "data.noise": ("", _FLOAT),
    "data.periods": ("", _floats),
    "data.amplitudes": ("", _floats),
    "data.slope": ("", _FLOAT),
    "data.period": ("", _FLOAT),
    "data.amplitude": ("", _FLOAT),
    "data.rate": ("", _FLOAT),
    "data.spike_amplitude": ("", _FLOAT),
    "data.segment_len": ("", _INT),
    "data.n_windows": ("", _INT),
    "data.window_len": ("", _INT),
    "data.f0": ("", _FLOAT),
    "data.f1": ("", _FLOAT),
    "window.lookback": ("16", _INT),
    "window.horizon": ("4", _INT),
    "window.stride": ("1", _INT),
    "window.eval_stride": ("", _INT),
    "split.train": ("0.7", _FLOAT),
    "split.val": ("0.1", _FLOAT),
    "split.test": ("0.2", _FLOAT),
    "model.token_mode": ("variate", _STR),
    "model.d_model": ("16", _INT),
    "model.depth": ("1", _INT),
    "model.n_heads": ("2", _INT),
    "model.d_ff": ("32", _INT),
    "model.dropout": ("0.1", _FLOAT),
    "model.n_classes": ("2", _INT),
    "model.layer_norm_eps": ("1e-05", _FLOAT),
    "model.causal": ("false", _bool),
    "fuzz.mode": ("learnable_delta_gaussian", _STR),
    "fuzz.delta": ("0.1", _FLOAT),
    "fuzz.sigma": ("1.0", _FLOAT),
    "fuzz.c": ("0.0", _FLOAT),
    "fuzz.scale": ("1.0", _FLOAT),
    "fuzz.slope": ("1.0", _FLOAT),
    "fuzz.theta1": ("0.0", _FLOAT),
    "fuzz.theta2": ("1.0", _FLOAT),
    "fuzz.a": ("0.0", _FLOAT),
    "fuzz.b": ("1.0", _FLOAT),
    "train.lr": ("0.001", _FLOAT),
    "train.beta1": ("0.9", _FLOAT),
    "train.beta2": ("0.999", _FLOAT),
    "train.eps": ("1e-08", _FLOAT),
    "train.epochs": ("10", _INT),
    "train.batch_size": ("32", _INT),
    "train.grad_clip": ("none", _opt_float),
    "train.loss": ("", _STR),
    "eval.quantile": ("0.99", _FLOAT),
    "eval.season_m": ("1", _INT),
    "output.dir": ("fantf_out", _STR),
}

_DATA_PARAM_KEYS = [k for k in SCHEMA if k.startswith("data.") and k.split(".", 1)[1] not in
                    ("source", "kind", "path", "has_header", "timestamp_col")]


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {number}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"config line {number}: unknown key {key!r}")
        values[key] = value
    return values


def read_config(path) -> dict[str, str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def git_blob_hash(text: str) -> str:
    raw = text.encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(raw) + raw).hexdigest()


@dataclass
class ExperimentConfig:
    """Validated experiment settings plus the resolved key=value echo."""

    task: str
    seed: int
    data_source: str
    data_kind: str
    data_params: dict
    data_path: str
    has_header: bool
    timestamp_col: str | None
    window: WindowSpec
    eval_stride: int
    split: SplitSpec
    model_kwargs: dict
    fuzziness: FuzzinessMode
    train: TrainConfig
    quantile: float
    season_m: int
    output_dir: str
    entries: dict = field(default_factory=dict)

    @property
    def canonical_text(self) -> str:
        return "".join(f"{k}={self.entries[k]}\n" for k in sorted(self.entries))

    @property
    def config_hash(self) -> str:
        return git_blob_hash(self.canonical_text)

    def model_config(self, n_variates: int) -> ModelConfig:
        return ModelConfig(n_variates=n_variates, fuzziness=self.fuzziness, **self.model_kwargs)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        entries = dict(self.entries)
        entries.update({k: str(v) for k, v in overrides.items()})
        return build_config(entries)


def build_config(values: dict[str, str], seed: int | None = None) -> ExperimentConfig:
    """Validate a key=value mapping (defaults filled in) into an ExperimentConfig."""
    entries = {k: default for k, (default, _) in SCHEMA.items()}
    for key, value in values.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        entries[key] = str(value)
    if seed is not None:
        entries["seed"] = str(seed)
    parsed = {}
    for key, text in entries.items():
        parser = SCHEMA[key][1]
        if text == "" and parser is not _STR:
            parsed[key] = None
            continue
        try:
            parsed[key] = parser(text)
        except ValueError as exc:
            raise ConfigError(f"config key {key}: {exc}") from None
    entries = {k: v for k, v in entries.items() if v != ""}
    try:
        return _assemble(parsed, entries)
    except ConfigError:
        raise
    except ContractError as exc:
        raise ConfigError(str(exc), module=exc.module) from None


def _assemble(p: dict, entries: dict) -> ExperimentConfig:
    task = p["task"]
    if task not in ("forecast", "classify", "anomaly"):
        raise ConfigError(f"unknown task {task!r}")
    if p["data.source"] not in ("synthetic", "csv"):
        raise ConfigError(f"data.source must be synthetic or csv, got {p['data.source']!r}")
    if p["data.source"] == "csv" and not p["data.path"]:
        raise ConfigError("data.source=csv needs data.path")
    if not 0 <= p["seed"] < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    lookback = p["window.lookback"]
    horizon = p["window.horizon"] if task == "forecast" else 0
    data_params = {k.split(".", 1)[1]: p[k] for k in _DATA_PARAM_KEYS if p[k] is not None}
    stride = p["window.stride"]
    eval_stride = p["window.eval_stride"]
    if task == "classify":
        data_params.setdefault("window_len", lookback)
        if data_params["window_len"] != lookback:
            raise ConfigError("classification needs data.window_len == window.lookback")
        stride = eval_stride = lookback
    if eval_stride is None:
        eval_stride = 1
    try:
        tag = FuzzTag(p["fuzz.mode"])
    except ValueError:
        raise ConfigError(f"unknown fuzz.mode {p['fuzz.mode']!r}") from None
    fuzziness = FuzzinessMode(tag, p["fuzz.delta"], p["fuzz.sigma"], p["fuzz.c"], p["fuzz.scale"],
                              p["fuzz.slope"], p["fuzz.theta1"], p["fuzz.theta2"], p["fuzz.a"], p["fuzz.b"])
    model_kwargs = dict(
        lookback=lookback, horizon=horizon, token_mode=p["model.token_mode"], d_model=p["model.d_model"],
        depth=p["model.depth"], n_heads=p["model.n_heads"], d_ff=p["model.d_ff"],
        dropout_p=p["model.dropout"], task=task, n_classes=p["model.n_classes"],
        layer_norm_eps=p["model.layer_norm_eps"], causal=p["model.causal"],
    )
    ModelConfig(n_variates=1, fuzziness=fuzziness, **model_kwargs)
    train = TrainConfig(lr=p["train.lr"], betas=(p["train.beta1"], p["train.beta2"]), eps_adam=p["train.eps"],
                        epochs=p["train.epochs"], batch_size=p["train.batch_size"],
                        grad_clip=p["train.grad_clip"], seed=p["seed"], loss=p["train.loss"] or None)
    if not 0 < p["eval.quantile"] < 1:
        raise ConfigError("eval.quantile must lie in (0, 1)")
    if p["eval.season_m"] < 1:
        raise ConfigError("eval.season_m must be >= 1")
    length = data_params.get("length")
    if p["data.source"] == "synthetic" and length is not None and lookback + horizon > length:
        raise ConfigError(f"window needs lookback + horizon = {lookback + horizon} rows, data.length is {length}")
    return ExperimentConfig(
        task=task, seed=p["seed"], data_source=p["data.source"], data_kind=p["data.kind"],
        data_params=data_params, data_path=p["data.path"], has_header=p["data.has_header"],
        timestamp_col=p["data.timestamp_col"] or None,
        window=WindowSpec(lookback, horizon, stride), eval_stride=eval_stride,
        split=SplitSpec(p["split.train"], p["split.val"], p["split.test"]),
        model_kwargs=model_kwargs, fuzziness=fuzziness, train=train,
        quantile=p["eval.quantile"], season_m=p["eval.season_m"],
        output_dir=os.environ.get("FANTF_OUT") or p["output.dir"], entries=entries,
    )
