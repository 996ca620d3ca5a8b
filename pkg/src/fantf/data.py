"""Series ingestion, normalization, windowing, splitting and synthetic data."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError, DataError, ParseError
from .rng import RngState

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class SeriesDataset:
    """A multivariate series ``values`` [T, N] with optional labels.

    ``label_kind`` is ``"step"`` for per-time-step binary anomaly marks
    (``labels`` has length T) or ``"window"`` for one class id per
    consecutive block of ``window_len`` rows.
    """

    values: np.ndarray
    variate_names: list[str]
    labels: np.ndarray | None = None
    label_kind: str | None = None
    window_len: int | None = None
    timestamps: list[str] | None = None
    rejected_rows: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "values", values)
        if len(self.variate_names) != values.shape[1]:
            raise DataError(f"dataset: {len(self.variate_names)} names for {values.shape[1]} variates")
        if not np.all(np.isfinite(values)):
            raise DataError("dataset: non-finite values")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_variates(self) -> int:
        return self.values.shape[1]

    def with_values(self, values) -> "SeriesDataset":
        return replace(self, values=values)


@dataclass(frozen=True)
class WindowSpec:
    lookback: int
    horizon: int = 0
    stride: int = 1

    def __post_init__(self):
        if self.lookback < 1 or self.horizon < 0 or self.stride < 1:
            raise ContractError(f"window spec: need lookback >= 1, horizon >= 0, stride >= 1, got {self}",
                                module="data")


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.7
    val: float = 0.1
    test: float = 0.2

    def __post_init__(self):
        fracs = (self.train, self.val, self.test)
        if any(f < 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
            raise ContractError(f"split spec: fractions {fracs} must be >= 0 and sum to 1", module="data")


@dataclass
class WindowSet:
    """Stacked windows: ``inputs`` [M, L, N], ``targets`` [M, H, N] or None.

    ``labels`` is [M] class ids or [M, L] anomaly marks when the source carries
    labels. ``offsets`` are the starting rows.
    """

    inputs: np.ndarray
    targets: np.ndarray | None
    labels: np.ndarray | None
    offsets: np.ndarray

    def __len__(self):
        return len(self.inputs)

    def __getitem__(self, i):
        second = self.targets[i] if self.targets is not None else (
            self.labels[i] if self.labels is not None else None)
        return self.inputs[i], second

    def subset(self, idx) -> "WindowSet":
        pick = lambda a: None if a is None else a[idx]
        return WindowSet(self.inputs[idx], pick(self.targets), pick(self.labels), self.offsets[idx])


class Normalizer:
    """Per-variate z-score with statistics from the training split."""

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(std, dtype=np.float64), STD_FLOOR)

    @classmethod
    def fit(cls, values) -> "Normalizer":
        values = np.asarray(values, dtype=np.float64)
        if values.shape[0] == 0:
            raise ContractError("normalizer: empty training split", module="data")
        return cls(values.mean(axis=0), values.std(axis=0))

    def transform(self, values):
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def inverse(self, values):
        return np.asarray(values, dtype=np.float64) * self.std + self.mean


def _parse_float(cell: str, line: int, column: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"column {column!r}: cannot parse {cell!r} as a number", line=line) from None


def load_csv(path, has_header: bool = True, timestamp_col: str | int | None = None) -> SeriesDataset:
    """Read a comma-separated numeric table; every non-timestamp column is a variate.

    Rows holding non-finite numbers are dropped and counted in ``rejected_rows``.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    first_line = 1
    if has_header:
        if not rows:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in rows[0]]
        rows = rows[1:]
        first_line = 2
    else:
        width = len(rows[0]) if rows else 0
        header = [f"v{i}" for i in range(width)]
    ts_index = None
    if timestamp_col is not None:
        if timestamp_col in header:
            ts_index = header.index(timestamp_col)
        elif str(timestamp_col).isdigit() and int(timestamp_col) < len(header):
            ts_index = int(timestamp_col)
        else:
            raise DataError(f"{path}: timestamp column {timestamp_col!r} not found")
    columns = [i for i in range(len(header)) if i != ts_index]
    if not columns:
        raise DataError(f"{path}: no numeric columns")
    values, stamps, rejected = [], [], 0
    for offset, row in enumerate(rows):
        line = first_line + offset
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", line=line)
        parsed = [_parse_float(row[i].strip(), line, header[i]) for i in columns]
        if not all(math.isfinite(v) for v in parsed):
            rejected += 1
            continue
        values.append(parsed)
        if ts_index is not None:
            stamps.append(row[ts_index].strip())
    if not values:
        raise DataError(f"{path}: dataset is empty")
    if rejected:
        log.warning("%s: rejected %d rows with non-finite values", path, rejected)
    return SeriesDataset(np.array(values), [header[i] for i in columns],
                         timestamps=stamps if ts_index is not None else None, rejected_rows=rejected)


def fit_apply_normalizer(train_split: SeriesDataset, full: SeriesDataset):
    norm = Normalizer.fit(train_split.values)
    return norm, full.with_values(norm.transform(full.values))


def window_count(total: int, spec: WindowSpec) -> int:
    need = spec.lookback + spec.horizon
    return 0 if total < need else (total - need) // spec.stride + 1


def make_windows(ds: SeriesDataset, spec: WindowSpec) -> WindowSet:
    """Sliding windows at offsets 0, stride, 2*stride, ...

    Forecast targets are the ``horizon`` rows after each input. Window-level
    labels require windows that coincide with the labelled blocks.
    """
    need = spec.lookback + spec.horizon
    if need > ds.length:
        raise ContractError(
            f"windows: lookback + horizon = {need} rows needed, series has {ds.length}", module="data")
    count = window_count(ds.length, spec)
    offsets = np.arange(count) * spec.stride
    rows = offsets[:, None] + np.arange(spec.lookback)[None, :]
    inputs = ds.values[rows]
    targets = None
    if spec.horizon:
        trows = offsets[:, None] + spec.lookback + np.arange(spec.horizon)[None, :]
        targets = ds.values[trows]
    labels = None
    if ds.labels is not None and ds.label_kind == "step":
        labels = np.asarray(ds.labels)[rows]
    elif ds.labels is not None and ds.label_kind == "window":
        wl = ds.window_len
        if spec.lookback != wl or spec.stride % wl:
            raise ContractError(
                f"windows: window-labelled data needs lookback == {wl} and stride a multiple of it", module="data")
        labels = np.asarray(ds.labels)[offsets // wl]
    return WindowSet(inputs, targets, labels, offsets)


def _slice(ds: SeriesDataset, start: int, stop: int) -> SeriesDataset:
    labels = ds.labels
    if labels is not None:
        if ds.label_kind == "window":
            labels = labels[start // ds.window_len: stop // ds.window_len]
        else:
            labels = labels[start:stop]
    stamps = ds.timestamps[start:stop] if ds.timestamps is not None else None
    return replace(ds, values=ds.values[start:stop], labels=labels, timestamps=stamps)


def split(ds: SeriesDataset, spec: SplitSpec) -> tuple[SeriesDataset, SeriesDataset, SeriesDataset]:
    """Chronological train/val/test cut: floor, floor, remainder.

    Window-labelled data is cut in whole blocks of ``window_len`` rows.
    """
    unit = ds.window_len if ds.label_kind == "window" else 1
    total = ds.length // unit
    # 1e-9 guards against 0.7 * 100 landing just under an integer
    n_train = int(math.floor(spec.train * total + 1e-9))
    n_val = int(math.floor(spec.val * total + 1e-9))
    n_test = total - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ContractError(
            f"split: {spec} on {total} units gives sizes {(n_train, n_val, n_test)}; every split must be nonempty",
            module="data")
    a, b = n_train * unit, (n_train + n_val) * unit
    return _slice(ds, 0, a), _slice(ds, a, b), _slice(ds, b, total * unit)


def _names(n):
    return [f"v{i}" for i in range(n)]


def _sine_mix(params, rng):
    length = int(params.get("length", 512))
    n = int(params.get("n_variates", 2))
    periods = [float(p) for p in params.get("periods", (16.0, 8.0))]
    amps = [float(a) for a in params.get("amplitudes", (1.0, 0.5))]
    noise = float(params.get("noise", 0.0))
    if len(periods) != len(amps) or not periods or min(periods) <= 0:
        raise ContractError("sine_mix: need matching positive periods and amplitudes", module="data")
    t = np.arange(length)[:, None]
    phases = rng.uniform((len(periods), n), 0.0, 2 * math.pi)
    values = sum(a * np.sin(2 * math.pi * t / p + phases[k]) for k, (p, a) in enumerate(zip(periods, amps)))
    if noise < 0:
        raise ContractError("sine_mix: noise must be >= 0", module="data")
    if noise:
        values = values + noise * rng.standard_normal((length, n))
    return SeriesDataset(values, _names(n))


def _trend_season(params, rng):
    length = int(params.get("length", 512))
    n = int(params.get("n_variates", 2))
    slope = float(params.get("slope", 0.01))
    period = float(params.get("period", 24.0))
    amp = float(params.get("amplitude", 1.0))
    noise = float(params.get("noise", 0.1))
    if period <= 0 or noise < 0:
        raise ContractError("trend_season: need period > 0 and noise >= 0", module="data")
    t = np.arange(length)[:, None]
    phases = rng.uniform((n,), 0.0, 2 * math.pi)
    values = slope * t + amp * np.sin(2 * math.pi * t / period + phases)
    if noise:
        values = values + noise * rng.standard_normal((length, n))
    return SeriesDataset(values, _names(n))


def _anomaly_spikes(params, rng):
    length = int(params.get("length", 2000))
    n = int(params.get("n_variates", 2))
    rate = float(params.get("rate", 0.02))
    amplitude = float(params.get("spike_amplitude", 5.0))
    seg = int(params.get("segment_len", 3))
    noise = float(params.get("noise", 0.0))
    if not 0 <= rate < 0.2:
        raise ContractError(f"anomaly_spikes: rate {rate} outside [0, 0.2)", module="data")
    if seg < 1:
        raise ContractError("anomaly_spikes: segment_len must be >= 1", module="data")
    base = _sine_mix({"length": length, "n_variates": n, "periods": params.get("periods", (32.0, 16.0)),
                      "amplitudes": params.get("amplitudes", (1.0, 0.5)), "noise": noise}, rng).values
    sigma = base.std(axis=0)
    labels = np.zeros(length, dtype=np.int64)
    values = base.copy()
    n_segments = int(round(rate * length / seg))
    # one segment per equal stratum keeps the rate even across any split;
    # a 2*seg stride inside each stratum keeps segments apart
    width = length // n_segments if n_segments else length
    if n_segments and width < 3 * seg:
        raise ContractError("anomaly_spikes: series too short for the requested rate", module="data")
    # triangular pulse peaking at the full amplitude in the segment centre
    centre = (seg - 1) / 2
    pulse = (1.0 - np.abs(np.arange(seg) - centre) / (centre + 1))[:, None]
    for k in range(n_segments):
        start = k * width + int(rng.integers(seg, width - 2 * seg + 1))
        values[start:start + seg] += pulse * (amplitude * sigma)
        labels[start:start + seg] = 1
    return SeriesDataset(values, _names(n), labels=labels, label_kind="step")


def _two_class(params, rng):
    n_windows = int(params.get("n_windows", 200))
    wl = int(params.get("window_len", 32))
    n = int(params.get("n_variates", 2))
    f0 = float(params.get("f0", 1.0))
    f1 = float(params.get("f1", 3.0))
    noise = float(params.get("noise", 0.1))
    if n_windows < 2 or wl < 2 or noise < 0:
        raise ContractError("two_class: need n_windows >= 2, window_len >= 2, noise >= 0", module="data")
    labels = np.zeros(n_windows, dtype=np.int64)
    labels[rng.permutation(n_windows)[: n_windows // 2]] = 1
    t = np.arange(wl)[:, None]
    blocks = []
    for label in labels:
        freq = f1 if label else f0
        phase = rng.uniform((n,), 0.0, 2 * math.pi)
        block = np.sin(2 * math.pi * freq * t / wl + phase)
        if noise:
            block = block + noise * rng.standard_normal((wl, n))
        blocks.append(block)
    return SeriesDataset(np.concatenate(blocks), _names(n), labels=labels, label_kind="window", window_len=wl)


GENERATORS = {
    "sine_mix": _sine_mix,
    "trend_season": _trend_season,
    "anomaly_spikes": _anomaly_spikes,
    "two_class": _two_class,
}


def synthesize(kind: str, params: dict | None = None, seed: int = 0) -> SeriesDataset:
    """Seeded synthetic series for the three tasks.

    sine_mix: sum of sinusoids with random per-variate phases plus optional
    Gaussian noise. trend_season: linear trend plus one seasonal sinusoid.
    anomaly_spikes: sine_mix base with ``rate`` of its steps inside labelled
    segments carrying a triangular pulse that peaks at ``spike_amplitude``
    base standard deviations. Segments are stratified, one per equal slice.
    two_class: concatenated windows of frequency ``f0`` (class 0) or ``f1``
    (class 1) cycles per window.
    """
    if kind not in GENERATORS:
        raise ContractError(f"synthesize: unknown kind {kind!r}", module="data")
    params = dict(params or {})
    length = params.get("length")
    if length is not None and int(length) < 1:
        raise ContractError("synthesize: length must be >= 1", module="data")
    return GENERATORS[kind](params, RngState(seed))
