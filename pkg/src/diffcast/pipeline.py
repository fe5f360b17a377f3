"""Dataset ingestion, splitting, window sampling, scaling, and covariates.

Two on-disk formats are supported: a wide CSV with a ``timestamp`` column and
one column per entity, and JSON Lines with one record per entity carrying
``start``, ``freq``, and ``values``.  Timestamps must be gapless at the
declared frequency.

Covariates are deterministic functions of the calendar and of the *scaled
context*: lag features never read values from the prediction range, so they
are identical at training and inference time and leak no future information.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DataError
from .numcore import RngStream

FREQUENCIES = ("day", "hour", "30min")

_FREQ_STEP = {
    "day": np.timedelta64(1, "D"),
    "hour": np.timedelta64(1, "h"),
    "30min": np.timedelta64(30, "m"),
}

_FREQ_ALIASES = {
    "day": "day", "d": "day", "1d": "day",
    "hour": "hour", "h": "hour", "1h": "hour",
    "30min": "30min", "30t": "30min", "30m": "30min",
}

# seasonal lags per sampling frequency: previous step plus one full period
DEFAULT_LAGS = {"day": (1, 7), "hour": (1, 24), "30min": (1, 48)}


def normalize_frequency(token: str) -> str:
    try:
        return _FREQ_ALIASES[str(token).strip().lower()]
    except KeyError:
        raise ConfigError(
            f"unknown frequency {token!r}; expected one of {', '.join(FREQUENCIES)}"
        ) from None


def frequency_step(freq: str) -> np.timedelta64:
    return _FREQ_STEP[normalize_frequency(freq)]


@dataclass
class Dataset:
    frequency: str
    timestamps: np.ndarray
    values: np.ndarray
    entity_ids: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"dataset values must be 2-D, got shape {self.values.shape}")
        if len(self.timestamps) != self.values.shape[0]:
            raise DataError(
                f"dataset has {len(self.timestamps)} timestamps but {self.values.shape[0]} rows"
            )
        if len(self.entity_ids) != self.values.shape[1]:
            raise DataError(
                f"dataset has {len(self.entity_ids)} entity ids but {self.values.shape[1]} columns"
            )
        if not np.all(np.isfinite(self.values)):
            raise DataError("dataset contains non-finite values")
        _validate_gapless(self.timestamps, self.frequency)

    @property
    def num_steps(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def _validate_gapless(timestamps: np.ndarray, freq: str) -> None:
    step = frequency_step(freq)
    if len(timestamps) < 2:
        return
    deltas = np.diff(timestamps)
    wrong = np.nonzero(deltas != step)[0]
    if wrong.size:
        i = int(wrong[0])
        if deltas[i] > step:
            missing = timestamps[i] + step
            raise DataError(f"timestamp gap: missing {missing} at declared frequency {freq}")
        raise DataError(
            f"timestamps not increasing by one {freq} step at {timestamps[i + 1]}"
        )


def _parse_timestamp(text: str, row: int) -> np.datetime64:
    try:
        return np.datetime64(text.strip())
    except ValueError:
        raise DataError(f"row {row}: cannot parse timestamp {text!r}") from None


def load_dataset(path: str, fmt: str = "csv_wide", frequency: str | None = None) -> Dataset:
    """Load and validate a dataset.

    ``frequency`` may be omitted for csv_wide, in which case it is inferred
    from the first timestamp delta; jsonlines records declare their own.
    """
    if fmt == "csv_wide":
        return _load_csv_wide(path, frequency)
    if fmt == "jsonlines":
        return _load_jsonlines(path, frequency)
    raise ConfigError(f"unknown dataset format {fmt!r}; expected csv_wide or jsonlines")


def _load_csv_wide(path: str, frequency: str | None) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise DataError(f"{path}: empty dataset file")
    header = [c.strip() for c in lines[0].split(",")]
    if not header or header[0] != "timestamp":
        raise DataError(f"{path}: first header column must be 'timestamp', got {header[:1]!r}")
    entity_ids = header[1:]
    if not entity_ids:
        raise DataError(f"{path}: no entity columns found")
    stamps = []
    rows = []
    for row_no, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise DataError(
                f"row {row_no}: expected {len(header)} cells, got {len(cells)}"
            )
        stamps.append(_parse_timestamp(cells[0], row_no))
        parsed = []
        for col_no, cell in enumerate(cells[1:], start=2):
            try:
                parsed.append(float(cell))
            except ValueError:
                raise DataError(
                    f"row {row_no}, column {col_no} ({header[col_no - 1]}): "
                    f"non-numeric cell {cell.strip()!r}"
                ) from None
        rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    timestamps = np.array(stamps, dtype="datetime64[s]")
    if frequency is None:
        if len(timestamps) < 2:
            raise ConfigError(f"{path}: cannot infer frequency from a single row")
        frequency = _infer_frequency(timestamps[1] - timestamps[0], path)
    return Dataset(
        frequency=normalize_frequency(frequency),
        timestamps=timestamps,
        values=np.array(rows, dtype=np.float64),
        entity_ids=entity_ids,
    )


def _infer_frequency(delta: np.timedelta64, path: str) -> str:
    for name, step in _FREQ_STEP.items():
        if delta == step:
            return name
    raise DataError(f"{path}: cannot infer a supported frequency from step {delta}")


def _load_jsonlines(path: str, frequency: str | None) -> Dataset:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for row_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append((row_no, json.loads(line)))
            except json.JSONDecodeError as exc:
                raise DataError(f"row {row_no}: invalid JSON record: {exc}") from None
    if not records:
        raise DataError(f"{path}: empty dataset file")
    starts, freqs, series, ids = [], [], [], []
    for row_no, rec in records:
        for key in ("start", "freq", "values"):
            if key not in rec:
                raise DataError(f"row {row_no}: record is missing {key!r}")
        starts.append(_parse_timestamp(str(rec["start"]), row_no))
        freqs.append(normalize_frequency(rec["freq"]))
        vals = rec["values"]
        try:
            series.append(np.asarray(vals, dtype=np.float64))
        except (TypeError, ValueError):
            raise DataError(f"row {row_no}: non-numeric entry in values") from None
        ids.append(str(rec.get("id", f"s{len(ids)}")))
    lengths = {len(s) for s in series}
    if len(lengths) != 1:
        raise DataError(
            f"ragged entity lengths {sorted(len(s) for s in series)}; all records must match"
        )
    if len(set(freqs)) != 1:
        raise DataError(f"records disagree on frequency: {sorted(set(freqs))}")
    if len({str(s) for s in starts}) != 1:
        raise DataError("records disagree on start timestamp")
    freq = freqs[0]
    if frequency is not None and normalize_frequency(frequency) != freq:
        raise ConfigError(
            f"configured frequency {frequency!r} != file frequency {freq!r}"
        )
    length = lengths.pop()
    timestamps = (starts[0] + np.arange(length) * _FREQ_STEP[freq]).astype("datetime64[s]")
    values = np.stack(series, axis=1)
    return Dataset(frequency=freq, timestamps=timestamps, values=values, entity_ids=ids)


def save_dataset(ds: Dataset, path: str, fmt: str = "csv_wide") -> None:
    if fmt == "csv_wide":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("timestamp," + ",".join(ds.entity_ids) + "\n")
            for ts, row in zip(ds.timestamps, ds.values):
                cells = ",".join(repr(float(v)) for v in row)
                fh.write(f"{np.datetime_as_string(ts, unit='s')},{cells}\n")
    elif fmt == "jsonlines":
        start = np.datetime_as_string(ds.timestamps[0], unit="s")
        with open(path, "w", encoding="utf-8") as fh:
            for j, name in enumerate(ds.entity_ids):
                rec = {
                    "id": name,
                    "start": start,
                    "freq": ds.frequency,
                    "values": [float(v) for v in ds.values[:, j]],
                }
                fh.write(json.dumps(rec) + "\n")
    else:
        raise ConfigError(f"unknown dataset format {fmt!r}")


# -- splitting and windows ---------------------------------------------------


@dataclass(frozen=True)
class Split:
    """Index ranges: train is [0, train_end), validation [train_end, val_end),
    test [val_end, total)."""

    train_end: int
    val_end: int
    total: int

    @property
    def test_range(self) -> tuple[int, int]:
        return (self.val_end, self.total)

    @property
    def val_range(self) -> tuple[int, int]:
        return (self.train_end, self.val_end)


def split_dataset(ds: Dataset, prediction_steps: int) -> Split:
    """Final prediction_steps rows are the test span, the preceding equal
    region is validation, everything before that trains."""
    if prediction_steps < 1:
        raise ConfigError(f"prediction_steps must be >= 1, got {prediction_steps}")
    t_total = ds.num_steps
    minimum = 3 * prediction_steps + 1
    if t_total < minimum:
        raise ConfigError(
            f"dataset too short: {t_total} steps; need at least {minimum} "
            f"(> 3 x prediction_steps) for train/validation/test"
        )
    return Split(
        train_end=t_total - 2 * prediction_steps,
        val_end=t_total - prediction_steps,
        total=t_total,
    )


def sample_window_offsets(
    train_length: int, prediction_steps: int, count: int, rng: RngStream
) -> np.ndarray:
    """Uniform start offsets for context+prediction windows inside the train
    region; windows may overlap each other but never cross train_end."""
    span = 2 * prediction_steps
    if train_length < span:
        raise ConfigError(
            f"train region of {train_length} steps cannot fit a window of {span}"
        )
    return rng.integers(0, train_length - span + 1, size=count)


# -- scaling -----------------------------------------------------------------


class Scaler:
    """Per-entity division by the context-window mean (1 where that mean is
    exactly zero)."""

    __slots__ = ("divisors",)

    def __init__(self, divisors: np.ndarray):
        self.divisors = np.asarray(divisors, dtype=np.float64)

    @classmethod
    def fit(cls, context: np.ndarray) -> "Scaler":
        context = np.asarray(context, dtype=np.float64)
        if context.ndim != 2 or context.shape[0] < 1:
            raise ContractError(
                f"scaler: context must be a non-empty (steps, entities) array, got {context.shape}"
            )
        means = context.mean(axis=0)
        return cls(np.where(means == 0.0, 1.0, means))

    def scale(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) / self.divisors

    def unscale(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.divisors


# -- covariates ----------------------------------------------------------------


def _weekday(timestamps: np.ndarray) -> np.ndarray:
    days = timestamps.astype("datetime64[D]").astype(np.int64)
    return (days + 3) % 7  # epoch 1970-01-01 was a Thursday; Monday = 0


def calendar_features(timestamps: np.ndarray, freq: str) -> tuple[np.ndarray, list[str]]:
    """Calendar bins mapped linearly onto [-0.5, 0.5) via bin/bins - 0.5."""
    freq = normalize_frequency(freq)
    timestamps = np.asarray(timestamps, dtype="datetime64[s]")
    cols, names = [], []
    if freq in ("hour", "30min"):
        seconds = (timestamps - timestamps.astype("datetime64[D]")).astype(np.int64)
        if freq == "hour":
            cols.append((seconds // 3600) / 24.0 - 0.5)
            names.append("cal:hour_of_day")
        else:
            cols.append((seconds // 1800) / 48.0 - 0.5)
            names.append("cal:halfhour_of_day")
    cols.append(_weekday(timestamps) / 7.0 - 0.5)
    names.append("cal:day_of_week")
    return np.stack(cols, axis=1), names


def lag_features(
    window_length: int,
    context_scaled: np.ndarray,
    lags: tuple[int, ...],
    entity_ids: list[str],
) -> tuple[np.ndarray, list[str]]:
    """Per-entity lagged values of the scaled context over a window.

    Position p reads the scaled context at p - lag when that index falls
    inside the context; positions before the window start are zero-padded and
    prediction-range sources are never read (those slots are zero), keeping
    the features identical at training and inference time.
    """
    context_scaled = np.asarray(context_scaled, dtype=np.float64)
    context_len, dim = context_scaled.shape
    feats = np.zeros((window_length, len(lags) * dim))
    names = []
    col = 0
    for lag in lags:
        if lag < 1:
            raise ConfigError(f"lag indices must be positive, got {lag}")
        for j in range(dim):
            names.append(f"lag{lag}:{entity_ids[j]}")
        for p in range(window_length):
            q = p - lag
            if 0 <= q < context_len:
                feats[p, col : col + dim] = context_scaled[q]
        col += dim
    return feats, names


def default_lags(freq: str) -> tuple[int, ...]:
    return DEFAULT_LAGS[normalize_frequency(freq)]


def build_covariates(
    timestamps: np.ndarray,
    freq: str,
    lags: tuple[int, ...],
    context_scaled: np.ndarray,
    entity_ids: list[str],
    calendar: bool = True,
) -> tuple[np.ndarray, list[str]]:
    """Covariate matrix over a full window (context + prediction range)."""
    window_length = len(timestamps)
    blocks, names = [], []
    if calendar:
        cal, cal_names = calendar_features(timestamps, freq)
        blocks.append(cal)
        names.extend(cal_names)
    if lags:
        lagged, lag_names = lag_features(window_length, context_scaled, tuple(lags), entity_ids)
        blocks.append(lagged)
        names.extend(lag_names)
    if not blocks:
        return np.zeros((window_length, 0)), []
    return np.concatenate(blocks, axis=1), names


def covariate_dim(dim: int, freq: str, lags: tuple[int, ...], calendar: bool = True) -> int:
    n_cal = 0
    if calendar:
        n_cal = 1 if normalize_frequency(freq) == "day" else 2
    return n_cal + len(lags) * dim


@dataclass
class WindowBatch:
    """Aligned arrays for a batch of training windows: raw context and
    prediction values plus covariates over each full window."""

    context: np.ndarray       # (B, P, D) raw units
    prediction: np.ndarray    # (B, P, D) raw units
    covariates: np.ndarray    # (B, 2P, C)
    divisors: np.ndarray      # (B, D)
    offsets: np.ndarray       # (B,)

    @property
    def context_scaled(self) -> np.ndarray:
        return self.context / self.divisors[:, None, :]

    @property
    def prediction_scaled(self) -> np.ndarray:
        return self.prediction / self.divisors[:, None, :]


def assemble_window_batch(
    ds: Dataset,
    offsets: np.ndarray,
    prediction_steps: int,
    lags: tuple[int, ...],
    calendar: bool = True,
) -> WindowBatch:
    """Slice raw windows at the given offsets, fit a scaler per window, and
    attach covariates built from the calendar and each window's scaled
    context (never from prediction-range targets)."""
    p_steps = prediction_steps
    contexts, predictions, covs, divisors = [], [], [], []
    for off in np.asarray(offsets, dtype=np.int64):
        ctx = ds.values[off : off + p_steps]
        pred = ds.values[off + p_steps : off + 2 * p_steps]
        scaler = Scaler.fit(ctx)
        cov, _ = build_covariates(
            ds.timestamps[off : off + 2 * p_steps],
            ds.frequency,
            lags,
            scaler.scale(ctx),
            ds.entity_ids,
            calendar,
        )
        contexts.append(ctx)
        predictions.append(pred)
        covs.append(cov)
        divisors.append(scaler.divisors)
    return WindowBatch(
        context=np.stack(contexts),
        prediction=np.stack(predictions),
        covariates=np.stack(covs),
        divisors=np.stack(divisors),
        offsets=np.asarray(offsets, dtype=np.int64),
    )
