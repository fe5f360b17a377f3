"""Training and forecasting around the diffusion core.

Training follows the windowed recipe: draw a batch of random context+
prediction windows, scale each by its context mean, run the encoder over the
whole window on ground-truth inputs (teacher forcing), and score one noise-
matching loss per (window, prediction step) with independently drawn noise
levels, all stacked into a single network evaluation per batch.  Validation
re-scores fixed held-out windows with identical noise draws every epoch, so
its trajectory is comparable across epochs; early stopping returns the best
parameters seen, never the last.

Forecasting warms the encoder on the final context window, then alternates
diffusion sampling and encoder steps, feeding each scaled sample back with
the next step's covariates.  Every trajectory draws from its own child
stream, so trajectory j's noise is independent of how many trajectories run.

Checkpoints are a self-describing binary container: magic, format version, a
canonical-JSON config echo, then length-prefixed named parameter records in
little-endian float64.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import diffusion
from .denoiser import Denoiser, DenoiserConfig
from .encoder import Encoder, EncoderConfig, EncoderState
from .errors import (
    CheckpointFormatError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
    ContractError,
    NumericError,
)
from .numcore import ParameterSet, RngStream, Tensor, adam_step, backward, concat, no_grad
from .pipeline import (
    Dataset,
    Scaler,
    WindowBatch,
    assemble_window_batch,
    build_covariates,
    covariate_dim,
    default_lags,
    sample_window_offsets,
    split_dataset,
)

CHECKPOINT_MAGIC = b"DIFFCST1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    series_dim: int
    prediction_steps: int
    frequency: str
    diffusion_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.1
    cell: str = "lstm"
    encoder_layers: int = 2
    hidden_size: int = 40
    residual_channels: int = 8
    residual_blocks: int = 8
    embedding_dim: int = 32
    embedding_max_index: int = 500
    lags: tuple | None = None
    calendar: bool = True

    def resolved_lags(self) -> tuple:
        return tuple(self.lags) if self.lags is not None else default_lags(self.frequency)

    def covariate_dim(self) -> int:
        return covariate_dim(self.series_dim, self.frequency, self.resolved_lags(), self.calendar)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    batches_per_epoch: int = 32
    val_noise_repeats: int = 16
    val_metric: str = "loss"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.batches_per_epoch < 1:
            raise ConfigError("train config: rates and batch counts must be positive")
        if self.max_epochs < 0 or self.patience < 1 or self.val_noise_repeats < 1:
            raise ConfigError("train config: max_epochs >= 0, patience >= 1, repeats >= 1")
        if self.val_metric not in ("loss", "crps"):
            raise ConfigError(f"train config: unknown val_metric {self.val_metric!r}")


class ForecastModel:
    """Encoder + denoiser + schedule sharing one ParameterSet."""

    def __init__(self, config: ModelConfig, params: ParameterSet, encoder: Encoder, denoiser: Denoiser):
        self.config = config
        self.params = params
        self.encoder = encoder
        self.denoiser = denoiser
        self.schedule = diffusion.linear_schedule(
            config.diffusion_steps, config.beta_start, config.beta_end
        )

    @classmethod
    def build(cls, config: ModelConfig, init_rng: RngStream, zero_init_head: bool = True) -> "ForecastModel":
        params = ParameterSet()
        enc_cfg = EncoderConfig(
            input_dim=config.series_dim + config.covariate_dim(),
            cell=config.cell,
            layers=config.encoder_layers,
            hidden_size=config.hidden_size,
        )
        encoder = Encoder(enc_cfg, params, init_rng.child(0))
        den_cfg = DenoiserConfig(
            series_dim=config.series_dim,
            cond_dim=config.hidden_size,
            residual_channels=config.residual_channels,
            residual_blocks=config.residual_blocks,
            embedding_dim=config.embedding_dim,
            embedding_max_index=config.embedding_max_index,
            zero_init_head=zero_init_head,
        )
        denoiser = Denoiser(den_cfg, params, init_rng.child(1))
        if config.diffusion_steps > config.embedding_max_index:
            raise ConfigError(
                f"diffusion_steps {config.diffusion_steps} exceeds the noise "
                f"embedding range {config.embedding_max_index}"
            )
        return cls(config, params, encoder, denoiser)


@dataclass
class ForecastSampleSet:
    """S sampled trajectories over the horizon, already in original units."""

    samples: np.ndarray      # (S, horizon, D)
    divisors: np.ndarray     # (D,)
    window_start: int        # first predicted index in the source dataset
    timestamps: np.ndarray   # (horizon,)
    entity_ids: list


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    param_values: dict
    best_val_loss: float
    entity_ids: list

    def build_model(self) -> ForecastModel:
        model = ForecastModel.build(self.model_config, RngStream(0).child(0))
        model.params.load_values(self.param_values)
        return model

    def save(self, path: str) -> None:
        save_checkpoint(self, path)


# -- training ----------------------------------------------------------------


def _encoder_inputs(batch: WindowBatch, prediction_steps: int) -> np.ndarray:
    """Per-position encoder inputs over a window batch: the scaled
    observation concatenated with that position's covariates, for positions
    0 .. 2P-2 (the state after the last prediction step conditions nothing)."""
    ctx = batch.context_scaled
    pred = batch.prediction_scaled
    values = np.concatenate([ctx, pred], axis=1)          # (B, 2P, D)
    full = np.concatenate([values, batch.covariates], axis=2)
    return full.transpose(1, 0, 2)[: 2 * prediction_steps - 1]


def _conditioners(model: ForecastModel, batch: WindowBatch) -> Tensor:
    """Hidden states conditioning each prediction step, stacked to
    (P * B, hidden); row-major in step order."""
    p_steps = model.config.prediction_steps
    inputs = _encoder_inputs(batch, p_steps)
    states = model.encoder.unroll([Tensor(inputs[i]) for i in range(inputs.shape[0])])
    conds = [states[i].top for i in range(p_steps - 1, 2 * p_steps - 1)]
    return concat(conds, axis=0)


def _batch_loss(model: ForecastModel, batch: WindowBatch, noise_rng: RngStream) -> Tensor:
    p_steps = model.config.prediction_steps
    num_windows = batch.context.shape[0]
    cond = _conditioners(model, batch)
    x0 = batch.prediction_scaled.transpose(1, 0, 2).reshape(
        p_steps * num_windows, model.config.series_dim
    )
    levels = noise_rng.integers(1, model.schedule.num_levels + 1, x0.shape[0])
    return diffusion.training_loss(x0, cond, levels, noise_rng, model.denoiser, model.schedule)


def _validation_batch(ds: Dataset, split, model_cfg: ModelConfig) -> WindowBatch:
    p_steps = model_cfg.prediction_steps
    offsets = np.array([split.train_end - p_steps], dtype=np.int64)
    return assemble_window_batch(ds, offsets, p_steps, model_cfg.resolved_lags(), model_cfg.calendar)


def _validation_loss(model: ForecastModel, batch: WindowBatch, rng: RngStream, repeats: int) -> float:
    with no_grad():
        cond = _conditioners(model, batch).data
        p_steps = model.config.prediction_steps
        num_windows = batch.context.shape[0]
        x0 = batch.prediction_scaled.transpose(1, 0, 2).reshape(
            p_steps * num_windows, model.config.series_dim
        )
        cond_rep = Tensor(np.tile(cond, (repeats, 1)))
        x0_rep = np.tile(x0, (repeats, 1))
        levels = rng.integers(1, model.schedule.num_levels + 1, x0_rep.shape[0])
        loss = diffusion.training_loss(
            x0_rep, cond_rep, levels, rng, model.denoiser, model.schedule
        )
    return float(loss.data)


def _validation_crps(model: ForecastModel, ds: Dataset, split, seed: int) -> float:
    from .metrics import crps_sum

    p_steps = model.config.prediction_steps
    fs = forecast_window(model, ds, num_samples=20, seed=seed, window_start=split.train_end)
    truth = ds.values[split.train_end : split.train_end + p_steps]
    return crps_sum(fs.samples, truth)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list  # rows of (epoch, train_loss or None, val_loss, best_val)
    epochs_run: int


def train(ds: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig) -> TrainResult:
    """Train to convergence under early stopping; returns the checkpoint of
    the best-validation parameters plus the per-epoch log."""
    if ds.dim != model_cfg.series_dim:
        raise ConfigError(
            f"model built for {model_cfg.series_dim} entities, dataset has {ds.dim}"
        )
    split = split_dataset(ds, model_cfg.prediction_steps)
    root = RngStream(train_cfg.seed)
    model = ForecastModel.build(model_cfg, root.child(0))
    data_rng = root.child(1)
    noise_rng = root.child(2)

    val_batch = _validation_batch(ds, split, model_cfg)
    lags = model_cfg.resolved_lags()

    def evaluate() -> float:
        if train_cfg.val_metric == "crps":
            return _validation_crps(model, ds, split, seed=train_cfg.seed + 977)
        # fresh stream with a fixed path: identical draws every epoch
        return _validation_loss(model, val_batch, root.child(3), train_cfg.val_noise_repeats)

    best_val = evaluate()
    best_params = model.params.snapshot()
    history = [(0, None, best_val, best_val)]
    epochs_since_best = 0
    epochs_run = 0

    for epoch in range(1, train_cfg.max_epochs + 1):
        epoch_losses = []
        for b in range(train_cfg.batches_per_epoch):
            offsets = sample_window_offsets(
                split.train_end,
                model_cfg.prediction_steps,
                train_cfg.batch_size,
                data_rng.child(epoch, b),
            )
            batch = assemble_window_batch(
                ds, offsets, model_cfg.prediction_steps, lags, model_cfg.calendar
            )
            try:
                loss = _batch_loss(model, batch, noise_rng.child(epoch, b))
                model.params.zero_grads()
                backward(loss)
                adam_step(model.params, train_cfg.learning_rate)
            except NumericError as exc:
                raise NumericError(
                    f"training aborted at epoch {epoch}, batch {b}: {exc}"
                ) from exc
            epoch_losses.append(float(loss.data))
        epochs_run = epoch
        val = evaluate()
        if val < best_val:
            best_val = val
            best_params = model.params.snapshot()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
        history.append((epoch, float(np.mean(epoch_losses)), val, best_val))
        if epochs_since_best >= train_cfg.patience:
            break

    ckpt = Checkpoint(
        model_config=model_cfg,
        train_config=train_cfg,
        param_values=best_params,
        best_val_loss=float(best_val),
        entity_ids=list(ds.entity_ids),
    )
    return TrainResult(checkpoint=ckpt, history=history, epochs_run=epochs_run)


# -- forecasting ---------------------------------------------------------------


def _tile_state(state: EncoderState, count: int) -> EncoderState:
    layers = []
    for h, c in state.layers:
        h_t = Tensor(np.repeat(h.data, count, axis=0))
        c_t = Tensor(np.repeat(c.data, count, axis=0)) if c is not None else None
        layers.append((h_t, c_t))
    return EncoderState(layers)


def forecast(
    source, ds: Dataset, num_samples: int, seed: int, horizon_steps: int | None = None
) -> ForecastSampleSet:
    """Sample S trajectories over the test window (the final prediction-sized
    span) of ``ds``; ``source`` is a Checkpoint or a ForecastModel."""
    model = source.build_model() if isinstance(source, Checkpoint) else source
    window_start = ds.num_steps - model.config.prediction_steps
    return forecast_window(model, ds, num_samples, seed, window_start, horizon_steps)


def forecast_window(
    model: ForecastModel,
    ds: Dataset,
    num_samples: int,
    seed: int,
    window_start: int,
    horizon_steps: int | None = None,
) -> ForecastSampleSet:
    cfg = model.config
    p_steps = cfg.prediction_steps
    horizon = p_steps if horizon_steps is None else int(horizon_steps)
    if ds.dim != cfg.series_dim:
        raise ContractError(
            f"forecast: model built for {cfg.series_dim} entities, dataset has {ds.dim}"
        )
    if num_samples < 1:
        raise ContractError(f"forecast: need at least one trajectory, got {num_samples}")
    if not (1 <= horizon <= p_steps):
        raise ContractError(f"forecast: horizon must be in [1, {p_steps}], got {horizon}")
    if window_start < p_steps or window_start + horizon > ds.num_steps:
        raise ContractError(
            f"forecast: window starting at {window_start} needs {p_steps} context "
            f"steps and {horizon} future timestamps inside the dataset"
        )

    scaler = Scaler.fit(ds.values[window_start - p_steps : window_start])
    ctx_scaled = scaler.scale(ds.values[window_start - p_steps : window_start])
    cov, _ = build_covariates(
        ds.timestamps[window_start - p_steps : window_start + p_steps],
        cfg.frequency,
        cfg.resolved_lags(),
        ctx_scaled,
        ds.entity_ids,
        cfg.calendar,
    )

    num_levels = model.schedule.num_levels
    rng = RngStream(seed)
    # one noise block per trajectory so trajectory j never depends on S
    blocks = np.stack(
        [rng.child(j).normal((horizon, num_levels, cfg.series_dim)) for j in range(num_samples)]
    )

    with no_grad():
        warm_inputs = [
            Tensor(np.concatenate([ctx_scaled[p], cov[p]])[None, :]) for p in range(p_steps)
        ]
        state = model.encoder.unroll(warm_inputs)[-1]
        state = _tile_state(state, num_samples)

        out = np.empty((num_samples, horizon, cfg.series_dim))
        for t in range(horizon):
            x = diffusion.sample_with_noise(
                state.top,
                blocks[:, t, 0, :],
                [blocks[:, t, 1 + i, :] for i in range(num_levels - 1)],
                model.denoiser,
                model.schedule,
            )
            out[:, t, :] = x
            step_cov = np.broadcast_to(cov[p_steps + t], (num_samples, cov.shape[1]))
            state = model.encoder.step(
                Tensor(np.concatenate([x, step_cov], axis=1)), state
            )

    return ForecastSampleSet(
        samples=scaler.unscale(out),
        divisors=scaler.divisors.copy(),
        window_start=window_start,
        timestamps=ds.timestamps[window_start : window_start + horizon].copy(),
        entity_ids=list(ds.entity_ids),
    )


def quantiles(fs: ForecastSampleSet, levels) -> np.ndarray:
    """Linear-interpolation empirical quantiles, shape (levels, horizon, D);
    monotone in level by construction."""
    levels = [float(l) for l in levels]
    for level in levels:
        if not (0.0 < level < 1.0):
            raise ContractError(f"quantile level must be in (0, 1), got {level}")
    return np.quantile(fs.samples, levels, axis=0, method="linear")


# -- checkpoint serialization ---------------------------------------------------


def _config_payload(ckpt: Checkpoint) -> bytes:
    model = dataclasses.asdict(ckpt.model_config)
    if model["lags"] is not None:
        model["lags"] = list(model["lags"])
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model": model,
        "train": dataclasses.asdict(ckpt.train_config),
        "best_val_loss": ckpt.best_val_loss,
        "entity_ids": list(ckpt.entity_ids),
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    config_blob = _config_payload(ckpt)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        fh.write(struct.pack("<I", len(ckpt.param_values)))
        for name, value in ckpt.param_values.items():
            encoded = name.encode("utf-8")
            arr = np.asarray(value, dtype="<f8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes(order="C"))


def _read_exact(fh, count: int, what: str) -> bytes:
    blob = fh.read(count)
    if len(blob) != count:
        raise CheckpointTruncatedError(
            f"checkpoint truncated while reading {what} "
            f"(wanted {count} bytes, got {len(blob)})"
        )
    return blob


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic {magic!r})")
        version = struct.unpack("<I", _read_exact(fh, 4, "version"))[0]
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(
                f"{path}: unsupported checkpoint version {version} "
                f"(this build reads version {CHECKPOINT_VERSION})"
            )
        config_len = struct.unpack("<I", _read_exact(fh, 4, "config length"))[0]
        try:
            payload = json.loads(_read_exact(fh, config_len, "config echo"))
        except json.JSONDecodeError as exc:
            raise CheckpointFormatError(f"{path}: config echo is not valid JSON: {exc}") from None
        model_d = dict(payload["model"])
        if model_d.get("lags") is not None:
            model_d["lags"] = tuple(model_d["lags"])
        model_cfg = ModelConfig(**model_d)
        train_cfg = TrainConfig(**payload["train"])
        n_params = struct.unpack("<I", _read_exact(fh, 4, "parameter count"))[0]
        values = {}
        for _ in range(n_params):
            name_len = struct.unpack("<H", _read_exact(fh, 2, "name length"))[0]
            name = _read_exact(fh, name_len, "parameter name").decode("utf-8")
            rank = struct.unpack("<B", _read_exact(fh, 1, f"{name} rank"))[0]
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4, f"{name} dims"))[0] for _ in range(rank)
            )
            count = int(np.prod(shape)) if shape else 1
            blob = _read_exact(fh, 8 * count, f"{name} data")
            values[name] = np.frombuffer(blob, dtype="<f8").reshape(shape).astype(np.float64)
        if fh.read(1) != b"":
            raise CheckpointFormatError(f"{path}: trailing bytes after parameter records")

    ckpt = Checkpoint(
        model_config=model_cfg,
        train_config=train_cfg,
        param_values=values,
        best_val_loss=float(payload["best_val_loss"]),
        entity_ids=list(payload["entity_ids"]),
    )
    _validate_shapes(ckpt)
    return ckpt


def _validate_shapes(ckpt: Checkpoint) -> None:
    reference = ForecastModel.build(ckpt.model_config, RngStream(0).child(0))
    expected = {name: p.shape for name, p in reference.params.items()}
    got = {name: np.asarray(v).shape for name, v in ckpt.param_values.items()}
    if set(expected) != set(got):
        missing = sorted(set(expected) - set(got))
        extra = sorted(set(got) - set(expected))
        raise CheckpointShapeError(
            f"parameter names disagree with config echo: missing={missing} extra={extra}"
        )
    for name in expected:
        if expected[name] != got[name]:
            raise CheckpointShapeError(
                f"parameter {name!r}: config implies shape {expected[name]}, file has {got[name]}"
            )
