"""diffcast: multivariate probabilistic forecasting with a per-step
denoising diffusion head conditioned on a recurrent state."""

from .diffusion import DiffusionSchedule, linear_schedule, schedule_from_betas
from .engine import (
    Checkpoint,
    ForecastModel,
    ForecastSampleSet,
    ModelConfig,
    TrainConfig,
    TrainResult,
    forecast,
    forecast_window,
    load_checkpoint,
    quantiles,
    save_checkpoint,
    train,
)
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DiffcastError,
    NumericError,
)
from .metrics import crps_empirical, crps_per_entity, crps_sum
from .pipeline import Dataset, Scaler, load_dataset, save_dataset, split_dataset

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "ConfigError",
    "ContractError",
    "DataError",
    "Dataset",
    "DiffcastError",
    "DiffusionSchedule",
    "ForecastModel",
    "ForecastSampleSet",
    "ModelConfig",
    "NumericError",
    "Scaler",
    "TrainConfig",
    "TrainResult",
    "__version__",
    "crps_empirical",
    "crps_per_entity",
    "crps_sum",
    "forecast",
    "forecast_window",
    "linear_schedule",
    "load_checkpoint",
    "load_dataset",
    "quantiles",
    "save_checkpoint",
    "save_dataset",
    "schedule_from_betas",
    "split_dataset",
    "train",
]
