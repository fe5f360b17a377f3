"""Layered run configuration.

Values resolve in precedence order: built-in defaults, then an INI config
file, then ``DIFFCAST_SECTION__KEY`` environment variables, then explicit
``--set section.key=value`` overrides.  Every key is declared in SCHEMA with
its type; an unknown key is a configuration error naming the offender and
where it came from, never a silent ignore.
"""

from __future__ import annotations

import configparser
import os

from .engine import ModelConfig, TrainConfig
from .errors import ConfigError

ENV_PREFIX = "DIFFCAST_"


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int(text: str) -> int:
    return int(text.strip())


def _parse_float(text: str) -> float:
    return float(text.strip())


def _parse_str(text: str) -> str:
    return text.strip()


def _parse_lags(text: str):
    lowered = text.strip().lower()
    if lowered in ("auto", ""):
        return None
    return tuple(int(part) for part in lowered.split(","))


def _parse_int_list(text: str) -> tuple:
    return tuple(int(part) for part in text.strip().split(","))


def _parse_optional_int(text: str):
    lowered = text.strip().lower()
    if lowered in ("", "none"):
        return None
    return int(lowered)


def _parse_float_list(text: str) -> tuple:
    return tuple(float(part) for part in text.strip().split(","))


# key -> (default, parser applied to string sources)
SCHEMA = {
    "dataset": {
        "path": ("", _parse_str),
        "format": ("csv_wide", _parse_str),
        "frequency": ("", _parse_str),
    },
    "model": {
        "prediction_steps": (24, _parse_int),
        "diffusion_steps": (100, _parse_int),
        "beta_start": (1e-4, _parse_float),
        "beta_end": (0.1, _parse_float),
        "cell": ("lstm", _parse_str),
        "encoder_layers": (2, _parse_int),
        "hidden_size": (40, _parse_int),
        "residual_channels": (8, _parse_int),
        "residual_blocks": (8, _parse_int),
        "embedding_dim": (32, _parse_int),
        "embedding_max_index": (500, _parse_int),
        "lags": (None, _parse_lags),
        "calendar": (True, _parse_bool),
    },
    "train": {
        "learning_rate": (1e-3, _parse_float),
        "batch_size": (64, _parse_int),
        "max_epochs": (100, _parse_int),
        "patience": (10, _parse_int),
        "seed": (0, _parse_int),
        "batches_per_epoch": (32, _parse_int),
        "val_noise_repeats": (16, _parse_int),
        "val_metric": ("loss", _parse_str),
    },
    "forecast": {
        "num_samples": (100, _parse_int),
        "seed": (1, _parse_int),
        "horizon_steps": (None, _parse_optional_int),
        "quantile_levels": ((0.05, 0.25, 0.5, 0.75, 0.95), _parse_float_list),
    },
    "ablation": {
        "steps": ((2, 10, 100), _parse_int_list),
        "repeats": (3, _parse_int),
        "num_samples": (100, _parse_int),
    },
    "output": {
        "directory": ("out", _parse_str),
    },
}


def _defaults() -> dict:
    return {section: {key: spec[0] for key, spec in keys.items()} for section, keys in SCHEMA.items()}


def _apply(config: dict, section: str, key: str, raw: str, source: str) -> None:
    if section not in SCHEMA:
        raise ConfigError(f"unknown config section {section!r} (from {source})")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown config key {section}.{key} (from {source})")
    parser = SCHEMA[section][key][1]
    try:
        config[section][key] = parser(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{key} (from {source}): {exc}") from None


def load_config(
    path: str | None = None,
    env: dict | None = None,
    overrides: list[str] | None = None,
) -> dict:
    """Resolve the full configuration tree; later sources win."""
    config = _defaults()

    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            for key, raw in parser.items(section):
                _apply(config, section.lower(), key.lower(), raw, f"config file {path}")

    env = os.environ if env is None else env
    for name, raw in sorted(env.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        remainder = name[len(ENV_PREFIX) :]
        if "__" not in remainder:
            raise ConfigError(
                f"environment variable {name} must look like "
                f"{ENV_PREFIX}SECTION__KEY"
            )
        section, key = remainder.split("__", 1)
        _apply(config, section.lower(), key.lower(), raw, f"environment variable {name}")

    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        if "." not in dotted:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        section, key = dotted.split(".", 1)
        _apply(config, section.strip().lower(), key.strip().lower(), raw, f"--set {item!r}")

    return config


def model_config_from(config: dict, series_dim: int, frequency: str) -> ModelConfig:
    m = config["model"]
    return ModelConfig(
        series_dim=series_dim,
        prediction_steps=m["prediction_steps"],
        frequency=frequency,
        diffusion_steps=m["diffusion_steps"],
        beta_start=m["beta_start"],
        beta_end=m["beta_end"],
        cell=m["cell"],
        encoder_layers=m["encoder_layers"],
        hidden_size=m["hidden_size"],
        residual_channels=m["residual_channels"],
        residual_blocks=m["residual_blocks"],
        embedding_dim=m["embedding_dim"],
        embedding_max_index=m["embedding_max_index"],
        lags=m["lags"],
        calendar=m["calendar"],
    )


def train_config_from(config: dict) -> TrainConfig:
    t = config["train"]
    return TrainConfig(
        learning_rate=t["learning_rate"],
        batch_size=t["batch_size"],
        max_epochs=t["max_epochs"],
        patience=t["patience"],
        seed=t["seed"],
        batches_per_epoch=t["batches_per_epoch"],
        val_noise_repeats=t["val_noise_repeats"],
        val_metric=t["val_metric"],
    )
