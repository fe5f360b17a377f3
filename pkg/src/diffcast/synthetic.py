"""Bundled synthetic processes for self-contained runs and acceptance tests.

All generators are deterministic in their seed, burn in past transients, and
return regular Dataset objects.  The correlated VAR(1) process also exposes
an oracle sampler that draws future trajectories from the true process, which
acceptance tests use as the unbeatable reference forecaster.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .numcore import RngStream
from .pipeline import Dataset, frequency_step

VAR1_COEFF = np.array([[0.8, 0.15], [0.1, 0.75]])  # spectral radius 0.9
VAR1_NOISE_STD = 0.5
VAR1_NOISE_CORR = 0.8
VAR1_OFFSET = np.array([10.0, 10.0])

_DEFAULT_START = {
    "day": np.datetime64("2015-01-05T00:00:00"),  # a Monday
    "hour": np.datetime64("2015-01-05T00:00:00"),
    "30min": np.datetime64("2015-01-05T00:00:00"),
}


def _timestamps(length: int, freq: str) -> np.ndarray:
    start = _DEFAULT_START[freq]
    return (start + np.arange(length) * frequency_step(freq)).astype("datetime64[s]")


def _noise_chol(std: float, corr: float) -> np.ndarray:
    cov = std * std * np.array([[1.0, corr], [corr, 1.0]])
    return np.linalg.cholesky(cov)


def make_var1(length: int, seed: int, freq: str = "day") -> Dataset:
    """Correlated 2-entity VAR(1) around a constant offset."""
    if length < 2:
        raise ConfigError("var1: length must be >= 2")
    rng = RngStream(seed, (101,))
    chol = _noise_chol(VAR1_NOISE_STD, VAR1_NOISE_CORR)
    burn = 300
    noise = rng.normal((burn + length, 2)) @ chol.T
    u = np.zeros(2)
    rows = np.empty((burn + length, 2))
    for t in range(burn + length):
        u = VAR1_COEFF @ u + noise[t]
        rows[t] = u
    values = rows[burn:] + VAR1_OFFSET
    return Dataset(
        frequency=freq,
        timestamps=_timestamps(length, freq),
        values=values,
        entity_ids=["s0", "s1"],
    )


def var1_oracle_samples(
    last_value: np.ndarray, prediction_steps: int, num_samples: int, seed: int
) -> np.ndarray:
    """Future trajectories drawn from the true VAR(1) process, conditioned on
    the final observed value; shape (S, prediction_steps, 2)."""
    rng = RngStream(seed, (102,))
    chol = _noise_chol(VAR1_NOISE_STD, VAR1_NOISE_CORR)
    u0 = np.asarray(last_value, dtype=np.float64) - VAR1_OFFSET
    out = np.empty((num_samples, prediction_steps, 2))
    for s in range(num_samples):
        noise = rng.child(s).normal((prediction_steps, 2)) @ chol.T
        u = u0
        for t in range(prediction_steps):
            u = VAR1_COEFF @ u + noise[t]
            out[s, t] = u
    return out + VAR1_OFFSET


def make_ar1(
    length: int,
    seed: int,
    phi: float = 0.9,
    noise_std: float = 0.1,
    freq: str = "day",
) -> Dataset:
    """Scalar AR(1): x_t = phi * x_{t-1} + noise_std * eps_t."""
    if length < 2:
        raise ConfigError("ar1: length must be >= 2")
    rng = RngStream(seed, (103,))
    burn = 300
    eps = rng.normal(burn + length)
    x = 0.0
    rows = np.empty(burn + length)
    for t in range(burn + length):
        x = phi * x + noise_std * eps[t]
        rows[t] = x
    return Dataset(
        frequency=freq,
        timestamps=_timestamps(length, freq),
        values=rows[burn:, None],
        entity_ids=["s0"],
    )


def make_static(
    length: int,
    seed: int,
    mean: float = 3.0,
    std: float = 0.5,
    freq: str = "day",
) -> Dataset:
    """I.i.d. scalar Gaussian observations."""
    if length < 2:
        raise ConfigError("static: length must be >= 2")
    rng = RngStream(seed, (104,))
    values = mean + std * rng.normal(length)
    return Dataset(
        frequency=freq,
        timestamps=_timestamps(length, freq),
        values=values[:, None],
        entity_ids=["s0"],
    )


def make_fx(length: int, seed: int, dim: int = 8, freq: str = "day") -> Dataset:
    """Exchange-rate-shaped data: slow geometric random walks at distinct
    positive levels with mild cross-correlation."""
    if length < 2:
        raise ConfigError("fx: length must be >= 2")
    rng = RngStream(seed, (105,))
    levels = rng.child(0).uniform(dim, 0.5, 2.0)
    vol = rng.child(1).uniform(dim, 0.002, 0.006)
    common = rng.child(2).normal(length)
    own = rng.child(3).normal((length, dim))
    shocks = 0.3 * common[:, None] + np.sqrt(1.0 - 0.09) * own
    log_paths = np.cumsum(vol * shocks, axis=0)
    values = levels * np.exp(log_paths - log_paths[0])
    return Dataset(
        frequency=freq,
        timestamps=_timestamps(length, freq),
        values=values,
        entity_ids=[f"fx{j}" for j in range(dim)],
    )


GENERATORS = {
    "var1": make_var1,
    "ar1": make_ar1,
    "static": make_static,
    "fx": make_fx,
}


def make_dataset(kind: str, length: int, seed: int, freq: str = "day") -> Dataset:
    try:
        gen = GENERATORS[kind]
    except KeyError:
        raise ConfigError(
            f"unknown synthetic kind {kind!r}; expected one of {', '.join(sorted(GENERATORS))}"
        ) from None
    return gen(length, seed, freq=freq)
