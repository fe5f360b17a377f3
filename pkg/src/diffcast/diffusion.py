"""Variance schedules and forward/reverse diffusion mathematics.

The forward process corrupts a clean vector x0 over N levels with Gaussian
noise of variance beta_n per step; its closed-form marginal lets training
jump straight to any level.  The reverse (sampling) process walks back from
pure noise using a learned noise predictor, with the posterior variance
tilde_beta_n as the step noise.  Levels are 1-indexed throughout, with the
convention alpha_bar_0 = 1 (so tilde_beta_1 = 0 and the final reverse step
is deterministic).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, NumericError
from .numcore import RngStream, Tensor, as_tensor, mean
from .numcore.tensor import no_grad


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)
    tilde_betas: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ConfigError("schedule: betas must be a non-empty 1-D array")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ConfigError("schedule: every beta must lie strictly in (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        prev = np.concatenate(([1.0], alpha_bars[:-1]))
        tilde = (1.0 - prev) / (1.0 - alpha_bars) * betas
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)
        object.__setattr__(self, "tilde_betas", tilde)

    @property
    def num_levels(self) -> int:
        return int(self.betas.size)

    def _check(self, n) -> np.ndarray:
        n_arr = np.asarray(n)
        if np.any(n_arr < 1) or np.any(n_arr > self.num_levels):
            raise ContractError(
                f"noise level out of range [1, {self.num_levels}]: {n!r}"
            )
        return n_arr

    def beta(self, n):
        return self.betas[self._check(n) - 1]

    def alpha(self, n):
        return self.alphas[self._check(n) - 1]

    def alpha_bar(self, n):
        return self.alpha_bars[self._check(n) - 1]

    def alpha_bar_prev(self, n):
        n_arr = self._check(n)
        prev = np.concatenate(([1.0], self.alpha_bars[:-1]))
        return prev[n_arr - 1]

    def tilde_beta(self, n):
        return self.tilde_betas[self._check(n) - 1]

    def rows(self):
        """(n, beta_n, alpha_bar_n, tilde_beta_n) tuples for audit output."""
        return [
            (n, float(self.betas[n - 1]), float(self.alpha_bars[n - 1]), float(self.tilde_betas[n - 1]))
            for n in range(1, self.num_levels + 1)
        ]


def linear_schedule(
    num_levels: int, beta_start: float = 1e-4, beta_end: float = 0.1
) -> DiffusionSchedule:
    """Betas equally spaced from beta_start to beta_end inclusive."""
    if num_levels < 1:
        raise ConfigError(f"schedule: need at least one level, got {num_levels}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(
            f"schedule: need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    return DiffusionSchedule(np.linspace(beta_start, beta_end, num_levels))


def schedule_from_betas(betas) -> DiffusionSchedule:
    """Custom beta arrays (ablation hook); same validation as the dataclass."""
    return DiffusionSchedule(np.asarray(betas, dtype=np.float64))


def _level_coeff(values: np.ndarray, x_ndim: int) -> np.ndarray:
    """Shape per-element level coefficients so they broadcast over trailing
    feature axes: scalars stay scalar, (B,) vectors become (B, 1, ...)."""
    arr = np.asarray(values)
    if arr.ndim == 0:
        return arr
    return arr.reshape(arr.shape + (1,) * (x_ndim - 1))


def forward_marginal(x0, n, eps, sched: DiffusionSchedule):
    """sqrt(alpha_bar_n) * x0 + sqrt(1 - alpha_bar_n) * eps.

    Accepts arrays or Tensors; n may be a scalar level or one level per
    leading row of x0.
    """
    x0_arr = x0.data if isinstance(x0, Tensor) else np.asarray(x0, dtype=np.float64)
    eps_arr = eps.data if isinstance(eps, Tensor) else np.asarray(eps, dtype=np.float64)
    if x0_arr.shape != eps_arr.shape:
        from .errors import DimensionError

        raise DimensionError(
            f"forward_marginal: x0 shape {x0_arr.shape} != eps shape {eps_arr.shape}"
        )
    ab = sched.alpha_bar(n)
    c_signal = _level_coeff(np.sqrt(ab), x0_arr.ndim)
    c_noise = _level_coeff(np.sqrt(1.0 - ab), x0_arr.ndim)
    out = c_signal * x0_arr + c_noise * eps_arr
    if not np.all(np.isfinite(out)):
        raise NumericError("forward_marginal produced a non-finite value")
    return out


def forward_step(x_prev, n, rng: RngStream, sched: DiffusionSchedule) -> np.ndarray:
    """One forward transition: a sample of N(sqrt(1 - beta_n) x_prev, beta_n I)."""
    x_arr = x_prev.data if isinstance(x_prev, Tensor) else np.asarray(x_prev, dtype=np.float64)
    beta = sched.beta(n)
    c = _level_coeff(np.sqrt(1.0 - beta), x_arr.ndim)
    s = _level_coeff(np.sqrt(beta), x_arr.ndim)
    return c * x_arr + s * rng.normal(x_arr.shape)


def posterior_mean(xn, x0, n, sched: DiffusionSchedule) -> np.ndarray:
    """Mean of the forward-process posterior q(x^{n-1} | x^n, x^0)."""
    xn_arr = xn.data if isinstance(xn, Tensor) else np.asarray(xn, dtype=np.float64)
    x0_arr = x0.data if isinstance(x0, Tensor) else np.asarray(x0, dtype=np.float64)
    ab = sched.alpha_bar(n)
    ab_prev = sched.alpha_bar_prev(n)
    beta = sched.beta(n)
    alpha = sched.alpha(n)
    c0 = _level_coeff(np.sqrt(ab_prev) * beta / (1.0 - ab), x0_arr.ndim)
    cn = _level_coeff(np.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab), xn_arr.ndim)
    return c0 * x0_arr + cn * xn_arr


def training_loss(x0, h, n, rng: RngStream, denoiser, sched: DiffusionSchedule) -> Tensor:
    """Noise-matching loss: mean over all components of (eps - eps_hat)^2.

    Draws eps ~ N(0, I), forms the noisy x^n via the closed-form marginal,
    and asks the denoiser to recover eps given (x^n, h, n).  Differentiable
    w.r.t. denoiser and conditioning parameters; the mean reduction keeps the
    loss scale independent of dimension, horizon, and batch size.
    """
    x0_arr = x0.data if isinstance(x0, Tensor) else np.asarray(x0, dtype=np.float64)
    eps = rng.normal(x0_arr.shape)
    xn = forward_marginal(x0_arr, n, eps, sched)
    try:
        eps_hat = denoiser(Tensor(xn), h, n)
        diff = as_tensor(eps) - eps_hat
        loss = mean(diff * diff)
    except NumericError as exc:
        levels = np.unique(np.asarray(n)).tolist()
        raise NumericError(f"training loss non-finite at noise level(s) {levels}: {exc}") from exc
    return loss


def reverse_step(xn, h, n: int, z, denoiser, sched: DiffusionSchedule) -> np.ndarray:
    """One annealed-Langevin update from level n to n-1.

    x^{n-1} = (x^n - beta_n / sqrt(1 - alpha_bar_n) * eps_hat) / sqrt(alpha_n)
              + sqrt(tilde_beta_n) * z,  with z required to be 0 at n = 1.
    """
    n = int(n)
    sched._check(n)
    xn_arr = xn.data if isinstance(xn, Tensor) else np.asarray(xn, dtype=np.float64)
    z_arr = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
    if n == 1 and np.any(z_arr != 0.0):
        raise ContractError("reverse_step: z must be 0 at the final level n=1")
    try:
        with no_grad():
            eps_hat = denoiser(Tensor(xn_arr), h, n)
    except NumericError as exc:
        raise NumericError(f"reverse step failed at noise level {n}: {exc}") from exc
    beta = float(sched.beta(n))
    ab = float(sched.alpha_bar(n))
    alpha = float(sched.alpha(n))
    tb = float(sched.tilde_beta(n))
    out = (xn_arr - beta / np.sqrt(1.0 - ab) * eps_hat.data) / np.sqrt(alpha)
    out = out + np.sqrt(tb) * z_arr
    if not np.all(np.isfinite(out)):
        raise NumericError(f"reverse step produced a non-finite value at level {n}")
    return out


def sample(h, rng: RngStream, denoiser, sched: DiffusionSchedule, dim: int) -> np.ndarray:
    """Draw x^0 by walking the full reverse chain from x^N ~ N(0, I).

    ``h`` may be a single conditioning vector or a batch (rows sampled in
    lockstep from one stream); returns scaled-units samples of shape
    (..., dim) matching the batch shape of h.
    """
    h_arr = h.data if isinstance(h, Tensor) else np.asarray(h, dtype=np.float64)
    batch_shape = h_arr.shape[:-1]
    x = rng.normal(batch_shape + (dim,))
    for n in range(sched.num_levels, 0, -1):
        z = rng.normal(x.shape) if n > 1 else np.zeros(x.shape)
        x = reverse_step(x, h, n, z, denoiser, sched)
    return x


def sample_with_noise(h, x_init: np.ndarray, z_levels: np.ndarray, denoiser, sched: DiffusionSchedule) -> np.ndarray:
    """Reverse chain with caller-supplied noise: ``x_init`` is the level-N
    start and ``z_levels[i]`` is the step noise for level n = N - i (the
    final level uses none).  Lets callers keep per-trajectory noise streams
    independent while batching the math."""
    num = sched.num_levels
    if len(z_levels) != max(num - 1, 0):
        raise ContractError(
            f"sample_with_noise: expected {max(num - 1, 0)} noise slabs, got {len(z_levels)}"
        )
    x = np.asarray(x_init, dtype=np.float64)
    for i, n in enumerate(range(num, 0, -1)):
        z = z_levels[i] if n > 1 else np.zeros(x.shape)
        x = reverse_step(x, h, n, z, denoiser, sched)
    return x
