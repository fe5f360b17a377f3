"""Conditional noise-prediction network.

Input vectors are treated as a 1-channel signal over the series axis and
pushed through a stack of gated residual blocks with circular dilated
convolutions.  Each block also receives two position-independent conditioning
signals, broadcast across the series axis: a linear projection of the
recurrent hidden state and a linear projection of the noise-level embedding.
Skip outputs from all blocks are summed and reduced to one channel by a small
head whose final convolution starts at zero, so an untrained network predicts
exactly zero noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .numcore import (
    ParameterSet,
    RngStream,
    Tensor,
    as_tensor,
    conv1d_circular,
    matmul,
    reshape,
    sigmoid,
    slice_axis,
    softplus,
    tanh,
)


@dataclass(frozen=True)
class DenoiserConfig:
    series_dim: int
    cond_dim: int
    residual_channels: int = 8
    residual_blocks: int = 8
    embedding_dim: int = 32
    embedding_max_index: int = 500
    zero_init_head: bool = True

    def __post_init__(self):
        if self.series_dim < 1 or self.cond_dim < 1:
            raise ConfigError("denoiser: series_dim and cond_dim must be positive")
        if self.embedding_dim % 2 != 0:
            raise ConfigError("denoiser: embedding_dim must be even")


class NoiseEmbedding:
    """Deterministic Fourier features of the integer noise level.

    Component 2j is sin(n / max_index^(2j / dim)) and component 2j+1 is the
    matching cosine, for j = 0 .. dim/2 - 1; rows are precomputed for every
    level in [1, max_index].
    """

    def __init__(self, max_index: int = 500, dim: int = 32):
        self.max_index = int(max_index)
        self.dim = int(dim)
        half = self.dim // 2
        levels = np.arange(1, self.max_index + 1, dtype=np.float64)[:, None]
        exponents = 2.0 * np.arange(half, dtype=np.float64) / self.dim
        angles = levels / (float(self.max_index) ** exponents)
        table = np.empty((self.max_index, self.dim))
        table[:, 0::2] = np.sin(angles)
        table[:, 1::2] = np.cos(angles)
        self.table = table

    def __call__(self, n) -> np.ndarray:
        n_arr = np.asarray(n)
        if np.any(n_arr < 1) or np.any(n_arr > self.max_index):
            raise ContractError(
                f"noise embedding index out of range [1, {self.max_index}]: {n!r}"
            )
        return self.table[n_arr - 1]


class Denoiser:
    """Noise predictor eps_hat(x^n, h, n) built on a shared ParameterSet."""

    def __init__(
        self,
        config: DenoiserConfig,
        params: ParameterSet,
        rng: RngStream,
        prefix: str = "denoiser",
    ):
        self.config = config
        self.params = params
        self.prefix = prefix
        self.embedding = NoiseEmbedding(config.embedding_max_index, config.embedding_dim)
        self.dilations = [2 ** (i % 2) for i in range(config.residual_blocks)]
        self._build(rng)

    def _add(self, name: str, value: np.ndarray) -> None:
        self.params.add(f"{self.prefix}.{name}", Tensor(value, requires_grad=True))

    def _build(self, rng: RngStream) -> None:
        cfg = self.config
        c = cfg.residual_channels

        def uniform(shape, fan_in):
            return rng.uniform(shape, -1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(fan_in))

        self._add("in.w", uniform((c, 1, 1), 1))
        self._add("in.b", np.zeros((c, 1)))
        for i in range(cfg.residual_blocks):
            self._add(f"block{i}.conv.w", uniform((2 * c, c, 3), c * 3))
            self._add(f"block{i}.conv.b", np.zeros((2 * c, 1)))
            self._add(f"block{i}.cond.w", uniform((cfg.cond_dim, 2 * c), cfg.cond_dim))
            self._add(f"block{i}.cond.b", np.zeros(2 * c))
            self._add(f"block{i}.emb.w", uniform((cfg.embedding_dim, 2 * c), cfg.embedding_dim))
            self._add(f"block{i}.emb.b", np.zeros(2 * c))
            self._add(f"block{i}.out.w", uniform((2 * c, c, 1), c))
            self._add(f"block{i}.out.b", np.zeros((2 * c, 1)))
        self._add("head.w1", uniform((c, c, 1), c))
        self._add("head.b1", np.zeros((c, 1)))
        if cfg.zero_init_head:
            self._add("head.w2", np.zeros((1, c, 1)))
        else:
            self._add("head.w2", uniform((1, c, 1), c))
        self._add("head.b2", np.zeros((1, 1)))

    def _p(self, name: str) -> Tensor:
        return self.params[f"{self.prefix}.{name}"]

    def __call__(self, xn, h, n) -> Tensor:
        return self.forward(xn, h, n)

    def forward(self, xn, h, n) -> Tensor:
        """eps_hat for a batch: xn (B, D) or (D,), h (B, cond_dim) or
        (cond_dim,), n an int level or one level per row."""
        cfg = self.config
        c = cfg.residual_channels
        xn = as_tensor(xn)
        h = as_tensor(h)
        single = xn.ndim == 1
        if single:
            xn = reshape(xn, 1, xn.shape[0])
        if h.ndim == 1:
            h = reshape(h, 1, h.shape[0])
        batch, d = xn.shape
        if d != cfg.series_dim:
            raise DimensionError(
                f"denoiser: built for series_dim {cfg.series_dim}, got input dim {d}"
            )
        if h.shape != (batch, cfg.cond_dim):
            raise DimensionError(
                f"denoiser: expected conditioning ({batch}, {cfg.cond_dim}), got {h.shape}"
            )

        emb_rows = self.embedding(n)
        if emb_rows.ndim == 1:
            emb_rows = np.broadcast_to(emb_rows, (batch, cfg.embedding_dim)).copy()
        elif emb_rows.shape != (batch, cfg.embedding_dim):
            raise DimensionError(
                f"denoiser: expected one noise level per row, got n of shape {np.asarray(n).shape}"
            )
        emb = Tensor(emb_rows)

        x = conv1d_circular(reshape(xn, batch, 1, d), self._p("in.w")) + self._p("in.b")
        skip_sum = None
        for i in range(cfg.residual_blocks):
            pre = conv1d_circular(x, self._p(f"block{i}.conv.w"), self.dilations[i])
            pre = pre + self._p(f"block{i}.conv.b")
            cond = matmul(h, self._p(f"block{i}.cond.w")) + self._p(f"block{i}.cond.b")
            nemb = matmul(emb, self._p(f"block{i}.emb.w")) + self._p(f"block{i}.emb.b")
            pre = pre + reshape(cond, batch, 2 * c, 1) + reshape(nemb, batch, 2 * c, 1)
            gate = sigmoid(slice_axis(pre, 1, 0, c)) * tanh(slice_axis(pre, 1, c, 2 * c))
            out = conv1d_circular(gate, self._p(f"block{i}.out.w")) + self._p(f"block{i}.out.b")
            residual = slice_axis(out, 1, 0, c)
            skip = slice_axis(out, 1, c, 2 * c)
            x = (x + residual) * (2.0**-0.5)
            skip_sum = skip if skip_sum is None else skip_sum + skip
        y = conv1d_circular(skip_sum, self._p("head.w1")) + self._p("head.b1")
        y = softplus(y)
        y = conv1d_circular(y, self._p("head.w2")) + self._p("head.b2")
        y = reshape(y, batch, d)
        if single:
            y = reshape(y, d)
        return y
