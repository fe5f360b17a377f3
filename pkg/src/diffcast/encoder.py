"""Autoregressive temporal encoder.

A stacked LSTM (or GRU) consumes the concatenation of the scaled observation
and its covariates one time step at a time; the top layer's hidden vector is
the conditioning state handed to the noise predictor.  States start at zero.

LSTM gates are packed in the order (input, forget, cell, output); the forget
slice of each bias starts at 1 so that fresh networks retain signal.  GRU
gates are packed (reset, update, candidate).
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
    concat,
    matmul,
    sigmoid,
    slice_axis,
    tanh,
)


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    cell: str = "lstm"
    layers: int = 2
    hidden_size: int = 40

    def __post_init__(self):
        if self.cell not in ("lstm", "gru"):
            raise ConfigError(f"encoder: unknown cell kind {self.cell!r}")
        if self.layers < 1 or self.hidden_size < 1 or self.input_dim < 1:
            raise ConfigError("encoder: layers, hidden_size, input_dim must be >= 1")


class EncoderState:
    """Per-layer hidden (and, for LSTM, cell) vectors; the exposed
    conditioning vector is the top layer's hidden state."""

    __slots__ = ("layers",)

    def __init__(self, layers):
        self.layers = tuple(layers)

    @property
    def top(self) -> Tensor:
        return self.layers[-1][0]

    @classmethod
    def zeros(cls, config: EncoderConfig, batch: int = 1) -> "EncoderState":
        shape = (batch, config.hidden_size)
        layers = []
        for _ in range(config.layers):
            h = Tensor(np.zeros(shape))
            c = Tensor(np.zeros(shape)) if config.cell == "lstm" else None
            layers.append((h, c))
        return cls(layers)


class Encoder:
    def __init__(
        self,
        config: EncoderConfig,
        params: ParameterSet,
        rng: RngStream,
        prefix: str = "encoder",
    ):
        self.config = config
        self.params = params
        self.prefix = prefix
        self._build(rng)

    def _build(self, rng: RngStream) -> None:
        cfg = self.config
        hid = cfg.hidden_size
        gates = 4 if cfg.cell == "lstm" else 3

        def uniform(shape, fan_in):
            return rng.uniform(shape, -1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(fan_in))

        for layer in range(cfg.layers):
            in_dim = cfg.input_dim if layer == 0 else hid
            name = f"{self.prefix}.l{layer}"
            self.params.add(
                f"{name}.w_x", Tensor(uniform((in_dim, gates * hid), in_dim), requires_grad=True)
            )
            self.params.add(
                f"{name}.w_h", Tensor(uniform((hid, gates * hid), hid), requires_grad=True)
            )
            bias = np.zeros(gates * hid)
            if cfg.cell == "lstm":
                bias[hid : 2 * hid] = 1.0  # forget gate opens by default
            self.params.add(f"{name}.b", Tensor(bias, requires_grad=True))

    def _p(self, name: str) -> Tensor:
        return self.params[f"{self.prefix}.{name}"]

    def step(self, x, prev: EncoderState) -> EncoderState:
        """Advance one time step; x is (B, input_dim) or (input_dim,)."""
        cfg = self.config
        hid = cfg.hidden_size
        x = as_tensor(x)
        if x.ndim == 1:
            x = x.reshape(1, x.shape[0])
        if x.shape[1] != cfg.input_dim:
            raise DimensionError(
                f"encoder step: expected input dim {cfg.input_dim}, got {x.shape[1]}"
            )
        if len(prev.layers) != cfg.layers:
            raise DimensionError(
                f"encoder step: state has {len(prev.layers)} layers, config has {cfg.layers}"
            )
        new_layers = []
        inp = x
        for layer in range(cfg.layers):
            h_prev, c_prev = prev.layers[layer]
            name = f"l{layer}"
            z = matmul(inp, self._p(f"{name}.w_x")) + matmul(h_prev, self._p(f"{name}.w_h"))
            z = z + self._p(f"{name}.b")
            if cfg.cell == "lstm":
                i_gate = sigmoid(slice_axis(z, 1, 0, hid))
                f_gate = sigmoid(slice_axis(z, 1, hid, 2 * hid))
                g_cell = tanh(slice_axis(z, 1, 2 * hid, 3 * hid))
                o_gate = sigmoid(slice_axis(z, 1, 3 * hid, 4 * hid))
                c_new = f_gate * c_prev + i_gate * g_cell
                h_new = o_gate * tanh(c_new)
                new_layers.append((h_new, c_new))
            else:
                # GRU: candidate sees the reset-scaled recurrent term only
                r_gate = sigmoid(slice_axis(z, 1, 0, hid))
                u_gate = sigmoid(slice_axis(z, 1, hid, 2 * hid))
                cand_in = matmul(inp, slice_axis(self._p(f"{name}.w_x"), 1, 2 * hid, 3 * hid))
                cand_rec = matmul(h_prev, slice_axis(self._p(f"{name}.w_h"), 1, 2 * hid, 3 * hid))
                cand_b = slice_axis(self._p(f"{name}.b").reshape(1, 3 * hid), 1, 2 * hid, 3 * hid)
                cand = tanh(cand_in + r_gate * cand_rec + cand_b)
                h_new = u_gate * h_prev + (Tensor(1.0) - u_gate) * cand
                new_layers.append((h_new, None))
            inp = h_new
        return EncoderState(new_layers)

    def unroll(self, window, initial: EncoderState | None = None) -> list[EncoderState]:
        """States h_1..h_L from repeated steps over a non-empty window.

        ``window`` is a sequence of per-step inputs; ``initial`` defaults to
        the all-zero state sized to the first input's batch."""
        window = list(window)
        if not window:
            raise ContractError("encoder unroll: window must be non-empty")
        first = as_tensor(window[0])
        batch = 1 if first.ndim == 1 else first.shape[0]
        state = initial if initial is not None else EncoderState.zeros(self.config, batch)
        states = []
        for x in window:
            state = self.step(x, state)
            states.append(state)
        return states
