"""Named parameter container and the Adam update rule."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, DimensionError
from .tensor import Tensor


class ParameterSet:
    """Insertion-ordered map of unique names to trainable tensors, with
    per-parameter Adam state (first/second moments, step counter)."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ContractError(f"parameter name already registered: {name!r}")
        if not isinstance(tensor, Tensor) or not tensor.requires_grad:
            raise ContractError(f"parameter {name!r} must be a Tensor with requires_grad")
        self._params[name] = tensor
        self._m[name] = np.zeros(tensor.shape)
        self._v[name] = np.zeros(tensor.shape)
        self._t[name] = 0
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copy of every parameter's values, e.g. for best-epoch tracking."""
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(values)
        extra = set(values) - set(self._params)
        if missing or extra:
            raise ContractError(
                f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for name, p in self._params.items():
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(
                    f"parameter {name!r}: expected shape {p.shape}, got {arr.shape}"
                )
            p.data = arr.copy()


def adam_step(
    params: ParameterSet,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update over every parameter.

    Gradients are left untouched; the caller decides when to zero them.
    """
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"adam_step: parameter {name!r} has no gradient")
    for name, p in params.items():
        g = p.grad
        t = params._t[name] + 1
        params._t[name] = t
        m = params._m[name]
        v = params._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data = p.data - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
