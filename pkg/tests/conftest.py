"""Shared test helpers: central finite-difference gradient checking."""

import numpy as np
import pytest

from diffcast.numcore import Tensor, backward


def rel_err(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(floor, abs(a), abs(b))


def finite_difference(fn, arrays, tensor_idx: int, flat_idx: int, h: float = 1e-5) -> float:
    """Central difference of fn (list-of-Tensors -> scalar Tensor) w.r.t. one
    component of one input array."""

    def eval_at(delta: float) -> float:
        arrs = [np.array(a, dtype=np.float64) for a in arrays]
        arrs[tensor_idx].flat[flat_idx] += delta
        return float(fn([Tensor(a) for a in arrs]).data)

    return (eval_at(h) - eval_at(-h)) / (2.0 * h)


def check_gradients(
    fn,
    arrays,
    rel_tol: float = 1e-5,
    max_components: int = 20,
    seed: int = 0,
    h: float = 1e-5,
) -> float:
    """Backward pass vs central differences on every input tensor; large
    tensors are spot-checked on a seeded random subset of components.
    Returns the worst relative error seen."""
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    loss = fn(tensors)
    backward(loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for ti, tensor in enumerate(tensors):
        assert tensor.grad is not None, f"input tensor {ti} received no gradient"
        size = tensor.data.size
        if size <= max_components:
            indices = np.arange(size)
        else:
            indices = rng.choice(size, size=max_components, replace=False)
        for fi in indices:
            numeric = finite_difference(fn, arrays, ti, int(fi), h=h)
            analytic = float(tensor.grad.flat[int(fi)])
            err = rel_err(analytic, numeric)
            worst = max(worst, err)
            assert err <= rel_tol, (
                f"tensor {ti} flat[{fi}]: analytic {analytic!r} vs numeric "
                f"{numeric!r} (rel err {err:.3e} > {rel_tol:.0e})"
            )
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
