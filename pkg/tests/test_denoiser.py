"""Noise-predictor network tests: embedding oracle, zero-init contract,
shape handling, and gradient connectivity."""

import math

import numpy as np
import pytest

from diffcast.denoiser import Denoiser, DenoiserConfig, NoiseEmbedding
from diffcast.errors import ContractError, DimensionError
from diffcast.numcore import ParameterSet, RngStream, Tensor, backward, sum_of_squares


def _build(series_dim=2, cond_dim=5, zero_init_head=True, blocks=3, channels=4, seed=0):
    cfg = DenoiserConfig(
        series_dim=series_dim,
        cond_dim=cond_dim,
        residual_channels=channels,
        residual_blocks=blocks,
        embedding_dim=8,
        embedding_max_index=50,
        zero_init_head=zero_init_head,
    )
    params = ParameterSet()
    net = Denoiser(cfg, params, RngStream(seed))
    return net, params


# -- embedding -------------------------------------------------------------------


def test_embedding_values_match_formula():
    emb = NoiseEmbedding(max_index=500, dim=32)
    for n in (1, 7, 499):
        for j in (0, 5, 15):
            angle = n / 500 ** (2 * j / 32)
            assert emb.table[n - 1, 2 * j] == pytest.approx(math.sin(angle), abs=1e-15)
            assert emb.table[n - 1, 2 * j + 1] == pytest.approx(math.cos(angle), abs=1e-15)


def test_embedding_lookup_rows():
    emb = NoiseEmbedding(max_index=10, dim=4)
    np.testing.assert_array_equal(emb(3), emb.table[2])
    np.testing.assert_array_equal(emb(np.array([1, 10])), emb.table[[0, 9]])


def test_embedding_bounds():
    emb = NoiseEmbedding(max_index=10, dim=4)
    for bad in (0, 11, -1):
        with pytest.raises(ContractError):
            emb(bad)


def test_embedding_distinguishes_levels():
    emb = NoiseEmbedding(max_index=100, dim=16)
    assert not np.array_equal(emb(1), emb(2))
    assert not np.array_equal(emb(50), emb(51))


# -- network ---------------------------------------------------------------------


def test_untrained_output_exactly_zero():
    # zero-init final projection pins eps_hat at 0 before any training
    net, _ = _build(zero_init_head=True)
    out = net(Tensor(np.random.default_rng(0).normal(size=(6, 2))), Tensor(np.ones((6, 5))), 3)
    np.testing.assert_array_equal(out.data, np.zeros((6, 2)))


def test_output_shapes():
    net, _ = _build()
    assert net(Tensor(np.zeros((4, 2))), Tensor(np.zeros((4, 5))), 1).shape == (4, 2)
    assert net(Tensor(np.zeros(2)), Tensor(np.zeros(5)), 1).shape == (2,)


def test_wrong_series_dim_rejected():
    net, _ = _build(series_dim=2)
    with pytest.raises(DimensionError):
        net(Tensor(np.zeros((4, 3))), Tensor(np.zeros((4, 5))), 1)


def test_wrong_cond_dim_rejected():
    net, _ = _build(cond_dim=5)
    with pytest.raises(DimensionError):
        net(Tensor(np.zeros((4, 2))), Tensor(np.zeros((4, 6))), 1)


def test_output_depends_on_conditioning_and_level(rng):
    net, _ = _build(zero_init_head=False, seed=3)
    x = Tensor(rng.normal(size=(3, 2)))
    h_a = Tensor(rng.normal(size=(3, 5)))
    h_b = Tensor(rng.normal(size=(3, 5)))
    base = net(x, h_a, 2).data
    assert not np.array_equal(base, net(x, h_b, 2).data)
    assert not np.array_equal(base, net(x, h_a, 9).data)


def test_per_row_levels_match_scalar_calls(rng):
    net, _ = _build(zero_init_head=False, seed=5)
    x = rng.normal(size=(3, 2))
    h = rng.normal(size=(3, 5))
    levels = np.array([2, 7, 7])
    batched = net(Tensor(x), Tensor(h), levels).data
    for row in range(3):
        single = net(Tensor(x[row]), Tensor(h[row]), int(levels[row])).data
        np.testing.assert_allclose(batched[row], single, atol=1e-9)


def test_batch_rows_independent(rng):
    net, _ = _build(zero_init_head=False, seed=7)
    x = rng.normal(size=(4, 2))
    h = rng.normal(size=(4, 5))
    batched = net(Tensor(x), Tensor(h), 3).data
    for row in range(4):
        single = net(Tensor(x[row : row + 1]), Tensor(h[row : row + 1]), 3).data
        np.testing.assert_allclose(batched[row], single[0], atol=1e-9)


def test_gradients_reach_every_parameter(rng):
    net, params = _build(zero_init_head=False, seed=9)
    params.zero_grads()
    out = net(Tensor(rng.normal(size=(3, 2))), Tensor(rng.normal(size=(3, 5))), 4)
    backward(sum_of_squares(out))
    missing = [name for name, p in params.items() if p.grad is None]
    assert missing == []
    # weight matrices specifically must carry signal, not just exist
    for name in ("denoiser.in.w", "denoiser.block0.conv.w", "denoiser.block0.cond.w",
                 "denoiser.block0.emb.w", "denoiser.head.w1", "denoiser.head.w2"):
        assert np.any(params[name].grad != 0.0), name


def test_zero_init_head_blocks_upstream_gradients(rng):
    # with the final projection at zero the squared-output loss sits at a
    # stationary point: every gradient exists and is exactly zero
    net, params = _build(zero_init_head=True, seed=11)
    params.zero_grads()
    out = net(Tensor(rng.normal(size=(2, 2))), Tensor(rng.normal(size=(2, 5))), 1)
    backward(sum_of_squares(out))
    assert params["denoiser.in.w"].grad is not None
    np.testing.assert_array_equal(params["denoiser.in.w"].grad, 0.0)
    np.testing.assert_array_equal(params["denoiser.head.w2"].grad, 0.0)


def test_init_deterministic_by_seed():
    _, params_a = _build(seed=21)
    _, params_b = _build(seed=21)
    for (name_a, p_a), (_, p_b) in zip(params_a.items(), params_b.items()):
        np.testing.assert_array_equal(p_a.data, p_b.data, err_msg=name_a)


def test_level_count_guard():
    net, _ = _build()
    with pytest.raises(ContractError):
        net(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 5))), 51)  # beyond table
