"""Diffusion schedule and chain tests.

Oracle constants below were computed independently with plain numpy
(cumulative products over the linear beta grid) and frozen here.
"""

import numpy as np
import pytest

from diffcast.diffusion import (
    DiffusionSchedule,
    forward_marginal,
    forward_step,
    linear_schedule,
    posterior_mean,
    reverse_step,
    sample,
    schedule_from_betas,
    training_loss,
)
from diffcast.errors import ConfigError, ContractError, DimensionError, NumericError
from diffcast.numcore import RngStream, Tensor

ABAR_20 = 0.3544761871746832     # prod(1 - linspace(1e-4, 0.1, 20))
ABAR_100 = 0.005618761019373728  # prod(1 - linspace(1e-4, 0.1, 100))


class StubDenoiser:
    """Callable returning a fixed array regardless of inputs."""

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)

    def __call__(self, xn, h, n):
        data = np.broadcast_to(self.value, xn.data.shape).copy()
        return Tensor(data)


# -- schedule ------------------------------------------------------------------


def test_linear_schedule_endpoints():
    sched = linear_schedule(100, 1e-4, 0.1)
    assert sched.beta(1) == pytest.approx(1e-4, rel=1e-15)
    assert sched.beta(100) == pytest.approx(0.1, rel=1e-15)


def test_alpha_bar_frozen_constants():
    assert linear_schedule(20).alpha_bar(20) == pytest.approx(ABAR_20, rel=1e-14)
    assert linear_schedule(100).alpha_bar(100) == pytest.approx(ABAR_100, rel=1e-14)


def test_tilde_beta_two_level_hand_value():
    sched = schedule_from_betas([0.1, 0.2])
    assert sched.tilde_beta(2) == pytest.approx(1.0 / 14.0, rel=1e-12)


def test_tilde_beta_first_level_is_zero():
    # alpha_bar_0 = 1 convention pins the first posterior variance at zero
    for n_levels in (1, 2, 10, 100):
        assert linear_schedule(n_levels).tilde_beta(1) == 0.0


def test_alpha_bar_strictly_decreasing():
    sched = linear_schedule(50)
    bars = [sched.alpha_bar(n) for n in range(1, 51)]
    assert all(b > a for a, b in zip(bars[1:], bars[:-1]))
    assert sched.alpha_bar_prev(1) == 1.0


def test_schedule_validation():
    with pytest.raises(ConfigError):
        linear_schedule(0)
    with pytest.raises(ConfigError):
        linear_schedule(10, beta_start=0.2, beta_end=0.1)  # decreasing grid
    with pytest.raises(ConfigError):
        schedule_from_betas([0.1, 1.0])  # beta outside (0, 1)
    with pytest.raises(ConfigError):
        schedule_from_betas([])


def test_level_bounds_checked():
    sched = linear_schedule(10)
    for bad in (0, 11, -3):
        with pytest.raises(ContractError):
            sched.beta(bad)


def test_rows_echo():
    sched = linear_schedule(5)
    rows = sched.rows()
    assert len(rows) == 5
    assert rows[0][0] == 1 and rows[0][3] == 0.0
    assert rows[-1][1] == pytest.approx(0.1, rel=1e-15)


# -- forward process ------------------------------------------------------------


def test_chain_matches_marginal_statistics():
    # iterating single forward steps must land on the closed-form marginal
    sched = linear_schedule(10, 5e-3, 0.2)
    rng = RngStream(21)
    x0 = np.full((100000, 1), 1.7)
    x = x0
    for n in range(1, 8):
        x = forward_step(x, n, rng.child(n), sched)
    want_mean = np.sqrt(sched.alpha_bar(7)) * 1.7
    want_var = 1.0 - sched.alpha_bar(7)
    se_mean = np.sqrt(want_var / x.size)
    se_var = want_var * np.sqrt(2.0 / (x.size - 1))
    assert abs(x.mean() - want_mean) < 4 * se_mean
    assert abs(x.var() - want_var) < 4 * se_var

    direct = forward_marginal(x0, 7, rng.child(99).normal(x0.shape), sched)
    assert abs(direct.mean() - want_mean) < 4 * se_mean
    assert abs(direct.var() - want_var) < 4 * se_var


def test_marginal_level_one_equals_step_one_distribution():
    sched = linear_schedule(5)
    rng = RngStream(3)
    x0 = np.zeros((50000, 2))
    a = forward_step(x0, 1, rng.child(0), sched)
    b = forward_marginal(x0, 1, rng.child(1).normal(x0.shape), sched)
    assert abs(a.var() - b.var()) < 4 * a.var() * np.sqrt(2.0 / (a.size - 1))


def test_forward_marginal_accepts_tensor_and_checks_shape():
    sched = linear_schedule(4)
    eps = RngStream(0).normal((3, 2))
    out = forward_marginal(Tensor(np.zeros((3, 2))), 2, eps, sched)
    assert out.shape == (3, 2)
    with pytest.raises(DimensionError):
        forward_marginal(np.zeros((3, 2)), 2, np.zeros((3,)), sched)


# -- posterior -------------------------------------------------------------------


def test_posterior_matches_gaussian_conditioning():
    # independent route: combine the two Gaussian factors by precision
    # addition and compare mean/variance at every level
    rng = np.random.default_rng(77)
    betas = rng.uniform(0.001, 0.2, size=10)
    sched = schedule_from_betas(betas)
    x0, xn = 0.83, -0.41
    for n in range(2, 11):
        alpha = 1.0 - betas[n - 1]
        abar_prev = np.prod(1.0 - betas[: n - 1])
        prec = alpha / betas[n - 1] + 1.0 / (1.0 - abar_prev)
        var = 1.0 / prec
        mean = var * (
            np.sqrt(alpha) * xn / betas[n - 1]
            + np.sqrt(abar_prev) * x0 / (1.0 - abar_prev)
        )
        got_mean = posterior_mean(np.array([[xn]]), np.array([[x0]]), n, sched)[0, 0]
        assert abs(got_mean - mean) < 1e-10
        assert abs(sched.tilde_beta(n) - var) < 1e-10


# -- training loss ---------------------------------------------------------------


def test_training_loss_zero_predictor_is_unit_mean_square():
    # eps-hat = 0 makes the loss the mean square of the drawn noise: ~1
    sched = linear_schedule(10)
    x0 = np.zeros((4000, 2))
    h = Tensor(np.zeros((4000, 3)))
    levels = RngStream(5).integers(1, 11, 4000)
    loss = training_loss(x0, h, levels, RngStream(6), StubDenoiser([0.0]), sched)
    count = x0.size
    assert abs(float(loss.data) - 1.0) < 4 * np.sqrt(2.0 / count)


def test_training_loss_perfect_predictor_not_zero_but_lower():
    # predicting the posterior-optimal constant 0 beats predicting a bias
    sched = linear_schedule(10)
    x0 = np.zeros((2000, 2))
    h = Tensor(np.zeros((2000, 3)))
    levels = RngStream(7).integers(1, 11, 2000)
    base = training_loss(x0, h, levels, RngStream(8), StubDenoiser([0.0]), sched)
    biased = training_loss(x0, h, levels, RngStream(8), StubDenoiser([2.0]), sched)
    assert float(biased.data) > float(base.data)


def test_training_loss_nonfinite_names_levels():
    sched = linear_schedule(5)

    class ExplodingDenoiser:
        def __call__(self, xn, h, n):
            raise NumericError("tensor: non-finite values")

    with pytest.raises(NumericError):
        training_loss(
            np.zeros((4, 1)),
            Tensor(np.zeros((4, 2))),
            np.array([1, 2, 3, 4]),
            RngStream(0),
            ExplodingDenoiser(),
            sched,
        )


# -- reverse process ---------------------------------------------------------------


def test_reverse_step_closed_form():
    # with a known eps-hat the update is pure arithmetic; check against a
    # hand-expanded expression
    sched = schedule_from_betas([0.04, 0.09, 0.16])
    xn = np.array([[1.2, -0.7]])
    eps_hat = np.array([0.3, -0.2])
    z = np.array([[0.5, 1.5]])
    n = 3
    beta = 0.16
    alpha = 1 - beta
    abar = (1 - 0.04) * (1 - 0.09) * (1 - 0.16)
    abar_prev = (1 - 0.04) * (1 - 0.09)
    tilde = (1 - abar_prev) / (1 - abar) * beta
    want = (xn - beta / np.sqrt(1 - abar) * eps_hat) / np.sqrt(alpha) + np.sqrt(tilde) * z
    got = reverse_step(xn, Tensor(np.zeros((1, 2))), n, z, StubDenoiser(eps_hat), sched)
    np.testing.assert_allclose(got, want, atol=1e-14)


def test_reverse_final_step_rejects_noise():
    sched = linear_schedule(3)
    with pytest.raises(ContractError):
        reverse_step(
            np.zeros((1, 2)),
            Tensor(np.zeros((1, 2))),
            1,
            np.ones((1, 2)),
            StubDenoiser([0.0]),
            sched,
        )


def test_reverse_final_step_deterministic():
    sched = linear_schedule(3)
    xn = np.array([[0.4, -0.6]])
    out = reverse_step(xn, Tensor(np.zeros((1, 2))), 1, np.zeros((1, 2)), StubDenoiser([0.1]), sched)
    want = (xn - sched.beta(1) / np.sqrt(1 - sched.alpha_bar(1)) * 0.1) / np.sqrt(
        sched.alpha(1)
    )
    np.testing.assert_allclose(out, want, atol=1e-14)


def test_sample_deterministic_per_stream():
    sched = linear_schedule(8)
    h = Tensor(np.zeros((5, 3)))
    a = sample(h, RngStream(31), StubDenoiser([0.2]), sched, dim=2)
    b = sample(h, RngStream(31), StubDenoiser([0.2]), sched, dim=2)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (5, 2)


def test_sample_zero_predictor_statistics():
    # eps-hat = 0: the chain is linear in its injected Gaussians, so the
    # output variance has a closed form we can accumulate independently
    sched = linear_schedule(6)
    var = 1.0
    for n in range(6, 0, -1):
        var = var / sched.alpha(n)
        if n > 1:
            var += sched.tilde_beta(n)
    h = Tensor(np.zeros((40000, 1)))
    out = sample(h, RngStream(17), StubDenoiser([0.0]), sched, dim=1)
    assert abs(out.mean()) < 4 * np.sqrt(var / out.size)
    assert abs(out.var() - var) < 4 * var * np.sqrt(2.0 / (out.size - 1))
