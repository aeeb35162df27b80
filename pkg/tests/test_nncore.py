"""Network core: parameter layout, losses, and gradient correctness."""

import numpy as np
import pytest

from pdcl.nncore import (
    BACKEND,
    Batch,
    MlpSpec,
    forward,
    grad_lagrangian,
    grad_loss_mean,
    init_params,
    loss_mean,
    param_count,
    per_sample_losses,
    sgd_step,
    unpack_params,
)
from pdcl.nncore import _kernels_np


def lagrangian_value(spec, theta, lam, current, constraints):
    value = loss_mean(spec, theta, current)
    for lam_k, (batch_k, eps_k) in zip(lam, constraints):
        value += lam_k * (loss_mean(spec, theta, batch_k) - eps_k)
    return value


def random_batch(rng, n, d, k):
    return Batch(rng.normal(size=(n, d)), rng.integers(0, k, size=n))


class TestParams:
    def test_param_count_matches_layout(self):
        assert param_count(MlpSpec((2, 3, 2))) == 2 * 3 + 3 + 3 * 2 + 2  # 17

    def test_init_deterministic_per_seed(self):
        spec = MlpSpec((2, 3, 2), seed=0)
        assert np.array_equal(init_params(spec), init_params(spec))

    def test_init_differs_across_seeds(self):
        a = init_params(MlpSpec((2, 3, 2), seed=0))
        b = init_params(MlpSpec((2, 3, 2), seed=1))
        assert not np.array_equal(a, b)

    def test_biases_exactly_zero_and_weights_fan_in_bounded(self):
        spec = MlpSpec((4, 7, 3), seed=5)
        ws, bs = unpack_params(spec, init_params(spec))
        for b in bs:
            assert np.all(b == 0.0)
        for w in ws:
            assert np.max(np.abs(w)) <= 1.0 / np.sqrt(w.shape[0])

    def test_unpack_rejects_wrong_length(self):
        spec = MlpSpec((2, 3, 2))
        with pytest.raises(ValueError):
            unpack_params(spec, np.zeros(5))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            MlpSpec((3,))
        with pytest.raises(ValueError):
            MlpSpec((3, 0, 2))
        with pytest.raises(ValueError):
            MlpSpec((3, 2), activation="tanh")

    def test_batch_validation(self):
        with pytest.raises(ValueError):
            Batch(np.zeros((0, 2)), np.zeros(0, dtype=np.int64))
        with pytest.raises(ValueError):
            Batch(np.zeros((3, 2)), np.zeros(2, dtype=np.int64))


class TestForward:
    def test_zero_params_give_zero_logits(self):
        spec = MlpSpec((3, 4, 2))
        x = np.random.default_rng(0).normal(size=(5, 3))
        assert np.all(forward(spec, np.zeros(param_count(spec)), x) == 0.0)

    def test_relu_clamps_negative_preactivation(self):
        # one input, one hidden unit, one output: w0=-1 makes the hidden
        # pre-activation negative for positive x, so the output is the bias.
        spec = MlpSpec((1, 1, 1))
        theta = np.array([-1.0, 0.0, 5.0, 0.25])  # W0, b0, W1, b1
        out = forward(spec, theta, np.array([[2.0]]))
        assert out[0, 0] == pytest.approx(0.25)
        out = forward(spec, theta, np.array([[-2.0]]))  # pre-activation +2
        assert out[0, 0] == pytest.approx(2.0 * 5.0 + 0.25)

    def test_rows_independent(self):
        rng = np.random.default_rng(3)
        spec = MlpSpec((4, 5, 3), seed=3)
        theta = init_params(spec)
        x = rng.normal(size=(6, 4))
        full = forward(spec, theta, x)
        for i in range(6):
            row = forward(spec, theta, x[i : i + 1])
            # single-row and batched matmuls may take different BLAS paths
            np.testing.assert_allclose(full[i], row[0], rtol=1e-13, atol=1e-15)

    def test_dimension_mismatch_rejected(self):
        spec = MlpSpec((4, 5, 3))
        with pytest.raises(ValueError):
            forward(spec, init_params(spec), np.zeros((2, 3)))


class TestLoss:
    @pytest.mark.parametrize("k", [2, 10])
    def test_zero_params_give_ln_k(self, k):
        spec = MlpSpec((3, k))
        batch = random_batch(np.random.default_rng(0), 8, 3, k)
        assert loss_mean(spec, np.zeros(param_count(spec)), batch) == pytest.approx(
            np.log(k), abs=1e-12
        )

    def test_duplicating_samples_leaves_mean_unchanged(self):
        rng = np.random.default_rng(1)
        spec = MlpSpec((3, 4, 2), seed=1)
        theta = init_params(spec)
        batch = random_batch(rng, 6, 3, 2)
        doubled = Batch(np.vstack([batch.x, batch.x]), np.concatenate([batch.y, batch.y]))
        assert loss_mean(spec, theta, batch) == pytest.approx(
            loss_mean(spec, theta, doubled), rel=1e-12
        )

    def test_loss_nonnegative_and_matches_per_sample_mean(self):
        rng = np.random.default_rng(2)
        spec = MlpSpec((5, 6, 3), seed=2)
        theta = init_params(spec)
        batch = random_batch(rng, 11, 5, 3)
        losses = per_sample_losses(spec, theta, batch)
        assert np.all(losses >= 0)
        assert loss_mean(spec, theta, batch) == pytest.approx(losses.mean(), rel=1e-12)


class TestGradients:
    def test_zero_multipliers_reduce_to_objective_gradient(self):
        rng = np.random.default_rng(4)
        spec = MlpSpec((4, 5, 3), seed=4)
        theta = init_params(spec)
        current = random_batch(rng, 9, 4, 3)
        con = [(random_batch(rng, 7, 4, 3), 0.1)]
        g = grad_lagrangian(spec, theta, np.zeros(1), current, con)
        _, g0 = grad_loss_mean(spec, theta, current)
        np.testing.assert_array_equal(g, g0)  # bitwise: zero terms are skipped

    def test_linearity_in_multipliers(self):
        rng = np.random.default_rng(5)
        spec = MlpSpec((4, 5, 3), seed=5)
        theta = init_params(spec)
        current = random_batch(rng, 9, 4, 3)
        cons = [(random_batch(rng, 7, 4, 3), 0.1), (random_batch(rng, 5, 4, 3), 0.2)]
        lam1 = np.array([0.3, 0.0])
        lam2 = np.array([0.0, 0.7])
        g12 = grad_lagrangian(spec, theta, lam1 + lam2, current, cons)
        g1 = grad_lagrangian(spec, theta, lam1, current, cons)
        g2 = grad_lagrangian(spec, theta, lam2, current, cons)
        g0 = grad_lagrangian(spec, theta, np.zeros(2), current, cons)
        np.testing.assert_allclose(g12, g1 + g2 - g0, rtol=1e-12, atol=1e-14)

    def test_negative_multiplier_rejected(self):
        spec = MlpSpec((2, 2))
        theta = init_params(spec)
        batch = random_batch(np.random.default_rng(0), 4, 2, 2)
        with pytest.raises(ValueError):
            grad_lagrangian(spec, theta, np.array([-0.1]), batch, [(batch, 0.0)])

    def test_gradient_matches_central_finite_differences(self):
        rng = np.random.default_rng(6)
        spec = MlpSpec((3, 4, 3), seed=6)  # 31 params
        theta = init_params(spec)
        current = random_batch(rng, 10, 3, 3)
        cons = [(random_batch(rng, 8, 3, 3), 0.1), (random_batch(rng, 6, 3, 3), 0.3)]
        lam = np.array([0.4, 1.3])
        g = grad_lagrangian(spec, theta, lam, current, cons)
        h = 1e-5
        fd = np.empty_like(g)
        for i in range(len(theta)):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += h
            tm[i] -= h
            fd[i] = (
                lagrangian_value(spec, tp, lam, current, cons)
                - lagrangian_value(spec, tm, lam, current, cons)
            ) / (2 * h)
        scale = np.maximum(np.abs(fd), 1e-8)
        assert np.max(np.abs(g - fd) / scale) < 1e-4


class TestSgd:
    def test_zero_gradient_zero_decay_is_fixed_point(self):
        theta = np.array([1.0, -2.0])
        np.testing.assert_array_equal(sgd_step(theta, np.zeros(2), 0.1), theta)

    def test_plain_step(self):
        np.testing.assert_allclose(sgd_step(np.array([1.0]), np.array([2.0]), 0.1), [0.8])

    def test_weight_decay_step(self):
        np.testing.assert_allclose(
            sgd_step(np.array([1.0]), np.array([0.0]), 0.1, 1e-4), [0.99999]
        )

    def test_invalid_rates_rejected(self):
        with pytest.raises(ValueError):
            sgd_step(np.zeros(1), np.zeros(1), 0.0)
        with pytest.raises(ValueError):
            sgd_step(np.zeros(1), np.zeros(1), 0.1, -1.0)


class TestBackends:
    def test_numpy_backend_matches_active_backend(self):
        rng = np.random.default_rng(7)
        spec = MlpSpec((5, 8, 4), seed=7)
        theta = init_params(spec)
        ws, bs = unpack_params(spec, theta)
        x = rng.normal(size=(12, 5))
        y = rng.integers(0, 4, size=12)
        from pdcl.nncore import kernels

        np.testing.assert_allclose(
            kernels.forward(ws, bs, x), _kernels_np.forward(ws, bs, x), rtol=1e-12, atol=1e-14
        )
        np.testing.assert_allclose(
            kernels.per_sample_losses(ws, bs, x, y),
            _kernels_np.per_sample_losses(ws, bs, x, y),
            rtol=1e-12,
            atol=1e-14,
        )
        la, gwa, gba = kernels.loss_and_grad(ws, bs, x, y)
        lb, gwb, gbb = _kernels_np.loss_and_grad(ws, bs, x, y)
        assert la == pytest.approx(lb, rel=1e-12)
        for a, b in zip(gwa, gwb):
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)
        for a, b in zip(gba, gbb):
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)

    def test_backend_constant_is_valid(self):
        assert BACKEND in ("numpy", "cython")
