"""Losses, analytic gradients, the finite-difference oracle, smoothness probes."""

import math
from dataclasses import dataclass

import numpy as np
import pytest

from fairfedlab.errors import DimensionError
from fairfedlab.model import (
    LinearSoftmax,
    MLP1,
    ModelParams,
    Sample,
    as_arrays,
    batch_gradient,
    batch_loss,
    estimate_smoothness,
    fd_gradient,
    init_params,
)


def random_batch(rng, d, C, size, start_idx=0):
    return [
        Sample(rng.standard_normal(d), int(rng.integers(0, C)), start_idx + i)
        for i in range(size)
    ]


def naive_softmax_loss(theta, arch, batch):
    """Unstabilized reference: direct exp/sum softmax, mean of -log p_y."""
    X, y = as_arrays(batch)
    W, b = arch.unpack(theta)
    Z = X @ W.T + b
    P = np.exp(Z) / np.exp(Z).sum(axis=1, keepdims=True)
    return float(-np.mean(np.log(P[np.arange(len(y)), y])))


@dataclass(frozen=True)
class QuadraticStub:
    """f(theta) = 0.5 theta^T A theta + c^T theta, ignores the batch."""

    A: np.ndarray
    c: np.ndarray

    @property
    def n_params(self):
        return len(self.c)

    def batch_loss(self, theta, X, y):
        return float(0.5 * theta @ self.A @ theta + self.c @ theta)

    def batch_gradient(self, theta, X, y):
        return self.A @ theta + self.c


@dataclass(frozen=True)
class Logistic1D:
    """Plain 1-parameter logistic loss log(1 + exp(-y x theta)) with |x| = 1."""

    x: float = 1.0
    y: float = 1.0

    @property
    def n_params(self):
        return 1

    def batch_loss(self, theta, X, y):
        z = -self.y * self.x * theta[0]
        return float(np.logaddexp(0.0, z))

    def batch_gradient(self, theta, X, y):
        z = -self.y * self.x * theta[0]
        return np.array([-self.y * self.x / (1.0 + math.exp(-z))])


@dataclass(frozen=True)
class SmoothStub:
    """f(theta) = sum sin(theta); smooth, non-polynomial, for Richardson checks."""

    n: int = 3

    @property
    def n_params(self):
        return self.n

    def batch_loss(self, theta, X, y):
        return float(np.sum(np.sin(theta)))

    def batch_gradient(self, theta, X, y):
        return np.cos(theta)


class TestBatchLoss:
    def test_zero_linear_model_is_log_C(self):
        rng = np.random.default_rng(0)
        for C, expected in [(2, math.log(2.0)), (10, math.log(10.0))]:
            arch = LinearSoftmax(3, C)
            m = ModelParams(arch, np.zeros(arch.n_params))
            batch = random_batch(rng, 3, C, 7)
            assert batch_loss(m, batch) == pytest.approx(expected, abs=1e-12)

    def test_matches_naive_softmax_for_small_logits(self):
        rng = np.random.default_rng(1)
        arch = LinearSoftmax(4, 3)
        for _ in range(20):
            theta = 0.3 * rng.standard_normal(arch.n_params)
            batch = random_batch(rng, 4, 3, 5)
            m = ModelParams(arch, theta)
            assert batch_loss(m, batch) == pytest.approx(
                naive_softmax_loss(theta, arch, batch), abs=1e-10
            )

    def test_dimension_mismatch(self):
        arch = LinearSoftmax(3, 2)
        m = ModelParams(arch, np.zeros(arch.n_params))
        with pytest.raises(DimensionError):
            batch_loss(m, [Sample(np.zeros(5), 0, 0)])
        with pytest.raises(DimensionError):
            batch_loss(m, [])

    def test_concatenated_batch_is_weighted_mean(self):
        rng = np.random.default_rng(2)
        arch = MLP1(3, 4, 2)
        m = init_params(arch, rng)
        a = random_batch(rng, 3, 2, 5, start_idx=0)
        b = random_batch(rng, 3, 2, 3, start_idx=5)
        whole = batch_loss(m, a + b)
        parts = (5 * batch_loss(m, a) + 3 * batch_loss(m, b)) / 8
        assert whole == pytest.approx(parts, abs=1e-12)

    def test_finite_for_extreme_parameters(self):
        arch = LinearSoftmax(2, 3)
        m = ModelParams(arch, np.full(arch.n_params, 500.0))
        batch = [Sample(np.array([50.0, -30.0]), 1, 0)]
        val = batch_loss(m, batch)
        assert math.isfinite(val) and val >= 0.0

    def test_permutation_is_bit_identical(self):
        rng = np.random.default_rng(3)
        arch = LinearSoftmax(4, 3)
        m = ModelParams(arch, rng.standard_normal(arch.n_params))
        batch = random_batch(rng, 4, 3, 9)
        shuffled = [batch[i] for i in rng.permutation(9)]
        assert batch_loss(m, batch) == batch_loss(m, shuffled)
        np.testing.assert_array_equal(batch_gradient(m, batch), batch_gradient(m, shuffled))


class TestBatchGradient:
    def test_closed_form_at_zero_weights(self):
        arch = LinearSoftmax(2, 2)
        m = ModelParams(arch, np.zeros(arch.n_params))
        x = np.array([0.7, -0.2])
        g = batch_gradient(m, [Sample(x, 1, 0)])
        W_grad = g[:4].reshape(2, 2)
        b_grad = g[4:]
        # softmax is uniform 0.5; row k gets (0.5 - 1{k=y}) x
        np.testing.assert_allclose(W_grad[0], 0.5 * x, atol=1e-15)
        np.testing.assert_allclose(W_grad[1], -0.5 * x, atol=1e-15)
        np.testing.assert_allclose(b_grad, [0.5, -0.5], atol=1e-15)

    def test_duplicate_sample_equals_single(self):
        rng = np.random.default_rng(4)
        arch = MLP1(3, 4, 3)
        m = init_params(arch, rng)
        s = Sample(rng.standard_normal(3), 2, 0)
        twice = [s, Sample(s.features, s.label, 1)]
        np.testing.assert_allclose(
            batch_gradient(m, [s]), batch_gradient(m, twice), atol=1e-15
        )

    @pytest.mark.parametrize("arch", [LinearSoftmax(4, 3), MLP1(4, 5, 3)])
    def test_matches_finite_differences(self, arch):
        rng = np.random.default_rng(5)
        for _ in range(30):
            theta = 0.8 * rng.standard_normal(arch.n_params)
            m = ModelParams(arch, theta)
            batch = random_batch(rng, 4, 3, 6)
            g = batch_gradient(m, batch)
            fd = fd_gradient(m, batch, 1e-6 * (1.0 + np.abs(theta)))
            scale = max(float(np.max(np.abs(g))), 1e-8)
            assert float(np.max(np.abs(g - fd))) / scale < 1e-5


class TestFdGradient:
    def test_exact_on_quadratics(self):
        rng = np.random.default_rng(6)
        B = rng.standard_normal((4, 4))
        stub = QuadraticStub(B @ B.T, rng.standard_normal(4))
        theta = rng.standard_normal(4)
        m = ModelParams(stub, theta)
        batch = [Sample(np.zeros(1), 0, 0)]
        fd = fd_gradient(m, batch, 1e-4)
        np.testing.assert_allclose(fd, stub.batch_gradient(theta, None, None), atol=1e-8)

    def test_halving_h_quarters_the_error(self):
        stub = SmoothStub(3)
        theta = np.array([0.3, -0.8, 1.1])
        m = ModelParams(stub, theta)
        batch = [Sample(np.zeros(1), 0, 0)]
        exact = np.cos(theta)
        err_h = np.abs(fd_gradient(m, batch, 1e-3) - exact)
        err_h2 = np.abs(fd_gradient(m, batch, 5e-4) - exact)
        ratio = err_h / err_h2
        assert np.all(ratio > 3.0) and np.all(ratio < 5.0)

    def test_h_must_be_positive(self):
        arch = LinearSoftmax(2, 2)
        m = ModelParams(arch, np.zeros(arch.n_params))
        with pytest.raises(DimensionError):
            fd_gradient(m, [Sample(np.zeros(2), 0, 0)], 0.0)


class TestEstimateSmoothness:
    def test_logistic_curvature_bound(self):
        # sup |f''| = 0.25 for 1-d logistic with |x| = 1; confirm by dense scan
        stub = Logistic1D()
        grid = np.linspace(-10, 10, 20001)
        g = np.array([stub.batch_gradient(np.array([t]), None, None)[0] for t in grid])
        scan = np.max(np.abs(np.diff(g) / np.diff(grid)))
        assert scan <= 0.25 + 1e-4
        l_hat, _ = estimate_smoothness(
            [Sample(np.array([1.0]), 1, 0)], stub, trials=500, radius=2.0,
            rng=np.random.default_rng(7),
        )
        assert l_hat <= 0.25 + 1e-6

    def test_single_trial_is_below_many_trials(self):
        arch = LinearSoftmax(3, 2)
        data = random_batch(np.random.default_rng(8), 3, 2, 12)
        one, _ = estimate_smoothness(data, arch, 1, 1.0, np.random.default_rng(9))
        many, _ = estimate_smoothness(data, arch, 1000, 1.0, np.random.default_rng(9))
        assert one <= many

    def test_constant_loss_gives_zero(self):
        @dataclass(frozen=True)
        class NoBiasLinear:
            d: int
            C: int

            @property
            def n_params(self):
                return self.C * self.d

            def batch_loss(self, theta, X, y):
                W = theta.reshape(self.C, self.d)
                Z = X @ W.T
                Z = Z - Z.max(axis=1, keepdims=True)
                logp = Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))
                return float(-np.mean(logp[np.arange(len(y)), y]))

            def batch_gradient(self, theta, X, y):
                W = theta.reshape(self.C, self.d)
                Z = X @ W.T
                Z = Z - Z.max(axis=1, keepdims=True)
                P = np.exp(Z) / np.exp(Z).sum(axis=1, keepdims=True)
                P[np.arange(len(y)), y] -= 1.0
                P /= len(y)
                return (P.T @ X).ravel()

        # zero features make the featurewise loss constant in theta
        data = [Sample(np.zeros(3), i % 2, i) for i in range(8)]
        l_hat, _ = estimate_smoothness(
            data, NoBiasLinear(3, 2), 50, 1.0, np.random.default_rng(10)
        )
        assert l_hat == 0.0


class TestModelParams:
    def test_length_checked(self):
        with pytest.raises(DimensionError):
            ModelParams(LinearSoftmax(2, 2), np.zeros(5))

    def test_finiteness_checked(self):
        with pytest.raises(DimensionError):
            ModelParams(LinearSoftmax(2, 2), np.array([0.0, np.inf, 0, 0, 0, 0]))

    def test_mlp_init_scale_and_determinism(self):
        arch = MLP1(16, 4, 3)
        a = init_params(arch, np.random.default_rng(11))
        b = init_params(arch, np.random.default_rng(11))
        np.testing.assert_array_equal(a.theta, b.theta)
        assert float(np.max(np.abs(a.theta))) <= 1.0 / 4.0  # 1/sqrt(16)

    def test_linear_init_is_zero(self):
        assert not init_params(LinearSoftmax(3, 2)).theta.any()


class TestAsArrays:
    def test_sorts_by_sample_index(self):
        s0 = Sample(np.array([0.0]), 0, 0)
        s1 = Sample(np.array([1.0]), 1, 1)
        X, y = as_arrays([s1, s0])
        np.testing.assert_array_equal(X.ravel(), [0.0, 1.0])
        np.testing.assert_array_equal(y, [0, 1])
