"""Tests for the distillation objective."""

import numpy as np
import pytest

import lindistill.distill
import lindistill.error
import lindistill.geometry
import lindistill.tasks


@pytest.fixture
def rng():
    return np.random.default_rng(5)


@pytest.fixture
def ts(rng):
    return lindistill.tasks.TransferSet.label(
        rng.standard_normal((6, 3)), rng.standard_normal(6))


class TestLoss:

    def test_zero_at_teacher(self, ts):
        assert lindistill.distill.loss(ts.w_star, ts) \
            == pytest.approx(0, abs=1e-12)

    def test_single_point(self):
        ts = lindistill.tasks.TransferSet.label(
            np.array([[1.0], [0.0]]), (1, 0))
        assert lindistill.distill.loss(np.zeros(2), ts) \
            == pytest.approx(0.1109, abs=1e-3)

    def test_non_negative(self, ts, rng):
        for _ in range(20):
            assert lindistill.distill.loss(
                3 * rng.standard_normal(6), ts) >= -1e-12

    def test_hard_labels(self):
        ts = lindistill.tasks.TransferSet(X=np.eye(2), y=[0.0, 1.0])
        assert np.isfinite(lindistill.distill.loss(np.array([50.0, -50.0]), ts))

    def test_non_finite(self, ts):
        with pytest.raises(lindistill.error.DomainError):
            lindistill.distill.loss(np.full(6, np.nan), ts)

    def test_shape(self, ts):
        with pytest.raises(lindistill.error.UsageError):
            lindistill.distill.loss(np.zeros(5), ts)

    def test_value_and_gradient(self, ts, rng):
        w = rng.standard_normal(6)
        value, grad = lindistill.distill.value_and_gradient(w, ts)
        assert value == pytest.approx(lindistill.distill.loss(w, ts))
        np.testing.assert_allclose(
            grad, lindistill.distill.loss_gradient(w, ts))


class TestConvexity:

    def test_chords(self, ts, rng):
        loss = lindistill.distill.loss
        for _ in range(100):
            w, v = 3 * rng.standard_normal((2, 6))
            t = rng.uniform()
            assert loss(t * w + (1 - t) * v, ts) \
                <= t * loss(w, ts) + (1 - t) * loss(v, ts) + 1e-9

    def test_tangent_below_along_span(self, ts, rng):
        for _ in range(100):
            w = 3 * rng.standard_normal(6)
            v = w + ts.X @ rng.standard_normal(3)
            value, grad = lindistill.distill.value_and_gradient(w, ts)
            assert lindistill.distill.loss(v, ts) - value - grad @ (v - w) \
                >= -1e-9


class TestLossGradient:

    def test_zero_at_teacher(self, ts):
        np.testing.assert_allclose(
            lindistill.distill.loss_gradient(ts.w_star, ts), 0, atol=1e-12)

    def test_finite_differences(self, ts, rng):
        w = rng.standard_normal(6)
        h = 1e-6
        numeric = [
            (lindistill.distill.loss(w + h * e, ts)
             - lindistill.distill.loss(w - h * e, ts)) / (2 * h)
            for e in np.eye(6)
        ]
        grad = lindistill.distill.loss_gradient(w, ts)
        assert np.linalg.norm(numeric - grad) <= 1e-5 * np.linalg.norm(grad)

    def test_in_span(self, ts, rng):
        grad = lindistill.distill.loss_gradient(rng.standard_normal(6), ts)
        np.testing.assert_allclose(
            lindistill.geometry.project_onto_span(ts.X, grad), grad,
            atol=1e-10)


class TestLossHessian:

    def test_scalar(self):
        ts = lindistill.tasks.TransferSet.label(np.array([[1.0]]), (1.0,))
        assert lindistill.distill.loss_hessian(np.zeros(1), ts)[0, 0] == 0.25

    def test_symmetric_psd(self, ts, rng):
        H = lindistill.distill.loss_hessian(rng.standard_normal(6), ts)
        np.testing.assert_array_equal(H, H.T)
        assert np.linalg.eigvalsh(H).min() >= -1e-12


class TestClosedFormSolution:

    def test_square(self, rng):
        ts = lindistill.tasks.TransferSet.label(
            rng.standard_normal((4, 6)), rng.standard_normal(4))
        np.testing.assert_array_equal(
            lindistill.distill.closed_form_solution(ts), ts.w_star)

    def test_axis(self):
        ts = lindistill.tasks.TransferSet.label(
            np.array([[1.0], [0.0]]), (3, 4))
        np.testing.assert_allclose(
            lindistill.distill.closed_form_solution(ts), [3, 0], atol=1e-12)

    def test_singular(self):
        X = np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]])
        ts = lindistill.tasks.TransferSet.label(X, (1, 1, 1))
        with pytest.raises(lindistill.error.SingularityError):
            lindistill.distill.closed_form_solution(ts)

    def test_without_teacher(self):
        ts = lindistill.tasks.TransferSet(X=np.eye(2), y=[0.5, 0.5])
        with pytest.raises(lindistill.error.UsageError):
            lindistill.distill.closed_form_solution(ts)

    def test_minimises(self, ts):
        w_hat = lindistill.distill.closed_form_solution(ts)
        assert lindistill.distill.loss(w_hat, ts) == pytest.approx(0, abs=1e-12)


class TestIsGlobalMinimizer:

    def test_closed_form(self, ts):
        assert lindistill.distill.is_global_minimizer(
            lindistill.distill.closed_form_solution(ts), ts)

    def test_off_span(self, ts, rng):
        w_hat = lindistill.distill.closed_form_solution(ts)
        q = lindistill.geometry.orthogonal_complement_sample(ts.X, rng)
        assert lindistill.distill.is_global_minimizer(w_hat + q, ts)

    def test_along_span(self, ts):
        w_hat = lindistill.distill.closed_form_solution(ts)
        assert not lindistill.distill.is_global_minimizer(
            w_hat + 0.1 * ts.X[:, 0], ts)

    def test_saturated_labels(self):
        ts = lindistill.tasks.TransferSet(X=np.eye(2), y=[0.0, 0.5])
        with pytest.raises(lindistill.error.DomainError):
            lindistill.distill.is_global_minimizer(np.zeros(2), ts)


class TestProbes:

    def test_pl_ratio(self):
        assert lindistill.distill.pl_ratio([2.0, 1.0, 0.0], [2.0, 1.0, 0.0]) \
            == pytest.approx(0.5)

    def test_pl_ratio_converged(self):
        assert np.isnan(lindistill.distill.pl_ratio([0.0], [0.0]))

    def test_curvature_positive_in_span(self, ts, rng):
        w_hat = lindistill.distill.closed_form_solution(ts)
        step = ts.X @ rng.standard_normal(3)
        assert lindistill.distill.curvature_estimate(
            w_hat, w_hat + 0.1 * step, ts) > 0

    def test_curvature_flat_off_span(self, ts, rng):
        w_hat = lindistill.distill.closed_form_solution(ts)
        q = lindistill.geometry.orthogonal_complement_sample(ts.X, rng)
        assert lindistill.distill.curvature_estimate(w_hat, w_hat + q, ts) \
            == pytest.approx(0, abs=1e-6)
