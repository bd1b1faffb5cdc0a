import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adarankgrad import experiments, linalg, lowrank, network, optimizer
from adarankgrad.errors import ShapeError, StaleCacheError
from fixtures import SPECS, batch_for, finite_difference_check


class TestSpec:
    @pytest.mark.parametrize("kw", [dict(layer_dims=(3,)), dict(layer_dims=(3, 0)), dict(layer_dims=(2, 2), activation="tanh"),
                                    dict(layer_dims=(2, 2), loss="hinge"), dict(layer_dims=(2, 2), leaky_slope=1.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            network.NetworkSpec(**kw)

    def test_shapes(self):
        assert network.NetworkSpec((5, 4, 3)).shapes == [(4, 5), (3, 4)]

    def test_init_scale(self):
        w = network.init_weights(network.NetworkSpec((400, 300), seed=1))[0]
        assert np.std(w) == pytest.approx(1 / np.sqrt(400), rel=0.05)


class TestForward:
    def test_identity_perfect_fit(self):
        spec = network.NetworkSpec((3, 3), "identity", "mse")
        x = linalg.gaussian_matrix(3, 5, 0)
        loss, _ = network.forward(spec, [np.eye(3)], network.Batch(x, x))
        assert loss == 0.0

    def test_uniform_logits(self):
        spec = network.NetworkSpec((2, 4), "identity", "cross_entropy")
        batch = network.Batch(np.ones((2, 6)), np.eye(4)[:, [0, 1, 2, 3, 0, 1]])
        loss, _ = network.forward(spec, [np.zeros((4, 2))], batch)
        assert loss == pytest.approx(np.log(4))

    def test_regression_pin(self):
        spec = network.NetworkSpec((5, 4, 3), "relu", "mse", seed=3)
        batch, _ = network.make_synthetic("lowrank_regression", (5, 3), 16, 3, rank=2)
        loss, _ = network.forward(spec, network.init_weights(spec), batch)
        assert loss == pytest.approx(10.480570175646935, rel=1e-12)

    def test_large_logits_stable(self):
        spec = network.NetworkSpec((1, 3), "identity", "cross_entropy")
        batch = network.Batch(np.array([[1.0]]), np.array([[1.0], [0.0], [0.0]]))
        loss, _ = network.forward(spec, [np.array([[1000.0], [0.0], [-1000.0]])], batch)
        assert np.isfinite(loss) and loss == pytest.approx(0.0, abs=1e-12)

    def test_shape_error_names_layer(self):
        spec = network.NetworkSpec((3, 2, 2))
        with pytest.raises(ShapeError, match="layer 1"):
            network.forward(spec, [np.zeros((2, 3)), np.zeros((3, 2))], batch_for(spec))


class TestBackward:
    @pytest.mark.parametrize("spec", SPECS, ids=lambda s: f"{s.layer_dims}-{s.activation}-{s.loss}")
    def test_finite_differences(self, spec):
        weights = network.init_weights(spec)
        assert finite_difference_check(spec, weights, batch_for(spec)) <= 1e-5

    def test_zero_at_perfect_fit(self):
        spec = network.NetworkSpec((4, 3, 2), "relu", "mse", seed=0)
        weights = network.init_weights(spec)
        x = linalg.gaussian_matrix(4, 8, 1)
        batch = network.Batch(x, network.predict(spec, weights, x))
        _, grads = network.loss_and_grads(spec, weights, batch)
        assert all(np.max(np.abs(g)) <= 1e-12 for g in grads)

    def test_single_layer_closed_form(self):
        spec = network.NetworkSpec((4, 3), "identity", "mse")
        w = linalg.gaussian_matrix(3, 4, 0)
        x, y = linalg.gaussian_matrix(4, 10, 1), linalg.gaussian_matrix(3, 10, 2)
        _, (g,) = network.loss_and_grads(spec, [w], network.Batch(x, y))
        np.testing.assert_allclose(g, (w @ x - y) @ x.T * (2 / 10), atol=1e-10)

    def test_stale_cache(self):
        spec = SPECS[0]
        weights = network.init_weights(spec)
        _, cache = network.forward(spec, weights, batch_for(spec))
        weights[0] = weights[0] + 1.0
        with pytest.raises(StaleCacheError):
            network.backward(spec, weights, cache)

    def test_sum_flag_scales(self):
        mean_spec = network.NetworkSpec((4, 3, 2), "relu", "mse", seed=6)
        sum_spec = SPECS[5]
        batch = batch_for(mean_spec)
        w = network.init_weights(mean_spec)
        _, gm = network.loss_and_grads(mean_spec, w, batch)
        _, gs = network.loss_and_grads(sum_spec, w, batch)
        np.testing.assert_allclose(gs[0], gm[0] * batch.size)

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 10_000), slope=st.floats(0.0, 0.5))
    def test_finite_differences_random(self, seed, slope):
        spec = network.NetworkSpec((3, 4, 2), "leaky_relu", "mse", seed=seed, leaky_slope=slope)
        assert finite_difference_check(spec, network.init_weights(spec), batch_for(spec, seed=seed), directions=3) <= 1e-5


class TestSynthetic:
    def test_realizable_rank_one(self):
        batch, w_star = network.make_synthetic("lowrank_regression", (6, 4), 20, 0, rank=1)
        assert np.linalg.matrix_rank(w_star) == 1
        spec = network.NetworkSpec((6, 4), "identity", "mse")
        assert network.forward(spec, [w_star], batch)[0] == pytest.approx(0.0, abs=1e-24)

    def test_deterministic(self):
        a, _ = network.make_synthetic("classification", (5, 3), 30, 7)
        b, _ = network.make_synthetic("classification", (5, 3), 30, 7)
        assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.targets, b.targets)

    def test_one_hot(self):
        batch, _ = network.make_synthetic("classification", (5, 3), 30, 7)
        np.testing.assert_array_equal(batch.targets.sum(axis=0), 1.0)

    @pytest.mark.parametrize("kw", [dict(kind="lowrank_regression", rank=5), dict(kind="classification", n_classes=4),
                                    dict(kind="lowrank_regression", n_samples=0)])
    def test_invalid(self, kw):
        args = dict(dims=(4, 3), n_samples=10, seed=0)
        args.update(kw)
        with pytest.raises(ShapeError):
            network.make_synthetic(**args)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            network.make_synthetic("images", (4, 3), 10, 0)

    def test_classification_smoke(self):
        spec = network.NetworkSpec((10, 16, 3), "relu", "cross_entropy", seed=0)
        batch, _ = network.make_synthetic("classification", (10, 3), 300, 0)
        res = experiments.train(spec, batch, optimizer.Adam(0.01, shapes=spec.shapes), 500)
        assert network.accuracy(spec, res.weights, batch) >= 0.95


class TestTrainingDynamics:
    def test_sgd_decreases_loss(self):
        spec, batch = experiments.rank_decay_task(0)
        res = experiments.train(spec, batch, optimizer.SGD(0.01, shapes=spec.shapes), 10)
        assert all(b < a for a, b in zip(res.losses, res.losses[1:]))

    def test_kappa_decays_under_sgd(self):
        spec, batch = experiments.rank_decay_task(1)
        weights = network.init_weights(spec)
        opt = optimizer.SGD(0.04, shapes=spec.shapes)
        kappas = []
        for _ in range(1000):
            _, grads = network.loss_and_grads(spec, weights, batch)
            kappas.append([lowrank.kappa(g) for g in grads])
            weights = opt.step(weights, grads)
        kappas = np.array(kappas)
        assert np.all(kappas[-100:].mean(axis=0) < kappas[:100].mean(axis=0))
