import os
import subprocess
import sys

import numpy as np
import pytest

from symquant.core import BagDataset, LengthMismatch, relative_absolute_error
from symquant.neural import autograd as ag
from symquant.neural import kernels
from symquant.neural.autograd import Tensor
from symquant.neural.gradcheck import gradient_check, histogram_stack_check, relative_deviation
from symquant.neural.layers import (HISTOGRAM_VARIANTS, POOLING_KINDS, Dense, HistogramLayer,
                                    HistogramLayerParams, histogram_forward,
                                    init_histogram_params, pooling_forward)
from symquant.neural.network import NetworkConfig, QuantNetwork, network_forward
from symquant.neural.quantifier import (SYMMETRIC_METHODS, SymmetricQuantifier, invariant_for,
                                        is_symmetric)
from symquant.neural.training import (AdamW, EmptyDataset, NonFiniteLoss, PRESETS, TrainConfig,
                                      backward_and_step, compute_loss, make_optimizer, preset,
                                      train)
from symquant.sampling import AppConfig, app_generate, two_gaussians

INVARIANTS = HISTOGRAM_VARIANTS + POOLING_KINDS


def params_1d(variant, mu, w, gamma=100.0):
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    return HistogramLayerParams(variant, mu.shape[1], 1, mu, np.full(mu.shape, float(w)), gamma)


def small_net(invariant, d=3, l=3, seed=0, **kw):
    opts = dict(n_bins=8, feature_sizes=(6,), z=4, head_sizes=(8,), dropout=0.0, seed=seed)
    opts.update(kw)
    return QuantNetwork(NetworkConfig(d, l, invariant, **opts))


def tiny_bags(seed=0, n_bags=40, size=30):
    D = two_gaussians(2, 2.0, 200, seed)
    return app_generate(D, AppConfig(size, n_bags, seed + 1))


class TestAutograd:
    def test_broadcast_add(self):
        a = Tensor(np.ones((3, 2)), True)
        b = Tensor(np.array([1.0, 2.0]), True)
        ag.total(a + b).backward()
        np.testing.assert_array_equal(a.grad, np.ones((3, 2)))
        np.testing.assert_array_equal(b.grad, [3.0, 3.0])

    def test_shared_node(self):
        x = Tensor(np.array([1.5, -2.0]), True)
        ag.total(x * x).backward()
        np.testing.assert_allclose(x.grad, [3.0, -4.0])

    def test_sub_and_neg(self):
        x = Tensor(np.array([2.0]), True)
        (1.0 - x).backward()
        np.testing.assert_array_equal(x.grad, [-1.0])

    @pytest.mark.parametrize("op", ["matmul", "softmax", "sigmoid", "leaky", "abs", "mean", "reshape"])
    def test_against_finite_differences(self, op):
        rng = np.random.default_rng(3)
        A = Tensor(rng.normal(size=(4, 3)) + 0.1, True)
        B = Tensor(rng.normal(size=(3, 5)), True)
        proj = rng.normal(size=(4, 5))

        def f():
            if op == "matmul":
                out = A @ B
            elif op == "softmax":
                out = ag.softmax(A @ B, axis=1)
            elif op == "sigmoid":
                out = ag.sigmoid(A @ B)
            elif op == "leaky":
                out = ag.leaky_relu(A @ B)
            elif op == "abs":
                out = ag.absolute(A @ B)
            elif op == "mean":
                return ag.mean(ag.mul(A @ B, proj))
            else:
                out = ag.reshape(ag.reshape(A @ B, (20,)), (4, 5))
            return ag.total(ag.mul(out, proj))

        assert gradient_check(f, [A, B]).ok(1e-6)

    def test_grad_only_where_required(self):
        a = Tensor(np.ones(2))
        b = Tensor(np.ones(2), True)
        ag.total(a * b).backward()
        assert a.grad is None
        np.testing.assert_array_equal(b.grad, [1.0, 1.0])


class TestHistogramForward:
    def test_hard_example(self):
        out = histogram_forward(np.array([[0.1], [0.5], [0.9]]), params_1d("hard", [0.5], 0.2))
        np.testing.assert_allclose(out, [1 / 3], atol=1e-15)

    def test_hard_outside(self):
        out = histogram_forward(np.array([[0.7]]), params_1d("hard", [0.5], 0.1))
        np.testing.assert_array_equal(out, [0.0])

    @pytest.mark.parametrize("variant,w", [("hard", 0.1), ("soft", 10.0), ("softrbf", 0.1)])
    def test_values_at_centre(self, variant, w):
        out = histogram_forward(np.full((7, 1), 0.35), params_1d(variant, [0.35, 0.8], w))
        assert out[0] == 1.0

    def test_soft_formula(self):
        # slope 4 -> reach 0.25; distances 0.1 and 0.3
        out = histogram_forward(np.array([[0.6], [0.8]]), params_1d("soft", [0.5], 4.0))
        np.testing.assert_allclose(out, [(0.6 + 0.0) / 2], atol=1e-15)

    def test_softrbf_formula(self):
        out = histogram_forward(np.array([[0.7]]), params_1d("softrbf", [0.5], 0.1))
        np.testing.assert_allclose(out, [np.exp(-4.0)], atol=1e-15)

    def test_sigmoid_formula(self):
        v, mu, w, g = 0.53, 0.5, 0.1, 100.0
        expected = 1 / (1 + np.exp(g * (v - mu - w / 2))) * (1 - 1 / (1 + np.exp(g * (v - mu + w / 2))))
        out = histogram_forward(np.array([[v]]), params_1d("sigmoid", [mu], w, g))
        np.testing.assert_allclose(out, [expected], atol=1e-15)

    @pytest.mark.parametrize("variant", HISTOGRAM_VARIANTS)
    def test_range_and_layout(self, variant):
        rng = np.random.default_rng(0)
        p = init_histogram_params(variant, 5, 3)
        f = rng.random((40, 3))
        out = histogram_forward(f, p)
        assert out.shape == (15,)
        assert np.all(out >= 0) and np.all(out <= 1)
        # feature k occupies entries k*N .. k*N+N-1
        alone = histogram_forward(f[:, 1:2], HistogramLayerParams(variant, 5, 1, p.centers[1:2],
                                                                  p.widths[1:2], p.gamma))
        np.testing.assert_allclose(out[5:10], alone, atol=1e-15)

    def test_hard_init_partitions_unit_interval(self):
        rng = np.random.default_rng(1)
        out = histogram_forward(rng.random((500, 1)), init_histogram_params("hard", 10, 1))
        np.testing.assert_allclose(out.sum(), 1.0, atol=1e-12)

    @pytest.mark.parametrize("variant", HISTOGRAM_VARIANTS)
    def test_row_permutation(self, variant):
        rng = np.random.default_rng(2)
        p = init_histogram_params(variant, 8, 2)
        f = rng.random((50, 2))
        np.testing.assert_allclose(histogram_forward(f[rng.permutation(50)], p),
                                   histogram_forward(f, p), atol=1e-12, rtol=0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            histogram_forward(np.zeros((3, 2)), init_histogram_params("hard", 4, 3))

    def test_init_centres(self):
        p = init_histogram_params("soft", 4, 2)
        np.testing.assert_allclose(p.centers[0], [0.125, 0.375, 0.625, 0.875])
        np.testing.assert_allclose(p.widths, 4.0)
        assert p.n_learnable == 16
        assert init_histogram_params("sigmoid", 4, 2).n_learnable == 0


class TestHardEquivalence:
    def test_literal_vs_indicator(self):
        rng = np.random.default_rng(0)
        v, mu, w = rng.random(10**6), rng.random(10**6), rng.random(10**6) * 0.5
        literal = np.power(1.01, w - np.abs(v - mu)) > 1.0
        indicator = np.abs(v - mu) < w
        np.testing.assert_array_equal(literal, indicator)
        # same counts through the layer kernel
        out = kernels.hist_forward(v.reshape(1, -1, 1), np.array([[0.5]]), np.array([[0.2]]), 0)
        assert out[0, 0, 0] * len(v) == pytest.approx(np.sum(np.abs(v - 0.5) < 0.2))


@pytest.fixture(scope="module")
def impls():
    found = kernels.backends()
    if "cython" not in found:
        pytest.skip("compiled extension not built")
    return found["python"], found["cython"]


class TestBackends:
    @pytest.mark.parametrize("variant", HISTOGRAM_VARIANTS)
    def test_agree(self, impls, variant):
        py, cy = impls
        rng = np.random.default_rng(4)
        code = kernels.VARIANTS[variant]
        x = rng.random((3, 20, 4))
        p = init_histogram_params(variant, 6, 4)
        mu = p.centers + rng.normal(0, 0.01, p.centers.shape)
        w = p.widths * rng.uniform(0.8, 1.2, p.widths.shape)
        g = rng.normal(size=(3, 4, 6))
        np.testing.assert_allclose(cy.hist_forward(x, mu, w, code, 100.0),
                                   py.hist_forward(x, mu, w, code, 100.0), atol=1e-12)
        for a, b in zip(cy.hist_backward(x, mu, w, code, 100.0, g),
                        py.hist_backward(x, mu, w, code, 100.0, g)):
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_dispatch(self):
        assert kernels.BACKEND in ("python", "cython")

    def test_forced_fallback(self):
        code = "from symquant.neural import kernels; print(kernels.BACKEND)"
        out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                             env={**os.environ, "SYMQUANT_PURE_PYTHON": "1"}, check=True)
        assert out.stdout.strip() == "python"


class TestPooling:
    @pytest.mark.parametrize("kind,expected", [("avg", 2.0), ("median", 2.0), ("max", 3.0)])
    def test_three(self, kind, expected):
        np.testing.assert_array_equal(pooling_forward([1.0, 2.0, 3.0], kind), [expected])

    def test_lower_median(self):
        np.testing.assert_array_equal(pooling_forward([4.0, 1.0, 3.0, 2.0], "median"), [2.0])

    @pytest.mark.parametrize("kind", POOLING_KINDS)
    def test_identical_rows(self, kind):
        row = np.array([0.3, -1.0, 2.0])
        np.testing.assert_array_equal(pooling_forward(np.tile(row, (5, 1)), kind), row)

    def test_empty(self):
        with pytest.raises(ValueError):
            pooling_forward(np.zeros((0, 2)), "avg")

    @pytest.mark.parametrize("kind", POOLING_KINDS)
    def test_gradient(self, kind):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(2, 7, 3)), True)
        proj = rng.normal(size=(2, 3))
        assert gradient_check(lambda: ag.total(ag.mul(ag.pool(x, kind), proj)), [x]).ok(1e-6)


class TestNetwork:
    @pytest.mark.parametrize("inv", INVARIANTS)
    def test_simplex_and_permutation(self, inv):
        net = small_net(inv)
        rng = np.random.default_rng(6)
        for _ in range(5):
            bag = rng.normal(size=(rng.integers(1, 30), 3))
            p = net.predict(bag)
            assert np.all(p >= 0)
            np.testing.assert_allclose(p.sum(), 1.0, atol=1e-12)
            for _ in range(3):
                np.testing.assert_allclose(net.predict(bag[rng.permutation(len(bag))]), p, atol=1e-6, rtol=0)

    @pytest.mark.parametrize("inv", INVARIANTS)
    def test_duplication(self, inv):
        net = small_net(inv)
        bag = np.random.default_rng(7).normal(size=(15, 3))
        np.testing.assert_allclose(net.predict(np.vstack([bag, bag])), net.predict(bag), atol=1e-6, rtol=0)

    def test_inference_is_deterministic(self):
        net = small_net("hard", dropout=0.5)
        bag = np.random.default_rng(8).normal(size=(20, 3))
        np.testing.assert_array_equal(net.predict(bag), net.predict(bag))
        a = network_forward(net, bag, True, np.random.default_rng(0))
        b = network_forward(net, bag, True, np.random.default_rng(1))
        assert not np.allclose(a, b)

    def test_training_needs_rng(self):
        with pytest.raises(ValueError):
            small_net("avg").forward(np.zeros((1, 4, 3)), training=True)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            small_net("soft").predict(np.zeros((4, 2)))

    def test_predict_many(self):
        net = small_net("softrbf")
        rng = np.random.default_rng(9)
        bags = [rng.normal(size=(n, 3)) for n in (5, 8, 5, 3)]
        out = net.predict_many(bags)
        for b, p in zip(bags, out):
            np.testing.assert_allclose(p, net.predict(b), atol=1e-14)

    def test_state_dict(self):
        a, b = small_net("soft", seed=1), small_net("soft", seed=2)
        bag = np.random.default_rng(10).normal(size=(9, 3))
        b.load_state_dict(a.state_dict())
        np.testing.assert_array_equal(a.predict(bag), b.predict(bag))
        with pytest.raises(KeyError):
            small_net("avg").load_state_dict(a.state_dict())

    def test_sigmoid_params_frozen(self):
        net = small_net("sigmoid")
        assert all(not p.name.startswith("hist") for p in net.parameters())

    def test_unknown_invariant(self):
        with pytest.raises(ValueError):
            NetworkConfig(2, 2, "sum")


class TestGradients:
    def test_dense(self):
        rng = np.random.default_rng(0)
        dense = Dense(4, 3, rng)
        X = Tensor(rng.normal(size=(6, 4)), True)
        proj = rng.normal(size=(6, 3))
        rep = gradient_check(lambda: ag.total(ag.mul(dense(X), proj)), [dense.W, dense.b, X])
        assert rep.max_rel_dev < 1e-6

    @pytest.mark.parametrize("variant", ["soft", "softrbf"])
    @pytest.mark.parametrize("seed", range(5))
    def test_histogram(self, variant, seed):
        rep = histogram_stack_check(variant, np.random.default_rng(seed))
        assert rep.n_checked > 0
        assert rep.max_rel_dev < 1e-4, rep.per_tensor

    def test_sigmoid_inputs(self):
        rep = histogram_stack_check("sigmoid", np.random.default_rng(3))
        assert set(rep.per_tensor) == {"dense.W", "dense.b", "input"}
        assert rep.max_rel_dev < 1e-4

    def test_kinks_are_excluded(self):
        layer = HistogramLayer(params_1d("soft", [0.5], 4.0))
        # 0.5 is a centre, 0.75 is at the reach of the bin
        np.testing.assert_allclose(layer.kink_distance(np.array([[0.5], [0.75]])), [[0.0]])
        np.testing.assert_allclose(layer.input_kink_distance(np.array([[0.5], [0.7]])), [[0.0], [0.05]])

    def test_hard_surrogate_flows(self):
        layer = HistogramLayer(params_1d("hard", [0.3, 0.7], 0.1))
        x = Tensor(np.array([[[0.32], [0.9]]]), True)
        ag.total(layer(x)).backward()
        assert np.all(np.isfinite(layer.mu.grad)) and np.any(layer.w.grad != 0)
        assert np.all(x.grad != 0)

    def test_relative_deviation_floor(self):
        dev = relative_deviation(np.array([1.0, 1e-12]), np.array([1.0, 0.0]))
        assert dev.max() < 1e-8


class TestLoss:
    def test_equal(self):
        p = Tensor(np.array([[0.2, 0.8], [0.5, 0.5]]))
        assert compute_loss(p, p.data, "AE").data == 0.0
        assert compute_loss(p, p.data, "RAE", 0.01).data == 0.0

    def test_ae_example(self):
        loss = compute_loss(Tensor(np.array([[0.7, 0.3]])), [[0.6, 0.4]], "AE")
        assert float(loss.data) == pytest.approx(0.1, abs=1e-12)

    def test_rae_matches_metric(self):
        p, q = np.array([0.1, 0.9]), np.array([0.3, 0.7])
        loss = compute_loss(Tensor(q[None]), p[None], "RAE", 0.02)
        assert float(loss.data) == pytest.approx(relative_absolute_error(p, q, 0.02), abs=1e-12)

    def test_batch_mean(self):
        P = np.array([[0.7, 0.3], [0.2, 0.8]])
        G = np.array([[0.6, 0.4], [0.5, 0.5]])
        for kind in ("AE", "RAE"):
            both = float(compute_loss(Tensor(P), G, kind, 0.01).data)
            single = [float(compute_loss(Tensor(P[i:i + 1]), G[i:i + 1], kind, 0.01).data) for i in range(2)]
            assert both == pytest.approx(np.mean(single), abs=1e-15)

    def test_mismatch(self):
        with pytest.raises(LengthMismatch):
            compute_loss(Tensor(np.ones((2, 2)) / 2), np.ones((3, 2)) / 2, "AE")

    def test_rae_gradient(self):
        rng = np.random.default_rng(0)
        z = Tensor(rng.normal(size=(3, 4)), True)
        gold = rng.dirichlet(np.ones(4), size=3)
        rep = gradient_check(lambda: compute_loss(ag.softmax(z, axis=1), gold, "RAE", 0.01), [z])
        assert rep.ok(1e-5)


class TestAdamW:
    def test_zero_lr(self):
        p = Tensor(np.array([1.0, -2.0]), True)
        opt = AdamW([p], lr=0.0, weight_decay=0.1)
        p.grad = np.array([0.3, 0.3])
        before = p.data.copy()
        opt.step()
        np.testing.assert_array_equal(p.data, before)

    def test_first_step_is_signed_lr(self):
        p = Tensor(np.array([1.0, -2.0]), True)
        opt = AdamW([p], lr=0.1)
        p.grad = np.array([5.0, -0.01])
        opt.step()
        np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-6)

    def test_decoupled_decay(self):
        p = Tensor(np.array([2.0]), True)
        opt = AdamW([p], lr=0.1, weight_decay=0.5)
        p.grad = np.zeros(1)
        opt.step()
        np.testing.assert_allclose(p.data, [2.0 * (1 - 0.05)])

    def test_lr_scale(self):
        p, q = Tensor(np.zeros(1), True), Tensor(np.zeros(1), True)
        opt = AdamW([p, q], lr=0.1, lr_scale={id(q): 0.01})
        p.grad, q.grad = np.ones(1), np.ones(1)
        opt.step()
        np.testing.assert_allclose([p.data[0], q.data[0]], [-0.1, -0.001], rtol=1e-6)

    def test_minimises_quadratic(self):
        p = Tensor(np.array([3.0, -1.0]), True)
        opt = AdamW([p], lr=0.05)
        for _ in range(500):
            opt.zero_grad()
            ag.total(ag.mul(p, p)).backward()
            opt.step()
        np.testing.assert_allclose(p.data, 0.0, atol=0.05)


class TestBackwardAndStep:
    def test_zero_lr(self):
        net = small_net("soft", d=2, l=2)
        cfg = TrainConfig(learning_rate=0.0)
        bags = tiny_bags(n_bags=4)
        before = net.state_dict()
        backward_and_step(net, list(zip(bags.bags, bags.prevalences)), cfg, make_optimizer(net, cfg),
                          np.random.default_rng(0))
        for k, v in net.state_dict().items():
            np.testing.assert_array_equal(v, before[k])

    def test_linear_target(self):
        rng = np.random.default_rng(0)
        net = QuantNetwork(NetworkConfig(2, 1, "avg", feature_sizes=(), z=2, head_sizes=(),
                                         dropout=0.0, output="identity", squash=False, seed=0))
        cfg = TrainConfig(loss="AE", learning_rate=0.01)
        opt = make_optimizer(net, cfg)
        a = np.array([0.7, -0.4])
        losses = []
        for _ in range(100):
            bags = [rng.normal(1.0, 1.0, size=(10, 2)) for _ in range(8)]
            batch = [(b, np.array([b.mean(axis=0) @ a])) for b in bags]
            losses.append(backward_and_step(net, batch, cfg, opt, rng))
        assert np.mean(losses[-10:]) < 0.5 * np.mean(losses[:10])

    def test_non_finite(self):
        net = small_net("avg", d=2, l=2)
        cfg = TrainConfig()
        bag = np.full((3, 2), np.nan)
        with pytest.raises(NonFiniteLoss):
            backward_and_step(net, [(bag, np.array([0.5, 0.5]))], cfg, make_optimizer(net, cfg),
                              np.random.default_rng(0))

    def test_empty(self):
        net = small_net("avg", d=2, l=2)
        with pytest.raises(EmptyDataset):
            backward_and_step(net, [], TrainConfig(), make_optimizer(net, TrainConfig()),
                              np.random.default_rng(0))


class TestTrain:
    def test_patience_zero(self):
        net, hist = train(small_net("hard", d=2, l=2), tiny_bags(), TrainConfig(patience=0, max_epochs=50))
        assert hist.epochs == 1

    def test_restores_best(self):
        bags = tiny_bags()
        net, hist = train(small_net("soft", d=2, l=2), bags,
                          TrainConfig(patience=3, max_epochs=15, learning_rate=1e-2))
        assert hist.val_loss[hist.best_epoch] == min(hist.val_loss)
        assert len(hist.val_loss) == len(hist.train_loss) == hist.epochs

    def test_real_only(self, monkeypatch):
        from symquant.neural import training
        seen = []
        original = training.bag_mixer_batch

        def spy(src, mixer, size, rng):
            batch = original(src, mixer, size, rng)
            seen.extend(any(b is s for s in src.bags) for b, _ in batch)
            return batch

        monkeypatch.setattr(training, "bag_mixer_batch", spy)
        train(small_net("avg", d=2, l=2), tiny_bags(), TrainConfig(real_proportion=1.0, max_epochs=2))
        assert seen and all(seen)

    def test_deterministic(self):
        cfg = TrainConfig(max_epochs=3)
        _, h1 = train(small_net("softrbf", d=2, l=2), tiny_bags(), cfg)
        _, h2 = train(small_net("softrbf", d=2, l=2), tiny_bags(), cfg)
        assert h1.train_loss == h2.train_loss and h1.val_loss == h2.val_loss

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            train(small_net("avg"), BagDataset([], np.zeros((0, 3)), 3), TrainConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(loss="MSE")
        with pytest.raises(ValueError):
            TrainConfig(real_proportion=1.5)


class TestPresets:
    def test_t1a(self):
        net_cfg, tr = preset("lequa-t1a", 300, 2)
        assert (net_cfg.n_bins, net_cfg.z, net_cfg.head_sizes, net_cfg.dropout) == (32, 300, (2048,) * 3, 0.5)
        assert (tr.learning_rate, tr.weight_decay, tr.batch_size, tr.real_proportion) == (1e-4, 1e-5, 20, 0.9)

    def test_t1b_override(self):
        net_cfg, tr = preset("lequa-t1b", 300, 28, n_bins=8, max_epochs=3)
        assert (net_cfg.n_bins, net_cfg.z, tr.batch_size, tr.max_epochs) == (8, 512, 500, 3)

    def test_unknown(self):
        with pytest.raises(KeyError):
            preset("lequa-t2", 10, 2)
        assert set(PRESETS) == {"lequa-t1a", "lequa-t1b"}


class TestSymmetricQuantifier:
    def test_names(self):
        assert invariant_for("HistNetQ-softrbf") == "softrbf"
        assert invariant_for("DeepSets-median") == "median"
        assert is_symmetric("histnetq-hard") and not is_symmetric("EMQ")
        assert len(SYMMETRIC_METHODS) == 7
        with pytest.raises(KeyError):
            invariant_for("HistNetQ-triangle")

    def test_fit_quantify(self):
        bags = tiny_bags()
        q = SymmetricQuantifier("HistNetQ-hard", dict(n_bins=4, feature_sizes=(4,), z=2, head_sizes=(4,)),
                                TrainConfig(max_epochs=2)).fit(bags)
        est = q.quantify_many(bags.bags[:3])
        assert est.shape == (3, 2)
        np.testing.assert_allclose(est.sum(axis=1), 1.0)
        np.testing.assert_allclose(q.quantify(bags.bags[0]), est[0], atol=1e-14)
        assert q.history.epochs <= 2

    def test_with_bins(self):
        q = SymmetricQuantifier("HistNetQ-soft", dict(n_bins=4))
        r = q.with_bins(16)
        assert r.net_options["n_bins"] == 16 and q.net_options["n_bins"] == 4
