import numpy as np
import pytest

from symquant.aggregative import (ACC, AGGREGATIVE_METHODS, EMQ, ClassAbsent, EmqOptions, EmqTrace,
                                  HdyModel, NotBinary, ZeroTrainPrior, acc_quantify, cc_quantify,
                                  confusion_from_predictions, density_histogram, emq_quantify,
                                  hdy_argmins, hdy_objective, hdy_quantify, make_aggregative,
                                  pacc_quantify, pcc_from_posteriors, pcc_quantify,
                                  project_to_simplex, solve_adjustment)
from symquant.classify import SoftClassifier, posteriors
from symquant.core import LabeledDataset, is_prevalence
from symquant.sampling import AppConfig, app_generate, two_gaussians

M2 = np.array([[0.9, 0.2], [0.1, 0.8]])


def threshold_classifier(scale=1e3):
    # 1-D, predicts class 1 when x > 0
    return SoftClassifier(np.array([[-scale], [scale]]), np.zeros(2))


def random_column_stochastic(l, rng):
    while True:
        M = rng.dirichlet(np.ones(l) * 0.5, size=l).T + np.eye(l) * 2
        M /= M.sum(axis=0, keepdims=True)
        if np.linalg.cond(M) < 1e3:
            return M


class TestProjection:
    @pytest.mark.parametrize("v,expected", [
        ((0.6, 0.4), (0.6, 0.4)),
        ((8 / 7, -1 / 7), (1.0, 0.0)),
        ((0.5, 0.5, 0.5), (1 / 3, 1 / 3, 1 / 3)),
    ])
    def test_examples(self, v, expected):
        np.testing.assert_allclose(project_to_simplex(v), expected, atol=1e-12)

    def test_is_closest_point(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            v = rng.normal(size=4)
            p = project_to_simplex(v)
            for q in rng.dirichlet(np.ones(4), size=20):
                assert np.linalg.norm(v - p) <= np.linalg.norm(v - q) + 1e-12


class TestConfusion:
    def test_perfect(self):
        y = np.array([0, 1, 2, 1])
        np.testing.assert_array_equal(confusion_from_predictions(y, y, 3), np.eye(3))

    def test_flipped(self):
        y = np.array([0, 0, 1, 1])
        np.testing.assert_array_equal(confusion_from_predictions(y, 1 - y, 2), [[0, 1], [1, 0]])

    def test_soft_uniform(self):
        y = np.array([0, 1, 2, 2])
        np.testing.assert_allclose(confusion_from_predictions(y, np.full((4, 3), 1 / 3), 3, soft=True), 1 / 3)

    def test_missing_class(self):
        with pytest.raises(ClassAbsent):
            confusion_from_predictions(np.array([0, 0]), np.array([0, 0]), 2)


class TestCC:
    def test_constant_predictor(self):
        clf = SoftClassifier(np.zeros((2, 1)), np.array([1.0, 0.0]))
        np.testing.assert_array_equal(cc_quantify(clf, np.random.default_rng(0).normal(size=(50, 1))), [1, 0])

    def test_perfect_classifier(self):
        bag = np.r_[-np.ones(3), np.ones(7)][:, None]
        np.testing.assert_allclose(cc_quantify(threshold_classifier(), bag), [0.3, 0.7])

    def test_known_confusion(self):
        # labels with known flip rates feed a perfect classifier on a 1-D code
        rng = np.random.default_rng(0)
        n = 100_000
        y = (rng.random(n) < 0.4).astype(int)
        flip = np.where(y == 0, rng.random(n) < 0.1, rng.random(n) < 0.2)
        pred = np.where(flip, 1 - y, y)
        bag = np.where(pred == 1, 1.0, -1.0)[:, None]
        np.testing.assert_allclose(cc_quantify(threshold_classifier(), bag), M2 @ [0.6, 0.4], atol=0.01)


class TestPCC:
    def test_mean(self):
        np.testing.assert_allclose(pcc_from_posteriors([[0.8, 0.2], [0.4, 0.6]]), [0.6, 0.4])

    def test_constant(self):
        np.testing.assert_allclose(pcc_from_posteriors(np.full((5, 3), 1 / 3)), 1 / 3)

    def test_single_instance(self):
        clf = SoftClassifier(np.array([[0.3], [-0.2]]), np.array([0.1, 0.0]))
        x = np.array([[0.7]])
        np.testing.assert_allclose(pcc_quantify(clf, x), posteriors(clf, x)[0], atol=1e-15)


class TestAdjustment:
    def test_identity(self):
        cc = np.array([0.3, 0.5, 0.2])
        np.testing.assert_allclose(acc_quantify(np.eye(3), cc), cc, atol=1e-15)
        np.testing.assert_allclose(pacc_quantify(np.eye(3), cc), cc, atol=1e-15)

    def test_two_by_two(self):
        np.testing.assert_allclose(acc_quantify(M2, [0.62, 0.38]), [0.6, 0.4], atol=1e-12)
        np.testing.assert_allclose(pacc_quantify(M2, [0.62, 0.38]), [0.6, 0.4], atol=1e-12)

    def test_outside_cone(self):
        np.testing.assert_allclose(solve_adjustment(M2, [1.0, 0.0]), [8 / 7, -1 / 7], atol=1e-12)
        np.testing.assert_allclose(acc_quantify(M2, [1.0, 0.0]), [1.0, 0.0], atol=1e-12)

    def test_singular(self):
        M = np.array([[0.7, 0.7], [0.3, 0.3]])
        assert is_prevalence(pacc_quantify(M, [0.6, 0.4]))

    def test_inversion_identity(self):
        rng = np.random.default_rng(11)
        for trial in range(100):
            l = 2 + trial % 5
            M = random_column_stochastic(l, rng)
            p = rng.dirichlet(np.ones(l))
            np.testing.assert_allclose(acc_quantify(M, M @ p), p, atol=1e-9)
            np.testing.assert_allclose(pacc_quantify(M, M @ p), p, atol=1e-9)


class TestEMQ:
    def test_fixed_point(self):
        post = np.array([[0.7, 0.3], [0.3, 0.7]])
        np.testing.assert_allclose(emq_quantify([0.5, 0.5], post), [0.5, 0.5], atol=1e-15)

    def test_hand_iterates(self):
        trace = EmqTrace()
        emq_quantify([0.5, 0.5], np.tile([0.8, 0.2], (10, 1)), EmqOptions(), trace)
        it = np.array(trace.iterates)
        np.testing.assert_allclose(it[1], [0.8, 0.2], atol=1e-12)
        np.testing.assert_allclose(it[2], [16 / 17, 1 / 17], atol=1e-12)
        np.testing.assert_allclose(it[3], [64 / 65, 1 / 65], atol=1e-12)
        assert np.all(np.diff(it[:, 0]) > 0)

    def test_termination(self):
        trace = EmqTrace()
        opts = EmqOptions(max_iters=500, tol=1e-8)
        rng = np.random.default_rng(0)
        emq_quantify([0.3, 0.7], rng.dirichlet([1, 1], size=50), opts, trace)
        assert trace.n_iters <= opts.max_iters
        if trace.converged:
            assert np.max(np.abs(trace.iterates[-1] - trace.iterates[-2])) < opts.tol

    def test_zero_prior(self):
        with pytest.raises(ZeroTrainPrior):
            emq_quantify([1.0, 0.0], np.full((2, 2), 0.5))

    def test_bayes_posteriors(self):
        rng = np.random.default_rng(3)
        n = 10_000
        y = (rng.random(n) < 0.2).astype(int)
        x = rng.normal(np.where(y == 1, 1.0, -1.0), 1.0)
        # exact posteriors under equal priors for means -1, +1, unit variance
        p1 = 1 / (1 + np.exp(-2 * x))
        est = emq_quantify([0.5, 0.5], np.column_stack([1 - p1, p1]))
        np.testing.assert_allclose(est, [0.8, 0.2], atol=0.02)


class TestHDy:
    def test_exact_mixture(self):
        m = HdyModel({2: np.array([0.0, 1.0])}, {2: np.array([1.0, 0.0])}, (2,), 0.01)
        scores = np.r_[np.full(30, 0.2), np.full(70, 0.8)]
        np.testing.assert_allclose(hdy_quantify(m, scores), [0.3, 0.7], atol=1e-12)
        assert hdy_objective(m, 2, np.array([0.3, 0.7]), 0.7) == pytest.approx(0.0, abs=1e-7)

    def test_pure_components(self):
        rng = np.random.default_rng(0)
        pos, neg = rng.beta(5, 2, 2000), rng.beta(2, 5, 2000)
        m = HdyModel.from_scores(pos, neg)
        assert hdy_quantify(m, pos)[1] == pytest.approx(1.0)
        assert hdy_quantify(m, neg)[1] == pytest.approx(0.0)

    def test_local_minimum(self):
        rng = np.random.default_rng(1)
        m = HdyModel.from_scores(rng.beta(4, 2, 3000), rng.beta(2, 4, 3000))
        bag = np.r_[rng.beta(4, 2, 130), rng.beta(2, 4, 170)]
        for nb, p in hdy_argmins(m, bag).items():
            h = density_histogram(bag, nb)
            f = hdy_objective(m, nb, h, p)
            for q in (p - 0.01, p + 0.01):
                if 0 <= q <= 1:
                    assert f <= hdy_objective(m, nb, h, q) + 1e-12

    def test_not_binary(self):
        m = HdyModel.from_scores([0.9], [0.1], (10,))
        with pytest.raises(NotBinary):
            hdy_quantify(m, np.full((3, 3), 1 / 3))
        with pytest.raises(NotBinary):
            make_aggregative("HDy").fit(LabeledDataset(np.arange(6.0)[:, None], [0, 1, 2] * 2, 3))


@pytest.fixture(scope="module")
def setup():
    D = two_gaussians(3, 2.0, 300, 0)
    T = app_generate(two_gaussians(3, 2.0, 1000, 1), AppConfig(200, 10, 2))
    return D, T


class TestQuantifierObjects:
    @pytest.mark.parametrize("name", AGGREGATIVE_METHODS)
    def test_outputs_on_simplex(self, setup, name):
        D, T = setup
        q = make_aggregative(name).fit(D)
        for bag in T.bags:
            assert is_prevalence(q.quantify(bag))

    def test_fixed_confusion(self):
        q = ACC(confusion=np.eye(2)).fit(two_gaussians(2, 3.0, 50, 0))
        np.testing.assert_array_equal(q.confusion, np.eye(2))

    def test_emq_names(self):
        assert make_aggregative("EMQ-BCTS").name == "EMQ-BCTS"
        assert make_aggregative("EMQ").name == "EMQ-NoCalib"
        assert isinstance(make_aggregative("emq-bcts"), EMQ)

    def test_unknown(self):
        with pytest.raises(KeyError):
            make_aggregative("QuaNet")
