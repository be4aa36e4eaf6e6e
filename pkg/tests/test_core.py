from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symquant.core import (BagDataset, EmptyInput, LabeledDataset, LengthMismatch, NegativeEntry,
                           NonPositiveEpsilon, NotADensity, SumOutOfTolerance, ZeroMass,
                           absolute_error, default_epsilon, empirical_prevalence,
                           hellinger_distance, is_prevalence, make_prevalence,
                           relative_absolute_error, smooth)


def rae_oracle(p, q, eps):
    """Exact rational evaluation of the smoothed relative absolute error."""
    p = [Fraction(v) for v in p]
    q = [Fraction(v) for v in q]
    eps = Fraction(eps)
    l = len(p)

    def d(v):
        return (v + eps) / (l * eps + 1)

    return float(sum(abs(d(a) - d(b)) / d(a) for a, b in zip(p, q)) / l)


simplex = st.integers(2, 6).flatmap(
    lambda l: st.lists(st.floats(0.01, 1.0), min_size=l, max_size=l)).map(
    lambda v: np.asarray(v) / np.sum(v))


class TestMakePrevalence:
    def test_on_simplex(self):
        np.testing.assert_array_equal(make_prevalence([0.5, 0.5]), [0.5, 0.5])

    def test_renormalises_counts(self):
        np.testing.assert_allclose(make_prevalence([1, 1, 2], renormalize_any=True),
                                   [0.25, 0.25, 0.5], atol=0)

    def test_counts_rejected_without_flag(self):
        with pytest.raises(SumOutOfTolerance):
            make_prevalence([1, 1, 2])

    def test_small_drift_absorbed(self):
        p = make_prevalence([0.5, 0.5 + 5e-7])
        assert p.sum() == pytest.approx(1.0, abs=1e-15)

    def test_large_drift_rejected(self):
        with pytest.raises(SumOutOfTolerance):
            make_prevalence([0.5, 0.6])

    def test_negative(self):
        with pytest.raises(NegativeEntry):
            make_prevalence([-0.1, 1.1])

    def test_zero_mass(self):
        with pytest.raises(ZeroMass):
            make_prevalence([0.0, 0.0])

    def test_result_read_only(self):
        p = make_prevalence([0.3, 0.7])
        with pytest.raises(ValueError):
            p[0] = 1.0


class TestEmpiricalPrevalence:
    @pytest.mark.parametrize("labels,l,expected", [
        ((0, 0, 1, 1), 2, (0.5, 0.5)),
        ((0, 0, 0), 2, (1.0, 0.0)),
        ((2, 0, 2, 2), 3, (0.25, 0.0, 0.75)),
    ])
    def test_examples(self, labels, l, expected):
        np.testing.assert_allclose(empirical_prevalence(labels, l), expected, atol=1e-15)

    def test_empty(self):
        with pytest.raises(EmptyInput):
            empirical_prevalence([], 2)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            empirical_prevalence([0, 3], 2)


class TestAbsoluteError:
    @pytest.mark.parametrize("p,q,expected", [
        ((0.5, 0.5), (0.5, 0.5), 0.0),
        ((0.7, 0.3), (0.6, 0.4), 0.1),
        ((1.0, 0.0), (0.0, 1.0), 1.0),
    ])
    def test_examples(self, p, q, expected):
        assert absolute_error(p, q) == pytest.approx(expected, abs=1e-9)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            absolute_error([0.5, 0.5], [1.0, 0.0, 0.0])

    @given(simplex, st.integers(0, 2**31))
    def test_symmetric(self, p, seed):
        q = np.random.default_rng(seed).dirichlet(np.ones(len(p)))
        assert absolute_error(p, q) == absolute_error(q, p)


class TestRelativeAbsoluteError:
    def test_boundary_example(self):
        # one class absent from the true bag; bag size 250
        got = relative_absolute_error([0.0, 1.0], [0.01, 0.99], 0.002)
        assert got == pytest.approx(rae_oracle([0, 1], ["0.01", "0.99"], "0.002"), abs=1e-9)
        assert got == pytest.approx(2.5049900199600796, abs=1e-9)

    def test_interior_example(self):
        eps = 0.002
        d = lambda v: (v + eps) / (2 * eps + 1)  # noqa: E731
        expected = 0.5 * (abs(d(0.5) - d(0.6)) / d(0.5) + abs(d(0.5) - d(0.4)) / d(0.5))
        assert relative_absolute_error([0.5, 0.5], [0.6, 0.4], eps) == pytest.approx(expected, abs=1e-12)

    def test_not_symmetric(self):
        p, q = [0.9, 0.1], [0.5, 0.5]
        assert relative_absolute_error(p, q, 0.01) != pytest.approx(relative_absolute_error(q, p, 0.01))

    def test_eps_must_be_positive(self):
        with pytest.raises(NonPositiveEpsilon):
            relative_absolute_error([0.5, 0.5], [0.5, 0.5], 0.0)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            relative_absolute_error([0.5, 0.5], [1.0], 0.1)

    def test_default_epsilon(self):
        assert default_epsilon(250) == 0.002

    def test_smooth_stays_on_simplex(self):
        assert is_prevalence(smooth(np.array([0.0, 0.25, 0.75]), 0.01))

    def test_zero_on_identity(self):
        rng = np.random.default_rng(0)
        for l in (2, 3, 5):
            for p in rng.dirichlet(np.ones(l), size=334):
                assert relative_absolute_error(p, p, 0.001) == 0.0
                assert absolute_error(p, p) == 0.0


class TestHellinger:
    def test_identity(self):
        assert hellinger_distance([0.5, 0.5], [0.5, 0.5]) == 0.0

    def test_disjoint(self):
        assert hellinger_distance([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0, abs=1e-15)

    def test_rejects_non_density(self):
        with pytest.raises(NotADensity):
            hellinger_distance([0.5, 0.6], [0.5, 0.5])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            hellinger_distance([1.0], [0.5, 0.5])

    def test_triangle_inequality(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            a, b, c = rng.dirichlet(np.ones(7), size=3)
            assert hellinger_distance(a, c) <= hellinger_distance(a, b) + hellinger_distance(b, c) + 1e-9

    @settings(max_examples=50)
    @given(simplex)
    def test_range(self, p):
        q = np.roll(p, 1)
        assert 0.0 <= hellinger_distance(p, q) <= 1.0


class TestDatasets:
    def test_labeled_lengths(self):
        with pytest.raises(LengthMismatch):
            LabeledDataset(np.zeros((3, 2)), [0, 1], 2)

    def test_labeled_label_range(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((2, 2)), [0, 2], 2)

    def test_labeled_prevalence(self):
        D = LabeledDataset(np.zeros((4, 1)), [0, 1, 1, 1], 2)
        np.testing.assert_allclose(D.prevalence(), [0.25, 0.75])
        assert D.subset([0, 1]).n_features == 1

    def test_bag_dataset_validates(self):
        with pytest.raises(LengthMismatch):
            BagDataset([np.zeros((3, 2))], [[0.5, 0.5], [0.5, 0.5]], 2)
        with pytest.raises(EmptyInput):
            BagDataset([np.zeros((0, 2))], [[0.5, 0.5]], 2)

    def test_bag_dataset_subset_keeps_ids(self):
        B = BagDataset([np.zeros((2, 1)), np.ones((3, 1))], [[1, 0], [0, 1]], 2, ids=["a", "b"])
        sub = B.subset([1])
        assert sub.ids == ["b"]
        np.testing.assert_array_equal(sub.prevalences, [[0.0, 1.0]])
