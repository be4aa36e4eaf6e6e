"""Classical (asymmetric) quantifiers built on a soft classifier.

Every quantifier follows the same two-phase protocol: ``fit`` on a
:class:`~symquant.core.LabeledDataset`, then ``quantify`` one bag at a time.
The functional forms (``cc_quantify``, ``acc_quantify``...) are exposed as
well, since the benchmark and tests need to drive them with fixed inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .classify import (SoftClassifier, TrainOptions, calibrate_bcts,
                       crossval_posteriors, posteriors, stratified_folds, train_logreg)
from .core import LabeledDataset, as_bag, hellinger_distance, make_prevalence, normalize_counts


class ClassAbsent(ValueError):
    pass


class ZeroTrainPrior(ValueError):
    pass


class NotBinary(ValueError):
    pass


def project_to_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-and-threshold)."""
    v = np.asarray(v, dtype=np.float64).ravel()
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / ks > 0)[-1]
    theta = css[rho] / (rho + 1.0)
    return make_prevalence(np.maximum(v - theta, 0.0), renormalize_any=True)


# -- matrix estimation ---------------------------------------------------------

def confusion_from_predictions(y_true, pred, n_classes: int, soft: bool = False) -> np.ndarray:
    """Column-stochastic ``M[i, j] = P(pred = i | true = j)``.

    ``pred`` holds class indices (hard) or posterior rows (soft).
    """
    y_true = np.asarray(y_true)
    M = np.zeros((n_classes, n_classes))
    for j in range(n_classes):
        mask = y_true == j
        if not mask.any():
            raise ClassAbsent(f"class {j} has no instances")
        if soft:
            M[:, j] = np.asarray(pred)[mask].mean(axis=0)
        else:
            M[:, j] = np.bincount(np.asarray(pred)[mask], minlength=n_classes) / mask.sum()
    M /= M.sum(axis=0, keepdims=True)
    return M


def estimate_confusion(data: LabeledDataset, clf: Optional[SoftClassifier] = None,
                       mode: str = "hard", k: int = 5,
                       opts: TrainOptions = TrainOptions(),
                       cv_posteriors: Optional[np.ndarray] = None) -> np.ndarray:
    """Misclassification matrix from out-of-fold predictions.

    ``clf`` is accepted for interface symmetry but the matrix always comes
    from ``k`` fold models (``cv_posteriors`` may be passed to reuse them).
    """
    if cv_posteriors is None:
        cv_posteriors = crossval_posteriors(data, k, opts)
    if mode == "hard":
        return confusion_from_predictions(data.y, cv_posteriors.argmax(axis=1), data.n_classes)
    if mode == "soft":
        return confusion_from_predictions(data.y, cv_posteriors, data.n_classes, soft=True)
    raise ValueError(f"unknown mode {mode!r}")


# -- aggregation functions -------------------------------------------------------

def cc_from_predictions(pred, n_classes: int) -> np.ndarray:
    return normalize_counts(np.bincount(np.asarray(pred), minlength=n_classes))


def cc_quantify(clf: SoftClassifier, bag) -> np.ndarray:
    bag = as_bag(bag)
    return cc_from_predictions(posteriors(clf, bag).argmax(axis=1), clf.n_classes)


def pcc_from_posteriors(post) -> np.ndarray:
    return normalize_counts(np.asarray(post).mean(axis=0))


def pcc_quantify(clf: SoftClassifier, bag) -> np.ndarray:
    return pcc_from_posteriors(posteriors(clf, as_bag(bag)))


def solve_adjustment(M, estimate) -> np.ndarray:
    """Raw least-squares solution of ``M p = estimate`` (pseudo-inverse)."""
    sol, *_ = np.linalg.lstsq(np.asarray(M, dtype=np.float64),
                              np.asarray(estimate, dtype=np.float64), rcond=None)
    return sol


def acc_quantify(M, cc_estimate) -> np.ndarray:
    return project_to_simplex(solve_adjustment(M, cc_estimate))


def pacc_quantify(M_soft, pcc_estimate) -> np.ndarray:
    return project_to_simplex(solve_adjustment(M_soft, pcc_estimate))


@dataclass(frozen=True)
class EmqOptions:
    max_iters: int = 1000
    tol: float = 1e-6
    use_calibration: bool = False


@dataclass
class EmqTrace:
    iterates: List[np.ndarray] = field(default_factory=list)
    converged: bool = False

    @property
    def n_iters(self) -> int:
        return len(self.iterates) - 1


def emq_quantify(train_prior, post, opts: EmqOptions = EmqOptions(),
                 trace: Optional[EmqTrace] = None) -> np.ndarray:
    """Expectation-maximisation prior adjustment.

    E-step rescales each posterior row by ``p_t / p_train`` and renormalises;
    M-step sets ``p_{t+1}`` to the mean of the rescaled rows. ``p_0`` is the
    training prior.
    """
    tr = np.asarray(train_prior, dtype=np.float64)
    if np.any(tr <= 0):
        raise ZeroTrainPrior("training prior must be strictly positive")
    S = np.asarray(post, dtype=np.float64)
    p = tr.copy()
    if trace is not None:
        trace.iterates.append(p.copy())
    for _ in range(opts.max_iters):
        W = S * (p / tr)
        W /= W.sum(axis=1, keepdims=True)
        p_new = W.mean(axis=0)
        delta = np.max(np.abs(p_new - p))
        p = p_new
        if trace is not None:
            trace.iterates.append(p.copy())
        if delta < opts.tol:
            if trace is not None:
                trace.converged = True
            break
    return normalize_counts(p)


# -- HDy -------------------------------------------------------------------------

DEFAULT_BINS = tuple(range(10, 111, 10))
POSITIVE = 1


def density_histogram(values, n_bins: int) -> np.ndarray:
    h, _ = np.histogram(np.clip(values, 0.0, 1.0), bins=n_bins, range=(0.0, 1.0))
    total = h.sum()
    return h / total if total else np.full(n_bins, 1.0 / n_bins)


@dataclass(frozen=True)
class HdyModel:
    pos_histograms: Dict[int, np.ndarray]
    neg_histograms: Dict[int, np.ndarray]
    bin_counts: Sequence[int] = DEFAULT_BINS
    grid_step: float = 0.01

    @classmethod
    def from_scores(cls, pos_scores, neg_scores, bin_counts=DEFAULT_BINS, grid_step=0.01):
        """Build from positive-class posteriors of positive / negative instances."""
        bin_counts = tuple(int(b) for b in bin_counts)
        return cls({b: density_histogram(pos_scores, b) for b in bin_counts},
                   {b: density_histogram(neg_scores, b) for b in bin_counts},
                   bin_counts, grid_step)

    def grid(self) -> np.ndarray:
        steps = int(round(1.0 / self.grid_step))
        return np.linspace(0.0, 1.0, steps + 1)


def hdy_objective(model: HdyModel, n_bins: int, bag_hist, p: float) -> float:
    mix = p * model.pos_histograms[n_bins] + (1.0 - p) * model.neg_histograms[n_bins]
    return hellinger_distance(mix, bag_hist)


def hdy_argmins(model: HdyModel, bag_scores) -> Dict[int, float]:
    grid = model.grid()
    out = {}
    for b in model.bin_counts:
        bh = density_histogram(bag_scores, b)
        P, N = model.pos_histograms[b], model.neg_histograms[b]
        mix = grid[:, None] * P + (1.0 - grid[:, None]) * N
        hd = np.sqrt(np.sum((np.sqrt(mix) - np.sqrt(bh)) ** 2, axis=1) / 2.0)
        out[b] = float(grid[int(np.argmin(hd))])
    return out


def hdy_quantify(model: HdyModel, bag_scores) -> np.ndarray:
    """Median over bin counts of the grid point minimising the Hellinger
    distance between the training mixture and the bag histogram.

    ``bag_scores`` are positive-class (index 1) posteriors.
    """
    scores = np.asarray(bag_scores, dtype=np.float64)
    if scores.ndim == 2:
        if scores.shape[1] != 2:
            raise NotBinary("HDy handles two classes only")
        scores = scores[:, POSITIVE]
    p = float(np.median(list(hdy_argmins(model, scores).values())))
    return make_prevalence([1.0 - p, p])


# -- quantifier objects ------------------------------------------------------------

class AggregativeQuantifier:
    """Shared fit logic: one classifier trained on all of D."""

    name = "base"

    def __init__(self, opts: TrainOptions = TrainOptions(), k: int = 5):
        self.opts = opts
        self.k = k
        self.classifier: Optional[SoftClassifier] = None

    def fit(self, data: LabeledDataset):
        self.n_classes = data.n_classes
        self.classifier = train_logreg(data, self.opts)
        self._fit_aggregation(data)
        return self

    def _fit_aggregation(self, data: LabeledDataset):
        pass

    def quantify(self, bag) -> np.ndarray:
        raise NotImplementedError


class CC(AggregativeQuantifier):
    name = "CC"

    def quantify(self, bag):
        return cc_quantify(self.classifier, bag)


class PCC(AggregativeQuantifier):
    name = "PCC"

    def quantify(self, bag):
        return pcc_quantify(self.classifier, bag)


class ACC(AggregativeQuantifier):
    name = "ACC"
    mode = "hard"

    def __init__(self, opts=TrainOptions(), k=5, confusion=None):
        super().__init__(opts, k)
        self.confusion = None if confusion is None else np.asarray(confusion, dtype=np.float64)
        self._fixed = confusion is not None

    def _fit_aggregation(self, data):
        if not self._fixed:
            self.confusion = estimate_confusion(data, mode=self.mode, k=self.k, opts=self.opts)

    def quantify(self, bag):
        return acc_quantify(self.confusion, cc_quantify(self.classifier, bag))


class PACC(ACC):
    name = "PACC"
    mode = "soft"

    def quantify(self, bag):
        return pacc_quantify(self.confusion, pcc_quantify(self.classifier, bag))


class EMQ(AggregativeQuantifier):
    """EM prior adjustment; with ``use_calibration`` the classifier is fit on
    a stratified 80% of D and BCTS-calibrated on the remaining 20%."""

    def __init__(self, opts=TrainOptions(), k=5, emq: EmqOptions = EmqOptions(),
                 holdout: float = 0.2):
        super().__init__(opts, k)
        self.emq = emq
        self.holdout = holdout

    @property
    def name(self):
        return "EMQ-BCTS" if self.emq.use_calibration else "EMQ-NoCalib"

    def fit(self, data: LabeledDataset):
        self.n_classes = data.n_classes
        if not self.emq.use_calibration:
            self.classifier = train_logreg(data, self.opts)
            self.train_prior = np.asarray(data.prevalence())
            return self
        k = max(2, int(round(1.0 / self.holdout)))
        held = stratified_folds(data.y, k, self.opts.seed) == 0
        fit_part = data.subset(~held)
        clf = train_logreg(fit_part, self.opts)
        cal = calibrate_bcts(clf.logits(data.X[held]), data.y[held])
        self.classifier = clf.with_calibration(cal)
        self.train_prior = np.asarray(fit_part.prevalence())
        return self

    def quantify(self, bag):
        return emq_quantify(self.train_prior, posteriors(self.classifier, as_bag(bag)), self.emq)


class HDy(AggregativeQuantifier):
    name = "HDy"

    def __init__(self, opts=TrainOptions(), k=5, bin_counts=DEFAULT_BINS, grid_step=0.01):
        super().__init__(opts, k)
        self.bin_counts = bin_counts
        self.grid_step = grid_step

    def fit(self, data: LabeledDataset):
        if data.n_classes != 2:
            raise NotBinary("HDy handles two classes only")
        return super().fit(data)

    def _fit_aggregation(self, data):
        cv = crossval_posteriors(data, self.k, self.opts)[:, POSITIVE]
        self.model = HdyModel.from_scores(cv[data.y == POSITIVE], cv[data.y != POSITIVE],
                                          self.bin_counts, self.grid_step)

    def quantify(self, bag):
        return hdy_quantify(self.model, posteriors(self.classifier, as_bag(bag))[:, POSITIVE])


def make_aggregative(name: str, opts: TrainOptions = TrainOptions(), k: int = 5, **kw):
    key = name.upper().replace("_", "-")
    if key == "CC":
        return CC(opts, k)
    if key == "PCC":
        return PCC(opts, k)
    if key == "ACC":
        return ACC(opts, k, kw.get("confusion"))
    if key == "PACC":
        return PACC(opts, k, kw.get("confusion"))
    if key in ("EMQ", "EMQ-NOCALIB"):
        return EMQ(opts, k, EmqOptions(use_calibration=False))
    if key == "EMQ-BCTS":
        return EMQ(opts, k, EmqOptions(use_calibration=True))
    if key == "HDY":
        return HDy(opts, k, kw.get("bin_counts", DEFAULT_BINS), kw.get("grid_step", 0.01))
    raise KeyError(f"unknown aggregative method {name!r}")


AGGREGATIVE_METHODS = ("CC", "PCC", "ACC", "PACC", "EMQ-NoCalib", "EMQ-BCTS", "HDy")
