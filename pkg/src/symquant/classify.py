"""Multinomial logistic regression, cross-validated posteriors and
bias-corrected temperature scaling."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from .core import LabeledDataset


class DegenerateData(ValueError):
    pass


class DegenerateLabels(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class TooFewInstances(ValueError):
    pass


class NoConvergence(UserWarning):
    pass


@dataclass(frozen=True)
class TrainOptions:
    l2_lambda: float = 1e-4
    max_iters: int = 10000
    grad_tol: float = 1e-5
    learning_rate: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class Calibration:
    temperature: float = 1.0
    bias: Optional[np.ndarray] = None


@dataclass(frozen=True)
class SoftClassifier:
    weights: np.ndarray  # (l, d)
    biases: np.ndarray  # (l,)
    calibration: Optional[Calibration] = None
    converged: bool = True
    loss_history: Tuple[float, ...] = ()

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def logits(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None] if self.n_features == 1 else X[None, :]
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        return X @ self.weights.T + self.biases

    def with_calibration(self, cal: Optional[Calibration]) -> "SoftClassifier":
        return replace(self, calibration=cal)


def calibrated_scores(z: np.ndarray, cal: Optional[Calibration]) -> np.ndarray:
    if cal is None:
        return z
    out = z / cal.temperature
    if cal.bias is not None:
        out = out + cal.bias
    return out


def posteriors(clf: SoftClassifier, X) -> np.ndarray:
    """Row-wise softmax of the (optionally calibrated) logits."""
    z = clf.logits(X)
    if clf.calibration is not None:
        z = calibrated_scores(z, clf.calibration)
    return softmax(z, axis=1)


def predict(clf: SoftClassifier, X) -> np.ndarray:
    return np.argmax(clf.logits(X) if clf.calibration is None else posteriors(clf, X), axis=1)


def gradient_descent(fun: Callable[[np.ndarray], Tuple[float, np.ndarray]], x0: np.ndarray,
                     step: float = 1.0, grad_tol: float = 1e-5, max_iters: int = 10000,
                     precond: Optional[np.ndarray] = None):
    """Full-batch gradient descent with Armijo backtracking.

    The trial step grows by 2x after every accepted step and halves on
    rejection, so the loss sequence is non-increasing. ``precond`` is an
    optional positive diagonal scaling of the gradient.
    Returns ``(x, history, converged)``.
    """
    x = np.array(x0, dtype=np.float64)
    P = np.ones_like(x) if precond is None else np.asarray(precond, dtype=np.float64)
    f, g = fun(x)
    history = [f]
    for _ in range(max_iters):
        if np.max(np.abs(g)) <= grad_tol:
            return x, history, True
        d = P * g
        slope = float(g @ d)
        while True:
            x_new = x - step * d
            f_new, g_new = fun(x_new)
            if f_new <= f - 0.5 * step * slope:
                break
            step *= 0.5
            if step < 1e-20:
                return x, history, False
        x, f, g = x_new, f_new, g_new
        history.append(f)
        step *= 2.0
    return x, history, bool(np.max(np.abs(g)) <= grad_tol)


def _onehot(y, l):
    Y = np.zeros((len(y), l))
    Y[np.arange(len(y)), y] = 1.0
    return Y


def train_logreg(data: LabeledDataset, opts: TrainOptions = TrainOptions()) -> SoftClassifier:
    """Fit an L2-regularised softmax regression (biases unpenalised).

    Objective: mean cross-entropy + ``lambda / 2 * ||W||^2``.
    """
    l, d = data.n_classes, data.n_features
    present = np.unique(data.y)
    if present.size < 2:
        raise DegenerateData("need at least two classes present")
    if present.size < l:
        raise DegenerateData(f"classes {sorted(set(range(l)) - set(present.tolist()))} absent")
    X, Y = data.X, _onehot(data.y, l)
    n, lam = len(data), opts.l2_lambda

    def fun(theta):
        W = theta[: l * d].reshape(l, d)
        b = theta[l * d:]
        Z = X @ W.T + b
        logp = log_softmax(Z, axis=1)
        loss = -np.sum(Y * logp) / n + 0.5 * lam * np.sum(W * W)
        R = (np.exp(logp) - Y) / n
        gW = R.T @ X + lam * W
        gb = R.sum(axis=0)
        return loss, np.concatenate([gW.ravel(), gb])

    # zero start; the seed only matters for tie-breaking elsewhere, the problem is convex
    theta0 = np.zeros(l * d + l)
    # diagonal curvature bound of the objective: softmax Hessian <= 1/4 per logit
    hw = np.tile(0.25 * np.mean(X * X, axis=0) + lam, l)
    precond = 0.25 / np.concatenate([np.maximum(hw, 1e-12), np.full(l, 0.25)])
    theta, hist, ok = gradient_descent(fun, theta0, opts.learning_rate, opts.grad_tol,
                                       opts.max_iters, precond)
    if not ok:
        warnings.warn("logistic regression stopped before reaching grad_tol", NoConvergence)
    return SoftClassifier(theta[: l * d].reshape(l, d), theta[l * d:], None, ok, tuple(hist))


def stratified_folds(y, k: int, seed: int = 0) -> np.ndarray:
    """Fold id per instance; each class is spread round-robin over folds."""
    y = np.asarray(y)
    if k < 2:
        raise ValueError("need k >= 2 folds")
    if k > len(y):
        raise TooFewInstances(f"{len(y)} instances cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    folds = np.empty(len(y), dtype=np.int64)
    offset = 0
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        folds[idx] = (np.arange(idx.size) + offset) % k
        offset += idx.size
    return folds


def crossval_posteriors(data: LabeledDataset, k: int = 5, opts: TrainOptions = TrainOptions(),
                        return_logits: bool = False, folds: Optional[np.ndarray] = None):
    """Out-of-fold posteriors: row ``i`` comes from a model that never saw ``i``.

    Stratified folds only guarantee class coverage of every training part when
    each class has more than one instance; otherwise
    :class:`TooFewInstances` is raised.
    """
    if folds is None:
        folds = stratified_folds(data.y, k, opts.seed)
    else:
        folds = np.asarray(folds, dtype=np.int64)
        k = int(folds.max()) + 1
    out = np.empty((len(data), data.n_classes))
    logits = np.empty_like(out)
    for f in range(k):
        test = folds == f
        train = data.subset(~test)
        if np.unique(train.y).size < data.n_classes:
            raise TooFewInstances(f"fold {f} leaves a class without training instances")
        clf = train_logreg(train, opts)
        logits[test] = clf.logits(data.X[test])
        out[test] = softmax(logits[test], axis=1)
    return (out, logits, folds) if return_logits else out


def calibrate_bcts(logits, labels, tol: float = 1e-6, max_iters: int = 20000) -> Calibration:
    """Fit ``softmax(z / T + b)`` to held-out labels by minimising the NLL.

    Optimised over ``(1/T, b)``, in which the NLL is convex; ``b`` is
    centred (softmax is shift invariant).
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n, l = z.shape
    counts = np.bincount(y, minlength=l)
    if np.any(counts == 0):
        raise DegenerateLabels("every class needs at least one held-out instance")
    Y = _onehot(y, l)

    def fun(theta):
        a, b = theta[0], theta[1:]
        logp = log_softmax(a * z + b, axis=1)
        R = (np.exp(logp) - Y) / n
        return -np.sum(Y * logp) / n, np.concatenate([[np.sum(R * z)], R.sum(axis=0)])

    theta, _, ok = gradient_descent(fun, np.concatenate([[1.0], np.zeros(l)]), 1.0, tol, max_iters)
    if not ok:
        warnings.warn("BCTS calibration stopped before reaching tolerance", NoConvergence)
    a = theta[0]
    if a <= 0:
        raise DegenerateLabels("held-out logits are anti-correlated with labels")
    b = theta[1:] - theta[1:].mean()
    return Calibration(float(1.0 / a), b)
