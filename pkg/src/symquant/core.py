"""Shared domain types, prevalence validation and evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SIMPLEX_ATOL = 1e-9
RENORM_TOL = 1e-6


class PrevalenceError(ValueError):
    """Base class for invalid prevalence vectors."""


class NegativeEntry(PrevalenceError):
    pass


class ZeroMass(PrevalenceError):
    pass


class SumOutOfTolerance(PrevalenceError):
    pass


class EmptyInput(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class NonPositiveEpsilon(ValueError):
    pass


class NotADensity(ValueError):
    pass


def make_prevalence(values, renormalize_any: bool = False) -> np.ndarray:
    """Validate ``values`` as a point of the probability simplex.

    Small drift (up to 1e-6 in the total mass) is absorbed by renormalizing;
    anything larger raises :class:`SumOutOfTolerance` unless
    ``renormalize_any`` is set, in which case any non-negative vector with
    positive mass is normalized (used for count vectors).

    The returned array is float64 and read-only.
    """
    p = np.array(values, dtype=np.float64).ravel()
    if p.size == 0:
        raise EmptyInput("prevalence vector is empty")
    if not np.all(np.isfinite(p)):
        raise PrevalenceError("prevalence contains non-finite entries")
    if np.any(p < 0):
        raise NegativeEntry(f"negative entry in {p.tolist()}")
    total = p.sum()
    if total <= 0:
        raise ZeroMass("prevalence has zero total mass")
    if not renormalize_any and abs(total - 1.0) > RENORM_TOL:
        raise SumOutOfTolerance(f"entries sum to {total!r}, expected 1")
    p = p / total
    p.flags.writeable = False
    return p


def normalize_counts(counts) -> np.ndarray:
    """Counts (or any non-negative mass vector) -> prevalence."""
    return make_prevalence(counts, renormalize_any=True)


def is_prevalence(p, atol: float = SIMPLEX_ATOL) -> bool:
    p = np.asarray(p, dtype=np.float64)
    return bool(p.ndim == 1 and p.size > 0 and np.all(p >= 0) and np.all(p <= 1)
                and abs(p.sum() - 1.0) <= atol)


def empirical_prevalence(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size == 0:
        raise EmptyInput("no labels")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes})")
    counts = np.bincount(labels, minlength=n_classes)
    return normalize_counts(counts)


@dataclass(frozen=True)
class LabeledDataset:
    """Instances with one class label each (the classical training regime)."""

    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=np.int64).ravel()
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise LengthMismatch(f"{X.shape[0]} instances but {y.shape[0]} labels")
        if not np.all(np.isfinite(X)):
            raise ValueError("instances contain non-finite features")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.y.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def prevalence(self) -> np.ndarray:
        return empirical_prevalence(self.y, self.n_classes)

    def counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.X[idx], self.y[idx], self.n_classes)


def as_bag(instances) -> np.ndarray:
    """Check and return a bag as an ``(n, d)`` float64 array, ``n >= 1``."""
    B = np.asarray(instances, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    if B.ndim != 2 or B.shape[0] < 1:
        raise EmptyInput("a bag needs at least one instance")
    if not np.all(np.isfinite(B)):
        raise ValueError("bag contains non-finite features")
    return B


@dataclass(frozen=True)
class BagDataset:
    """Bags of instances, each labelled by its class prevalence."""

    bags: Sequence[np.ndarray]
    prevalences: np.ndarray
    n_classes: int
    ids: Sequence = field(default=None)

    def __post_init__(self):
        bags = [as_bag(b) for b in self.bags]
        prevs = np.asarray(self.prevalences, dtype=np.float64)
        if prevs.ndim == 1 and len(bags) == 1:
            prevs = prevs[None, :]
        if len(bags) != prevs.shape[0]:
            raise LengthMismatch(f"{len(bags)} bags but {prevs.shape[0]} prevalences")
        if prevs.shape[1] != self.n_classes:
            raise LengthMismatch(f"prevalences have {prevs.shape[1]} entries, expected {self.n_classes}")
        if bags and len({b.shape[1] for b in bags}) != 1:
            raise ValueError("bags differ in feature dimension")
        prevs = np.stack([make_prevalence(p) for p in prevs]) if len(bags) else prevs
        ids = list(range(len(bags))) if self.ids is None else list(self.ids)
        object.__setattr__(self, "bags", bags)
        object.__setattr__(self, "prevalences", prevs)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return len(self.bags)

    @property
    def n_features(self) -> int:
        return self.bags[0].shape[1]

    def subset(self, idx) -> "BagDataset":
        idx = list(idx)
        return BagDataset([self.bags[i] for i in idx], self.prevalences[idx],
                          self.n_classes, [self.ids[i] for i in idx])


def _check_pair(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise LengthMismatch(f"shapes {p.shape} and {q.shape} differ")
    return p, q


def absolute_error(p, q) -> float:
    """Mean over classes of ``|p_c - q_c|``."""
    p, q = _check_pair(p, q)
    return float(np.mean(np.abs(p - q)))


def smooth(p, eps: float) -> np.ndarray:
    """Additive smoothing ``(p + eps) / (l * eps + 1)``."""
    p = np.asarray(p, dtype=np.float64)
    return (p + eps) / (p.shape[-1] * eps + 1.0)


def default_epsilon(bag_size: int) -> float:
    """Smoothing factor ``1 / (2 |B|)``."""
    return 1.0 / (2.0 * bag_size)


def relative_absolute_error(p, q, eps: float) -> float:
    """Smoothed relative absolute error of estimate ``q`` against truth ``p``.

    Both vectors are smoothed; the ratio is taken over the smoothed true
    value, so the measure is not symmetric.
    """
    p, q = _check_pair(p, q)
    if not eps > 0:
        raise NonPositiveEpsilon(f"eps must be positive, got {eps}")
    sp, sq = smooth(p, eps), smooth(q, eps)
    return float(np.mean(np.abs(sp - sq) / sp))


def _check_density(h, atol=1e-6):
    h = np.asarray(h, dtype=np.float64)
    if np.any(h < 0) or abs(h.sum() - 1.0) > atol:
        raise NotADensity("histogram must be non-negative and sum to 1")
    return h


def hellinger_distance(h1, h2) -> float:
    """Discrete Hellinger distance ``||sqrt(h1) - sqrt(h2)||_2 / sqrt(2)``, in [0, 1]."""
    h1, h2 = _check_pair(h1, h2)
    _check_density(h1)
    _check_density(h2)
    return float(np.sqrt(np.sum((np.sqrt(h1) - np.sqrt(h2)) ** 2) / 2.0))
