"""Bag generation: uniform simplex draws, the artificial-prevalence protocol,
the bag mixer augmentation and synthetic Gaussian data."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .core import BagDataset, LabeledDataset, make_prevalence


class MissingClass(ValueError):
    pass


class EmptySource(ValueError):
    pass


class BadSpec(ValueError):
    pass


@dataclass(frozen=True)
class AppConfig:
    bag_size: int
    bag_count: int
    seed: int = 0

    def __post_init__(self):
        if self.bag_size < 1 or self.bag_count < 1:
            raise ValueError("bag_size and bag_count must be positive")


@dataclass(frozen=True)
class MixerConfig:
    real_proportion: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.real_proportion <= 1.0:
            raise ValueError("real_proportion must lie in [0, 1]")


def kraemer_from_uniforms(u) -> np.ndarray:
    """Successive differences of the sorted draws bracketed by 0 and 1."""
    u = np.sort(np.asarray(u, dtype=np.float64).ravel())
    return np.diff(np.concatenate(([0.0], u, [1.0])))


def kraemer_sample(n_classes: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one prevalence vector uniformly from the simplex."""
    if n_classes < 1:
        raise ValueError("need at least one class")
    return make_prevalence(kraemer_from_uniforms(rng.uniform(size=n_classes - 1)))


def apportion(p, m: int) -> np.ndarray:
    """Largest-remainder apportionment of ``m`` items according to ``p``.

    Ties in the remainder go to the lower class index.
    """
    p = np.asarray(p, dtype=np.float64)
    quota = m * p
    counts = np.floor(quota).astype(np.int64)
    short = m - counts.sum()
    if short > 0:
        rem = quota - counts
        # stable sort on -rem keeps the lower index first among ties
        order = np.argsort(-rem, kind="stable")
        counts[order[:short]] += 1
    return counts


def sample_bag_at(data: LabeledDataset, counts, rng: np.random.Generator,
                  by_class: Sequence[np.ndarray] | None = None) -> np.ndarray:
    """Draw ``counts[c]`` instances of each class ``c`` with replacement."""
    if by_class is None:
        by_class = [np.flatnonzero(data.y == c) for c in range(data.n_classes)]
    idx = np.concatenate([rng.choice(pool, size=int(k), replace=True) if k else pool[:0]
                          for pool, k in zip(by_class, counts)])
    idx = rng.permutation(idx)
    return data.X[idx]


def app_generate(data: LabeledDataset, cfg: AppConfig,
                 rng: np.random.Generator | None = None) -> BagDataset:
    """Artificial-prevalence protocol.

    Each bag's target prevalence is a uniform simplex draw; class counts are
    apportioned from it and instances drawn per class with replacement. The
    bag label is the achieved proportion ``counts / bag_size``.
    """
    l = data.n_classes
    by_class = [np.flatnonzero(data.y == c) for c in range(l)]
    missing = [c for c, pool in enumerate(by_class) if pool.size == 0]
    if missing:
        raise MissingClass(f"classes {missing} have no instances")
    if cfg.bag_size < l:
        raise ValueError(f"bag_size {cfg.bag_size} is smaller than the class count {l}")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    bags, prevs = [], []
    for _ in range(cfg.bag_count):
        counts = apportion(kraemer_sample(l, rng), cfg.bag_size)
        bags.append(sample_bag_at(data, counts, rng, by_class))
        prevs.append(counts / cfg.bag_size)
    return BagDataset(bags, np.asarray(prevs), l)


def mix_bags(bag_i, p_i, bag_j, p_j, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Union of a random half of ``bag_i`` (floor) and of ``bag_j`` (ceil).

    Returns the mixed bag and its silver label, the size-weighted average of
    the parents' labels.
    """
    ni, nj = len(bag_i) // 2, (len(bag_j) + 1) // 2
    sub_i = bag_i[rng.choice(len(bag_i), size=ni, replace=False)]
    sub_j = bag_j[rng.choice(len(bag_j), size=nj, replace=False)]
    bag = np.concatenate([sub_i, sub_j])
    if len(bag) == 0:
        # two single-instance parents: floor(1/2) == 0
        bag = sub_j
    label = (ni * np.asarray(p_i) + nj * np.asarray(p_j)) / (ni + nj)
    return bag, make_prevalence(label)


def bag_mixer_batch(source: BagDataset, cfg: MixerConfig, batch_size: int,
                    rng: np.random.Generator) -> List[Tuple[np.ndarray, np.ndarray]]:
    """One training batch of real and mixed bags.

    ``round(R * batch_size)`` bags are copied from ``source``; the rest are
    mixes of two distinct source bags picked uniformly (pairs are drawn
    independently, so a bag can be reused across the batch).
    """
    n = len(source)
    if n == 0:
        raise EmptySource("no bags to draw from")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n_real = int(np.floor(cfg.real_proportion * batch_size + 0.5))
    out = []
    real_idx = rng.choice(n, size=n_real, replace=n_real > n)
    for i in real_idx:
        out.append((source.bags[i], source.prevalences[i]))
    for _ in range(batch_size - n_real):
        if n == 1:
            i = j = 0
        else:
            i, j = rng.choice(n, size=2, replace=False)
        out.append(mix_bags(source.bags[i], source.prevalences[i],
                            source.bags[j], source.prevalences[j], rng))
    order = rng.permutation(len(out))
    return [out[k] for k in order]


@dataclass(frozen=True)
class GaussianClassSpec:
    """Diagonal Gaussian class-conditional density."""

    mean: Sequence[float]
    std: Sequence[float] | float


def synth_dataset(classes: Sequence[GaussianClassSpec], sizes: Sequence[int],
                  seed: int = 0) -> LabeledDataset:
    if len(classes) == 0 or len(classes) != len(sizes):
        raise BadSpec("need one size per class")
    means = [np.atleast_1d(np.asarray(c.mean, dtype=np.float64)) for c in classes]
    d = means[0].shape[0]
    if any(m.shape != (d,) for m in means):
        raise BadSpec("class means differ in dimension")
    stds = []
    for c in classes:
        s = np.broadcast_to(np.asarray(c.std, dtype=np.float64), (d,))
        if np.any(s <= 0) or not np.all(np.isfinite(s)):
            raise BadSpec("standard deviations must be positive")
        stds.append(s)
    if any(k < 0 for k in sizes):
        raise BadSpec("sizes must be non-negative")
    rng = np.random.default_rng(seed)
    X = np.concatenate([rng.normal(m, s, size=(k, d)) for m, s, k in zip(means, stds, sizes)])
    y = np.concatenate([np.full(k, c, dtype=np.int64) for c, k in enumerate(sizes)])
    return LabeledDataset(X, y, len(classes))


def two_gaussians(dim: int, separation: float, n_per_class: int, seed: int = 0) -> LabeledDataset:
    """Two unit-variance classes whose means sit at ``-/+ separation/2`` along
    the all-ones direction (distance between means == ``separation``)."""
    shift = separation / (2.0 * np.sqrt(dim))
    return synth_dataset([GaussianClassSpec(np.full(dim, -shift), 1.0),
                          GaussianClassSpec(np.full(dim, shift), 1.0)],
                         [n_per_class, n_per_class], seed)
