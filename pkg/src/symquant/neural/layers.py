"""Layers with learnable parameters and the invariant (bag-level) layers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor

HISTOGRAM_VARIANTS = ("hard", "soft", "softrbf", "sigmoid")
POOLING_KINDS = ("avg", "median", "max")


class Dense:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str = "dense"):
        lim = np.sqrt(6.0 / (n_in + n_out))
        self.W = Tensor(rng.uniform(-lim, lim, size=(n_in, n_out)), True, name=f"{name}.W")
        self.b = Tensor(np.zeros(n_out), True, name=f"{name}.b")

    def parameters(self):
        return [self.W, self.b]

    def __call__(self, x: Tensor) -> Tensor:
        return ag.matmul(x, self.W) + self.b


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: identity at inference time."""
    if not training or p <= 0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return ag.mul(x, keep)


@dataclass
class HistogramLayerParams:
    variant: str
    n_bins: int
    n_features: int
    centers: np.ndarray  # (z, N)
    widths: np.ndarray  # (z, N)
    gamma: float = 100.0

    @property
    def n_learnable(self) -> int:
        return 0 if self.variant == "sigmoid" else 2 * self.n_bins * self.n_features


def init_histogram_params(variant: str, n_bins: int, n_features: int,
                          gamma: float = 100.0) -> HistogramLayerParams:
    """Bins evenly spaced over (0, 1).

    Centres at ``(b - 0.5) / N``. The width parameter depends on the
    variant: half-width ``1/(2N)`` (hard), slope ``N`` i.e. reach ``1/N``
    (soft), RBF scale ``1/N`` (softrbf), full bin width ``1/N`` (sigmoid).
    """
    if variant not in HISTOGRAM_VARIANTS:
        raise ValueError(f"unknown histogram variant {variant!r}")
    if n_bins < 1 or n_features < 1:
        raise ValueError("n_bins and n_features must be >= 1")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    centers = np.tile((np.arange(1, n_bins + 1) - 0.5) / n_bins, (n_features, 1))
    width = {"hard": 0.5 / n_bins, "soft": float(n_bins),
             "softrbf": 1.0 / n_bins, "sigmoid": 1.0 / n_bins}[variant]
    widths = np.full((n_features, n_bins), width)
    return HistogramLayerParams(variant, n_bins, n_features, centers, widths, gamma)


class HistogramLayer:
    """Differentiable histogram over each feature column of a bag.

    Output for a ``(B, n, z)`` input is ``(B, z * N)``; entry ``k * N + b``
    is the density of feature ``k`` in bin ``b``.
    """

    def __init__(self, params: HistogramLayerParams):
        self.variant = params.variant
        self.n_bins = params.n_bins
        self.n_features = params.n_features
        self.gamma = params.gamma
        learn = params.variant != "sigmoid"
        self.mu = Tensor(params.centers.copy(), learn, name="hist.mu")
        self.w = Tensor(params.widths.copy(), learn, name="hist.w")

    @classmethod
    def create(cls, variant, n_bins, n_features, gamma=100.0):
        return cls(init_histogram_params(variant, n_bins, n_features, gamma))

    @property
    def out_dim(self) -> int:
        return self.n_features * self.n_bins

    def parameters(self):
        return [] if self.variant == "sigmoid" else [self.mu, self.w]

    def params(self) -> HistogramLayerParams:
        return HistogramLayerParams(self.variant, self.n_bins, self.n_features,
                                    self.mu.data.copy(), self.w.data.copy(), self.gamma)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {x.shape[-1]}")
        return ag.histogram(x, self.mu, self.w, self.variant, self.gamma)

    def kink_distance(self, x: np.ndarray) -> np.ndarray:
        """Per-parameter distance of the nearest input value to a non-smooth
        point of the bin function (inf for smooth variants)."""
        if self.variant in ("softrbf", "sigmoid"):
            return np.full(self.mu.shape, np.inf)
        D = np.abs(x.reshape(-1, self.n_features)[:, :, None] - self.mu.data[None])
        if self.variant == "hard":
            reach = self.w.data
        else:
            reach = 1.0 / np.maximum(self.w.data, 1e-6)
        return np.minimum(D, np.abs(D - reach)).min(axis=0)

    def input_kink_distance(self, x: np.ndarray) -> np.ndarray:
        """Like :meth:`kink_distance` but per input value, over all bins."""
        if self.variant in ("softrbf", "sigmoid"):
            return np.full(x.shape, np.inf)
        D = np.abs(x[..., None] - self.mu.data)
        reach = self.w.data if self.variant == "hard" else 1.0 / np.maximum(self.w.data, 1e-6)
        return np.minimum(D, np.abs(D - reach)).min(axis=-1)


class Pooling:
    def __init__(self, kind: str, n_features: int):
        if kind not in POOLING_KINDS:
            raise ValueError(f"unknown pooling {kind!r}")
        self.kind = kind
        self.n_features = n_features

    @property
    def out_dim(self) -> int:
        return self.n_features

    def parameters(self):
        return []

    def __call__(self, x: Tensor) -> Tensor:
        return ag.pool(x, self.kind)


def histogram_forward(features, params: HistogramLayerParams) -> np.ndarray:
    """Evaluate a histogram layer on one bag ``(n, z)``; returns ``N * z`` values."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != params.n_features:
        raise ValueError(f"expected an (n, {params.n_features}) matrix")
    layer = HistogramLayer(params)
    return layer(Tensor(f[None])).data[0]


def pooling_forward(features, kind: str) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if f.shape[0] < 1:
        raise ValueError("cannot pool an empty bag")
    return Pooling(kind, f.shape[1])(Tensor(f[None])).data[0]
