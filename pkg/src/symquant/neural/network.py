"""Set network for quantification: per-instance feature stack, a bag-level
invariant layer (histogram or pooling), and a dense head."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .layers import (HISTOGRAM_VARIANTS, POOLING_KINDS, Dense, HistogramLayer, Pooling,
                     dropout, init_histogram_params)


@dataclass
class NetworkConfig:
    n_features: int
    n_classes: int
    invariant: str = "hard"
    n_bins: int = 32
    feature_sizes: Sequence[int] = (64,)
    z: int = 16
    head_sizes: Sequence[int] = (64,)
    dropout: float = 0.5
    feature_dropout: float = 0.0
    gamma: float = 100.0
    output: str = "softmax"  # "identity" for plain regression
    use_feature_stack: bool = True
    squash: Optional[bool] = None  # default: on for histogram layers with a feature stack
    seed: int = 0

    def __post_init__(self):
        self.feature_sizes = tuple(int(s) for s in self.feature_sizes)
        self.head_sizes = tuple(int(s) for s in self.head_sizes)
        if self.invariant not in HISTOGRAM_VARIANTS + POOLING_KINDS:
            raise ValueError(f"unknown invariant layer {self.invariant!r}")
        if self.output not in ("softmax", "identity"):
            raise ValueError(f"unknown output {self.output!r}")
        if self.squash is None:
            self.squash = self.is_histogram and self.use_feature_stack

    @property
    def is_histogram(self) -> bool:
        return self.invariant in HISTOGRAM_VARIANTS

    def to_dict(self) -> dict:
        d = asdict(self)
        d["feature_sizes"] = list(self.feature_sizes)
        d["head_sizes"] = list(self.head_sizes)
        return d


class QuantNetwork:
    """Maps a bag ``(n, d)`` to an ``l``-vector (a prevalence under softmax output).

    The feature stack is a series of dense blocks; every block but the last
    is followed by leaky-ReLU and dropout. The last block's activation is
    the logistic squash when feeding a histogram layer (bins live in (0, 1)),
    and leaky-ReLU otherwise.
    """

    def __init__(self, cfg: NetworkConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.feature_layers: List[Dense] = []
        d = cfg.n_features
        if cfg.use_feature_stack:
            for i, s in enumerate(tuple(cfg.feature_sizes) + (cfg.z,)):
                self.feature_layers.append(Dense(d, s, rng, name=f"fe{i}"))
                d = s
        self.z = d
        if cfg.is_histogram:
            self.invariant = HistogramLayer(init_histogram_params(cfg.invariant, cfg.n_bins, d, cfg.gamma))
        else:
            self.invariant = Pooling(cfg.invariant, d)
        self.head_layers: List[Dense] = []
        h = self.invariant.out_dim
        for i, s in enumerate(tuple(cfg.head_sizes) + (cfg.n_classes,)):
            self.head_layers.append(Dense(h, s, rng, name=f"q{i}"))
            h = s
        self._names()

    def _names(self):
        self._param_names = []
        for layer in self.feature_layers + self.head_layers:
            self._param_names += [layer.W.name, layer.b.name]
        if isinstance(self.invariant, HistogramLayer):
            self._param_names += ["hist.mu", "hist.w"]

    def parameters(self) -> List[Tensor]:
        ps = []
        for layer in self.feature_layers:
            ps += layer.parameters()
        ps += self.invariant.parameters()
        for layer in self.head_layers:
            ps += layer.parameters()
        return ps

    def named_tensors(self) -> Dict[str, Tensor]:
        out = {}
        for layer in self.feature_layers + self.head_layers:
            out[layer.W.name] = layer.W
            out[layer.b.name] = layer.b
        if isinstance(self.invariant, HistogramLayer):
            out["hist.mu"] = self.invariant.mu
            out["hist.w"] = self.invariant.w
        return out

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_tensors().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        tensors = self.named_tensors()
        if set(state) != set(tensors):
            raise KeyError(f"state keys {sorted(state)} do not match {sorted(tensors)}")
        for k, t in tensors.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {t.shape}")
            t.data = arr.copy()

    def forward(self, bags: np.ndarray, training: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tensor:
        """Forward a stack of equally sized bags ``(B, n, d)`` -> ``(B, l)``."""
        X = np.asarray(bags, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        B, n, d = X.shape
        if d != self.cfg.n_features:
            raise ValueError(f"expected {self.cfg.n_features} features, got {d}")
        if training and rng is None:
            raise ValueError("training mode needs an rng for dropout")
        h = Tensor(X.reshape(B * n, d))
        last = len(self.feature_layers) - 1
        for i, layer in enumerate(self.feature_layers):
            h = layer(h)
            if i == last and self.cfg.squash:
                h = ag.sigmoid(h)
            else:
                h = ag.leaky_relu(h)
                h = dropout(h, self.cfg.feature_dropout, training, rng)
        if not self.feature_layers and self.cfg.squash:
            h = ag.sigmoid(h)
        h = ag.reshape(h, (B, n, self.z))
        h = self.invariant(h)
        for i, layer in enumerate(self.head_layers):
            h = layer(h)
            if i < len(self.head_layers) - 1:
                h = ag.leaky_relu(h)
                h = dropout(h, self.cfg.dropout, training, rng)
        if self.cfg.output == "softmax":
            h = ag.softmax(h, axis=1)
        return h

    def predict(self, bag) -> np.ndarray:
        """Inference-mode output for a single bag ``(n, d)``."""
        bag = np.asarray(bag, dtype=np.float64)
        if bag.ndim == 1:
            bag = bag[:, None]
        return self.forward(bag[None]).data[0]

    def predict_many(self, bags: Sequence[np.ndarray]) -> np.ndarray:
        """Inference on bags of possibly different sizes (grouped by size)."""
        out = np.empty((len(bags), self.cfg.n_classes))
        for size, idx in group_by_size(bags).items():
            out[idx] = self.forward(np.stack([bags[i] for i in idx])).data
        return out


def group_by_size(bags: Sequence[np.ndarray]) -> Dict[int, List[int]]:
    groups: Dict[int, List[int]] = {}
    for i, b in enumerate(bags):
        groups.setdefault(len(b), []).append(i)
    return groups


def network_forward(net: QuantNetwork, bag, training_mode: bool = False,
                    rng: Optional[np.random.Generator] = None) -> np.ndarray:
    bag = np.asarray(bag, dtype=np.float64)
    if bag.ndim == 1:
        bag = bag[:, None]
    return net.forward(bag[None], training_mode, rng).data[0]
