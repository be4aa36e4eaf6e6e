"""Symmetric quantifiers behind the same ``fit`` / ``quantify`` interface as
the aggregative ones, but fitted on prevalence-labelled bags."""
from __future__ import annotations

from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from ..core import BagDataset, as_bag
from .layers import HISTOGRAM_VARIANTS, POOLING_KINDS
from .network import NetworkConfig, QuantNetwork
from .training import TrainConfig, TrainHistory, train

SYMMETRIC_METHODS = tuple(f"HistNetQ-{v}" for v in HISTOGRAM_VARIANTS) + \
    tuple(f"DeepSets-{k}" for k in POOLING_KINDS)


def invariant_for(method: str) -> str:
    """``HistNetQ-hard`` -> ``hard``, ``DeepSets-avg`` -> ``avg``."""
    family, _, kind = method.partition("-")
    if family.lower() == "histnetq" and kind.lower() in HISTOGRAM_VARIANTS:
        return kind.lower()
    if family.lower() == "deepsets" and kind.lower() in POOLING_KINDS:
        return kind.lower()
    raise KeyError(f"unknown symmetric method {method!r}")


def is_symmetric(method: str) -> bool:
    try:
        invariant_for(method)
    except KeyError:
        return False
    return True


class SymmetricQuantifier:
    """A :class:`QuantNetwork` trained on bags with the Mixer.

    ``net_options`` and ``train`` carry everything except the data shape,
    which is filled in by :meth:`fit`.
    """

    def __init__(self, method: str, net_options: Optional[dict] = None,
                 train_cfg: TrainConfig = TrainConfig()):
        self.method = method
        self.net_options = dict(net_options or {})
        self.net_options["invariant"] = invariant_for(method)
        self.train_cfg = train_cfg
        self.net: Optional[QuantNetwork] = None
        self.history: Optional[TrainHistory] = None

    @property
    def name(self) -> str:
        return self.method

    def build(self, n_features: int, n_classes: int) -> QuantNetwork:
        cfg = NetworkConfig(n_features, n_classes, **self.net_options)
        self.net = QuantNetwork(cfg)
        return self.net

    def fit(self, bags: BagDataset, verbose: bool = False):
        net = self.build(bags.n_features, bags.n_classes)
        self.net, self.history = train(net, bags, self.train_cfg,
                                       np.random.default_rng(self.train_cfg.seed), verbose)
        return self

    def quantify(self, bag) -> np.ndarray:
        return self.net.predict(as_bag(bag))

    def quantify_many(self, bags: Sequence[np.ndarray]) -> np.ndarray:
        return self.net.predict_many([as_bag(b) for b in bags])

    def with_bins(self, n_bins: int) -> "SymmetricQuantifier":
        return SymmetricQuantifier(self.method, {**self.net_options, "n_bins": n_bins},
                                   replace(self.train_cfg))
