"""Can a histogram layer stand in for average / median / max pooling?

A network with one 64-bin histogram layer and two dense layers (32, 16) is
trained to regress a statistic of a random vector of 100 values drawn
uniformly from ``[0, m]`` with ``m ~ U(0, 1)``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..neural import autograd as ag
from ..neural.network import NetworkConfig, QuantNetwork
from ..neural.training import AdamW, hist_lr_scales

TARGETS = ("avg", "median", "max")


@dataclass(frozen=True)
class ToyConfig:
    n_values: int = 100
    n_bins: int = 64
    head: tuple = (32, 16)
    variant: str = "hard"
    steps: int = 6000
    batch_size: int = 32
    learning_rate: float = 2e-3
    lr_final: float = 1e-4
    hist_lr_scale: float = 0.01
    n_test: int = 2000


def make_vectors(n_bags: int, n_values: int, rng: np.random.Generator) -> np.ndarray:
    top = rng.uniform(0.0, 1.0, size=(n_bags, 1))
    return rng.uniform(0.0, 1.0, size=(n_bags, n_values)) * top


def statistic(values: np.ndarray, target: str) -> np.ndarray:
    if target == "avg":
        return values.mean(axis=1)
    if target == "median":
        return np.median(values, axis=1)
    if target == "max":
        return values.max(axis=1)
    raise ValueError(f"unknown target {target!r}")


def toy_network(cfg: ToyConfig, seed: int) -> QuantNetwork:
    return QuantNetwork(NetworkConfig(
        n_features=1, n_classes=1, invariant=cfg.variant, n_bins=cfg.n_bins,
        head_sizes=cfg.head, dropout=0.0, output="identity",
        use_feature_stack=False, squash=False, seed=seed))


def toy_histogram_experiment(target: str, seed: int = 0, cfg: ToyConfig = ToyConfig(),
                             return_details: bool = False):
    """Train on fresh random vectors every step; return held-out mean absolute error."""
    if target not in TARGETS:
        raise ValueError(f"unknown target {target!r}")
    rng = np.random.default_rng(seed)
    net = toy_network(cfg, seed)
    opt = AdamW(net.parameters(), lr=cfg.learning_rate,
                lr_scale=hist_lr_scales(net, cfg.hist_lr_scale))
    t0 = time.perf_counter()
    decay = (cfg.lr_final / cfg.learning_rate) ** (1.0 / max(cfg.steps - 1, 1))
    for step in range(cfg.steps):
        V = make_vectors(cfg.batch_size, cfg.n_values, rng)
        y = statistic(V, target)[:, None]
        opt.zero_grad()
        pred = net.forward(V[:, :, None], training=True, rng=rng)
        diff = pred - y
        loss = ag.mean(ag.mul(diff, diff))
        loss.backward()
        opt.step()
        opt.lr *= decay
    test_rng = np.random.default_rng(10_000 + seed)
    V = make_vectors(cfg.n_test, cfg.n_values, test_rng)
    pred = net.forward(V[:, :, None]).data[:, 0]
    ae = float(np.mean(np.abs(pred - statistic(V, target))))
    if return_details:
        return ae, {"seconds": time.perf_counter() - t0, "net": net}
    return ae
