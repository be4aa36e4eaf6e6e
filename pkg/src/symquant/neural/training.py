"""Losses, the AdamW optimizer and the bag-level training loop."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core import BagDataset, LengthMismatch
from ..sampling import MixerConfig, bag_mixer_batch
from . import autograd as ag
from .autograd import Tensor
from .network import NetworkConfig, QuantNetwork, group_by_size


class NonFiniteLoss(FloatingPointError):
    pass


class EmptyDataset(ValueError):
    pass


@dataclass
class TrainConfig:
    loss: str = "RAE"
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 16
    real_proportion: float = 0.5
    patience: int = 20
    max_epochs: int = 200
    validation_fraction: float = 0.1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    steps_per_epoch: Optional[int] = None  # default: ceil(n_train / batch_size)
    # Adam rescales the (tiny) histogram-bin gradients to full-size steps,
    # which lets bins wander; their learning rate is damped by this factor.
    hist_lr_scale: float = 0.01

    def __post_init__(self):
        if self.loss.upper() not in ("AE", "RAE"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ValueError("batch_size, max_epochs must be >= 1 and patience >= 0")
        if not 0.0 <= self.real_proportion <= 1.0:
            raise ValueError("real_proportion must lie in [0, 1]")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)


# Hyperparameters of the two LeQua vector subtasks.
PRESETS: Dict[str, Tuple[dict, dict]] = {
    "lequa-t1a": (dict(invariant="hard", n_bins=32, z=300, head_sizes=(2048, 2048, 2048),
                       dropout=0.5, feature_sizes=(1024,)),
                  dict(learning_rate=1e-4, weight_decay=1e-5, batch_size=20, real_proportion=0.9)),
    "lequa-t1b": (dict(invariant="hard", n_bins=64, z=512, head_sizes=(4096,),
                       dropout=0.5, feature_sizes=(1024,)),
                  dict(learning_rate=5e-4, weight_decay=1e-5, batch_size=500, real_proportion=0.5)),
}


def preset(name: str, n_features: int, n_classes: int, **overrides):
    """``(NetworkConfig, TrainConfig)`` for a named preset."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    net_kw, train_kw = PRESETS[name]
    net_kw = {**net_kw, **{k: v for k, v in overrides.items() if k in NetworkConfig.__dataclass_fields__}}
    train_kw = {**train_kw, **{k: v for k, v in overrides.items() if k in TrainConfig.__dataclass_fields__}}
    return NetworkConfig(n_features, n_classes, **net_kw), TrainConfig(**train_kw)


def compute_loss(pred: Tensor, gold, kind: str = "RAE", eps=None) -> Tensor:
    """Batch mean of AE or smoothed RAE between predictions and gold labels.

    ``eps`` is a scalar or one smoothing factor per bag (RAE only).
    """
    gold = np.asarray(gold, dtype=np.float64)
    if gold.ndim == 1:
        gold = gold[None]
    if pred.shape != gold.shape:
        raise LengthMismatch(f"predictions {pred.shape} vs gold {gold.shape}")
    B, l = gold.shape
    kind = kind.upper()
    if kind == "AE":
        return ag.mean(ag.absolute(pred - gold))
    if kind != "RAE":
        raise ValueError(f"unknown loss {kind!r}")
    if eps is None:
        raise ValueError("RAE needs a smoothing factor")
    eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), (B,))[:, None]
    denom = l * eps + 1.0
    sgold = (gold + eps) / denom
    spred = (pred + eps) * (1.0 / denom)
    return ag.mean(ag.mul(ag.absolute(spred - sgold), 1.0 / sgold))


class AdamW:
    """Adam with decoupled weight decay (decay applied before the moment step)."""

    def __init__(self, params: Sequence[Tensor], lr=1e-3, weight_decay=0.0,
                 betas=(0.9, 0.999), eps=1e-8, lr_scale: Optional[Dict[int, float]] = None):
        self.params = list(params)
        # per-tensor multipliers of the learning rate, keyed by id(tensor)
        self.lr_scale = lr_scale or {}
        self.lr, self.weight_decay, self.betas, self.eps = lr, weight_decay, betas, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            lr = self.lr * self.lr_scale.get(id(p), 1.0)
            if self.weight_decay:
                p.data = p.data * (1.0 - lr * self.weight_decay)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}


def hist_lr_scales(net: QuantNetwork, scale: float) -> Dict[int, float]:
    return {id(p): scale for p in net.invariant.parameters()}


def make_optimizer(net: QuantNetwork, cfg: TrainConfig) -> AdamW:
    return AdamW(net.parameters(), cfg.learning_rate, cfg.weight_decay,
                 (cfg.beta1, cfg.beta2), cfg.adam_eps, hist_lr_scales(net, cfg.hist_lr_scale))


def batch_loss(net: QuantNetwork, bags: Sequence[np.ndarray], gold: np.ndarray, kind: str,
               training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Mean loss over a batch; bags of equal size are stacked into one pass."""
    gold = np.asarray(gold, dtype=np.float64)
    loss = None
    for size, idx in group_by_size(bags).items():
        pred = net.forward(np.stack([bags[i] for i in idx]), training, rng)
        part = compute_loss(pred, gold[idx], kind, 1.0 / (2.0 * size)) * (len(idx) / len(bags))
        loss = part if loss is None else loss + part
    return loss


def backward_and_step(net: QuantNetwork, batch, cfg: TrainConfig, opt: AdamW,
                      rng: np.random.Generator) -> float:
    """One optimizer update on a batch of ``(bag, prevalence)`` pairs.

    Gradients are averaged over whole bags; a bag is never split.
    """
    if len(batch) == 0:
        raise EmptyDataset("empty batch")
    bags = [b for b, _ in batch]
    gold = np.stack([p for _, p in batch])
    opt.zero_grad()
    loss = batch_loss(net, bags, gold, cfg.loss, True, rng)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NonFiniteLoss(f"loss is {value}")
    loss.backward()
    opt.step()
    return value


def evaluate_loss(net: QuantNetwork, data: BagDataset, kind: str, chunk: int = 64) -> float:
    total = 0.0
    for start in range(0, len(data), chunk):
        idx = range(start, min(start + chunk, len(data)))
        bags = [data.bags[i] for i in idx]
        total += float(batch_loss(net, bags, data.prevalences[list(idx)], kind, False, None).data) * len(bags)
    return total / len(data)


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    @property
    def epochs(self) -> int:
        return len(self.train_loss)


def split_validation(data: BagDataset, fraction: float, rng: np.random.Generator):
    n = len(data)
    n_val = int(round(fraction * n))
    if fraction > 0 and n > 1:
        n_val = min(max(n_val, 1), n - 1)
    else:
        n_val = 0
    perm = rng.permutation(n)
    return data.subset(sorted(perm[n_val:])), data.subset(sorted(perm[:n_val]))


def train(net: QuantNetwork, bags: BagDataset, cfg: TrainConfig,
          rng: Optional[np.random.Generator] = None, verbose: bool = False):
    """Fit ``net`` on prevalence-labelled bags with mixer augmentation.

    Every step draws one batch from :func:`bag_mixer_batch` with real-bag
    proportion ``cfg.real_proportion``. After each epoch the validation
    loss is checked; training stops once ``patience`` epochs pass without
    improvement, and the best parameters are restored.
    """
    if len(bags) == 0:
        raise EmptyDataset("no training bags")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    train_part, val_part = split_validation(bags, cfg.validation_fraction, rng)
    opt = make_optimizer(net, cfg)
    mixer = MixerConfig(cfg.real_proportion, cfg.seed)
    steps = cfg.steps_per_epoch or max(1, math.ceil(len(train_part) / cfg.batch_size))
    hist = TrainHistory()
    best, best_state, since_best = math.inf, net.state_dict(), 0
    for epoch in range(cfg.max_epochs):
        losses = []
        for _ in range(steps):
            batch = bag_mixer_batch(train_part, mixer, cfg.batch_size, rng)
            losses.append(backward_and_step(net, batch, cfg, opt, rng))
        hist.train_loss.append(float(np.mean(losses)))
        monitor = val_part if len(val_part) else train_part
        val = evaluate_loss(net, monitor, cfg.loss)
        hist.val_loss.append(val)
        if val < best:
            best, best_state, since_best = val, net.state_dict(), 0
            hist.best_epoch = epoch
        else:
            since_best += 1
        if verbose:
            print(f"epoch {epoch:4d} train {hist.train_loss[-1]:.5f} val {val:.5f}")
        if since_best >= cfg.patience:
            hist.stopped_early = epoch < cfg.max_epochs - 1
            break
    net.load_state_dict(best_state)
    return net, hist
