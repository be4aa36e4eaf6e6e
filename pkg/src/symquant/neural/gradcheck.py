"""Finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .autograd import Tensor


@dataclass
class GradCheckReport:
    max_rel_dev: float
    per_tensor: Dict[str, float] = field(default_factory=dict)
    n_checked: int = 0
    n_excluded: int = 0

    def ok(self, tol: float) -> bool:
        return self.max_rel_dev < tol


def relative_deviation(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor * max|a|)``.

    The floor keeps entries that are tiny compared with the rest of the
    tensor from being judged on round-off alone.
    """
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    ref = floor * max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-300)
    return np.abs(analytic - numeric) / np.maximum(scale, ref)


def gradient_check(fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5,
                   exclude: Optional[Dict[int, np.ndarray]] = None,
                   names: Optional[Sequence[str]] = None) -> GradCheckReport:
    """Compare reverse-mode gradients of the scalar ``fn()`` with central differences.

    ``exclude`` maps ``id(tensor)`` to a boolean mask of entries to skip
    (e.g. parameters sitting next to a kink of a piecewise bin function).
    """
    exclude = exclude or {}
    for t in tensors:
        t.grad = None
    out = fn()
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    report = GradCheckReport(0.0)
    for k, (t, ga) in enumerate(zip(tensors, analytic)):
        mask = exclude.get(id(t), np.zeros(t.shape, dtype=bool))
        gn = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            if mask.reshape(-1)[i]:
                continue
            old = flat[i]
            flat[i] = old + h
            fp = float(fn().data)
            flat[i] = old - h
            fm = float(fn().data)
            flat[i] = old
            gn.reshape(-1)[i] = (fp - fm) / (2 * h)
        keep = ~mask
        report.n_checked += int(keep.sum())
        report.n_excluded += int(mask.sum())
        dev = float(relative_deviation(ga[keep], gn[keep]).max()) if keep.any() else 0.0
        name = names[k] if names else (t.name or f"tensor{k}")
        report.per_tensor[name] = dev
        report.max_rel_dev = max(report.max_rel_dev, dev)
    return report


def histogram_stack_check(variant: str, rng: np.random.Generator, margin: float = 1e-3,
                          h: float = 1e-5) -> GradCheckReport:
    """Check a random ``dense -> logistic -> histogram`` stack end to end.

    Shapes, inputs and bin parameters are drawn from ``rng``; the scalar
    output is a random projection of the histogram. Entries whose finite
    difference would straddle a kink of the bin function (anything within
    ``margin`` of one) are excluded: bin parameters per :meth:`kink_distance`,
    and the dense columns and input rows feeding a near-kink feature value.
    """
    from . import autograd as ag
    from .layers import Dense, HistogramLayer

    d, z, N, n, B = (int(v) for v in (rng.integers(1, 4), rng.integers(1, 4), rng.integers(2, 7),
                                      rng.integers(2, 7), 2))
    dense = Dense(d, z, rng)
    layer = HistogramLayer.create(variant, N, z)
    if variant != "sigmoid":
        layer.mu.data = layer.mu.data + rng.normal(0, 0.02, layer.mu.shape)
        layer.w.data = layer.w.data * rng.uniform(0.7, 1.3, layer.w.shape)
    X = Tensor(rng.normal(size=(B, n, d)), True, name="input")
    proj = rng.normal(size=(B, z * N))

    def f():
        feats = ag.sigmoid(dense(ag.reshape(X, (B * n, d))))
        return ag.total(ag.mul(layer(ag.reshape(feats, (B, n, z))), proj))

    feats = 1.0 / (1.0 + np.exp(-(X.data.reshape(-1, d) @ dense.W.data + dense.b.data)))
    near = layer.input_kink_distance(feats) < margin  # (B*n, z)
    col = near.any(axis=0)
    row = near.any(axis=1).reshape(B, n)
    param_mask = layer.kink_distance(feats) < margin
    exclude = {
        id(layer.mu): param_mask,
        id(layer.w): param_mask,
        id(dense.W): np.broadcast_to(col, dense.W.shape).copy(),
        id(dense.b): col.copy(),
        id(X): np.broadcast_to(row[:, :, None], X.shape).copy(),
    }
    return gradient_check(f, [dense.W, dense.b, X] + layer.parameters(), h=h, exclude=exclude)
