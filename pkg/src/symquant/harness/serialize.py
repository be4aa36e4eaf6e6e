"""Model persistence: one JSON document per fitted quantifier.

Arrays are stored as ``{"shape": [...], "data": [...]}`` with floats written
by ``json`` (shortest round-trip repr), so a save/load cycle is exact.
The layout is described in ``docs/model-schema.md``.
"""
from __future__ import annotations

import json
from typing import Any, Dict

import numpy as np

from ..aggregative import ACC, EMQ, HDy, HdyModel, AggregativeQuantifier, EmqOptions, make_aggregative
from ..classify import Calibration, SoftClassifier, TrainOptions
from ..neural.network import NetworkConfig, QuantNetwork
from ..neural.quantifier import SymmetricQuantifier
from ..neural.training import TrainConfig

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    pass


def encode_array(a) -> Dict[str, Any]:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def decode_array(d) -> np.ndarray:
    try:
        return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad array record: {exc}") from None


def _classifier_to_dict(clf: SoftClassifier) -> dict:
    cal = None
    if clf.calibration is not None:
        bias = clf.calibration.bias
        cal = {"temperature": float(clf.calibration.temperature),
               "bias": None if bias is None else encode_array(bias)}
    return {"weights": encode_array(clf.weights), "biases": encode_array(clf.biases),
            "calibration": cal, "converged": bool(clf.converged)}


def _classifier_from_dict(d: dict) -> SoftClassifier:
    cal = d.get("calibration")
    if cal is not None:
        bias = cal.get("bias")
        cal = Calibration(float(cal["temperature"]), None if bias is None else decode_array(bias))
    return SoftClassifier(decode_array(d["weights"]), decode_array(d["biases"]), cal,
                          bool(d.get("converged", True)))


def model_to_dict(model) -> dict:
    if isinstance(model, SymmetricQuantifier):
        if model.net is None:
            raise SchemaError("model is not fitted")
        return {
            "schema": SCHEMA_VERSION,
            "kind": "symmetric",
            "method": model.method,
            "network": model.net.cfg.to_dict(),
            "training": model.train_cfg.to_dict(),
            "tensors": {k: encode_array(v) for k, v in model.net.state_dict().items()},
        }
    if isinstance(model, AggregativeQuantifier):
        if model.classifier is None:
            raise SchemaError("model is not fitted")
        state: Dict[str, Any] = {}
        if isinstance(model, ACC):
            state["confusion"] = encode_array(model.confusion)
        if isinstance(model, EMQ):
            state["train_prior"] = encode_array(model.train_prior)
            state["emq"] = {"max_iters": model.emq.max_iters, "tol": model.emq.tol}
        if isinstance(model, HDy):
            m = model.model
            state["bin_counts"] = list(m.bin_counts)
            state["grid_step"] = m.grid_step
            state["pos_histograms"] = {str(b): encode_array(m.pos_histograms[b]) for b in m.bin_counts}
            state["neg_histograms"] = {str(b): encode_array(m.neg_histograms[b]) for b in m.bin_counts}
        return {
            "schema": SCHEMA_VERSION,
            "kind": "aggregative",
            "method": model.name,
            "n_classes": int(model.classifier.n_classes),
            "classifier": _classifier_to_dict(model.classifier),
            "state": state,
        }
    raise SchemaError(f"cannot serialise {type(model).__name__}")


def model_from_dict(d: dict):
    if not isinstance(d, dict) or "schema" not in d:
        raise SchemaError("missing 'schema' field")
    if d["schema"] != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema {d['schema']!r} (expected {SCHEMA_VERSION})")
    kind = d.get("kind")
    try:
        if kind == "symmetric":
            net_cfg = NetworkConfig(**d["network"])
            q = SymmetricQuantifier(d["method"], {k: v for k, v in d["network"].items()
                                                  if k not in ("n_features", "n_classes")},
                                    TrainConfig(**d["training"]))
            q.net = QuantNetwork(net_cfg)
            q.net.load_state_dict({k: decode_array(v) for k, v in d["tensors"].items()})
            return q
        if kind == "aggregative":
            q = make_aggregative(d["method"], TrainOptions())
            q.classifier = _classifier_from_dict(d["classifier"])
            q.n_classes = int(d["n_classes"])
            st = d["state"]
            if isinstance(q, ACC):
                q.confusion = decode_array(st["confusion"])
            if isinstance(q, EMQ):
                q.train_prior = decode_array(st["train_prior"])
                q.emq = EmqOptions(st["emq"]["max_iters"], st["emq"]["tol"],
                                   q.emq.use_calibration)
            if isinstance(q, HDy):
                bins = tuple(int(b) for b in st["bin_counts"])
                q.model = HdyModel({b: decode_array(st["pos_histograms"][str(b)]) for b in bins},
                                   {b: decode_array(st["neg_histograms"][str(b)]) for b in bins},
                                   bins, float(st["grid_step"]))
            return q
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed model document: {exc!r}") from None
    raise SchemaError(f"unknown model kind {kind!r}")


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: {exc}") from None
    return model_from_dict(doc)
