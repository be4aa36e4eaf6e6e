"""Reading and writing the LeQua-style CSV layout.

Layout of a dataset directory::

    training_data.csv          label,f_0,...,f_{d-1}
    dev_samples/<id>.csv       f_0,...,f_{d-1}   (one instance per row)
    dev_prevalences.csv        id,p_0,...,p_{l-1}
    test_samples/<id>.csv
    test_prevalences.csv       (optional)

Headers are optional when reading and always written. A ``manifest.json``
in the directory (or passed explicitly) may remap any of the five roles to
other relative or absolute paths.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..core import BagDataset, LabeledDataset, PrevalenceError, make_prevalence
from ..sampling import AppConfig, app_generate

DEFAULT_MANIFEST = {
    "training": "training_data.csv",
    "dev_samples": "dev_samples",
    "dev_prevalences": "dev_prevalences.csv",
    "test_samples": "test_samples",
    "test_prevalences": "test_prevalences.csv",
}
MANIFEST_NAME = "manifest.json"


class DataError(Exception):
    """Base class for problems with on-disk data (CLI exit code 2)."""


class MissingFile(DataError, FileNotFoundError):
    pass


class MalformedRow(DataError, ValueError):
    def __init__(self, path, line: int, reason: str):
        super().__init__(f"{path}:{line}: {reason}")
        self.path, self.line, self.reason = path, line, reason


class PrevalenceOffSimplex(DataError, ValueError):
    def __init__(self, path, line: int, reason: str):
        super().__init__(f"{path}:{line}: prevalence off the simplex ({reason})")
        self.path, self.line = path, line


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def read_rows(path) -> List[Tuple[int, List[float]]]:
    """Numeric rows of a CSV as ``(line_number, values)``; a non-numeric first
    line is taken as a header and skipped. Blank lines are ignored."""
    if not os.path.isfile(path):
        raise MissingFile(f"missing file {path}")
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            row = [t.strip() for t in row]
            if not row or all(t == "" for t in row):
                continue
            if lineno == 1 and not all(_is_number(t) for t in row):
                continue
            try:
                values = [float(t) for t in row]
            except ValueError:
                raise MalformedRow(path, lineno, "non-numeric field") from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise MalformedRow(path, lineno, f"expected {width} fields, found {len(values)}")
            if not np.all(np.isfinite(values)):
                raise MalformedRow(path, lineno, "non-finite value")
            rows.append((lineno, values))
    return rows


def load_training(path, n_classes: Optional[int] = None) -> LabeledDataset:
    rows = read_rows(path)
    if not rows:
        raise MalformedRow(path, 1, "no data rows")
    labels = []
    for lineno, vals in rows:
        if len(vals) < 2:
            raise MalformedRow(path, lineno, "need a label and at least one feature")
        lab = vals[0]
        if lab != int(lab) or lab < 0:
            raise MalformedRow(path, lineno, f"label {lab!r} is not a non-negative integer")
        labels.append(int(lab))
    X = np.array([v[1:] for _, v in rows])
    l = max(labels) + 1 if n_classes is None else n_classes
    if max(labels) >= l:
        raise MalformedRow(path, rows[labels.index(max(labels))][0], f"label outside [0, {l})")
    return LabeledDataset(X, np.array(labels), l)


def load_prevalences(path) -> Dict[str, np.ndarray]:
    out = {}
    for lineno, vals in read_rows(path):
        if len(vals) < 3:
            raise MalformedRow(path, lineno, "need an id and at least two prevalences")
        key = _id_str(vals[0])
        try:
            out[key] = make_prevalence(vals[1:])
        except PrevalenceError as exc:
            raise PrevalenceOffSimplex(path, lineno, str(exc)) from None
    return out


def _id_str(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(v)


def _sample_ids(folder) -> List[str]:
    if not os.path.isdir(folder):
        raise MissingFile(f"missing directory {folder}")
    ids = [f[:-4] for f in os.listdir(folder) if f.endswith(".csv")]
    return sorted(ids, key=lambda s: (0, int(s)) if s.isdigit() else (1, s))


def load_bags(folder, prev_path, n_classes: int, required: bool = True) -> BagDataset:
    """Bags from ``folder``; labelled from ``prev_path`` when it exists.

    Without a prevalence file (``required=False``) the bags are labelled
    uniformly as a placeholder and must not be scored.
    """
    ids = _sample_ids(folder)
    if os.path.isfile(prev_path):
        prevs = load_prevalences(prev_path)
    elif required:
        raise MissingFile(f"missing file {prev_path}")
    else:
        prevs = None
    bags, labels = [], []
    for i in ids:
        path = os.path.join(folder, i + ".csv")
        rows = read_rows(path)
        if not rows:
            raise MalformedRow(path, 1, "empty sample")
        bags.append(np.array([v for _, v in rows]))
        if prevs is None:
            labels.append(np.full(n_classes, 1.0 / n_classes))
        elif i not in prevs:
            raise MissingFile(f"{prev_path} has no row for sample {i}")
        else:
            labels.append(prevs[i])
    for p in labels:
        if p.shape[0] != n_classes:
            raise DataError(f"prevalence vectors of length {p.shape[0]}, expected {n_classes}")
    return BagDataset(bags, np.array(labels), n_classes, ids)


def resolve_manifest(directory, manifest: Optional[str] = None) -> Dict[str, str]:
    """Role -> absolute path, after applying an optional manifest override."""
    roles = dict(DEFAULT_MANIFEST)
    mpath = manifest or os.path.join(directory, MANIFEST_NAME)
    if manifest or os.path.isfile(mpath):
        if not os.path.isfile(mpath):
            raise MissingFile(f"missing manifest {mpath}")
        with open(mpath) as fh:
            try:
                override = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{mpath}: {exc}") from None
        unknown = set(override) - set(roles)
        if unknown:
            raise DataError(f"{mpath}: unknown roles {sorted(unknown)}")
        roles.update(override)
    return {k: v if os.path.isabs(v) else os.path.join(directory, v) for k, v in roles.items()}


@dataclass
class LequaData:
    training: LabeledDataset
    dev: BagDataset
    test: BagDataset
    test_labelled: bool


def load_lequa(directory, manifest: Optional[str] = None) -> LequaData:
    if not os.path.isdir(directory):
        raise MissingFile(f"missing directory {directory}")
    paths = resolve_manifest(directory, manifest)
    training = load_training(paths["training"])
    l = training.n_classes
    dev = load_bags(paths["dev_samples"], paths["dev_prevalences"], l)
    test = load_bags(paths["test_samples"], paths["test_prevalences"], l, required=False)
    for name, ds in (("dev", dev), ("test", test)):
        if len(ds) and ds.n_features != training.n_features:
            raise DataError(f"{name} bags have {ds.n_features} features, training has "
                            f"{training.n_features}")
    return LequaData(training, dev, test, os.path.isfile(paths["test_prevalences"]))


# -- writers -------------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def write_training(path, data: LabeledDataset):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"f_{j}" for j in range(data.n_features)])
        for y, x in zip(data.y, data.X):
            w.writerow([int(y)] + [_fmt(v) for v in x])


def write_bags(folder, prev_path, bags: BagDataset):
    os.makedirs(folder, exist_ok=True)
    d = bags.n_features
    for i, bag in zip(bags.ids, bags.bags):
        with open(os.path.join(folder, f"{i}.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"f_{j}" for j in range(d)])
            w.writerows([[_fmt(v) for v in row] for row in bag])
    write_prevalences(prev_path, bags.ids, bags.prevalences)


def write_prevalences(path, ids, prevalences):
    prevalences = np.asarray(prevalences)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"p_{c}" for c in range(prevalences.shape[1])])
        for i, p in zip(ids, prevalences):
            w.writerow([i] + [_fmt(v) for v in p])


def generate_bags_cmd(dataset_path, bag_size: int, count: int, seed: int, out_dir,
                      prefix: str = "dev") -> BagDataset:
    """Draw APP bags from a labelled CSV and write them in the loader's layout."""
    data = load_training(dataset_path)
    bags = app_generate(data, AppConfig(bag_size, count, seed))
    os.makedirs(out_dir, exist_ok=True)
    write_bags(os.path.join(out_dir, f"{prefix}_samples"),
               os.path.join(out_dir, f"{prefix}_prevalences.csv"), bags)
    return bags


def write_lequa(directory, training: LabeledDataset, dev: BagDataset, test: BagDataset):
    """Write a complete dataset directory (used for synthetic fixtures)."""
    os.makedirs(directory, exist_ok=True)
    write_training(os.path.join(directory, DEFAULT_MANIFEST["training"]), training)
    write_bags(os.path.join(directory, "dev_samples"),
               os.path.join(directory, "dev_prevalences.csv"), dev)
    write_bags(os.path.join(directory, "test_samples"),
               os.path.join(directory, "test_prevalences.csv"), test)
