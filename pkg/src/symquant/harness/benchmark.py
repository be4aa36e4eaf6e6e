"""Experiment orchestration: fit classical methods on D, bag-trained methods
on D', score every method on the same test bags."""
from __future__ import annotations

import math
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..aggregative import make_aggregative
from ..classify import TrainOptions
from ..core import BagDataset, LabeledDataset, absolute_error, default_epsilon, relative_absolute_error
from ..neural.network import NetworkConfig
from ..neural.quantifier import SymmetricQuantifier, is_symmetric
from ..neural.training import PRESETS, TrainConfig
from ..sampling import AppConfig, GaussianClassSpec, app_generate, synth_dataset, two_gaussians
from .io import LequaData, load_lequa

METRICS = ("AE", "RAE")


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 1)."""


@dataclass
class SyntheticSpec:
    """Gaussian classes in ``dim`` dimensions, unit variance.

    Two classes sit at ``+-separation/2`` along the all-ones direction; with
    more classes the means are the scaled standard basis vectors, pairwise
    ``separation`` apart. D, the D' pool and the test pool are independent
    draws; D' and test bags come from the APP protocol.
    """

    n_classes: int = 2
    dim: int = 10
    separation: float = 2.0
    n_train: int = 5000
    pool_size: int = 5000
    bag_size: int = 250
    n_dev: int = 500
    n_test: int = 500

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")
        if self.n_classes > 2 and self.dim < self.n_classes:
            raise ConfigError("dim must be >= n_classes for more than two classes")
        for name in ("n_train", "pool_size", "bag_size", "n_dev", "n_test"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")


def _gaussians(spec: SyntheticSpec, n: int, seed: int) -> LabeledDataset:
    l = spec.n_classes
    if l == 2:
        return two_gaussians(spec.dim, spec.separation, n // 2, seed)
    scale = spec.separation / math.sqrt(2.0)
    classes = [GaussianClassSpec(np.eye(spec.dim)[c] * scale, 1.0) for c in range(l)]
    sizes = [n // l + (1 if c < n % l else 0) for c in range(l)]
    return synth_dataset(classes, sizes, seed)


def synthetic_data(spec: SyntheticSpec, seed: int) -> LequaData:
    D = _gaussians(spec, spec.n_train, seed)
    dev_pool = _gaussians(spec, spec.pool_size, seed + 1)
    test_pool = _gaussians(spec, spec.pool_size, seed + 2)
    dev = app_generate(dev_pool, AppConfig(spec.bag_size, spec.n_dev, seed + 3))
    test = app_generate(test_pool, AppConfig(spec.bag_size, spec.n_test, seed + 4))
    return LequaData(D, dev, test, True)


@dataclass
class MethodSpec:
    """A method name plus its options; ``label`` names its rows in the
    result table (defaults to ``name``), so one method can appear twice."""

    name: str
    options: dict = field(default_factory=dict)
    label: Optional[str] = None

    @property
    def display(self) -> str:
        return self.label or self.name


@dataclass
class ExperimentConfig:
    methods: List[MethodSpec]
    metrics: Sequence[str] = METRICS
    lequa_dir: Optional[str] = None
    manifest: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None
    seed: int = 0
    output: Optional[str] = None
    preset: Optional[str] = None
    threads: int = 1

    def __post_init__(self):
        self.methods = [m if isinstance(m, MethodSpec) else MethodSpec(m) if isinstance(m, str)
                        else MethodSpec(**m) for m in self.methods]
        if not self.methods:
            raise ConfigError("at least one method is required")
        self.metrics = tuple(m.upper() for m in self.metrics)
        if not self.metrics:
            raise ConfigError("at least one metric is required")
        bad = set(self.metrics) - set(METRICS)
        if bad:
            raise ConfigError(f"unknown metrics {sorted(bad)}")
        if self.lequa_dir is None and self.synthetic is None:
            self.synthetic = SyntheticSpec()
        if isinstance(self.synthetic, dict):
            self.synthetic = SyntheticSpec(**self.synthetic)
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)

    def load_data(self) -> LequaData:
        if self.lequa_dir is not None:
            return load_lequa(self.lequa_dir, self.manifest)
        return synthetic_data(self.synthetic, self.seed)


@dataclass
class ResultTable:
    """Per (method, bag) errors; failed methods are listed in ``failures``."""

    metrics: Sequence[str] = METRICS
    methods: List[str] = field(default_factory=list)
    bag_ids: Dict[str, List] = field(default_factory=dict)
    errors: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)
    predictions: Dict[str, np.ndarray] = field(default_factory=dict)
    failures: Dict[str, str] = field(default_factory=dict)

    def add(self, method: str, ids, errors: Dict[str, np.ndarray], predictions=None):
        self.methods.append(method)
        self.bag_ids[method] = list(ids)
        self.errors[method] = {k: np.asarray(v, dtype=np.float64) for k, v in errors.items()}
        if predictions is not None:
            self.predictions[method] = np.asarray(predictions)

    def n_rows(self) -> int:
        return sum(len(v) for v in self.bag_ids.values())

    def rows(self):
        """``(method, bag_id, {metric: value})`` in method then bag order."""
        for m in self.methods:
            for i, bid in enumerate(self.bag_ids[m]):
                yield m, bid, {k: float(self.errors[m][k][i]) for k in self.metrics}

    def mean(self, method: str, metric: str = "AE") -> float:
        return float(np.mean(self.errors[method][metric]))

    def std(self, method: str, metric: str = "AE") -> float:
        return float(np.std(self.errors[method][metric]))

    def summary(self) -> Dict[str, Dict[str, tuple]]:
        return {m: {k: (self.mean(m, k), self.std(m, k)) for k in self.metrics}
                for m in self.methods}


def bag_errors(truth: np.ndarray, estimates: np.ndarray, sizes: Sequence[int],
               metrics=METRICS) -> Dict[str, np.ndarray]:
    out = {}
    if "AE" in metrics:
        out["AE"] = np.array([absolute_error(p, q) for p, q in zip(truth, estimates)])
    if "RAE" in metrics:
        out["RAE"] = np.array([relative_absolute_error(p, q, default_epsilon(n))
                               for p, q, n in zip(truth, estimates, sizes)])
    return out


def quantify_parallel(model, bags: Sequence[np.ndarray], threads: int = 1,
                      chunk: int = 32) -> np.ndarray:
    """Estimates for every bag, in input order.

    Workers get disjoint slices and only read the fitted model.
    """
    many = getattr(model, "quantify_many", None)

    def work(lo):
        part = bags[lo:lo + chunk]
        if many is not None:
            return lo, np.asarray(many(part))
        return lo, np.stack([model.quantify(b) for b in part])

    starts = range(0, len(bags), chunk)
    if threads <= 1:
        parts = [work(lo) for lo in starts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    parts.sort(key=lambda t: t[0])
    return np.concatenate([p for _, p in parts]) if parts else np.empty((0, 0))


def _split_options(options: dict, preset: Optional[str]):
    """Route per-method options to network / training / classifier settings."""
    net_kw, train_kw, other = {}, {}, {}
    if preset is not None:
        net_kw.update(PRESETS[preset][0])
        train_kw.update(PRESETS[preset][1])
    for k, v in options.items():
        if k in NetworkConfig.__dataclass_fields__ and k not in ("n_features", "n_classes"):
            net_kw[k] = v
        elif k in TrainConfig.__dataclass_fields__:
            train_kw[k] = v
        else:
            other[k] = v
    return net_kw, train_kw, other


def build_method(spec: MethodSpec, seed: int, preset: Optional[str] = None):
    """An unfitted quantifier for a method spec."""
    if is_symmetric(spec.name):
        net_kw, train_kw, other = _split_options(spec.options, preset)
        if other:
            raise ConfigError(f"{spec.name}: unknown options {sorted(other)}")
        net_kw.setdefault("seed", seed)
        train_kw.setdefault("seed", seed)
        if "feature_sizes" in net_kw:
            net_kw["feature_sizes"] = tuple(net_kw["feature_sizes"])
        if "head_sizes" in net_kw:
            net_kw["head_sizes"] = tuple(net_kw["head_sizes"])
        try:
            return SymmetricQuantifier(spec.name, net_kw, TrainConfig(**train_kw))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{spec.name}: {exc}") from None
    opts = dict(spec.options)
    k = opts.pop("k", 5)
    extra = {key: opts.pop(key) for key in ("confusion", "bin_counts", "grid_step") if key in opts}
    opts.setdefault("seed", seed)
    try:
        return make_aggregative(spec.name, TrainOptions(**opts), k, **extra)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    except TypeError as exc:
        raise ConfigError(f"{spec.name}: {exc}") from None


def fit_method(model, data: LequaData, verbose: bool = False):
    if isinstance(model, SymmetricQuantifier):
        return model.fit(data.dev, verbose=verbose)
    return model.fit(data.training)


def evaluate(model, test: BagDataset, metrics=METRICS, threads: int = 1):
    est = quantify_parallel(model, test.bags, threads)
    return est, bag_errors(test.prevalences, est, [len(b) for b in test.bags], metrics)


def run_benchmark(config: ExperimentConfig, data: Optional[LequaData] = None,
                  verbose: bool = False) -> ResultTable:
    """Fit and score every configured method.

    A method that raises is recorded in ``table.failures`` with its
    traceback; the remaining methods still run.
    """
    data = config.load_data() if data is None else data
    if not data.test_labelled:
        raise ConfigError("test bags have no prevalence labels; nothing to score")
    table = ResultTable(config.metrics)
    for spec in config.methods:
        model = build_method(spec, config.seed, config.preset)
        if spec.display in table.methods or spec.display in table.failures:
            raise ConfigError(f"duplicate method label {spec.display!r}")
        try:
            fit_method(model, data, verbose)
            est, errs = evaluate(model, data.test, config.metrics, config.threads)
        except Exception:  # isolate one method's failure from the others
            table.failures[spec.display] = traceback.format_exc()
            continue
        table.add(spec.display, data.test.ids, errs, est)
    return table


def bins_sweep(config: ExperimentConfig, bin_counts: Sequence[int],
               data: Optional[LequaData] = None, verbose: bool = False) -> Dict[int, ResultTable]:
    """One model per bin count for each histogram method in ``config``; all
    other settings (including the seed) are held fixed."""
    hist = [m for m in config.methods if is_symmetric(m.name) and m.name.lower().startswith("histnetq")]
    if not hist:
        raise ConfigError("bins-sweep needs at least one HistNetQ method")
    data = config.load_data() if data is None else data
    out = {}
    for nb in bin_counts:
        methods = [MethodSpec(m.name, {**m.options, "n_bins": int(nb)}, m.label) for m in hist]
        cfg = ExperimentConfig(methods, config.metrics, config.lequa_dir, config.manifest,
                               config.synthetic, config.seed, None, config.preset, config.threads)
        out[int(nb)] = run_benchmark(cfg, data, verbose)
    return out
