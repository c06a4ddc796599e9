"""End-to-end synthetic benchmark on the two-Gaussian model.

One pool is drawn per run; each split re-partitions it with seed
``base_seed + split_index``, trains a logistic classifier, scores the test
part with every configured method and evaluates the rejection decisions.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from doctor import gaussian as gm
from doctor import metrics
from doctor.perturb import PerturbSpec, preprocess
from doctor.scoring import mahalanobis_fit, rejection_score
from doctor.trainer import LogisticClassifier, TrainConfig, accuracy, ce_risk, posterior, train

SCHEMA_VERSION = "1"
ALL_METHODS = ("d_star", "d_alpha", "d_beta", "sr", "odin", "mhlnb")
DEFAULT_METHODS = ("d_star", "d_alpha", "d_beta", "sr", "odin")
RATIO_METHODS = ("d_star", "d_alpha", "d_beta")
ROC_MODES = ("exact", "grid", "both")
MARKOV_ETAS = (0.5, 0.2, 0.1)
_PERTURB_NAME = {"d_alpha": "alpha", "d_beta": "beta", "odin": "odin", "mhlnb": "mahalanobis"}


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name
        self.detail = message


@dataclass(frozen=True)
class ExperimentConfig:
    mu: tuple = (1.0, 1.0)
    sigma: float = 2.0
    n_per_class: int = 5000
    n_train: int = 6700
    splits: int = 8
    lr: float = 0.1
    epochs: int = 5
    base_seed: int = 0
    methods: tuple = DEFAULT_METHODS
    temperature: float = 1.0
    epsilon: float = 0.0
    roc_mode: str = "both"
    resample_pool: bool = False
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mu", tuple(float(v) for v in np.atleast_1d(self.mu)))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not len(self.mu) or not all(math.isfinite(v) for v in self.mu):
            raise ConfigError("mu", "must be a non-empty finite vector")
        if not self.sigma > 0:
            raise ConfigError("sigma", f"must be > 0, got {self.sigma}")
        if self.n_per_class < 1:
            raise ConfigError("n_per_class", "must be >= 1")
        if not 0 < self.n_train < 2 * self.n_per_class:
            raise ConfigError("n_train", f"must be in (0, {2 * self.n_per_class})")
        if self.splits < 1:
            raise ConfigError("splits", "must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr", "must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs", "must be >= 1")
        bad = [m for m in self.methods if m not in ALL_METHODS]
        if bad:
            raise ConfigError("methods", f"unknown {bad}; choose from {ALL_METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods", "duplicates")
        if not self.temperature > 0:
            raise ConfigError("temperature", "must be > 0")
        if self.epsilon < 0:
            raise ConfigError("epsilon", "must be >= 0")
        if self.roc_mode not in ROC_MODES:
            raise ConfigError("roc_mode", f"must be one of {ROC_MODES}")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown config field")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError("config", str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mu"] = list(self.mu)
        d["methods"] = list(self.methods)
        return d

    @property
    def model(self) -> gm.GaussianBinaryModel:
        return gm.GaussianBinaryModel(np.array(self.mu), self.sigma)

    @property
    def roc_modes(self) -> tuple:
        return ("exact", "grid") if self.roc_mode == "both" else (self.roc_mode,)


def score_dataset(classifier: LogisticClassifier, test: gm.Samples, method: str,
                  temperature: float = 1.0, epsilon: float = 0.0,
                  model: gm.GaussianBinaryModel | None = None,
                  mahalanobis=None) -> metrics.ScoredItems:
    """Rejection scores and error bits for every test sample.

    Error bits always come from the prediction on the unperturbed input.
    ``d_star`` needs the true ``model`` and ignores temperature and epsilon.
    """
    X, y = test.X, test.y
    pred = classifier.predict(X)
    errors = (pred != y).astype(np.int8)
    ids = np.arange(len(test))
    if method == "d_star":
        if model is None:
            raise ValueError("d_star needs the generating GaussianBinaryModel")
        return metrics.ScoredItems(gm.optimal_score(model, pred, X), errors, ids)
    if method not in ALL_METHODS:
        raise ValueError(f"unknown method {method!r}")
    if epsilon > 0:
        if method == "sr":
            raise ValueError("sr has no input pre-processing; use odin for epsilon > 0")
        spec = PerturbSpec(epsilon, _PERTURB_NAME[method], temperature)
        X = preprocess(X, spec, classifier, mahalanobis)
    if method == "mhlnb":
        scores = rejection_score("mhlnb", posterior(classifier, X, 1.0), mahalanobis=mahalanobis)
    elif method == "odin":
        raw = classifier.logit(X)
        logits = np.stack([np.zeros_like(raw), raw], axis=-1)
        scores = rejection_score("odin", logits=logits, temperature=temperature)
    else:
        scores = rejection_score(method, posterior(classifier, X, temperature))
    return metrics.ScoredItems(np.asarray(scores, dtype=np.float64), errors, ids)


def build_pool(cfg: ExperimentConfig, split_index: int = 0) -> gm.Samples:
    seed = cfg.base_seed + split_index if cfg.resample_pool else cfg.base_seed
    return gm.sample_pool(cfg.model, cfg.n_per_class, seed)


def prepare_split(cfg: ExperimentConfig, pool: gm.Samples | None, split_index: int):
    """Partition, then train; returns ``(SplitDataset, LogisticClassifier)``."""
    if pool is None or cfg.resample_pool:
        pool = build_pool(cfg, split_index)
    ds = gm.split(pool, cfg.n_train, cfg.base_seed + split_index)
    clf = train(ds.train.X, ds.train.y, TrainConfig(cfg.lr, cfg.epochs, cfg.base_seed + split_index))
    return ds, clf


def _method_metrics(items: metrics.ScoredItems, method: str, modes) -> dict:
    out = {}
    for mode in modes:
        curve = metrics.roc_exact(items.scores, items.errors) if mode == "exact" \
            else metrics.roc_grid(items.scores, items.errors)
        out[f"auroc_{mode}"] = metrics.auroc(curve)
        out[f"frr95_{mode}"] = metrics.frr_at_trr(curve, 0.95).frr
    n1 = int(items.errors.sum())
    n0 = len(items) - n1
    ref = out.get("auroc_exact", out.get("auroc_grid"))
    out["auroc_se"] = metrics.auroc_se(ref, n0, n1)
    if method in RATIO_METHODS:
        eps0, eps1 = metrics.type_errors(metrics.confusion(items.scores, items.errors, 1.0))
        out["eps0_gamma1"] = eps0
        out["eps1_gamma1"] = eps1
    return out


def evaluate_split(cfg: ExperimentConfig, pool: gm.Samples | None, split_index: int,
                   keep_curves: bool = False) -> dict:
    model = cfg.model
    ds, clf = prepare_split(cfg, pool, split_index)
    test = ds.test
    bayes = gm.bayes_classify(model, test.X)
    risk = ce_risk(clf, test.X, test.y)
    q_hat = posterior(clf, test.X, 1.0)[:, 1]
    delta = gm.kl_delta(model, q_hat, test.X)
    markov = {}
    for eta in MARKOV_ETAS:
        level = gm.markov_epsilon(risk, eta)
        frac = float(np.mean(delta >= level))
        markov[str(eta)] = {"epsilon": level, "fraction": frac, "holds": frac <= eta}
    result = {
        "split": split_index,
        "seed": cfg.base_seed + split_index,
        "n_test": len(test),
        "accuracy": accuracy(clf, test.X, test.y),
        "bayes_accuracy": float(np.mean(bayes == test.y)),
        "ce_risk": risk,
        "weights": [float(w) for w in clf.weights],
        "bias": clf.bias,
        "markov": markov,
        "methods": {},
    }
    maha = None
    if "mhlnb" in cfg.methods:
        maha = mahalanobis_fit(posterior(clf, ds.train.X, 1.0), (ds.train.y > 0).astype(int), 2)
    curves = {}
    for method in cfg.methods:
        if method in ("d_star", "sr"):
            T, eps = 1.0, 0.0
        else:
            T, eps = cfg.temperature, cfg.epsilon
        items = score_dataset(clf, test, method, T, eps, model, maha)
        if len(items) != len(test):
            raise AssertionError("score_dataset dropped samples")
        result["methods"][method] = _method_metrics(items, method, cfg.roc_modes)
        if keep_curves:
            curves[method] = {
                mode: (metrics.roc_exact if mode == "exact" else metrics.roc_grid)(items.scores, items.errors)
                for mode in cfg.roc_modes
            }
    if keep_curves:
        result["_curves"] = curves
    return result


def _mean_tree(trees: list):
    first = trees[0]
    if isinstance(first, dict):
        return {k: _mean_tree([t[k] for t in trees]) for k in first}
    if isinstance(first, bool):
        return all(trees)
    if isinstance(first, (int, float)):
        return float(np.mean(trees))
    return None


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    per_split: list
    curves: list | None = None

    @property
    def aggregate(self) -> dict:
        keys = ("accuracy", "bayes_accuracy", "ce_risk", "markov", "methods")
        agg = _mean_tree([{k: s[k] for k in keys} for s in self.per_split])
        agg["splits"] = len(self.per_split)
        accs = np.array([s["accuracy"] for s in self.per_split])
        agg["accuracy_se"] = float(accs.std(ddof=1) / np.sqrt(accs.size)) if accs.size > 1 else 0.0
        agg["bayes_accuracy_closed_form"] = gm.bayes_accuracy(self.config.model)
        return agg

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "per_split": self.per_split,
            "aggregate": self.aggregate,
        }


def run_experiment(cfg: ExperimentConfig, keep_curves: bool = False) -> ExperimentReport:
    """Run every split; the reduction order is the split order."""
    pool = None if cfg.resample_pool else build_pool(cfg)
    def job(i):
        return evaluate_split(cfg, pool, i, keep_curves)
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(job, range(cfg.splits)))
    else:
        results = [job(i) for i in range(cfg.splits)]
    curves = [r.pop("_curves") for r in results] if keep_curves else None
    return ExperimentReport(cfg, results, curves)


def prop1_monte_carlo(cfg: ExperimentConfig, gamma: float = 1.0):
    """Average Type-I / Type-II errors of the oracle region ``{D* score > gamma}``.

    Returns ``(eps0_avg, eps1_avg, details)``.
    """
    pool = None if cfg.resample_pool else build_pool(cfg)
    model = cfg.model
    details = []
    for i in range(cfg.splits):
        ds, clf = prepare_split(cfg, pool, i)
        items = score_dataset(clf, ds.test, "d_star", model=model)
        counts = metrics.confusion(items.scores, items.errors, gamma)
        eps0, eps1 = metrics.type_errors(counts)
        details.append({"split": i, "eps0": eps0, "eps1": eps1, **asdict(counts)})
    return (float(np.mean([d["eps0"] for d in details])),
            float(np.mean([d["eps1"] for d in details])), details)


def prop1_oracle_check(model: gm.GaussianBinaryModel, classifier, gammas=(1.0,),
                       n_samples: int = 1_000_000, seed: int = 0):
    """Monte-Carlo Type-I + Type-II errors of the optimal region against ``1 - TV``.

    The optimal region at level ``gamma`` compares the error-conditional
    densities ``p(x|E=1) > gamma p(x|E=0)``, i.e. the true error odds exceed
    ``gamma * P(E=1) / P(E=0)``.  ``P(E=1)`` comes from quadrature.
    """
    predict = classifier.predict if hasattr(classifier, "predict") else classifier
    p1, p0, pe1, h = gm.error_conditionals(model, predict)
    one_minus_tv = 1.0 - 0.5 * float(np.abs(p1 - p0).sum()) * h * h
    fresh = gm.sample_pool(model, n_samples // 2, seed)
    pred = np.asarray(predict(fresh.X))
    errors = pred != fresh.y
    log_odds = gm.optimal_log_score(model, pred, fresh.X)
    n1 = int(errors.sum())
    n0 = errors.size - n1
    rows = []
    for gamma in gammas:
        rejected = log_odds > np.log(gamma * pe1 / (1.0 - pe1))
        eps0 = float(np.sum(rejected & ~errors) / n0)
        eps1 = float(np.sum(~rejected & errors) / n1)
        se = math.sqrt(eps0 * (1 - eps0) / n0 + eps1 * (1 - eps1) / n1)
        rows.append({"gamma": gamma, "eps0": eps0, "eps1": eps1, "sum": eps0 + eps1, "se": se})
    return one_minus_tv, pe1, rows


def _flatten(prefix: str, value, out: list):
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else k, v, out)
    elif isinstance(value, list):
        for k, v in enumerate(value):
            _flatten(f"{prefix}.{k}", v, out)
    else:
        out.append((prefix, value))


def _csv_rows(report: dict):
    for entry in report["per_split"] + [dict(report["aggregate"], split="mean")]:
        split_id = entry["split"]
        for key, value in entry.items():
            if key in ("split", "methods"):
                continue
            flat = []
            _flatten(key, value, flat)
            for metric, v in flat:
                yield split_id, "", metric, v
        for method, vals in entry.get("methods", {}).items():
            flat = []
            _flatten("", vals, flat)
            for metric, v in flat:
                yield split_id, method, metric, v


CSV_HEADER = ("split", "method", "metric", "value")


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_report(report: ExperimentReport | dict, fmt: str = "json") -> bytes:
    """Serialize to UTF-8 JSON or to the flat ``split,method,metric,value`` CSV."""
    data = report.to_dict() if isinstance(report, ExperimentReport) else report
    if fmt == "json":
        return (json.dumps(data, indent=2, allow_nan=True) + "\n").encode("utf-8")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in _csv_rows(data):
            w.writerow([_fmt(x) for x in row])
        return buf.getvalue().encode("utf-8")
    raise ValueError(f"unknown format {fmt!r}; expected json or csv")


def _parse_value(text: str):
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        return float(text)


def read_report_csv(data: bytes | str) -> dict:
    """Parse emitted CSV into ``{(split, method, metric): value}``."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    rows = csv.reader(io.StringIO(text))
    header = tuple(next(rows))
    if header != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header}")
    return {(s, m, k): _parse_value(v) for s, m, k, v in rows}


def report_rows(report: dict) -> dict:
    """The ``{(split, method, metric): value}`` view of a report dict."""
    return {(str(s), m, k): v for s, m, k, v in _csv_rows(report)}
