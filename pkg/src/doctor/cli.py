"""Command-line front end: ``doctor synth | eval | hist``.

Settings resolve in the order: command-line flag, ``DOCTOR_<NAME>`` environment
variable (e.g. ``DOCTOR_SIGMA=4``, ``DOCTOR_OUT_DIR=runs``), ``--config`` file
(synth only), built-in default.

Exit codes: 0 all outputs written; 1 I/O failure; 2 bad configuration or
arguments; 3 malformed score file; 4 metrics undefined (single E-class).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from doctor import harness, metrics
from doctor.harness import ALL_METHODS, ConfigError, ExperimentConfig
from doctor.scorefile import ScoreFile, ScoreFileError, read_score_file
from doctor.scoring import mahalanobis_fit, rejection_score, softmax

ENV_PREFIX = "DOCTOR_"
EVAL_METHODS = ("d_alpha", "d_beta", "sr", "odin", "mhlnb")
THRESHOLD_FLAG = {"d_alpha": "gamma", "d_beta": "gamma", "sr": "delta", "odin": "delta", "mhlnb": "zeta"}
ROC_HEADER = ("split", "mode", "threshold", "frr", "trr")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_INPUT, EXIT_UNDEFINED = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _float_list(text: str) -> list[float]:
    return [float(t) for t in _csv_list(text)]


def _apply_env(parser: argparse.ArgumentParser, args: argparse.Namespace, environ) -> None:
    """Fill flags left unset on the command line from ``DOCTOR_*`` variables."""
    for action in parser._actions:
        dest = action.dest
        if dest in ("help", "command") or getattr(args, dest, None) is not None:
            continue
        raw = environ.get(ENV_PREFIX + dest.upper())
        if raw is None:
            continue
        if action.const is True and action.nargs == 0:
            value = raw.strip().lower() in ("1", "true", "yes", "on")
        else:
            convert = action.type or str
            try:
                value = convert(raw)
            except ValueError as exc:
                raise CliError(f"{ENV_PREFIX}{dest.upper()}: {exc}", EXIT_CONFIG) from None
        if action.choices is not None and value not in action.choices:
            raise CliError(f"{ENV_PREFIX}{dest.upper()}: {value!r} not in {list(action.choices)}", EXIT_CONFIG)
        setattr(args, dest, value)


def _write(path: Path, data: bytes | str) -> None:
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.write_bytes(data)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _roc_rows(curve: metrics.RocCurve, split):
    for t, f, r in zip(curve.thresholds, curve.frr, curve.trr):
        yield split, curve.mode, float(t), float(f), float(r)


# synth

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_SYNTH_FLAGS = {
    "sigma": "sigma", "seed": "base_seed", "splits": "splits", "temperature": "temperature",
    "epsilon": "epsilon", "roc_mode": "roc_mode", "methods": "methods", "mu": "mu",
    "n_per_class": "n_per_class", "n_train": "n_train", "lr": "lr", "epochs": "epochs",
    "workers": "workers", "resample_pool": "resample_pool",
}


def _coerce(key: str, value):
    """Type-check one flat config value against the ExperimentConfig field."""
    default = getattr(ExperimentConfig, key)
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError("expected true or false")
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError("expected an integer")
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError("expected a number")
            return float(value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError("expected a string")
            return value
        if key == "methods":
            value = _csv_list(value) if isinstance(value, str) else list(value)
            if not all(isinstance(m, str) for m in value):
                raise TypeError("expected method names")
            return tuple(value)
        if key == "mu":
            value = _float_list(value) if isinstance(value, str) else [float(v) for v in np.atleast_1d(value)]
            return tuple(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"invalid value {value!r} ({exc})") from None
    return value


def load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_CONFIG) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}", EXIT_CONFIG) from None
    if not isinstance(data, dict):
        raise CliError(f"config {path} must be a flat JSON object", EXIT_CONFIG)
    return data


def resolve_synth_config(args: argparse.Namespace) -> ExperimentConfig:
    merged = dict(load_config(args.config))
    for flag, key in _SYNTH_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            merged[key] = value
    for key in merged:
        if key not in _FIELD_TYPES:
            raise ConfigError(key, "unknown config field")
    return ExperimentConfig.from_dict({k: _coerce(k, v) for k, v in merged.items()})


def cmd_synth(args: argparse.Namespace) -> int:
    try:
        cfg = resolve_synth_config(args)
    except ConfigError as exc:
        raise CliError(f"invalid config field '{exc.field}': {exc.detail}", EXIT_CONFIG) from None
    report = harness.run_experiment(cfg, keep_curves=True)
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "report.json", harness.emit_report(report, "json"))
    _write(out / "report.csv", harness.emit_report(report, "csv"))
    for method in cfg.methods:
        rows = []
        for split, curves in enumerate(report.curves):
            for mode in cfg.roc_modes:
                rows.extend(_roc_rows(curves[method][mode], split))
        _write(out / f"roc_{method}.csv", _csv_text(ROC_HEADER, rows))
    agg = report.aggregate
    print(f"splits={agg['splits']} sigma={cfg.sigma} accuracy={agg['accuracy']:.4f} "
          f"bayes={agg['bayes_accuracy']:.4f}")
    for method, vals in agg["methods"].items():
        cols = " ".join(f"{k}={v:.4f}" for k, v in vals.items() if k.startswith(("auroc", "frr95")))
        print(f"{method:8s} {cols}")
    star = agg["methods"].get("d_star")
    if star is not None:
        print(f"d_star gamma=1: eps0_avg={star['eps0_gamma1']:.4f} eps1_avg={star['eps1_gamma1']:.4f}")
    print(f"wrote {out}")
    return EXIT_OK


# eval

def _logits_of(sf: ScoreFile) -> np.ndarray:
    if sf.kind == "logits":
        return sf.values
    return np.log(np.maximum(sf.values, np.finfo(np.float64).tiny))


def _probs_of(sf: ScoreFile, temperature: float = 1.0) -> np.ndarray:
    if sf.kind == "softmax" and temperature == 1.0:
        return sf.values
    return softmax(_logits_of(sf), temperature)


def error_bits(sf: ScoreFile) -> np.ndarray:
    """``1[label != argmax]``; ties resolve to the lowest class index."""
    return (sf.values.argmax(axis=1) != sf.labels).astype(np.int8)


def eval_scores(sf: ScoreFile, method: str, temperature: float = 1.0, fit: ScoreFile | None = None):
    """Canonical rejection scores for every row of a score file.

    SR always reads the T=1 softmax; DOCTOR and ODIN use temperature ``T``.
    MHLNB fits class means and a pooled covariance on ``fit`` (T=1 softmax).
    """
    if method == "sr":
        return rejection_score("sr", _probs_of(sf))
    if method == "odin":
        return rejection_score("odin", logits=_logits_of(sf), temperature=temperature)
    if method in ("d_alpha", "d_beta"):
        return rejection_score(method, _probs_of(sf, temperature))
    if method == "mhlnb":
        if fit is None:
            raise CliError("mhlnb needs --fit-file with training scores", EXIT_CONFIG)
        if fit.n_classes != sf.n_classes:
            raise CliError(f"fit file has {fit.n_classes} classes, score file {sf.n_classes}", EXIT_INPUT)
        model = mahalanobis_fit(_probs_of(fit), fit.labels, sf.n_classes)
        return rejection_score("mhlnb", _probs_of(sf), mahalanobis=model)
    raise CliError(f"unknown method {method!r}", EXIT_CONFIG)


def decision_threshold(method: str, value: float) -> float:
    """Canonical-score threshold reproducing each method's own decision rule.

    SR and ODIN reject when the confidence is ``<= delta``; their canonical
    score is the negated confidence, so ``-conf > nextafter(-delta, -inf)``.
    """
    if THRESHOLD_FLAG[method] == "delta":
        return float(np.nextafter(-value, -np.inf))
    return float(value)


def evaluate_file(sf: ScoreFile, methods, temperature=1.0, thresholds=None, roc_mode="both", fit=None):
    """Metrics per method; returns ``(results, curves)``."""
    thresholds = thresholds or {}
    errors = error_bits(sf)
    modes = ("exact", "grid") if roc_mode == "both" else (roc_mode,)
    results, curves = {}, {}
    for method in methods:
        scores = np.asarray(eval_scores(sf, method, temperature, fit), dtype=np.float64)
        flag = THRESHOLD_FLAG[method]
        if thresholds.get(flag) is not None:
            counts = metrics.confusion(scores, errors, decision_threshold(method, thresholds[flag]))
            eps0, eps1 = metrics.type_errors(counts)
            results[method] = {flag: thresholds[flag], "fr": counts.fr, "tr": counts.tr,
                               "fa": counts.fa, "ta": counts.ta, "eps0": eps0, "eps1": eps1}
            continue
        vals, curves[method] = {}, {}
        for mode in modes:
            curve = metrics.roc_exact(scores, errors) if mode == "exact" else metrics.roc_grid(scores, errors)
            curves[method][mode] = curve
            vals[f"auroc_{mode}"] = metrics.auroc(curve)
            vals[f"frr95_{mode}"] = metrics.frr_at_trr(curve).frr
        results[method] = vals
    return results, curves


def cmd_eval(args: argparse.Namespace) -> int:
    temperature = 1.0 if args.temperature is None else args.temperature
    if not temperature > 0:
        raise CliError("temperature must be > 0", EXIT_CONFIG)
    methods = _csv_list(args.methods) if args.methods else ["d_alpha", "d_beta", "sr", "odin"]
    bad = [m for m in methods if m not in EVAL_METHODS]
    if bad:
        raise CliError(f"unknown methods {bad}; choose from {list(EVAL_METHODS)}", EXIT_CONFIG)
    if "mhlnb" in methods and not args.fit_file:
        raise CliError("mhlnb needs --fit-file with training scores", EXIT_CONFIG)
    sf = _read(args.scores)
    fit = _read(args.fit_file) if args.fit_file else None
    errors = error_bits(sf)
    n1 = int(errors.sum())
    thresholds = {"gamma": args.gamma, "delta": args.delta, "zeta": args.zeta}
    try:
        results, curves = evaluate_file(sf, methods, temperature, thresholds, args.roc_mode or "both", fit)
    except metrics.SingleClassError:
        raise CliError(f"metrics undefined: {sf.n_classes}-class file has #(E=0)={len(sf) - n1} and "
                       f"#(E=1)={n1}; both correct and wrong predictions are required", EXIT_UNDEFINED) from None
    summary = {
        "schema_version": harness.SCHEMA_VERSION,
        "input": str(args.scores),
        "n": len(sf),
        "n_classes": sf.n_classes,
        "kind": sf.kind,
        "converted_from_logits": sf.kind == "logits",
        "temperature": temperature,
        "n_errors": n1,
        "methods": results,
    }
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "eval.json", json.dumps(summary, indent=2) + "\n")
    rows = [(m, k, v) for m, vals in results.items() for k, v in vals.items()]
    _write(out / "eval.csv", _csv_text(("method", "metric", "value"), rows))
    for method, by_mode in curves.items():
        rows = [r for curve in by_mode.values() for r in _roc_rows(curve, "")]
        _write(out / f"roc_{method}.csv", _csv_text(ROC_HEADER, rows))
    if sf.kind == "logits":
        print("note: logits converted to probabilities with a stable softmax")
    for method, vals in results.items():
        print(f"{method:8s} " + " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                                         for k, v in vals.items()))
    return EXIT_OK


def _read(path) -> ScoreFile:
    try:
        return read_score_file(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from None
    except ScoreFileError as exc:
        raise CliError(f"{path}: {exc}", EXIT_INPUT) from None


# hist

def _natural(method: str, canonical: np.ndarray) -> np.ndarray:
    # SR and ODIN are negated in canonical form; show the confidence itself
    return -canonical if method in ("sr", "odin") else canonical


def cmd_hist(args: argparse.Namespace) -> int:
    bins = 10 if args.bins is None else args.bins
    if bins < 2:
        raise CliError("bins must be >= 2", EXIT_CONFIG)
    method = args.method or "d_alpha"
    temperature = 1.0 if args.temperature is None else args.temperature
    if args.scores:
        if method not in EVAL_METHODS:
            raise CliError(f"method must be one of {list(EVAL_METHODS)}", EXIT_CONFIG)
        sf = _read(args.scores)
        fit = _read(args.fit_file) if args.fit_file else None
        scores = np.asarray(eval_scores(sf, method, temperature, fit), dtype=np.float64)
        errors = error_bits(sf)
    else:
        if method not in ALL_METHODS:
            raise CliError(f"method must be one of {list(ALL_METHODS)}", EXIT_CONFIG)
        try:
            cfg = resolve_synth_config(args)
        except ConfigError as exc:
            raise CliError(f"invalid config field '{exc.field}': {exc.detail}", EXIT_CONFIG) from None
        pool = None if cfg.resample_pool else harness.build_pool(cfg)
        ds, clf = harness.prepare_split(cfg, pool, args.split or 0)
        maha = None
        if method == "mhlnb":
            from doctor.trainer import posterior
            maha = mahalanobis_fit(posterior(clf, ds.train.X, 1.0), (ds.train.y > 0).astype(int), 2)
        T = 1.0 if method in ("d_star", "sr") else cfg.temperature
        eps = 0.0 if method in ("d_star", "sr") else cfg.epsilon
        items = harness.score_dataset(clf, ds.test, method, T, eps, cfg.model, maha)
        scores, errors = items.scores, items.errors
    edges, c0, c1 = metrics.histogram(_natural(method, scores), errors, bins)
    rows = [(float(edges[i]), float(edges[i + 1]), int(c0[i]), int(c1[i])) for i in range(bins)]
    text = _csv_text(("bin_lo", "bin_hi", "count_e0", "count_e1"), rows)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _add_synth_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat JSON object with ExperimentConfig fields")
    p.add_argument("--sigma", type=float, help="noise level (default 2)")
    p.add_argument("--mu", type=str, help="comma-separated mean vector (default 1,1)")
    p.add_argument("--seed", type=int, help="base seed; split i uses seed + i (default 0)")
    p.add_argument("--splits", type=int, help="number of train/test splits (default 8)")
    p.add_argument("--n-per-class", dest="n_per_class", type=int, help="pool size per class (default 5000)")
    p.add_argument("--n-train", dest="n_train", type=int, help="training points per split (default 6700)")
    p.add_argument("--lr", type=float, help="learning rate (default 0.1)")
    p.add_argument("--epochs", type=int, help="gradient steps (default 5)")
    p.add_argument("--methods", type=str, help=f"comma-separated subset of {','.join(ALL_METHODS)}")
    p.add_argument("--temperature", type=float, help="softmax temperature (default 1)")
    p.add_argument("--epsilon", type=float, help="input pre-processing step (default 0)")
    p.add_argument("--roc-mode", dest="roc_mode", choices=harness.ROC_MODES, help="default both")
    p.add_argument("--workers", type=int, help="threads for split evaluation (default 1)")
    p.add_argument("--resample-pool", dest="resample_pool", action="store_const", const=True,
                   help="draw a fresh pool for every split")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="doctor",
        description="Misclassification detection from soft predictions.",
        epilog=f"Any flag may also be set through {ENV_PREFIX}<FLAG> (dashes as underscores, upper case).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="run the two-Gaussian benchmark")
    _add_synth_flags(p)
    p.add_argument("--out-dir", dest="out_dir", type=str, help="output directory (default .)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="evaluate a softmax/logit score file")
    p.add_argument("scores", type=Path, help="score file (.csv or .jsonl)")
    p.add_argument("--methods", type=str, help=f"comma-separated subset of {','.join(EVAL_METHODS)}")
    p.add_argument("--temperature", type=float, help="temperature for d_alpha, d_beta and odin")
    p.add_argument("--gamma", type=float, help="DOCTOR threshold; reject iff score > gamma")
    p.add_argument("--delta", type=float, help="SR/ODIN threshold; reject iff confidence <= delta")
    p.add_argument("--zeta", type=float, help="MHLNB threshold; reject iff M > zeta")
    p.add_argument("--fit-file", dest="fit_file", type=Path, help="training score file for mhlnb")
    p.add_argument("--roc-mode", dest="roc_mode", choices=harness.ROC_MODES, help="default both")
    p.add_argument("--out-dir", dest="out_dir", type=str, help="output directory (default .)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("hist", help="per-bin counts of a discriminator among E=0 and E=1")
    p.add_argument("--scores", type=Path, help="score file; without it the benchmark is used")
    p.add_argument("--fit-file", dest="fit_file", type=Path, help="training score file for mhlnb")
    p.add_argument("--method", type=str, help="discriminator (default d_alpha)")
    p.add_argument("--bins", type=int, help="number of bins, >= 2 (default 10)")
    p.add_argument("--split", type=int, help="benchmark split to histogram (default 0)")
    p.add_argument("--out", type=str, help="output CSV (default stdout)")
    _add_synth_flags(p)
    p.set_defaults(func=cmd_hist)
    return parser


def main(argv=None, environ=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    environ = os.environ if environ is None else environ
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        _apply_env(sub, args, environ)
        return args.func(args)
    except CliError as exc:
        print(f"doctor {args.command}: error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"doctor {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_IO


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
