"""Command-line front end: ``filter``, ``simulate`` and ``diagnose``.

Exit codes: 0 on success (an empty selection is a success), 1 for
validation/configuration errors, 2 for runtime or numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .data import Dataset, OutcomeSpec, load_csv, load_feature_matrix, standardize, train_test_split
from .errors import ConfigError, KnockoffError, ValidationError
from .knockoffs import GaussianKnockoffSampler, combine, exchangeability_diagnostic, sample_knockoffs
from .models import ModelSpec, fit_lasso, fit_metrics, fit_model
from .selection import knockoff_plus_threshold, knockoff_threshold
from .simulation import ScenarioConfig, aggregate, long_format_rows, run_scenario
from .statistics import (
    CpfConfig,
    cpf_statistics,
    default_time_grid,
    importance,
    lcd_statistics,
    lsm_statistics,
    write_stats_csv,
)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("cpfknockoff")


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _atomic_write(path: Path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _clean(x):
    """Make floats JSON-safe (inf/nan -> None)."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


# -- outcome spec from flags ----------------------------------------------------


def outcome_spec_from_args(args, required=True):
    """Build an OutcomeSpec from the JSON sidecar and/or role flags."""
    base = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            base = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        base = base.get("outcome", base)
    if args.outcome_col:
        base["outcome"] = args.outcome_col
    if args.time_col:
        base["time"] = args.time_col
    if args.event_col:
        base["event"] = args.event_col
    if args.cause_col:
        base["cause"] = args.cause_col
    if args.binary_cols:
        base["binary"] = [c.strip() for c in args.binary_cols.split(",") if c.strip()]
    if getattr(args, "outcome_type", None):
        base["kind"] = args.outcome_type
    if "kind" not in base:
        if base.get("time") and base.get("cause"):
            base["kind"] = "competing_risks"
        elif base.get("time") and base.get("event"):
            base["kind"] = "survival"
        elif base.get("outcome"):
            base["kind"] = "continuous"
        elif not required:
            return None
        else:
            raise ConfigError("no outcome given: use --outcome-col, --time-col/--event-col, "
                              "--time-col/--cause-col or --config")
    return OutcomeSpec.from_dict(base)


def _validate_inputs(args, spec):
    data = Path(args.data)
    if not data.is_file():
        raise FileNotFoundError(f"data file not found: {data}")
    if not 0.0 < args.q < 1.0:
        raise ConfigError(f"--q must lie in (0, 1), got {args.q}")
    model_spec = None
    if args.statistic == "cpf":
        if args.model:
            model_spec = ModelSpec.from_json_file(args.model)
        else:
            model_spec = _default_model(spec.kind)
        model_spec.check_outcome(spec.kind)
    elif spec.kind == "competing_risks":
        raise ConfigError("lasso statistics (lcd/lsm) are not available for competing-risks outcomes")
    return model_spec


def _default_model(kind):
    from .simulation import default_model_spec
    return default_model_spec(kind, "linear")


# -- filter ---------------------------------------------------------------------


def _outcome_summary(outcome):
    s = {"kind": outcome.kind, "n": len(outcome)}
    if outcome.kind == "binary":
        s["n_positive"] = int(np.sum(outcome.y))
    elif outcome.kind == "survival":
        s["n_events"] = int(np.sum(outcome.event))
    elif outcome.kind == "competing_risks":
        s["n_cause1"] = int(np.sum(outcome.cause == 1))
        s["n_cause2"] = int(np.sum(outcome.cause == 2))
        s["n_censored"] = int(np.sum(outcome.cause == 0))
    return s


def cmd_filter(args) -> int:
    spec = outcome_spec_from_args(args)
    model_spec = _validate_inputs(args, spec)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    ss = np.random.SeedSequence(args.seed)
    s_knock, s_split, s_model, s_cpf = (int(s.generate_state(1)[0]) for s in ss.spawn(4))

    data = load_csv(args.data, spec)
    x_std, params = standardize(data.features)
    sampler = GaussianKnockoffSampler.fit(x_std)
    x_knock = sample_knockoffs(sampler, x_std, s_knock)
    d_star = Dataset(combine(x_std, x_knock), data.outcome, params)
    train, test = train_test_split(d_star, args.train_fraction, s_split)
    p = data.p
    names = list(data.features.column_names)

    if args.statistic == "cpf":
        log.info("training %s model on %d rows", model_spec.kind, train.n)
        model = fit_model(model_spec, train, seed=s_model)
        cpf_cfg = CpfConfig(J=args.J, n_sub=args.n_sub, delta=args.delta, seed=s_cpf)
        if spec.kind in ("survival", "competing_risks"):
            cpf_cfg = cpf_cfg.with_time_grid(default_time_grid(d_star.outcome.time))
        stats = cpf_statistics(importance(model, d_star.features, cpf_cfg))
        model_meta = {"spec": model_spec.to_dict(), "cpf": cpf_cfg.to_dict()}
    else:
        model = fit_lasso(train, cv_folds=args.cv_folds, seed=s_model)
        stats = lcd_statistics(model, p) if args.statistic == "lcd" else lsm_statistics(model, p)
        model_meta = {"spec": {"kind": "lasso", "cv_folds": args.cv_folds}, "lambda": model.lam}

    metrics = {"train": fit_metrics(model, train), "test": fit_metrics(model, test)}
    sel_ko = knockoff_threshold(stats.w, args.q)
    sel_plus = knockoff_plus_threshold(stats.w, args.q)
    primary = sel_plus if args.plus else sel_ko

    warnings = []
    if sampler.ridge > 0:
        warnings.append(f"covariance shrinkage engaged (ridge {sampler.ridge:.3g})")
    if p > data.n:
        warnings.append(f"p ({p}) exceeds N ({data.n})")

    report = {
        "schema_version": SCHEMA_VERSION,
        "artifact_version": __version__,
        "command": "filter",
        "config": {
            "data": str(args.data),
            "outcome": spec.to_dict(),
            "statistic": args.statistic,
            "q": args.q,
            "plus": bool(args.plus),
            "seed": args.seed,
            "train_fraction": args.train_fraction,
            "J": args.J,
            "n_sub": args.n_sub,
            "delta": args.delta,
            "cv_folds": args.cv_folds,
        },
        "data": {
            "n": data.n,
            "p": p,
            "features": names,
            "binary_features": [n for n, k in zip(names, data.features.column_kinds) if k == "binary"],
            "outcome": _outcome_summary(data.outcome),
            "n_train": train.n,
            "n_test": test.n,
        },
        "knockoffs": {
            "construction": sampler.construction,
            "ridge": sampler.ridge,
            "s_min": float(sampler.s.min()),
            "s_max": float(sampler.s.max()),
        },
        "model": model_meta,
        "fit_metrics": metrics,
        "statistics": {
            "kind": stats.statistic_kind,
            "table": [
                {"feature": names[j],
                 "U_original": None if stats.z is None else float(stats.z[j]),
                 "U_knockoff": None if stats.z_tilde is None else float(stats.z_tilde[j]),
                 "W": float(stats.w[j])}
                for j in range(p)
            ],
        },
        "selections": {
            "knockoff": sel_ko.to_dict(names),
            "knockoff_plus": sel_plus.to_dict(names),
        },
        "selected": primary.selected_names(names),
        "selection_kind": primary.kind,
        "warnings": warnings,
    }
    _atomic_write(out_dir / "report.json", _dump(_clean(report)))
    write_stats_csv(out_dir / "w_stats.csv", stats, names)
    print(f"{primary.kind} selection at q={args.q}: "
          f"{', '.join(primary.selected_names(names)) or '(none)'}")
    return EXIT_OK


# -- simulate ---------------------------------------------------------------------

REPLICATION_FIELDS = ["rep", "seed", "fdp", "mfdp", "power", "n_selected"]


def _read_log(path):
    if not path.is_file():
        return []
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({"rep": int(r["rep"]), "seed": int(r["seed"]), "fdp": float(r["fdp"]),
                    "mfdp": float(r["mfdp"]), "power": float(r["power"]),
                    "n_selected": int(r["n_selected"])})
    return out


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def _comparable(d):
    d = dict(d)
    d.pop("replications", None)
    return d


def cmd_simulate(args) -> int:
    cfg = ScenarioConfig.from_json_file(args.scenario)
    if args.seed is not None:
        cfg.seed = args.seed
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario_path = out_dir / "scenario.json"
    if scenario_path.is_file():
        previous = json.loads(scenario_path.read_text())
        if _comparable(previous) != _comparable(_clean(cfg.to_dict())):
            raise ConfigError(f"{out_dir} holds results for a different scenario; use a fresh --out")
    _atomic_write(scenario_path, _dump(_clean(cfg.to_dict())))

    log_path = out_dir / "replications.csv"
    done = {r["rep"] for r in _read_log(log_path)}
    todo = [r for r in range(cfg.replications) if r not in done]
    if done:
        log.info("resuming: %d replications already logged", len(done))
    new_file = not log_path.is_file()
    with log_path.open("a", newline="", encoding="utf-8") as fh, \
            (out_dir / "timings.csv").open("a", newline="", encoding="utf-8") as th:
        writer = csv.writer(fh, lineterminator="\n")
        timer = csv.writer(th, lineterminator="\n")
        if new_file:
            writer.writerow(REPLICATION_FIELDS)
            fh.flush()

        def on_result(res):
            rec = res.record()
            writer.writerow([_fmt(rec[k]) for k in REPLICATION_FIELDS])
            fh.flush()
            os.fsync(fh.fileno())
            timer.writerow([res.rep, f"{res.wall_time:.3f}"])
            th.flush()
            log.info("rep %d: fdp=%.3f power=%.3f", res.rep, res.fdp, res.power)

        run_scenario(cfg, todo, threads=args.threads, on_result=on_result)

    records = [r for r in _read_log(log_path) if r["rep"] < cfg.replications]
    summary = aggregate(records)
    summary["schema_version"] = SCHEMA_VERSION
    summary["artifact_version"] = __version__
    summary["scenario"] = cfg.to_dict()
    _atomic_write(out_dir / "summary.json", _dump(_clean(summary)))
    label = cfg.name or f"{cfg.outcome_family}-{cfg.link}"
    with (out_dir / "boxplot.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "statistic", "metric", "value"])
        for row in long_format_rows(summary, label, cfg.statistic):
            w.writerow([row[0], row[1], row[2], _fmt(row[3])])
    print(f"{label} [{cfg.statistic}, {cfg.selection_kind}] R={summary['n_replications']}: "
          f"mean FDP {summary['fdp']['mean']:.3f}, mean power {summary['power']['mean']:.3f}")
    return EXIT_OK


# -- diagnose ---------------------------------------------------------------------


def diagnostic_threshold(n):
    """Pass threshold on the largest moment deviation: 0.05, widened to
    6/sqrt(N) for small samples where Monte-Carlo noise dominates."""
    return max(0.05, 6.0 / math.sqrt(n))


def cmd_diagnose(args) -> int:
    spec = outcome_spec_from_args(args, required=False)
    if spec is not None:
        features = load_csv(args.data, spec).features
    else:
        binary = [c.strip() for c in (args.binary_cols or "").split(",") if c.strip()]
        features = load_feature_matrix(args.data, binary=binary)
    x_std, _ = standardize(features)
    sampler = GaussianKnockoffSampler.fit(x_std)
    seed = int(np.random.SeedSequence(args.seed).generate_state(1)[0])
    x_knock = sample_knockoffs(sampler, x_std, seed)
    rep = exchangeability_diagnostic(x_std, x_knock)
    threshold = diagnostic_threshold(rep.n)
    warnings = []
    if rep.p > rep.n:
        warnings.append(f"p ({rep.p}) exceeds N ({rep.n}): covariance is singular and was shrunk")
    if sampler.ridge > 0:
        warnings.append(f"covariance shrinkage engaged (ridge {sampler.ridge:.3g})")
    verdict = "pass" if rep.passed(threshold) else "fail"
    report = {
        "schema_version": SCHEMA_VERSION,
        "artifact_version": __version__,
        "command": "diagnose",
        "config": {"data": str(args.data), "seed": args.seed},
        "features": list(features.column_names),
        "diagnostic": rep.to_dict(),
        "threshold": threshold,
        "verdict": verdict,
        "warnings": warnings,
        "knockoffs": {"construction": sampler.construction, "ridge": sampler.ridge,
                      "s": sampler.s.tolist()},
    }
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _atomic_write(out_dir / "diagnose.json", _dump(_clean(report)))
    print(f"exchangeability diagnostic: {verdict} (max deviation {rep.max_deviation:.4f}, "
          f"threshold {threshold:.4f})")
    for w in warnings:
        print(f"warning: {w}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------


def _add_outcome_flags(p):
    p.add_argument("--config", help="JSON sidecar with the outcome spec")
    p.add_argument("--outcome-col", help="continuous or binary outcome column")
    p.add_argument("--outcome-type", choices=["continuous", "binary"])
    p.add_argument("--time-col", help="survival / competing-risks time column")
    p.add_argument("--event-col", help="survival event indicator column (1 = event)")
    p.add_argument("--cause-col", help="competing-risks cause column (0 = censored)")
    p.add_argument("--binary-cols", help="comma-separated 0/1 feature columns")


def build_parser():
    parser = argparse.ArgumentParser(prog="cpfknockoff", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    f = sub.add_parser("filter", parents=[common], help="knockoff filtering on a CSV dataset")
    f.add_argument("--data", required=True)
    _add_outcome_flags(f)
    f.add_argument("--statistic", choices=["cpf", "lcd", "lsm"], default="cpf")
    f.add_argument("--model", help="JSON model config (cpf only)")
    f.add_argument("--q", type=float, default=0.2)
    f.add_argument("--plus", action="store_true", help="report knockoff+ as the primary selection")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.add_argument("--threads", type=int, default=1, help="accepted for symmetry with simulate; a single fit runs on one thread")
    f.add_argument("--train-fraction", type=float, default=0.7)
    f.add_argument("--J", type=int, default=5)
    f.add_argument("--n-sub", type=int, default=100)
    f.add_argument("--delta", type=float, default=0.1)
    f.add_argument("--cv-folds", type=int, default=5)
    f.set_defaults(func=cmd_filter)

    s = sub.add_parser("simulate", parents=[common], help="run a simulation scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--seed", type=int, default=None, help="overrides the scenario seed")
    s.add_argument("--out", required=True)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("diagnose", parents=[common], help="exchangeability diagnostics of Gaussian knockoffs")
    g.add_argument("--data", required=True)
    _add_outcome_flags(g)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except KnockoffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
