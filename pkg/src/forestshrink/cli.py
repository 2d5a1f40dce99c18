"""Command-line interface.

Subcommands::

    forestshrink analyze  --data trial.csv --schema schema.json --estimators naive,lasso --out DIR
    forestshrink simulate --scenario 1 --runs 3 --seed 7 --out DIR
    forestshrink oracle   --scenario 3 --out DIR
    forestshrink report   --scenario 1 --runs 100 --estimators naive,population --out DIR

Settings come from defaults, then an optional ``--config`` JSON file, then
explicit flags.  Every artifact records the hash of the resolved settings
and the master seed.  Exit status is 0 on success, 2 for configuration
errors, 3 for data errors and 4 for numerical failures.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .binary import BINARY_ESTIMATORS, estimate_binary, parse_binary_dataset
from .data import SubgroupSchema, parse_dataset, serialize_dataset
from .errors import ConfigError, DataError, ForestShrinkError
from .estimators import ESTIMATORS, CvConfig, EstimateSet, HorseshoeConfig, run_estimator
from .evaluation import build_report
from .forest import forest_svg
from .hmc import HmcConfig
from .simulation import MASTER_SEED, N_EVENTS, N_SUBJECTS, TrueAhrTable, run_seed, scenario_coeffs, \
    simulate_trial, true_ahr_oracle

log = logging.getLogger("forestshrink")

SCHEMA_VERSION = "1.0"

DEFAULTS = {
    "analyze": {"data": None, "schema": None, "estimators": "naive,population,lasso,ridge",
                "outcome": "survival", "seed": 0, "out": None,
                "chains": 4, "warmup": 1000, "draws": 1000, "folds": 10},
    "simulate": {"scenario": 1, "runs": 1, "events": N_EVENTS, "n": N_SUBJECTS, "seed": MASTER_SEED,
                 "jobs": 1, "out": None},
    "oracle": {"scenario": 1, "n": 200_000, "repetitions": 3, "seed": MASTER_SEED, "out": None},
    "report": {"scenario": 1, "runs": 100, "events": N_EVENTS, "n": N_SUBJECTS, "seed": MASTER_SEED,
               "estimators": "naive,population", "truth": None, "jobs": 1, "out": None,
               "chains": 4, "warmup": 1000, "draws": 1000, "folds": 10},
}
# Settings that do not influence results and are left out of the config hash.
UNHASHED = {"out", "jobs", "config"}


def load_json_schema(name: str) -> dict:
    """Shipped JSON schema, e.g. ``"analyze-report"`` or ``"oracle"``."""
    text = resources.files("forestshrink").joinpath("schemas", f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def dumps(obj) -> str:
    """Deterministic JSON text."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def config_hash(settings: dict) -> str:
    payload = {k: v for k, v in settings.items() if k not in UNHASHED}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="forestshrink", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with settings (flags take precedence)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")

    def mcmc(sp):
        sp.add_argument("--estimators", help=f"comma-separated subset of {','.join(ESTIMATORS)}")
        sp.add_argument("--chains", type=int)
        sp.add_argument("--warmup", type=int)
        sp.add_argument("--draws", type=int)
        sp.add_argument("--folds", type=int, help="cross-validation folds")

    a = sub.add_parser("analyze", help="estimate subgroup effects for one dataset")
    common(a)
    mcmc(a)
    a.add_argument("--data", help="CSV dataset")
    a.add_argument("--schema", help="JSON subgroup schema")
    a.add_argument("--outcome", choices=("survival", "binary"))

    s = sub.add_parser("simulate", help="write simulated trials")
    common(s)
    s.add_argument("--scenario", type=int)
    s.add_argument("--runs", type=int)
    s.add_argument("--events", type=int)
    s.add_argument("--n", type=int)
    s.add_argument("--jobs", type=int)

    o = sub.add_parser("oracle", help="compute true subgroup AHRs of a scenario")
    common(o)
    o.add_argument("--scenario", type=int)
    o.add_argument("--n", type=int)
    o.add_argument("--repetitions", type=int)

    r = sub.add_parser("report", help="run estimators on simulated trials and evaluate them")
    common(r)
    mcmc(r)
    r.add_argument("--scenario", type=int)
    r.add_argument("--runs", type=int)
    r.add_argument("--events", type=int)
    r.add_argument("--n", type=int)
    r.add_argument("--truth", help="oracle JSON; computed on the fly when omitted")
    r.add_argument("--jobs", type=int)
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and explicit flags; validate the result."""
    settings = dict(DEFAULTS[args.command])
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(cfg) - set(settings)
        if unknown:
            raise ConfigError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        settings.update(cfg)
    for key in settings:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    for key in ("seed", "runs", "n", "events", "jobs", "repetitions", "chains", "warmup", "draws", "folds"):
        if key in settings and (not isinstance(settings[key], int) or settings[key] < 0):
            raise ConfigError(f"{key} must be a nonnegative integer")
    if settings.get("out") is None:
        raise ConfigError("--out is required")
    if "scenario" in settings:
        scenario_coeffs(settings["scenario"])
    if "estimators" in settings:
        names = [e.strip() for e in str(settings["estimators"]).split(",") if e.strip()]
        allowed = BINARY_ESTIMATORS if settings.get("outcome") == "binary" else ESTIMATORS
        bad = [e for e in names if e not in allowed]
        if bad or not names:
            raise ConfigError(f"unknown estimators {bad}; choose from {allowed}")
        settings["estimators"] = ",".join(names)
    for key in ("data", "schema", "truth"):
        if key in settings and settings[key] is not None and not Path(settings[key]).exists():
            raise ConfigError(f"{key} path does not exist: {settings[key]}")
    return settings


def _horseshoe_config(settings: dict) -> HorseshoeConfig:
    return HorseshoeConfig(HmcConfig(chains=settings["chains"], warmup=settings["warmup"],
                                     draws=settings["draws"], seed=settings["seed"]))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _header(settings: dict, command: str) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config_hash": config_hash(settings),
        "master_seed": settings["seed"],
        "settings": {k: v for k, v in settings.items() if k not in UNHASHED},
    }


def _clean(obj):
    """Replace non-finite floats by ``None`` recursively so JSON stays strict."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def cmd_analyze(settings: dict) -> int:
    schema = SubgroupSchema.from_json(Path(settings["schema"]))
    text = Path(settings["data"]).read_text(encoding="utf-8")
    binary = settings["outcome"] == "binary"
    dataset = parse_binary_dataset(text, schema) if binary else parse_dataset(text, schema)
    member = dataset.membership()
    if binary:
        counts = dataset.outcome.astype(bool)
    else:
        counts = dataset.event.astype(bool)
    sizes = member.sum(axis=0)
    events = (member & counts[:, None]).sum(axis=0)
    results, failed = [], 0
    sets: dict[str, EstimateSet] = {}
    for tag in settings["estimators"].split(","):
        entry = {"estimator": tag, "status": "ok", "error": None, "metadata": {}, "subgroups": []}
        try:
            if binary:
                es = estimate_binary(tag, dataset, settings["seed"], settings["folds"])
            else:
                es = run_estimator(tag, dataset, settings["seed"], _horseshoe_config(settings),
                                   CvConfig(n_folds=settings["folds"]))
            sets[tag] = es
            entry["metadata"] = es.metadata
            for k, e in enumerate(es.estimates):
                d = e.to_dict()
                d.pop("estimator")
                d["effect_interval"] = None if e.interval is None or e.missing else [
                    float(np.exp(e.interval[0])), float(np.exp(e.interval[1]))]
                d.update(n=int(sizes[k]), events=int(events[k]))
                entry["subgroups"].append(d)
        except ForestShrinkError as exc:
            failed += 1
            entry.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            log.error("estimator %s failed: %s", tag, exc)
        results.append(entry)
    reference = None
    if "population" in sets and not sets["population"][0].missing:
        reference = sets["population"][0].effect
    report = {
        **_header(settings, "analyze"),
        "outcome": settings["outcome"],
        "effect_measure": "odds ratio" if binary else "hazard ratio",
        "n": int(dataset.n),
        "events": int(counts.sum()),
        "labels": list(schema.labels),
        "population_reference": reference,
        "estimators": results,
    }
    out = Path(settings["out"])
    _write(out / "report.json", dumps(_clean(report)))
    series = {tag: (es.log_effects, es.intervals) for tag, es in sets.items() if tag != "population"}
    if not series:
        series = {tag: (es.log_effects, es.intervals) for tag, es in sets.items()}
    title = f"Subgroup {'odds' if binary else 'hazard'} ratios [{config_hash(settings)}]"
    _write(out / "forest.svg", forest_svg(schema.labels, series, reference, title))
    _write(out / "manifest.json", dumps(_clean({
        **_header(settings, "analyze"),
        "files": ["report.json", "forest.svg"],
        "failed_estimators": failed,
    })))
    return 0


def _simulate_one(args):
    scenario, seed, run, n, events = args
    ds = simulate_trial(scenario_coeffs(scenario, seed), run_seed(seed, run), n, events)
    return serialize_dataset(ds)


def _map(fn, items, jobs: int):
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def cmd_simulate(settings: dict) -> int:
    out = Path(settings["out"])
    spec = scenario_coeffs(settings["scenario"], settings["seed"])
    items = [(settings["scenario"], settings["seed"], r, settings["n"], settings["events"])
             for r in range(settings["runs"])]
    texts = _map(_simulate_one, items, settings["jobs"])
    files = []
    for r, text in enumerate(texts):
        name = f"run_{r:04d}.csv"
        _write(out / name, text)
        files.append({"file": name, "run": r, "seed_entropy": [settings["seed"], r]})
    _write(out / "schema.json", dumps(spec.schema.to_dict()))
    _write(out / "manifest.json", dumps(_clean({
        **_header(settings, "simulate"),
        "scenario": spec.to_dict(),
        "runs": files,
    })))
    return 0


def _oracle_table(scenario: int, n: int, reps: int, seed: int) -> TrueAhrTable:
    return true_ahr_oracle(scenario_coeffs(scenario, seed), n, reps, seed)


def cmd_oracle(settings: dict) -> int:
    table = _oracle_table(settings["scenario"], settings["n"], settings["repetitions"], settings["seed"])
    out = Path(settings["out"])
    _write(out / "oracle.json", dumps(_clean({**_header(settings, "oracle"), **table.to_dict()})))
    return 0


def _report_one(args):
    scenario, seed, run, n, events, estimators, hs, folds = args
    ds = simulate_trial(scenario_coeffs(scenario, seed), run_seed(seed, run), n, events)
    row = {}
    for tag in estimators:
        try:
            es = run_estimator(tag, ds, seed=run, horseshoe=hs, cv=CvConfig(n_folds=folds))
            row[tag] = (es.log_effects, es.intervals)
        except ForestShrinkError as exc:
            log.warning("run %d estimator %s failed: %s", run, tag, exc)
            K = ds.schema.K
            row[tag] = (np.full(K, np.nan), np.full((K, 2), np.nan))
    return row


def cmd_report(settings: dict) -> int:
    if settings["truth"]:
        truth = TrueAhrTable.from_dict(json.loads(Path(settings["truth"]).read_text(encoding="utf-8")))
        if truth.scenario != settings["scenario"]:
            raise ConfigError(f"truth file is for scenario {truth.scenario}, not {settings['scenario']}")
    else:
        truth = _oracle_table(settings["scenario"], 200_000, 3, settings["seed"])
    estimators = settings["estimators"].split(",")
    hs = _horseshoe_config(settings)
    items = [(settings["scenario"], settings["seed"], r, settings["n"], settings["events"], estimators, hs,
              settings["folds"]) for r in range(settings["runs"])]
    rows = _map(_report_one, items, settings["jobs"])
    results = {}
    for tag in estimators:
        est = np.array([row[tag][0] for row in rows])
        iv = np.array([row[tag][1] for row in rows])
        results[tag] = (est, iv)
    null = truth.labels.index("x4=a") if settings["scenario"] == 2 else None
    report = build_report(results, truth.log_ahr, truth.overall_log_ahr, truth.labels, null)
    out = Path(settings["out"])
    _write(out / "report.json", dumps(_clean({**_header(settings, "report"), "scenario": settings["scenario"],
                                              **report.to_dict()})))
    _write(out / "metrics.csv", report.to_csv())
    _write(out / "manifest.json", dumps(_clean({
        **_header(settings, "report"),
        "files": ["report.json", "metrics.csv"],
        "runs": [{"run": r, "seed_entropy": [settings["seed"], r]} for r in range(settings["runs"])],
    })))
    return 0


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "oracle": cmd_oracle, "report": cmd_report}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve(args)
        if args.command == "analyze" and (settings["data"] is None or settings["schema"] is None):
            raise ConfigError("analyze needs --data and --schema")
        return COMMANDS[args.command](settings)
    except ForestShrinkError as exc:
        print(f"forestshrink: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"forestshrink: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
