"""Command-line interface: simulate studies, fit CSV data, predict curves.

Exit codes: 0 on success, 2 for configuration or input validation
problems (one-line diagnostic on stderr), 3 for runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .config import load_config, parse_engine, parse_schema, parse_sim, parse_terms
from .data import augment, load_csv, truncate_to_horizon
from .engine import fit
from .errors import ConfigError, ValidationError
from .predict import load_model, model_from_fit, save_model
from .simulate import run_study

__all__ = ["main", "cmd_simulate", "cmd_fit", "cmd_predict", "cmd_report"]


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="dhazard",
        description="Additive discrete-time hazard models via batchwise backfitting",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a seeded simulation study")
    sim.add_argument("--config", required=True, help="YAML configuration file")
    sim.add_argument("--seed", type=int, default=None, help="override master seed")
    sim.add_argument("--threads", type=int, default=1, help="replication workers")
    sim.add_argument("--out", default=None, help="output directory")

    fit_p = sub.add_parser("fit", help="fit a model to a person-level CSV")
    fit_p.add_argument("--config", required=True, help="YAML configuration file")
    fit_p.add_argument("--data", default=None, help="input CSV (overrides config)")
    fit_p.add_argument("--seed", type=int, default=None, help="override engine seed")
    fit_p.add_argument("--out", default=None, help="output directory")

    pred = sub.add_parser("predict", help="evaluate a fitted model artifact")
    pred.add_argument("--model", required=True, help="model.json path")
    pred.add_argument(
        "--mode",
        required=True,
        choices=("hazard", "survival", "marginal_survival"),
    )
    pred.add_argument("--covariate", default=None, help="covariate to vary")
    pred.add_argument("--grid-points", type=int, default=50)
    pred.add_argument("--times", default=None, help="comma-separated intervals")
    pred.add_argument("--data", default=None, help="CSV of covariate profiles")
    pred.add_argument("--out", default=None, help="output CSV (default stdout)")

    rep = sub.add_parser("report", help="summarize a fit or study report")
    rep.add_argument("--input", required=True, help="fit_report.json or study_summary.json")
    return parser


def _out_dir(args, doc):
    out = args.out or (doc.get("paths") or {}).get("output")
    if not out:
        raise ConfigError("no output directory: pass --out or set paths.output")
    os.makedirs(out, exist_ok=True)
    return out


def cmd_simulate(args):
    doc = load_config(args.config)
    if "simulate" not in doc:
        raise ConfigError("config has no 'simulate' section")
    sim_config = parse_sim(doc.get("simulate"), seed=args.seed)
    engine_config = parse_engine(doc.get("engine"))
    out = _out_dir(args, doc)
    report = run_study(
        sim_config, engine_config, threads=max(1, args.threads), out_dir=out
    )
    print(
        f"simulate: {len(report.replications)} replication(s), "
        f"{len(report.failures)} failure(s), artifacts in {out}"
    )
    return 0


def cmd_fit(args):
    doc = load_config(args.config)
    schema, horizon = parse_schema(doc.get("data"))
    if not schema.covariates:
        raise ConfigError("data.covariates must list at least one column")
    terms = parse_terms(doc.get("terms"))
    engine_config = parse_engine(doc.get("engine"), seed=args.seed)
    data_path = args.data or (doc.get("paths") or {}).get("input")
    if not data_path:
        raise ConfigError("no input CSV: pass --data or set paths.input")
    out = _out_dir(args, doc)

    records = load_csv(data_path, schema)
    if not records:
        raise ValidationError(f"{data_path}: no data rows")
    k = horizon if horizon is not None else max(r.time for r in records)
    records = truncate_to_horizon(records, k)
    dataset = augment(records, k, categorical=schema.categorical)
    state, report = fit(dataset, terms, engine_config)

    model = model_from_fit(dataset, terms, report, engine_config)
    save_model(os.path.join(out, "model.json"), model)
    report_doc = report.to_dict()
    report_doc["version"] = 1
    report_doc["config"] = {
        "data": {**(doc.get("data") or {}), "input": data_path},
        "engine": {k_: v for k_, v in vars(engine_config).items()},
        "terms": doc.get("terms"),
    }
    with open(os.path.join(out, "fit_report.json"), "w", encoding="utf-8") as fh:
        json.dump(report_doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    selected = [t for t, s in report.selected.items() if s]
    print(
        f"fit: {dataset.n_individuals} individuals, {dataset.n_rows} augmented "
        f"rows; selected {len(selected)}/{len(report.terms)} terms -> {out}"
    )
    return 0


def _parse_times(spec):
    if spec is None:
        return None
    try:
        return [int(tok) for tok in spec.split(",") if tok.strip() != ""]
    except ValueError:
        raise ValidationError(f"cannot parse --times {spec!r}") from None


def _read_profiles(path, model):
    names = model.covariate_names
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in names if c not in header]
        if missing:
            raise ValidationError(f"{path}: missing covariate column(s) {missing}")
        rows = {name: [] for name in names}
        for rownum, row in enumerate(reader, start=2):
            for name in names:
                cell = row[name]
                if name in model.covariate_stats["mode"]:
                    rows[name].append(cell)
                else:
                    try:
                        rows[name].append(float(cell))
                    except (TypeError, ValueError):
                        raise ValidationError(
                            f"row {rownum}, column {name!r}: expected a number, "
                            f"got {cell!r}"
                        ) from None
    if not rows[names[0]]:
        raise ValidationError(f"{path}: no profile rows")
    return rows


def _write_rows(path, header, rows):
    fh = sys.stdout if path is None else open(path, "w", newline="", encoding="utf-8")
    try:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if path is not None:
            fh.close()


def cmd_predict(args):
    model = load_model(args.model)
    times = _parse_times(args.times)

    if args.mode == "marginal_survival":
        if not args.covariate:
            raise ConfigError("marginal_survival needs --covariate")
        grid, times, S = model.marginal_survival(
            args.covariate, times=times, grid_points=args.grid_points
        )
        rows = []
        for i, g in enumerate(grid):
            for j, t in enumerate(times):
                val = g if isinstance(g, str) else repr(float(g))
                rows.append([val, t, repr(float(S[i, j]))])
        _write_rows(args.out, [args.covariate, "t", "survival"], rows)
        return 0

    inputs = {} if args.data is None else _read_profiles(args.data, model)
    if args.mode == "hazard":
        checked = model._check_times(times, allow_zero=False)
        lam = model.hazard_grid(inputs)
        header = ["profile", "t", "hazard"]
        values = lam
        offset = 1
    else:
        checked = model._check_times(times, allow_zero=True)
        S = model.survival_grid(inputs)
        header = ["profile", "t", "survival"]
        values = S
        offset = 1
    rows = []
    for i in range(values.shape[0]):
        for t in checked:
            if t == 0:
                rows.append([i, t, repr(1.0)])
            else:
                rows.append([i, t, repr(float(values[i, t - offset]))])
    _write_rows(args.out, header, rows)
    return 0


def cmd_report(args):
    with open(args.input, encoding="utf-8") as fh:
        doc = json.load(fh)
    if "selection_frequency" in doc:
        print(f"study: {doc.get('n_replications', '?')} replication(s)")
        print("selection frequency:")
        for term, freq in sorted(doc["selection_frequency"].items()):
            print(f"  {term:<16} {freq:.3f}")
        print("median MSE:")
        for term, stats in sorted((doc.get("mse_summary") or {}).items()):
            print(f"  {term:<16} {stats['q50']:.6f}")
    elif "selected" in doc:
        print("selected terms:")
        for term in doc["terms"]:
            mark = "x" if doc["selected"].get(term) else " "
            freq = doc.get("update_frequencies", {}).get(term, 0.0)
            contrib = doc.get("contributions", {}).get(term, 0.0)
            print(f"  [{mark}] {term:<16} freq={freq:.3f} contribution={contrib:.5f}")
        if doc.get("early_stopped"):
            print(f"early stop after {doc['early_stopped']} iteration(s)")
    else:
        raise ValidationError(f"{args.input}: not a recognized report document")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "report": cmd_report,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - runtime failure contract
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
