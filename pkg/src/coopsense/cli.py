"""Command-line entry point.

Subcommands: ``run`` (end-to-end), ``simulate`` (maps only),
``train-classifier``, ``track`` (from dumped maps), ``sweep``, ``report``.
Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import mapio
from .classifier import CnnModel, make_training_set, stratified_split, train
from .config import (GATING_MODES, ConfigError, apply_overrides, build_setup,
                     config_hash, load_config)
from .pipeline import (bs_polar_maps, labelled_soft_maps, report_to_json,
                       run_pipeline, sweep_gating, sweep_ns, write_report)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _add_common(p):
    p.add_argument("--config", default="desk",
                   help="preset name (paper, desk, desk_train) or YAML path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--ns", type=int, default=None, help="number of sensing BSs")
    p.add_argument("--fast", action="store_true",
                   help="power-level map synthesis instead of the signal chain")
    p.add_argument("--out", default="out", help="output directory")


def _parser():
    p = argparse.ArgumentParser(prog="coopsense")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="full pipeline: maps, fusion, tracking, metrics")
    _add_common(run)
    run.add_argument("--filter", choices=("phd", "mbm", "both"), default=None)
    run.add_argument("--gating", choices=GATING_MODES, default=None)
    run.add_argument("--model", default=None, help="classifier model file")
    run.add_argument("--dump-maps", action="store_true")

    sim = sub.add_parser("simulate", help="generate and dump per-BS maps only")
    _add_common(sim)

    tc = sub.add_parser("train-classifier", help="build a labelled patch set and train")
    _add_common(tc)
    tc.add_argument("--model-out", default=None, help="model path (default <out>/classifier.cnn)")
    tc.add_argument("--test-fraction", type=float, default=0.2)

    tr = sub.add_parser("track", help="run fusion/clustering/tracking from dumped maps")
    tr.add_argument("--maps", required=True, help="directory produced by 'simulate'")
    tr.add_argument("--filter", choices=("phd", "mbm", "both"), default=None)
    tr.add_argument("--gating", choices=GATING_MODES, default=None)
    tr.add_argument("--model", default=None)
    tr.add_argument("--out", default="out")

    sw = sub.add_parser("sweep", help="repeat runs over N_s or gating modes")
    _add_common(sw)
    sw.add_argument("--variable", choices=("ns", "gating"), required=True)
    sw.add_argument("--values", default=None,
                    help="comma-separated N_s values (ns sweeps only)")
    sw.add_argument("--seeds", default="1,2,3", help="comma-separated seeds")
    sw.add_argument("--model", default=None)

    rp = sub.add_parser("report", help="summarize a report.json")
    rp.add_argument("--report", required=True)
    return p


def _load_setup(args, gating=None, filters=None):
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, seed=args.seed, n_sensing=args.ns,
                          gating=gating, filters=filters,
                          fast=args.fast if getattr(args, "fast", False) else None)
    return build_setup(cfg, model_path=getattr(args, "model", None))


def _load_model(path):
    if path is None:
        return None
    try:
        return CnnModel.load(path)
    except OSError as exc:
        raise ConfigError(f"cannot read classifier model {path!r}: {exc}") from exc


def _cmd_run(args):
    setup = _load_setup(args, gating=args.gating, filters=args.filter)
    model = _load_model(args.model)
    if args.dump_maps:
        _dump_maps(setup, os.path.join(args.out, "maps"))
    report = run_pipeline(setup, model=model)
    write_report(report, args.out)
    for name in sorted(report["lanes"]):
        lane = report["lanes"][name]
        acc = lane.get("classification", {}).get("accuracy")
        print(f"{name}: median OSPA {lane['summary']['median_ospa']:.3f} m"
              + (f", accuracy {acc:.3f}" if acc is not None else ""))
    print(f"capacity {report['capacity_bit_per_s'] / 1e9:.3f} Gbit/s")
    print(f"report written to {os.path.join(args.out, 'report.json')}")
    return EXIT_OK


def _dump_maps(setup, maps_dir):
    os.makedirs(maps_dir, exist_ok=True)
    files = []
    for t in range(setup.scenario.num_scans):
        for polar in bs_polar_maps(setup, t):
            name = f"map_s{t:04d}_bs{polar.bs_id:02d}.ramp"
            mapio.write_range_angle_map(os.path.join(maps_dir, name), polar)
            files.append(name)
    index = {"config": setup.raw, "config_hash": setup.config_hash, "files": files}
    with open(os.path.join(maps_dir, "index.json"), "w", encoding="utf-8") as fh:
        json.dump(index, fh, sort_keys=True, indent=2)
    return files


def _cmd_simulate(args):
    setup = _load_setup(args)
    files = _dump_maps(setup, args.out)
    print(f"wrote {len(files)} maps to {args.out}")
    return EXIT_OK


def _cmd_train_classifier(args):
    setup = _load_setup(args)
    rng = np.random.default_rng(setup.seed)
    patches, labels = make_training_set(
        labelled_soft_maps(setup), setup.classifier.window_m,
        setup.classifier.perturb_sigma_m, rng)
    train_idx, test_idx = stratified_split(labels, args.test_fraction, rng)
    model, history = train(patches[train_idx], labels[train_idx], setup.classifier)
    correct = 0
    for i in test_idx:
        probs = model.predict_proba(patches[i])[0]
        correct += int(np.argmax(probs) == labels[i])
    acc = correct / len(test_idx) if len(test_idx) else float("nan")
    os.makedirs(args.out, exist_ok=True)
    model_path = args.model_out or os.path.join(args.out, "classifier.cnn")
    model.save(model_path)
    print(f"trained on {len(train_idx)} patches, {len(history)} epochs, "
          f"final loss {history[-1]:.4f}")
    print(f"held-out accuracy {acc:.3f} ({len(test_idx)} patches)")
    print(f"model written to {model_path}")
    return EXIT_OK


def _cmd_track(args):
    index_path = os.path.join(args.maps, "index.json")
    try:
        with open(index_path, "r", encoding="utf-8") as fh:
            index = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read map index {index_path!r}: {exc}") from exc
    cfg = apply_overrides(index["config"], gating=args.gating, filters=args.filter)
    setup = build_setup(cfg, model_path=args.model)
    if config_hash(index["config"]) != index.get("config_hash"):
        raise ConfigError("map index is inconsistent: config hash mismatch")
    by_scan = {}
    for name in index["files"]:
        polar = mapio.read_range_angle_map(os.path.join(args.maps, name))
        by_scan.setdefault(polar.scan_index, []).append(polar)
    model = _load_model(args.model)
    report = run_pipeline(setup, model=model, map_source=lambda t: by_scan[t])
    write_report(report, args.out)
    print(f"report written to {os.path.join(args.out, 'report.json')}")
    return EXIT_OK


def _cmd_sweep(args):
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, fast=args.fast if args.fast else None)
    seeds = [int(s) for s in args.seeds.split(",") if s]
    model = _load_model(args.model)
    if args.variable == "ns":
        if not args.values:
            raise ConfigError("--values is required for N_s sweeps")
        values = [int(v) for v in args.values.split(",") if v]
        table = sweep_ns(cfg, values, seeds, model=model)
    else:
        table = sweep_gating(cfg, seeds, model=model)
    os.makedirs(args.out, exist_ok=True)
    out = os.path.join(args.out, f"sweep_{args.variable}.json")
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(table, fh, sort_keys=True, indent=2)
    for row in table["rows"]:
        acc = f" accuracy {row['accuracy']:.3f}" if row["accuracy"] is not None else ""
        print(f"{row['variable']}={row['value']} seed={row['seed']} {row['filter']}: "
              f"median OSPA {row['median_ospa']:.3f} m{acc}")
    print(f"sweep table written to {out}")
    return EXIT_OK


def _cmd_report(args):
    with open(args.report, "r", encoding="utf-8") as fh:
        report = json.load(fh)
    meta = report["meta"]
    print(f"seed {meta['seed']}, {meta['num_scans']} scans, "
          f"N_s={meta['n_sensing']}/{meta['n_total']}, synthesis={meta['synthesis']}")
    print(f"capacity {report['capacity_bit_per_s'] / 1e9:.3f} Gbit/s")
    for name in sorted(report["lanes"]):
        lane = report["lanes"][name]
        s = lane["summary"]
        acc = lane.get("classification", {}).get("accuracy")
        print(f"{name}: median OSPA {s['median_ospa']:.3f} m, "
              f"mean {s['mean_ospa']:.3f} m"
              + (f", accuracy {acc:.3f}" if acc is not None else ""))
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "simulate": _cmd_simulate,
    "train-classifier": _cmd_train_classifier,
    "track": _cmd_track,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
