"""End-to-end processing chain.

Per scan: per-BS range-angle maps -> resample to the shared grid -> fuse ->
crop and classify at the positions predicted during the previous scan ->
adaptive clustering -> tracking filter step -> per-scan metrics. Lanes
(filter x gating mode) run side by side on the same fused maps, which is what
makes gating comparisons and PHD/MBM comparisons cheap.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .classifier import CnnModel, classify, crop_window
from .clustering import extract_measurements
from .config import ConfigError, RunSetup
from .fusion import fuse, resample_to_grid
from .metrics import ConfusionCounts, accuracy, aggregate_capacity, ospa
from .rng import STREAM_RCS, substream
from .sensing import fast_range_angle_map, scan_range_angle_map
from .scenario import target_reflectors
from .tracking import MbmFilter, PhdFilter


def scan_reflections(scenario, bs, scan_index, seed):
    """All visible reflection points for one BS at one scan, with per-target
    RNG substreams so draws are independent across (BS, scan, target)."""
    t = scenario.scan_time(scan_index)
    out = []
    for tgt in scenario.targets:
        rng = substream(seed, STREAM_RCS, bs.bs_id, scan_index, tgt.target_id)
        out.extend(target_reflectors(tgt, bs, t, rng, scenario.radio))
    return out


def bs_polar_maps(setup, scan_index):
    """Range-angle maps of every sensing BS for one scan."""
    sc = setup.scenario
    opts = setup.sensing_opts
    maps = []
    for bs in sc.sensing_bs:
        refl = scan_reflections(sc, bs, scan_index, setup.seed)
        if opts.fast:
            maps.append(fast_range_angle_map(bs, refl, sc.radio, setup.seed, scan_index,
                                             comm_dir_rad=sc.comm_dir_rad,
                                             zero_pad_range=opts.zero_pad_range,
                                             window=opts.window))
        else:
            maps.append(scan_range_angle_map(bs, refl, sc.radio, setup.seed, scan_index,
                                             comm_dir_rad=sc.comm_dir_rad,
                                             zero_pad_range=opts.zero_pad_range,
                                             zero_pad_doppler=opts.zero_pad_doppler,
                                             window=opts.window))
    return maps


def fuse_polar_maps(setup, polar_maps, bs_subset=None):
    by_id = {bs.bs_id: bs for bs in setup.scenario.base_stations}
    resampled = [resample_to_grid(m, by_id[m.bs_id], setup.grid)
                 for m in polar_maps
                 if bs_subset is None or m.bs_id in bs_subset]
    return fuse(resampled)


def labelled_soft_maps(setup, bs_subset=None, map_source=None):
    """Yield (soft_map, [(position, class)]) per scan; used for classifier
    training where ground truth is known."""
    for t in range(setup.scenario.num_scans):
        polar = map_source(t) if map_source else bs_polar_maps(setup, t)
        soft = fuse_polar_maps(setup, polar, bs_subset)
        truth = [(pos, tgt.target_class)
                 for tgt, pos, _ in setup.scenario.truth_states(t)]
        yield soft, truth


@dataclass
class _Lane:
    name: str
    filter_name: str
    gating: str
    tracker: object
    clustering: object
    predictions: list = field(default_factory=list)
    pred_source_scan: int = -1
    confusion: ConfusionCounts = field(default_factory=ConfusionCounts)
    records: list = field(default_factory=list)
    prediction_trace: list = field(default_factory=list)


def _make_lanes(setup):
    lanes = []
    multi = len(setup.gating_modes) > 1
    for fname in setup.filters:
        for gating in setup.gating_modes:
            if fname == "phd":
                tracker = PhdFilter(setup.motion, setup.birth, setup.tracker,
                                    initial_components=setup.initial_tracks)
            else:
                tracker = MbmFilter(setup.motion, setup.birth, setup.tracker,
                                    initial_components=setup.initial_tracks)
            name = f"{fname}:{gating}" if multi else fname
            lanes.append(_Lane(name=name, filter_name=fname, gating=gating,
                               tracker=tracker,
                               clustering=setup.clustering_for(gating)))
    return lanes


def _classify_tracks(lane, soft, model, truth_states, setup):
    """Label each predicted track from its map crop; count confusion against
    the nearest true target within the OSPA gate."""
    labels = {}
    for track_id, position, _ in lane.predictions:
        patch = crop_window(soft, position, setup.classifier.window_m)
        label, _scores = classify(model, patch)
        labels[track_id] = label
        lane.tracker.assign_label(track_id, label)
        best, best_d = None, np.inf
        for tgt, pos, _vel in truth_states:
            d = float(np.hypot(*(np.asarray(position) - pos)))
            if d < best_d:
                best, best_d = tgt, d
        if best is not None and best_d <= setup.ospa.gate_m:
            lane.confusion.add(label == "vehicle", best.target_class == "vehicle")
    return labels


def run_pipeline(setup, model=None, map_source=None):
    """Execute the full chain and return the report dictionary.

    ``map_source(scan_index)`` may supply precomputed polar maps (e.g. loaded
    from disk); otherwise maps are simulated. Deterministic for a fixed
    config: the report is byte-identical across repeated runs.
    """
    if any(g == "adaptive" for g in setup.gating_modes) and model is None:
        raise ConfigError("adaptive gating requires a trained classifier model "
                          "(train one with 'coopsense train-classifier')")
    sc = setup.scenario
    lanes = _make_lanes(setup)
    truth_per_scan = []
    for t in range(sc.num_scans):
        polar = map_source(t) if map_source else bs_polar_maps(setup, t)
        soft = fuse_polar_maps(setup, polar)
        truth_states = sc.truth_states(t)
        truth_xy = sc.truth_positions(t)
        truth_per_scan.append([[float(x), float(y)] for x, y in truth_xy])
        for lane in lanes:
            lane.prediction_trace.append(lane.pred_source_scan)
            labels = _classify_tracks(lane, soft, model, truth_states, setup) \
                if model is not None else {}
            tracked = [(tid, pos, lane.tracker.track_labels.get(tid))
                       for tid, pos, _ in lane.predictions]
            measurements = extract_measurements(soft, tracked, lane.clustering)
            step = lane.tracker.step(measurements)
            lane.predictions = step.predicted_tracks
            lane.pred_source_scan = t
            est_xy = np.array([[s.x_m, s.y_m] for _, s, _, _ in step.estimates]).reshape(-1, 2)
            res = ospa(truth_xy, est_xy, setup.ospa)
            lane.records.append({
                "scan": t,
                "ospa": res.total,
                "ospa_localization": res.localization_term,
                "ospa_missed": res.missed_term,
                "ospa_false": res.false_alarm_term,
                "n_true": int(len(truth_xy)),
                "n_estimates": int(len(step.estimates)),
                "n_measurements": int(len(measurements)),
                "track_ids": [int(tid) for tid, _, _, _ in step.estimates],
                "estimates": [[s.x_m, s.y_m, s.vx_mps, s.vy_mps]
                              for _, s, _, _ in step.estimates],
                "labels": [lbl if lbl is not None else ""
                           for _, _, lbl, _ in step.estimates],
                "scores": [float(w) for _, _, _, w in step.estimates],
                "classified": {str(k): v for k, v in sorted(labels.items())},
            })

    report = {
        "meta": {
            "version": __version__,
            "seed": setup.seed,
            "config_hash": setup.config_hash,
            "base_config_hash": setup.base_config_hash,
            "filters": list(setup.filters),
            "gating_modes": list(setup.gating_modes),
            "n_sensing": len(sc.sensing_bs),
            "n_total": len(sc.base_stations),
            "num_scans": sc.num_scans,
            "synthesis": "fast" if setup.sensing_opts.fast else "signal",
        },
        "capacity_bit_per_s": float(aggregate_capacity(setup.capacity)),
        "truth": truth_per_scan,
        "lanes": {},
    }
    for lane in lanes:
        series = [r["ospa"] for r in lane.records]
        entry = {
            "filter": lane.filter_name,
            "gating": lane.gating,
            "scans": lane.records,
            "summary": {
                "median_ospa": float(np.median(series)),
                "mean_ospa": float(np.mean(series)),
            },
            "prediction_trace": lane.prediction_trace,
        }
        if lane.confusion.total > 0:
            entry["classification"] = {
                "tp": lane.confusion.tp, "tn": lane.confusion.tn,
                "fp": lane.confusion.fp, "fn": lane.confusion.fn,
                "accuracy": float(accuracy(lane.confusion)),
            }
        report["lanes"][lane.name] = entry
    return report


def report_to_json(report):
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def write_report(report, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report_to_json(report))
    with open(os.path.join(out_dir, "series.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["scan", "lane", "ospa", "ospa_localization", "ospa_missed",
                    "ospa_false", "n_true", "n_estimates", "n_measurements"])
        for name in sorted(report["lanes"]):
            for r in report["lanes"][name]["scans"]:
                w.writerow([r["scan"], name, r["ospa"], r["ospa_localization"],
                            r["ospa_missed"], r["ospa_false"], r["n_true"],
                            r["n_estimates"], r["n_measurements"]])
    with open(os.path.join(out_dir, "tracks.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["scan", "lane", "track_id", "x_m", "y_m", "vx_mps", "vy_mps",
                    "weight_or_existence", "class_label"])
        for name in sorted(report["lanes"]):
            for r in report["lanes"][name]["scans"]:
                for tid, est, lbl, score in zip(r["track_ids"], r["estimates"],
                                                r["labels"], r["scores"]):
                    w.writerow([r["scan"], name, tid, est[0], est[1], est[2],
                                est[3], score, lbl])


def sweep_ns(cfg, values, seeds, model=None, build=None):
    """One pipeline run per (N_s value, seed); returns the aggregate table."""
    from .config import apply_overrides, build_setup
    build = build or build_setup
    rows = []
    base_hashes = set()
    for value in values:
        for seed in seeds:
            setup = build(apply_overrides(cfg, seed=seed, n_sensing=value))
            base_hashes.add(setup.base_config_hash)
            report = run_pipeline(setup, model=model)
            rows.extend(_sweep_rows(report, "n_sensing", value, seed))
    if len(base_hashes) != 1:
        raise ConfigError("sweep points stem from different base configurations")
    return {"variable": "n_sensing", "rows": rows}


def sweep_gating(cfg, seeds, model=None, build=None):
    """All gating modes per run (shared maps); one run per seed."""
    from .config import GATING_MODES, apply_overrides, build_setup
    build = build or build_setup
    rows = []
    base_hashes = set()
    for seed in seeds:
        setup = build(apply_overrides(cfg, seed=seed, gating=list(GATING_MODES)))
        base_hashes.add(setup.base_config_hash)
        report = run_pipeline(setup, model=model)
        for name, lane in sorted(report["lanes"].items()):
            rows.append({
                "variable": "gating", "value": lane["gating"], "seed": seed,
                "filter": lane["filter"],
                "median_ospa": lane["summary"]["median_ospa"],
                "mean_ospa": lane["summary"]["mean_ospa"],
                "accuracy": lane.get("classification", {}).get("accuracy"),
                "capacity_bit_per_s": report["capacity_bit_per_s"],
            })
    if len(base_hashes) != 1:
        raise ConfigError("sweep points stem from different base configurations")
    return {"variable": "gating", "rows": rows}


def _sweep_rows(report, variable, value, seed):
    rows = []
    for name, lane in sorted(report["lanes"].items()):
        rows.append({
            "variable": variable, "value": value, "seed": seed,
            "filter": lane["filter"],
            "median_ospa": lane["summary"]["median_ospa"],
            "mean_ospa": lane["summary"]["mean_ospa"],
            "accuracy": lane.get("classification", {}).get("accuracy"),
            "capacity_bit_per_s": report["capacity_bit_per_s"],
        })
    return rows
