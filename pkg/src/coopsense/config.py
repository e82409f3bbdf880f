"""Run configuration: YAML schema, shipped presets, and object builders.

A configuration file fully determines a run (network geometry, radio
parameters, targets, processing thresholds, seeds). ``build_setup`` turns the
parsed dictionary into the typed objects the pipeline consumes; CLI flags are
applied as overrides beforehand.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np
import yaml

from .classifier import ClassifierConfig
from .clustering import ClusteringConfig
from .fusion import GridSpec
from .metrics import CapacityParams, OspaConfig
from .scenario import (BsPose, MotionPrimitive, RadioParams, Scenario,
                       TargetTruth, Trajectory, circular_network)
from .sensing import excision_threshold
from .tracking import BirthModel, MotionModel, TrackerConfig

PRESETS = ("paper", "desk", "desk_train")
GATING_MODES = ("adaptive", "fixed-4", "fixed-6")

# Config keys that identify a run point rather than the underlying scenario;
# they are excluded from the base hash used to group sweep results.
_RUN_POINT_KEYS = ("seed", "gating", "filters")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def load_config(source):
    """Parse a YAML config from a preset name or a file path."""
    text = None
    if source in PRESETS:
        text = resources.files("coopsense.presets").joinpath(f"{source}.yaml").read_text()
    else:
        try:
            with open(source, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {source!r}: {exc}") from exc
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {source!r}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {source!r} must be a mapping")
    return cfg


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def base_config_hash(cfg):
    """Hash with run-point keys removed; identical across a sweep."""
    base = {k: v for k, v in cfg.items() if k not in _RUN_POINT_KEYS}
    base.get("network", {})
    base = copy.deepcopy(base)
    base.get("network", {}).pop("n_sensing", None)
    return config_hash(base)


_RADIO_INT_FIELDS = ("num_subcarriers", "symbols_per_frame", "sensing_symbols",
                     "num_tx_antennas", "num_rx_antennas")


def _radio_params(d):
    """RadioParams with YAML-friendly coercion (plain '2.8e10' parses as str)."""
    kwargs = {}
    for key, value in d.items():
        kwargs[key] = int(value) if key in _RADIO_INT_FIELDS else float(value)
    return RadioParams(**kwargs)


def _build_trajectory(spec):
    prims = []
    for p in spec["motion"]:
        kind = p["kind"]
        prims.append(MotionPrimitive(
            kind=kind,
            duration_s=float(p["duration_s"]),
            acceleration_mps2=tuple(p.get("acceleration_mps2", (0.0, 0.0))),
            turn_rate_radps=math.radians(float(p["turn_rate_deg_s"]))
            if "turn_rate_deg_s" in p else float(p.get("turn_rate_radps", 0.0)),
        ))
    return Trajectory(start_position_m=spec["start_position_m"],
                      start_velocity_mps=spec.get("start_velocity_mps", (0.0, 0.0)),
                      primitives=prims)


def _build_targets(cfg):
    targets = []
    for spec in cfg.get("targets", []):
        targets.append(TargetTruth(
            target_id=int(spec["id"]),
            target_class=spec["class"],
            trajectory=_build_trajectory(spec),
            length_m=float(spec.get("length_m", 4.5)),
            width_m=float(spec.get("width_m", 1.8)),
        ))
    return targets


def _build_network(cfg):
    net = cfg.get("network", {})
    if "stations" in net:
        poses = [BsPose(bs_id=int(s["id"]), position_m=tuple(s["position_m"]),
                        boresight_rad=math.radians(float(s["boresight_deg"])),
                        scan_halfwidth_rad=math.radians(float(net.get("scan_halfwidth_deg", 60.0))),
                        scan_step_rad=math.radians(float(net.get("scan_step_deg", 2.4))),
                        role=s.get("role", "jsc"))
                 for s in net["stations"]]
    else:
        poses = circular_network(
            n_total=int(net.get("count", 6)),
            radius_m=float(net.get("radius_m", 50.0)),
            n_sensing=int(net.get("n_sensing", net.get("count", 6))),
            scan_halfwidth_rad=math.radians(float(net.get("scan_halfwidth_deg", 60.0))),
            scan_step_rad=math.radians(float(net.get("scan_step_deg", 4.0))),
        )
    if not any(bs.role == "jsc" for bs in poses):
        raise ConfigError("at least one BS must have the sensing role")
    return poses


@dataclass
class SensingOpts:
    zero_pad_range: int = 1
    zero_pad_doppler: int = 1
    excision_factor: float = 6.0
    window: str = "rect"  # "rect" | "hann"
    fast: bool = False


@dataclass
class RunSetup:
    """Everything the pipeline needs, built from one config dict."""

    scenario: Scenario
    grid: GridSpec
    clustering: ClusteringConfig
    tracker: TrackerConfig
    motion: MotionModel
    birth: BirthModel
    classifier: ClassifierConfig
    ospa: OspaConfig
    capacity: CapacityParams
    sensing_opts: SensingOpts
    seed: int
    filters: tuple
    gating_modes: tuple
    model_path: str | None
    raw: dict
    initial_tracks: tuple = ()   # (mean (4,), cov (4,4)) prior components

    @property
    def config_hash(self):
        return config_hash(self.raw)

    @property
    def base_config_hash(self):
        return base_config_hash(self.raw)

    def clustering_for(self, gating_mode):
        """Clustering config with the gate mode applied.

        ``fixed-4`` fixes every gate at the pedestrian value and ``fixed-6``
        at the vehicle value; ``adaptive`` switches per class label.
        """
        if gating_mode == "adaptive":
            return self.clustering
        if gating_mode == "fixed-4":
            fixed = self.clustering.knn_gate_pedestrian
        elif gating_mode == "fixed-6":
            fixed = self.clustering.knn_gate_vehicle
        else:
            raise ConfigError(f"unknown gating mode {gating_mode!r}")
        return ClusteringConfig(
            excision_threshold=self.clustering.excision_threshold,
            knn_gate_pedestrian=self.clustering.knn_gate_pedestrian,
            knn_gate_vehicle=self.clustering.knn_gate_vehicle,
            knn_gate_fixed=fixed,
            dbscan_eps=self.clustering.dbscan_eps,
            dbscan_min_pts=self.clustering.dbscan_min_pts,
            units=self.clustering.units)


def apply_overrides(cfg, seed=None, n_sensing=None, gating=None, filters=None,
                    fast=None):
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    if n_sensing is not None:
        cfg.setdefault("network", {})["n_sensing"] = int(n_sensing)
    if gating is not None:
        cfg["gating"] = gating
    if filters is not None:
        cfg["filters"] = filters
    if fast is not None:
        cfg.setdefault("sensing_opts", {})["fast"] = bool(fast)
    return cfg


def build_setup(cfg, model_path=None):
    """Typed run setup from a config dict. Raises ConfigError on bad input."""
    try:
        radio = _radio_params(cfg.get("radio", {}))
        poses = _build_network(cfg)
        targets = _build_targets(cfg)
        scenario = Scenario(
            radio=radio,
            base_stations=poses,
            targets=targets,
            scan_period_s=float(cfg.get("scan_period_s", 0.05)),
            num_scans=int(cfg.get("num_scans", 200)),
            area_m=tuple(cfg.get("area_m", (-20.0, 20.0, -20.0, 20.0))),
            comm_dir_rad=math.radians(float(cfg.get("comm_dir_deg", 20.0))),
        )
        gcfg = cfg.get("grid", {})
        x0, x1, y0, y1 = scenario.area_m
        grid = GridSpec.from_area(x0, x1, y0, y1,
                                  float(gcfg.get("dx_m", 0.1)),
                                  float(gcfg.get("dy_m", 0.1)))
        so = cfg.get("sensing_opts", {})
        sensing_opts = SensingOpts(
            zero_pad_range=int(so.get("zero_pad_range", 1)),
            zero_pad_doppler=int(so.get("zero_pad_doppler", 1)),
            excision_factor=float(so.get("excision_factor", 6.0)),
            window=str(so.get("window", "rect")),
            fast=bool(so.get("fast", False)),
        )
        ccfg = dict(cfg.get("clustering", {}))
        threshold = ccfg.pop("excision_threshold", "auto")
        if threshold == "auto":
            threshold = excision_threshold(radio, len(scenario.sensing_bs),
                                           grid.n_cells, sensing_opts.excision_factor,
                                           sensing_opts.window)
        clustering = ClusteringConfig(excision_threshold=float(threshold), **ccfg)

        tcfg = dict(cfg.get("tracker", {}))
        motion = MotionModel(
            scan_period_s=scenario.scan_period_s,
            process_noise_scale=float(tcfg.pop("process_noise_scale", 5.0)),
            survival_prob=float(tcfg.pop("survival_prob", 0.9)),
            detection_prob=float(tcfg.pop("detection_prob", 0.99)),
            clutter_intensity=float(tcfg.pop("clutter_intensity", 0.1)),
            surveillance_area_m2=scenario.area_m2,
        )
        spawn_init = bool(tcfg.pop("spawn_init", True))
        init_cov_scale = float(tcfg.pop("init_cov_scale", 0.5))
        tracker = TrackerConfig(**tcfg)
        initial_tracks = ()
        if spawn_init:
            initial_tracks = tuple(
                (np.array([t.trajectory.start_position_m[0],
                           t.trajectory.start_position_m[1], 0.0, 0.0]),
                 init_cov_scale * np.eye(4))
                for t in scenario.targets)

        bcfg = cfg.get("birth", {})
        sites = bcfg.get("sites")
        if sites is None:
            sites = [tuple(t.trajectory.start_position_m) for t in scenario.targets]
        center = ((x0 + x1) / 2.0, (y0 + y1) / 2.0)
        birth = BirthModel.from_sites(
            sites, weight=float(bcfg.get("weight", 0.05)),
            cov_scale=float(bcfg.get("cov_scale", 0.1)),
            recovery_center=tuple(bcfg.get("recovery_center", center)),
            recovery_weight=float(bcfg.get("recovery_weight", 0.05)),
            recovery_cov_scale=float(bcfg.get("recovery_cov_scale", 5.0)))

        classifier_cfg = ClassifierConfig(**cfg.get("classifier", {}))
        mcfg = cfg.get("metrics", {})
        ospa_cfg = OspaConfig(order_p=float(mcfg.get("ospa_order", 2.0)),
                              gate_m=float(mcfg.get("ospa_gate_m", 5.0)))
        capacity = CapacityParams(
            comm_snr_linear=float(mcfg.get("comm_snr_linear", 6.43)),
            n_sensing=len(scenario.sensing_bs),
            n_total=len(scenario.base_stations),
            rho_p=radio.sensing_power_fraction,
            num_subcarriers=radio.num_subcarriers,
            subcarrier_spacing_hz=radio.subcarrier_spacing_hz)

        filters = cfg.get("filters", "both")
        if isinstance(filters, str):
            filters = ("phd", "mbm") if filters == "both" else (filters,)
        for f in filters:
            if f not in ("phd", "mbm"):
                raise ConfigError(f"unknown filter {f!r}")
        gating = cfg.get("gating", "adaptive")
        gating_modes = tuple(gating) if isinstance(gating, (list, tuple)) else (gating,)
        for g in gating_modes:
            if g not in GATING_MODES:
                raise ConfigError(f"unknown gating mode {g!r}")

        return RunSetup(scenario=scenario, grid=grid, clustering=clustering,
                        tracker=tracker, motion=motion, birth=birth,
                        classifier=classifier_cfg, ospa=ospa_cfg, capacity=capacity,
                        sensing_opts=sensing_opts, seed=int(cfg.get("seed", 0)),
                        filters=tuple(filters), gating_modes=gating_modes,
                        model_path=model_path, raw=copy.deepcopy(cfg),
                        initial_tracks=initial_tracks)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad configuration: {exc}") from exc
