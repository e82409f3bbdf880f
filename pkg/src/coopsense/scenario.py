"""Network geometry, target kinematics, and per-BS reflection points.

Targets are either point-like (pedestrian, one reflector) or extended
(vehicle, up to 12 reflectors: 4 planar surfaces, 4 wheelhouses, 4 corners).
Reflector radar cross sections follow a Swerling I model: exponentially
distributed power, redrawn per scan and per base station, constant within
one scan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 3.0e8  # m/s, radar convention

# Mean RCS per reflector kind, m^2
PEDESTRIAN_MEAN_RCS = 1.0
SURFACE_MEAN_RCS = 20.0
WHEELHOUSE_MEAN_RCS = 0.0
CORNER_MEAN_RCS = 5.0

# Visibility apertures (config-overridable via target_reflectors arguments)
SURFACE_VISIBILITY_HALFWIDTH_RAD = math.radians(30.0)
CORNER_VISIBILITY_HALFWIDTH_RAD = math.radians(80.0)


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a), 2.0 * np.pi)


@dataclass(frozen=True)
class RadioParams:
    """OFDM and RF front-end parameters shared by all base stations."""

    carrier_freq_hz: float = 28e9
    subcarrier_spacing_hz: float = 120e3
    num_subcarriers: int = 3168
    symbols_per_frame: int = 1120
    sensing_symbols: int = 112
    cp_fraction: float = 1.0 / 14.0
    eirp_watts: float = 1.0            # P_T * G_T^a product (30 dBm default)
    rx_element_gain: float = 1.0
    noise_psd_w_per_hz: float = 4e-20
    num_tx_antennas: int = 50
    num_rx_antennas: int = 50
    sensing_power_fraction: float = 0.3

    def __post_init__(self):
        if self.num_subcarriers < 1:
            raise ValueError("num_subcarriers must be >= 1")
        if self.sensing_symbols > self.symbols_per_frame:
            raise ValueError("sensing_symbols cannot exceed symbols_per_frame")
        if not 0.0 <= self.sensing_power_fraction <= 1.0:
            raise ValueError("sensing_power_fraction must lie in [0, 1]")
        for name in ("carrier_freq_hz", "subcarrier_spacing_hz", "sensing_symbols",
                     "cp_fraction", "eirp_watts", "rx_element_gain",
                     "noise_psd_w_per_hz", "num_tx_antennas", "num_rx_antennas"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def symbol_duration_s(self):
        return 1.0 / self.subcarrier_spacing_hz

    @property
    def total_symbol_duration_s(self):
        """Symbol plus cyclic prefix."""
        return self.symbol_duration_s * (1.0 + self.cp_fraction)

    @property
    def noise_variance_w(self):
        """Per-antenna noise power over the full band: N0 * K * df."""
        return self.noise_psd_w_per_hz * self.num_subcarriers * self.subcarrier_spacing_hz


@dataclass(frozen=True)
class BsPose:
    """Base-station placement and scanning pattern."""

    bs_id: int
    position_m: tuple
    boresight_rad: float
    scan_halfwidth_rad: float = math.radians(60.0)
    scan_step_rad: float = math.radians(2.4)
    role: str = "jsc"  # "jsc" = sensing + communication, "comm" = communication only

    def __post_init__(self):
        if self.scan_step_rad <= 0 or self.scan_halfwidth_rad <= 0:
            raise ValueError("scan aperture and step must be > 0")
        if self.role not in ("jsc", "comm"):
            raise ValueError("role must be 'jsc' or 'comm'")

    @property
    def num_scan_directions(self):
        return int(round(2.0 * self.scan_halfwidth_rad / self.scan_step_rad)) + 1

    def scan_directions(self):
        """Sensing beam directions relative to boresight, symmetric about 0."""
        n = self.num_scan_directions
        return (np.arange(n) - (n - 1) / 2.0) * self.scan_step_rad

    @property
    def position(self):
        return np.asarray(self.position_m, dtype=float)

    def bearing_of(self, point_m):
        """Bearing of a point relative to boresight."""
        d = np.asarray(point_m, dtype=float) - self.position
        return float(wrap_angle(math.atan2(d[1], d[0]) - self.boresight_rad))


@dataclass(frozen=True)
class MotionPrimitive:
    """One leg of a piecewise trajectory."""

    kind: str  # "static" | "uniform" | "accelerate" | "turn"
    duration_s: float
    acceleration_mps2: tuple = (0.0, 0.0)
    turn_rate_radps: float = 0.0

    def __post_init__(self):
        if self.kind not in ("static", "uniform", "accelerate", "turn"):
            raise ValueError(f"unknown motion primitive kind {self.kind!r}")
        if self.duration_s <= 0:
            raise ValueError("primitive duration must be > 0")
        if self.kind == "turn" and self.turn_rate_radps == 0.0:
            raise ValueError("turn primitive requires a nonzero turn rate")


class Trajectory:
    """Piecewise motion: static, uniform linear, constant acceleration, constant turn.

    Position is continuous across primitive boundaries; velocity is continuous
    except when entering a static leg (the target stops).
    """

    def __init__(self, start_position_m, start_velocity_mps, primitives):
        self.start_position_m = np.asarray(start_position_m, dtype=float)
        self.start_velocity_mps = np.asarray(start_velocity_mps, dtype=float)
        self.primitives = tuple(primitives)
        if not self.primitives:
            raise ValueError("trajectory needs at least one primitive")
        # Precompute state at the start of each leg.
        starts = [(0.0, self.start_position_m.copy(), self.start_velocity_mps.copy(),
                   self._initial_heading())]
        for prim in self.primitives:
            t0, p0, v0, h0 = starts[-1]
            p1, v1, h1 = _advance_primitive(prim, p0, v0, h0, prim.duration_s)
            starts.append((t0 + prim.duration_s, p1, v1, h1))
        self._leg_starts = starts

    def _initial_heading(self):
        v = self.start_velocity_mps
        return math.atan2(v[1], v[0]) if np.hypot(*v) > 1e-9 else 0.0

    @property
    def horizon_s(self):
        return self._leg_starts[-1][0]

    def _locate(self, t_s):
        if t_s < 0.0 or t_s > self.horizon_s + 1e-9:
            raise ValueError(f"time {t_s} s outside trajectory horizon [0, {self.horizon_s}] s")
        t_s = min(t_s, self.horizon_s)
        for i, prim in enumerate(self.primitives):
            t0 = self._leg_starts[i][0]
            if t_s <= t0 + prim.duration_s + 1e-12:
                return i, t_s - t0
        return len(self.primitives) - 1, self.primitives[-1].duration_s

    def state_at(self, t_s):
        """Position (m) and velocity (m/s) at time t_s."""
        i, dt = self._locate(t_s)
        _, p0, v0, h0 = self._leg_starts[i]
        p, v, _ = _advance_primitive(self.primitives[i], p0, v0, h0, dt)
        return p, v

    def heading_at(self, t_s):
        """Body heading; holds the last moving heading through static legs."""
        i, dt = self._locate(t_s)
        _, p0, v0, h0 = self._leg_starts[i]
        _, v, h = _advance_primitive(self.primitives[i], p0, v0, h0, dt)
        return math.atan2(v[1], v[0]) if np.hypot(*v) > 1e-9 else h

    def turn_rate_at(self, t_s):
        i, _ = self._locate(t_s)
        prim = self.primitives[i]
        return prim.turn_rate_radps if prim.kind == "turn" else 0.0


def _advance_primitive(prim, p0, v0, h0, dt):
    """Closed-form state after dt seconds inside one primitive."""
    if prim.kind == "static":
        return p0.copy(), np.zeros(2), h0
    if prim.kind == "uniform":
        h = math.atan2(v0[1], v0[0]) if np.hypot(*v0) > 1e-9 else h0
        return p0 + v0 * dt, v0.copy(), h
    if prim.kind == "accelerate":
        a = np.asarray(prim.acceleration_mps2, dtype=float)
        v = v0 + a * dt
        p = p0 + v0 * dt + 0.5 * a * dt * dt
        h = math.atan2(v[1], v[0]) if np.hypot(*v) > 1e-9 else h0
        return p, v, h
    # constant turn: velocity rotates at the turn rate, speed is preserved
    w = prim.turn_rate_radps
    s, c = math.sin(w * dt), math.cos(w * dt)
    rot = np.array([[c, -s], [s, c]])
    v = rot @ v0
    disp = np.array([[s, c - 1.0], [1.0 - c, s]]) @ v0 / w
    return p0 + disp, v, h0 + w * dt


def advance(trajectory, t_s):
    """Kinematic state (position, velocity) of a trajectory at t_s seconds."""
    return trajectory.state_at(t_s)


@dataclass(frozen=True)
class TargetTruth:
    """Ground-truth target: class, footprint, and motion."""

    target_id: int
    target_class: str  # "pedestrian" | "vehicle"
    trajectory: Trajectory
    length_m: float = 4.5
    width_m: float = 1.8

    def __post_init__(self):
        if self.target_class not in ("pedestrian", "vehicle"):
            raise ValueError("target_class must be 'pedestrian' or 'vehicle'")


@dataclass(frozen=True)
class ReflectionPoint:
    """One backscattering point as seen by one BS at one scan."""

    position_m: tuple
    mean_rcs_m2: float
    drawn_rcs_m2: float
    kind: str  # pedestrian | surface | wheelhouse | corner
    distance_m: float
    doa_rad: float          # relative to the BS boresight
    doppler_hz: float
    delay_s: float
    path_gain: complex      # beta = |beta| e^{j phi}


def path_gain_power(rcs_m2, distance_m, carrier_freq_hz):
    """|beta|^2 = c^2 sigma / ((4 pi)^3 f_c^2 d^4)."""
    if distance_m <= 0:
        raise ValueError("distance must be > 0")
    return (SPEED_OF_LIGHT ** 2 * rcs_m2) / ((4.0 * math.pi) ** 3
                                             * carrier_freq_hz ** 2 * distance_m ** 4)


def _vehicle_layout(length_m, width_m):
    """Candidate reflectors in the body frame: (offset, facing angle, kind, mean rcs).

    Facing angle is the outward normal for surfaces and the outward diagonal
    for corners; wheelhouses have no aspect dependence.
    """
    hl, hw = 0.5 * length_m, 0.5 * width_m
    wl = 0.3 * length_m  # wheel longitudinal offset (1.35 m for a 4.5 m car)
    pts = [
        ((hl, 0.0), 0.0, "surface", SURFACE_MEAN_RCS),
        ((-hl, 0.0), math.pi, "surface", SURFACE_MEAN_RCS),
        ((0.0, hw), 0.5 * math.pi, "surface", SURFACE_MEAN_RCS),
        ((0.0, -hw), -0.5 * math.pi, "surface", SURFACE_MEAN_RCS),
    ]
    for sx in (1.0, -1.0):
        for sy in (1.0, -1.0):
            pts.append(((sx * wl, sy * hw), 0.0, "wheelhouse", WHEELHOUSE_MEAN_RCS))
    for sx in (1.0, -1.0):
        for sy in (1.0, -1.0):
            pts.append(((sx * hl, sy * hw), math.atan2(sy * hw, sx * hl),
                        "corner", CORNER_MEAN_RCS))
    return pts


def target_reflectors(target, bs, t_s, rng, radio,
                      surface_aperture_rad=SURFACE_VISIBILITY_HALFWIDTH_RAD,
                      corner_aperture_rad=CORNER_VISIBILITY_HALFWIDTH_RAD):
    """Visible reflection points of one target for one BS at time t_s.

    Pedestrians give exactly one point at the target position; vehicles give
    the subset of their 12 points that pass the aspect-angle visibility test.
    RCS values are drawn from an exponential distribution with the kind's
    mean (Swerling I); the caller holds them for the duration of one scan.
    """
    pos, vel = target.trajectory.state_at(t_s)
    heading = target.trajectory.heading_at(t_s)
    turn_rate = target.trajectory.turn_rate_at(t_s)

    if target.target_class == "pedestrian":
        candidates = [((0.0, 0.0), 0.0, "pedestrian", PEDESTRIAN_MEAN_RCS)]
    else:
        candidates = _vehicle_layout(target.length_m, target.width_m)

    ch, sh = math.cos(heading), math.sin(heading)
    out = []
    for offset, facing, kind, mean_rcs in candidates:
        r_world = np.array([ch * offset[0] - sh * offset[1],
                            sh * offset[0] + ch * offset[1]])
        p = pos + r_world
        d_vec = p - bs.position
        d = float(np.hypot(*d_vec))
        if d <= 0.0:
            continue
        to_bs = math.atan2(-d_vec[1], -d_vec[0])
        if kind == "surface":
            if abs(wrap_angle(to_bs - (heading + facing))) > surface_aperture_rad:
                continue
        elif kind == "corner":
            if abs(wrap_angle(to_bs - (heading + facing))) > corner_aperture_rad:
                continue
        drawn = float(rng.exponential(mean_rcs)) if mean_rcs > 0.0 else 0.0
        phase = float(rng.uniform(0.0, 2.0 * math.pi))
        gain = math.sqrt(path_gain_power(drawn, d, radio.carrier_freq_hz)) * complex(
            math.cos(phase), math.sin(phase))
        v_point = vel + turn_rate * np.array([-r_world[1], r_world[0]])
        closing_speed = float(-(d_vec / d) @ v_point)
        out.append(ReflectionPoint(
            position_m=tuple(p),
            mean_rcs_m2=mean_rcs,
            drawn_rcs_m2=drawn,
            kind=kind,
            distance_m=d,
            doa_rad=bs.bearing_of(p),
            doppler_hz=2.0 * radio.carrier_freq_hz * closing_speed / SPEED_OF_LIGHT,
            delay_s=2.0 * d / SPEED_OF_LIGHT,
            path_gain=gain,
        ))
    return out


@dataclass
class Scenario:
    """Complete simulation scenario: geometry, targets, radio, timing."""

    radio: RadioParams
    base_stations: list
    targets: list
    scan_period_s: float = 0.05
    num_scans: int = 200
    area_m: tuple = (-20.0, 20.0, -20.0, 20.0)  # x_min, x_max, y_min, y_max
    comm_dir_rad: float = 0.35  # communication beam offset from boresight, all BSs

    def __post_init__(self):
        horizon = self.scan_period_s * (self.num_scans - 1)
        for tgt in self.targets:
            if tgt.trajectory.horizon_s + 1e-9 < horizon:
                raise ValueError(
                    f"target {tgt.target_id} trajectory horizon "
                    f"{tgt.trajectory.horizon_s} s shorter than simulation horizon {horizon} s")

    @property
    def sensing_bs(self):
        return [bs for bs in self.base_stations if bs.role == "jsc"]

    @property
    def area_m2(self):
        x0, x1, y0, y1 = self.area_m
        return (x1 - x0) * (y1 - y0)

    def scan_time(self, scan_index):
        return scan_index * self.scan_period_s

    def truth_states(self, scan_index):
        """List of (target, position, velocity) at a scan instant."""
        t = self.scan_time(scan_index)
        return [(tgt, *tgt.trajectory.state_at(t)) for tgt in self.targets]

    def truth_positions(self, scan_index):
        return np.array([pos for _, pos, _ in self.truth_states(scan_index)]).reshape(-1, 2)


def circular_network(n_total, radius_m=50.0, n_sensing=None,
                     scan_halfwidth_rad=math.radians(60.0),
                     scan_step_rad=math.radians(2.4)):
    """BSs evenly placed on a circle, boresights toward the center.

    The sensing role is spread evenly around the circle so that extended
    targets are observed from all aspects even when few BSs sense.
    """
    if n_sensing is None:
        n_sensing = n_total
    if n_sensing > n_total:
        raise ValueError("n_sensing cannot exceed n_total")
    sensing_ids = {q * n_total // n_sensing for q in range(n_sensing)}
    poses = []
    for q in range(n_total):
        ang = 2.0 * math.pi * q / n_total
        poses.append(BsPose(
            bs_id=q,
            position_m=(radius_m * math.cos(ang), radius_m * math.sin(ang)),
            boresight_rad=float(wrap_angle(ang + math.pi)),
            scan_halfwidth_rad=scan_halfwidth_rad,
            scan_step_rad=scan_step_rad,
            role="jsc" if q in sensing_ids else "comm",
        ))
    return poses
