import math

import numpy as np
import pytest
from scipy import stats

from coopsense.scenario import (SPEED_OF_LIGHT, BsPose, MotionPrimitive,
                                RadioParams, TargetTruth, Trajectory, advance,
                                circular_network, target_reflectors, wrap_angle)

RADIO = RadioParams()


def _traj(kind, p0=(0.0, 0.0), v0=(1.0, 0.0), duration=10.0, **kw):
    return Trajectory(p0, v0, [MotionPrimitive(kind=kind, duration_s=duration, **kw)])


def _bs(position, boresight=0.0):
    return BsPose(bs_id=0, position_m=position, boresight_rad=boresight)


def _pedestrian(p0=(5.0, 5.0), v0=(0.0, 0.0)):
    return TargetTruth(target_id=0, target_class="pedestrian",
                       trajectory=_traj("static", p0=p0, v0=v0))


def _vehicle(p0=(0.0, 0.0), v0=(1.0, 0.0)):
    return TargetTruth(target_id=1, target_class="vehicle",
                       trajectory=_traj("uniform", p0=p0, v0=v0))


class TestAdvance:
    def test_uniform_linear(self):
        pos, vel = advance(_traj("uniform"), 0.05)
        assert np.allclose(pos, (0.05, 0.0))
        assert np.allclose(vel, (1.0, 0.0))

    def test_static_holds_position(self):
        pos, vel = advance(_traj("static", p0=(3.0, -2.0), v0=(5.0, 5.0)), 7.3)
        assert np.allclose(pos, (3.0, -2.0))
        assert np.allclose(vel, (0.0, 0.0))

    def test_turn_matches_fine_step_integration(self):
        # midpoint integration of dp/dt = v, dv/dt = w x v at dt = 1e-5
        w = math.pi / 2
        traj = _traj("turn", v0=(1.0, 0.0), turn_rate_radps=w, duration=1.0)
        dt = 1e-5
        p = np.zeros(2)
        v = np.array([1.0, 0.0])
        rot_half = np.array([[math.cos(w * dt / 2), -math.sin(w * dt / 2)],
                             [math.sin(w * dt / 2), math.cos(w * dt / 2)]])
        rot_full = np.array([[math.cos(w * dt), -math.sin(w * dt)],
                             [math.sin(w * dt), math.cos(w * dt)]])
        for _ in range(int(round(1.0 / dt))):
            p = p + dt * (rot_half @ v)
            v = rot_full @ v
        pos, vel = advance(traj, 1.0)
        assert np.linalg.norm(pos - p) < 1e-6
        assert np.linalg.norm(vel - v) < 1e-6

    def test_acceleration_closed_form(self):
        traj = _traj("accelerate", v0=(1.0, 0.0), acceleration_mps2=(2.0, -1.0))
        pos, vel = advance(traj, 2.0)
        assert np.allclose(pos, (1.0 * 2 + 0.5 * 2 * 4, -0.5 * 4))
        assert np.allclose(vel, (5.0, -2.0))

    def test_continuity_across_boundaries(self):
        traj = Trajectory((0, 0), (1.0, 0.5), [
            MotionPrimitive("uniform", 1.0),
            MotionPrimitive("turn", 1.0, turn_rate_radps=0.7),
            MotionPrimitive("accelerate", 1.0, acceleration_mps2=(0.3, 0.0)),
        ])
        for boundary in (1.0, 2.0):
            before, vb = traj.state_at(boundary - 1e-9)
            after, va = traj.state_at(boundary + 1e-9)
            assert np.linalg.norm(after - before) < 1e-6
            assert np.linalg.norm(va - vb) < 1e-6

    def test_out_of_horizon_raises(self):
        traj = _traj("uniform", duration=2.0)
        with pytest.raises(ValueError):
            advance(traj, 2.5)
        with pytest.raises(ValueError):
            advance(traj, -0.1)


class TestReflectors:
    def test_pedestrian_single_point_table_rcs(self, rng):
        pts = target_reflectors(_pedestrian(), _bs((0.0, 0.0)), 0.0, rng, RADIO)
        assert len(pts) == 1
        assert pts[0].mean_rcs_m2 == 1.0
        assert np.allclose(pts[0].position_m, (5.0, 5.0))

    def test_back_surfaces_invisible(self, rng):
        # vehicle heading +x, BS far ahead on +x: only the front surface among
        # the four planar reflectors can face the BS
        veh = _vehicle(p0=(0.0, 0.0), v0=(1.0, 0.0))
        pts = target_reflectors(veh, _bs((100.0, 0.0)), 0.0, rng, RADIO)
        surfaces = [p for p in pts if p.kind == "surface"]
        assert len(surfaces) == 1
        assert surfaces[0].position_m[0] > 0  # the front one

    def test_vehicle_count_bounds(self, rng):
        veh = _vehicle()
        for t in np.linspace(0, 9, 13):
            pts = target_reflectors(veh, _bs((30.0, 40.0)), float(t), rng, RADIO)
            assert 0 <= len(pts) <= 12

    def test_corner_rcs_monte_carlo_mean(self, rng):
        # corners average 5 m^2; the sample mean of n exponential draws has
        # std mean/sqrt(n)
        veh = _vehicle(p0=(0.0, 0.0), v0=(0.0, 1.0))
        n = 100_000
        draws = []
        while len(draws) < n:
            pts = target_reflectors(veh, _bs((200.0, 0.0)), 0.0, rng, RADIO)
            draws.extend(p.drawn_rcs_m2 for p in pts if p.kind == "corner")
        draws = np.array(draws[:n])
        assert abs(draws.mean() - 5.0) < 3 * 5.0 / math.sqrt(n)

    def test_swerling_exponential_ks(self, rng):
        ped = _pedestrian()
        bs = _bs((50.0, 0.0))
        draws = np.array([target_reflectors(ped, bs, 0.0, rng, RADIO)[0].drawn_rcs_m2
                          for _ in range(100_000)])
        assert stats.kstest(draws, "expon", args=(0, 1.0)).pvalue > 0.01

    def test_wheelhouse_zero_power(self, rng):
        veh = _vehicle()
        pts = target_reflectors(veh, _bs((0.0, 80.0)), 0.0, rng, RADIO)
        wheels = [p for p in pts if p.kind == "wheelhouse"]
        assert len(wheels) == 4
        assert all(p.drawn_rcs_m2 == 0.0 and p.path_gain == 0.0 for p in wheels)

    def test_delay_and_doppler_relations(self, rng):
        veh = _vehicle(p0=(10.0, 0.0), v0=(-3.0, 2.0))
        bs = _bs((-20.0, 5.0))
        for p in target_reflectors(veh, bs, 1.0, rng, RADIO):
            assert p.delay_s * SPEED_OF_LIGHT / 2.0 == p.distance_m
            to_bs = (bs.position - np.asarray(p.position_m))
            closing = float(to_bs @ (-3.0, 2.0)) / np.linalg.norm(to_bs)
            expect = 2.0 * RADIO.carrier_freq_hz * closing / SPEED_OF_LIGHT
            assert abs(p.doppler_hz - expect) < 1e-6

    def test_path_gain_magnitude(self, rng):
        ped = _pedestrian()
        p = target_reflectors(ped, _bs((55.0, 5.0)), 0.0, rng, RADIO)[0]
        expect = (SPEED_OF_LIGHT ** 2 * p.drawn_rcs_m2
                  / ((4 * math.pi) ** 3 * RADIO.carrier_freq_hz ** 2 * p.distance_m ** 4))
        assert abs(abs(p.path_gain) ** 2 - expect) < 1e-12 * expect + 1e-300

    def test_determinism(self):
        veh = _vehicle()
        bs = _bs((30.0, -10.0))
        a = target_reflectors(veh, bs, 0.5, np.random.default_rng(7), RADIO)
        b = target_reflectors(veh, bs, 0.5, np.random.default_rng(7), RADIO)
        assert len(a) == len(b)
        for pa, pb in zip(a, b):
            assert pa == pb


class TestGeometry:
    def test_scan_direction_count(self):
        bs = BsPose(bs_id=0, position_m=(0, 0), boresight_rad=0.0,
                    scan_halfwidth_rad=math.radians(60), scan_step_rad=math.radians(2.4))
        assert bs.num_scan_directions == 51
        dirs = bs.scan_directions()
        assert np.isclose(dirs[0], -math.radians(60))
        assert np.isclose(dirs[-1], math.radians(60))

    def test_circular_network_roles_spread(self):
        poses = circular_network(6, n_sensing=3)
        assert [b.bs_id for b in poses if b.role == "jsc"] == [0, 2, 4]
        assert all(np.isclose(np.hypot(*b.position_m), 50.0) for b in poses)
        # boresights point at the center
        for b in poses:
            assert abs(wrap_angle(math.atan2(-b.position_m[1], -b.position_m[0])
                                  - b.boresight_rad)) < 1e-12

    def test_radio_invariants(self):
        with pytest.raises(ValueError):
            RadioParams(sensing_symbols=2000, symbols_per_frame=1000)
        with pytest.raises(ValueError):
            RadioParams(sensing_power_fraction=1.5)
        with pytest.raises(ValueError):
            RadioParams(num_subcarriers=0)
