import math

import numpy as np
import pytest

from uavrelay.geom import CameraView, Intrinsics, VType
from uavrelay.perception import (
    Detection,
    GridSpec,
    NoiseModel,
    SizeBounds,
    dump_map_csv,
    dump_map_pgm,
    encode_size_channels,
    gaussian_map,
    occupancy_map,
    synthesize_detections,
)
from uavrelay.traffic import ScenarioConfig, ScriptedVehicle, spawn_scenario

INTR = Intrinsics(width=64, height=64, hfov_deg=90.0)
BOUNDS = SizeBounds()


def scripted_state(*vehicles):
    cfg = ScenarioConfig(spawn_rate=0.0, scripted=tuple(
        ScriptedVehicle(**v) for v in vehicles))
    return cfg, spawn_scenario(cfg)


def det(dims, bbox, depth, view=CameraView.FRONT):
    return Detection(vtype=VType.CAR, center_ms=(10, 0, 0), yaw=0.0, dims=dims,
                     bboxes={view: bbox}, depths={view: depth})


class TestSynthesizedDetections:
    def test_exact_ground_truth_when_noise_off(self):
        _, st = scripted_state(dict(vtype="car", x=10.0, y=5.625, speed=0.0))
        dets = synthesize_detections(st, INTR)
        assert len(dets) == 1
        d = dets[0]
        assert d.dims == (3.71, 1.79, 1.55)
        assert CameraView.FRONT in d.bboxes
        # MS frame: car dead ahead at the same lane y
        assert math.isclose(d.center_ms[0], 10.0, abs_tol=1e-9)
        assert math.isclose(d.center_ms[1], 0.0, abs_tol=1e-9)

    def test_all_nearby_vehicles_detected(self):
        # 360 degree sweep: four 90 degree views leave no blind bearing.
        misses = []
        for ang in np.linspace(-math.pi, math.pi, 71):
            x = 5.625 + 12 * math.cos(ang)  # relative to the MS spawn at (0, 5.625)
            _, st = scripted_state(dict(vtype="van", x=12 * math.cos(ang),
                                        y=5.625 + 12 * math.sin(ang), speed=0.0))
            dets = synthesize_detections(st, INTR)
            if len(dets) != 1:
                misses.append(ang)
        assert not misses, f"blind bearings: {misses}"

    def test_miss_probability_one_empty(self):
        _, st = scripted_state(dict(vtype="car", x=10.0, y=5.625, speed=0.0))
        rng = np.random.default_rng(0)
        dets = synthesize_detections(st, INTR, NoiseModel(miss_prob=1.0), rng)
        assert dets == []

    def test_noise_perturbs_but_needs_rng(self):
        _, st = scripted_state(dict(vtype="car", x=10.0, y=5.625, speed=0.0))
        with pytest.raises(ValueError):
            synthesize_detections(st, INTR, NoiseModel(center_sigma=0.5), None)
        rng = np.random.default_rng(1)
        dets = synthesize_detections(st, INTR, NoiseModel(center_sigma=0.5), rng)
        assert len(dets) == 1
        assert abs(dets[0].center_ms[0] - 10.0) > 1e-6


class TestSizeChannels:
    def test_car_tuple_values(self):
        f = encode_size_channels(
            [det((3.71, 1.79, 1.55), (10, 10, 20, 20), 10.0)], BOUNDS, INTR)
        region = f[:, 12, 12]
        assert math.isclose(region[0], -255 * 3.71 / 11.08, abs_tol=5e-3)
        assert math.isclose(region[1], -255 * 1.79 / 3.25, abs_tol=5e-3)
        assert math.isclose(region[2], -255 * 1.55 / 3.33, abs_tol=5e-3)
        # exact arithmetic: (-85.38, -140.45, -118.69) to 2 decimals
        assert round(float(region[0]), 2) == -85.38
        assert round(float(region[1]), 2) == -140.45
        assert round(float(region[2]), 2) == -118.69

    def test_bus_saturates_all_channels(self):
        f = encode_size_channels(
            [det((11.08, 3.25, 3.33), (0, 0, 64, 64), 5.0)], BOUNDS, INTR)
        assert np.allclose(f[0:3], -255.0)

    def test_empty_detections_zero_map(self):
        f = encode_size_channels([], BOUNDS, INTR)
        assert f.shape == (12, 64, 64)
        assert np.all(f == 0)

    def test_values_in_range_and_zero_outside(self):
        f = encode_size_channels(
            [det((5.2, 2.61, 2.47), (4, 8, 12, 16), 7.0)], BOUNDS, INTR)
        assert np.all(f <= 0.0) and np.all(f >= -255.0)
        inside = f[0, 8:16, 4:12]
        assert np.all(inside < 0)
        mask = np.ones_like(f, dtype=bool)
        mask[0:3, 8:16, 4:12] = False
        assert np.all(f[mask] == 0)

    def test_depth_ordering_nearer_wins(self):
        far = det((11.08, 3.25, 3.33), (0, 0, 32, 32), depth=30.0)
        near = det((3.71, 1.79, 1.55), (8, 8, 24, 24), depth=5.0)
        f = encode_size_channels([far, near], BOUNDS, INTR)
        assert math.isclose(f[0, 16, 16], -255 * 3.71 / 11.08, abs_tol=5e-3)
        assert math.isclose(f[0, 2, 2], -255.0, abs_tol=5e-3)

    def test_idempotent(self):
        dets = [det((3.71, 1.79, 1.55), (10, 10, 20, 20), 10.0)]
        a = encode_size_channels(dets, BOUNDS, INTR)
        b = encode_size_channels(dets, BOUNDS, INTR)
        assert np.array_equal(a, b)

    def test_oversize_rejected(self):
        with pytest.raises(ValueError):
            encode_size_channels([det((12.0, 1.0, 1.0), (0, 0, 8, 8), 5.0)], BOUNDS, INTR)

    def test_view_channel_layout(self):
        d = Detection(vtype=VType.CAR, center_ms=(0, -10, 0), yaw=0.0,
                      dims=(3.71, 1.79, 1.55),
                      bboxes={CameraView.RIGHT: (20, 20, 30, 30)},
                      depths={CameraView.RIGHT: 10.0})
        f = encode_size_channels([d], BOUNDS, INTR)
        assert np.all(f[0:9] == 0)
        assert np.any(f[9:12] < 0)


class TestGaussianMap:
    def test_car_at_cell_center(self):
        grid = GridSpec(rows=15, cols=85, pitch=1.0)
        _, st = scripted_state(dict(vtype="car", x=10.5, y=0.0, speed=0.0))
        g = gaussian_map(st, grid)
        got = g[1, 7, 10]  # car channel; cell center (10.5, 0.0)
        want = 1.0 / (2 * math.pi * 3.71 * 1.79)
        assert math.isclose(got, want, rel_tol=1e-5)
        assert math.isclose(want, 0.02396, rel_tol=1e-3)

    def test_no_vans_channel_zero(self):
        _, st = scripted_state(dict(vtype="car", x=10.0, y=0.0, speed=0.0))
        g = gaussian_map(st, GridSpec())
        assert np.all(g[2] == 0)

    def test_two_identical_cars_double(self):
        grid = GridSpec()
        _, st1 = scripted_state(dict(vtype="car", x=10.5, y=0.0, speed=0.0))
        _, st2 = scripted_state(dict(vtype="car", x=10.5, y=0.0, speed=0.0),
                                dict(vtype="car", x=10.5, y=0.0, speed=0.0))
        g1 = gaussian_map(st1, grid)
        g2 = gaussian_map(st2, grid)
        assert np.allclose(g2[1], 2 * g1[1], rtol=1e-6)

    def test_ms_channel_uses_ms_dims(self):
        _, st = scripted_state()
        grid = GridSpec()
        g = gaussian_map(st, grid)
        assert np.any(g[0] > 0)
        assert np.all(g[1:] == 0)

    def test_mass_approximates_count(self):
        # Gaussian mass inside the grid ~ vehicle count when >= 3 sigma inside.
        grid = GridSpec(rows=60, cols=120, pitch=1.0, origin_x=-60.0, origin_y=-30.0)
        _, st = scripted_state(dict(vtype="car", x=20.0, y=0.5, speed=0.0),
                               dict(vtype="car", x=40.0, y=-0.5, speed=0.0))
        g = gaussian_map(st, grid)
        mass = float(g[1].sum()) * grid.pitch**2
        assert abs(mass - 2.0) / 2.0 < 0.10

    def test_translation_equivariance(self):
        grid = GridSpec(rows=15, cols=85, pitch=1.0)
        _, st1 = scripted_state(dict(vtype="bus", x=30.0, y=0.0, speed=0.0))
        _, st2 = scripted_state(dict(vtype="bus", x=31.0, y=0.0, speed=0.0))
        g1 = gaussian_map(st1, grid)
        g2 = gaussian_map(st2, grid)
        assert np.allclose(g2[3][:, 1:], g1[3][:, :-1], atol=1e-7)

    def test_nonnegative_finite(self):
        cfg = ScenarioConfig(seed=5, spawn_rate=1.0, prefill_s=10.0)
        st = spawn_scenario(cfg)
        g = gaussian_map(st, GridSpec())
        assert np.all(g >= 0) and np.all(np.isfinite(g))


class TestOccupancy:
    def test_binary_entries(self):
        cfg = ScenarioConfig(seed=9, spawn_rate=1.0, prefill_s=10.0)
        st = spawn_scenario(cfg)
        occ = occupancy_map(st, GridSpec())
        assert set(np.unique(occ)).issubset({0.0, 1.0})

    def test_sizes_invisible(self):
        grid = GridSpec()
        _, st_car = scripted_state(dict(vtype="car", x=10.2, y=0.3, speed=0.0))
        _, st_bus = scripted_state(dict(vtype="bus", x=10.2, y=0.3, speed=0.0))
        assert np.array_equal(occupancy_map(st_car, grid), occupancy_map(st_bus, grid))

    def test_ms_channel_separate(self):
        _, st = scripted_state(dict(vtype="car", x=10.2, y=0.3, speed=0.0))
        occ = occupancy_map(st, GridSpec())
        assert occ[0].sum() == 1.0
        assert occ[1].sum() == 1.0


class TestDumps:
    def test_csv_and_pgm(self, tmp_path):
        _, st = scripted_state(dict(vtype="car", x=10.0, y=0.0, speed=0.0))
        g = gaussian_map(st, GridSpec(rows=15, cols=85, pitch=1.0))
        csvs = dump_map_csv(g, str(tmp_path), "gmap")
        pgms = dump_map_pgm(g, str(tmp_path), "gmap")
        assert len(csvs) == 4 and len(pgms) == 4
        rows = open(csvs[1]).read().strip().splitlines()
        assert len(rows) == 15 and len(rows[0].split(",")) == 85
        head = open(pgms[0], "rb").read(15).split(b"\n")
        assert head[0] == b"P5"
        assert head[1] == b"85 15"
