import json
import math

import numpy as np
import pytest

from ostk import (NoiseModel, SensorTrajectory, SimConfig, TimeWindow,
                  classify_sight, generate_scene, inject_sensor_noise,
                  point_visible, sight_partition)
from ostk.errors import ValidationError
from ostk.scene_io import scene_to_dict

from conftest import manual_scene, standard_camera


def clean_track(n, seed=0):
    rng = np.random.default_rng(seed)
    start = rng.uniform(-5, 5, size=3)
    vel = rng.uniform(-0.1, 0.1, size=3)
    pts = start + np.arange(n)[:, None] * vel
    return SensorTrajectory(np.arange(n), pts, "clean")


class TestNoiseInjection:
    def test_zero_noise_is_identity(self):
        traj = clean_track(50)
        noise = NoiseModel(kind="composite", sigma_xy=0.0, sigma_z=0.0,
                           drift_step_sigma=0.0)
        out = inject_sensor_noise(traj, noise, seed=3)
        assert np.array_equal(out.points, traj.points)
        assert out.provenance == "noisy"

    def test_requires_clean_provenance(self):
        traj = clean_track(10)
        noisy = SensorTrajectory(traj.frames, traj.points, "noisy")
        with pytest.raises(ValidationError):
            inject_sensor_noise(noisy, NoiseModel(), seed=0)

    def test_deterministic_and_seed_sensitive(self):
        traj = clean_track(100)
        a = inject_sensor_noise(traj, NoiseModel(), seed=7)
        b = inject_sensor_noise(traj, NoiseModel(), seed=7)
        c = inject_sensor_noise(traj, NoiseModel(), seed=8)
        assert np.array_equal(a.points, b.points)
        assert not np.array_equal(a.points, c.points)

    def test_frames_and_length_unchanged(self):
        traj = clean_track(64)
        out = inject_sensor_noise(traj, NoiseModel(), seed=1)
        assert np.array_equal(out.frames, traj.frames)
        assert len(out) == len(traj)

    def test_gaussian_sigma_matches_monte_carlo(self):
        # empirical std over 1e5 samples must sit in the [1.98, 2.02] band
        n = 100_000
        traj = SensorTrajectory(np.arange(n), np.zeros((n, 3)), "clean")
        noise = NoiseModel(kind="gaussian_gps", sigma_xy=2.0, sigma_z=0.5)
        out = inject_sensor_noise(traj, noise, seed=11)
        std_x = np.std(out.points[:, 0])
        std_y = np.std(out.points[:, 1])
        assert 1.98 <= std_x <= 2.02
        assert 1.98 <= std_y <= 2.02
        assert 0.49 <= np.std(out.points[:, 2]) <= 0.51

    def test_drift_variance_grows_linearly(self):
        # random-walk oracle: var(bias at frame t) = t * sigma^2 exactly
        sigma = 0.05
        t_check = 100
        n_seeds = 3000
        noise = NoiseModel(kind="odometer_drift", drift_step_sigma=sigma)
        traj = SensorTrajectory(np.arange(t_check + 1), np.zeros((t_check + 1, 3)),
                                "clean")
        samples = np.array([
            inject_sensor_noise(traj, noise, seed=s).points[t_check, 0]
            for s in range(n_seeds)])
        expected = t_check * sigma ** 2
        assert abs(np.var(samples) - expected) < 0.15 * expected
        # first frame carries no drift yet
        first = inject_sensor_noise(traj, noise, seed=0).points[0]
        assert np.array_equal(first, np.zeros(3))


class TestClassifySight:
    def scene_with_point(self, p):
        n = 4
        path = np.tile(np.asarray(p, dtype=float), (n, 1))
        anchor = np.tile([10.0, 0.0, 1.5], (n, 1))
        return manual_scene({"probe": path, "anchor": anchor})

    def test_on_axis_agent_visible(self):
        scene = self.scene_with_point([5.0, 0.0, 1.6])
        assert classify_sight(scene, 0, 72.0)["probe"] is True

    def test_behind_camera_not_visible(self):
        scene = self.scene_with_point([-5.0, 0.0, 1.6])
        assert classify_sight(scene, 0, 72.0)["probe"] is False

    def test_outside_image_not_visible(self):
        # pick the world point that projects exactly to u = width + 1
        cam = standard_camera()
        depth = 10.0
        u = 1921.0
        lateral = (u - cam.cx) * depth / cam.fx      # camera x at that pixel
        scene = self.scene_with_point([depth, -lateral, 1.6])
        flags = classify_sight(scene, 0, 179.0)      # fov wide open: image decides
        assert flags["probe"] is False

    def test_requires_camera_truth(self):
        scene = self.scene_with_point([5.0, 0.0, 1.6])
        bare = type(scene)(scene.scene_id, scene.frame_hz, scene.frame_count,
                           scene.agents, scene.image_size, None)
        with pytest.raises(ValidationError):
            classify_sight(bare, 0, 72.0)


def small_cfg(**overrides):
    base = dict(agent_count=4, frame_count=40, frame_hz=10.0,
                motion="constant_velocity", camera_mode="stationary",
                fov_degrees=72.0, image_size=(1920, 1080),
                noise=NoiseModel(), out_of_sight_count=1)
    base.update(overrides)
    return SimConfig(**base)


class TestGenerateScene:
    def test_bit_deterministic(self):
        cfg = small_cfg()
        a = json.dumps(scene_to_dict(generate_scene(cfg, 7)))
        b = json.dumps(scene_to_dict(generate_scene(cfg, 7)))
        assert a == b

    def test_different_seed_changes_noise(self):
        cfg = small_cfg()
        a = generate_scene(cfg, 1)
        b = generate_scene(cfg, 2)
        assert not np.array_equal(a.agents[0].sensor_noisy.points,
                                  b.agents[0].sensor_noisy.points)

    def test_zero_noise_matches_clean(self):
        cfg = small_cfg(noise=NoiseModel(kind="gaussian_gps", sigma_xy=0.0,
                                         sigma_z=0.0, drift_step_sigma=0.0))
        scene = generate_scene(cfg, 5)
        for agent in scene.agents:
            assert np.array_equal(agent.sensor_noisy.points,
                                  agent.sensor_clean.points)

    def test_out_of_sight_count_respected(self):
        cfg = small_cfg(agent_count=5, out_of_sight_count=2)
        scene = generate_scene(cfg, 3)
        mask = sight_partition(scene, TimeWindow(0, 20, 40))
        assert len(mask.out_of_sight) == 2
        for agent_id in mask.out_of_sight:
            visual = scene.agent(agent_id).visual
            assert not visual.present.any()
        for agent_id in mask.in_sight:
            assert scene.agent(agent_id).visual.present.all()

    def test_hidden_ground_truth_present_and_finite(self):
        scene = generate_scene(small_cfg(), 9)
        for agent in scene.agents:
            hidden = agent.visual_gt_hidden
            assert hidden is not None
            assert hidden.all_present
            assert np.all(np.isfinite(hidden.points))

    def test_absent_exactly_where_classifier_says(self):
        cfg = small_cfg(agent_count=3, frame_count=20)
        scene = generate_scene(cfg, 13)
        for frame in range(scene.frame_count):
            flags = classify_sight(scene, frame, cfg.fov_degrees)
            for agent in scene.agents:
                i = int(np.searchsorted(agent.visual.frames, frame))
                assert bool(agent.visual.present[i]) == flags[agent.agent_id]

    def test_fov_bearing_oracle(self):
        # independent trigonometric check of the 72-degree wedge
        cfg = small_cfg(agent_count=4, out_of_sight_count=2, frame_count=30)
        scene = generate_scene(cfg, 21)
        cam = scene.camera_truth
        half = math.radians(cfg.fov_degrees) / 2.0
        for agent in scene.agents:
            for i, frame in enumerate(agent.sensor_clean.frames):
                ext = cam.extrinsics[frame]
                p_c = ext.rotation @ agent.sensor_clean.points[i] + ext.translation
                bearing = math.atan2(math.hypot(p_c[0], p_c[1]), p_c[2])
                if agent.visual.present[i]:
                    assert bearing <= half + 1e-12
                elif p_c[2] > 0 and bearing > half:
                    assert not agent.visual.present[i]

    def test_agent_heights_constant_and_kind_banded(self):
        from ostk.simulate import _KIND_HEIGHTS
        scene = generate_scene(small_cfg(), 17)
        assert any(a.kind == "pedestrian" for a in scene.agents)
        for agent in scene.agents:
            heights = agent.sensor_clean.points[:, 2]
            assert np.all(heights == heights[0])
            lo, hi = _KIND_HEIGHTS[agent.kind]
            assert lo <= heights[0] <= hi

    @pytest.mark.parametrize("camera_mode", ["stationary", "translating", "orbiting"])
    def test_camera_modes_generate(self, camera_mode):
        cfg = small_cfg(camera_mode=camera_mode, agent_count=3, frame_count=50)
        scene = generate_scene(cfg, 2)
        assert len(scene.camera_truth.extrinsics) == 50
        positions = np.stack([-e.rotation.T @ e.translation
                              for e in scene.camera_truth.extrinsics])
        moved = np.linalg.norm(positions[-1] - positions[0]) > 1e-6
        assert moved == (camera_mode != "stationary")

    @pytest.mark.parametrize("motion", ["constant_velocity", "waypoint", "mixed"])
    def test_motion_modes_generate(self, motion):
        scene = generate_scene(small_cfg(motion=motion), 4)
        assert scene.frame_count == 40

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            small_cfg(out_of_sight_count=4)       # must stay below agent_count
        with pytest.raises(ValidationError):
            small_cfg(fov_degrees=180.0)
        with pytest.raises(ValidationError):
            NoiseModel(kind="pink")


class TestPointVisible:
    def test_depth_and_bounds(self):
        scene = generate_scene(small_cfg(), 1)
        cam = scene.camera_truth
        assert point_visible([5.0, 0.0, 1.6], cam, 0, 72.0, (1920, 1080))
        assert not point_visible([-5.0, 0.0, 1.6], cam, 0, 72.0, (1920, 1080))
