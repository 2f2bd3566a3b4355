import numpy as np
import pytest

from ostk import (CameraMatrix, Correspondence, EstimatorConfig, NoiseModel,
                  SimConfig, TimeWindow, estimate_frame_matrix,
                  estimate_matrix_sequence, generate_scene, project_points,
                  reprojection_report, sight_partition)
from ostk.errors import (CoverageError, DegeneracyError, InsufficientDataError,
                         ValidationError)

from test_geometry import points_in_front, random_camera


def exact_correspondences(rng, n=12, camera=None):
    """Project noise-free world points through a random camera."""
    scale, k, rt = camera if camera is not None else random_camera(rng)
    raw = scale * (k.as_matrix() @ rt.as_matrix())
    world = points_in_front(rng, rt, n, depth=(2.0, 40.0))
    truth = CameraMatrix.from_raw(raw, world)
    pixels = project_points(truth, world)
    corrs = [Correspondence(world[i], pixels[i], frame=0, agent_id=f"a{i}")
             for i in range(n)]
    return corrs, truth, world


def dlt_constraint_matrix(world, pixels):
    """Independent reimplementation of the two-rows-per-point DLT stack."""
    rows = []
    for (x, y, z), (u, v) in zip(world, pixels):
        rows.append([x, y, z, 1, 0, 0, 0, 0, -u * x, -u * y, -u * z, -u])
        rows.append([0, 0, 0, 0, x, y, z, 1, -v * x, -v * y, -v * z, -v])
    return np.array(rows)


class TestEstimateFrameMatrix:
    def test_exact_recovery(self, rng):
        # synthetic oracle: construct M, project, recover
        for _ in range(50):
            corrs, truth, world = exact_correspondences(rng, n=8)
            est, diag = estimate_frame_matrix(corrs, EstimatorConfig())
            assert np.max(np.abs(est.m - truth.m)) < 1e-6
            assert diag.rms_reprojection < 1e-7
            assert diag.n_correspondences == 8

    def test_below_minimum_count(self, rng):
        corrs, _, _ = exact_correspondences(rng, n=5)
        with pytest.raises(InsufficientDataError):
            estimate_frame_matrix(corrs, EstimatorConfig())

    def test_collinear_points_degenerate(self, rng):
        # rank oracle: collinear world points leave a >1-dim null space
        scale, k, rt = random_camera(rng)
        raw = scale * (k.as_matrix() @ rt.as_matrix())
        base = points_in_front(rng, rt, 1, depth=(5.0, 10.0))[0]
        direction = rng.normal(size=3)
        world = base + np.linspace(0, 3, 8)[:, None] * direction
        truth = CameraMatrix.from_raw(raw, world)
        pixels = project_points(truth, world)
        assert np.linalg.matrix_rank(dlt_constraint_matrix(world, pixels)) < 11
        corrs = [Correspondence(world[i], pixels[i], frame=0, agent_id="a")
                 for i in range(8)]
        with pytest.raises(DegeneracyError):
            estimate_frame_matrix(corrs, EstimatorConfig())

    def test_identical_points_degenerate(self, rng):
        corrs, _, world = exact_correspondences(rng, n=8)
        clones = [Correspondence(world[0], corrs[0].pixel, frame=0, agent_id="a")
                  for _ in range(8)]
        with pytest.raises(DegeneracyError):
            estimate_frame_matrix(clones, EstimatorConfig())

    def test_weight_validation(self):
        with pytest.raises(ValidationError):
            Correspondence(np.zeros(3), np.zeros(2), 0, "a", weight=0.0)

    def test_huber_downweights_gross_outliers(self, rng):
        # paired comparison over 50 seeds: median inlier error must drop
        wins = 0
        for seed in range(50):
            local = np.random.default_rng(seed)
            corrs, truth, world = exact_correspondences(local, n=40)
            pixels = np.stack([c.pixel for c in corrs])
            noisy = pixels + local.normal(0, 0.5, pixels.shape)
            outliers = local.choice(40, size=4, replace=False)
            noisy[outliers] += 100.0
            cs = [Correspondence(world[i], noisy[i], 0, "a") for i in range(40)]
            inlier_idx = np.setdiff1d(np.arange(40), outliers)

            def inlier_median(cfg):
                est, _ = estimate_frame_matrix(cs, cfg)
                proj = project_points(est, world[inlier_idx])
                return np.median(np.linalg.norm(proj - pixels[inlier_idx], axis=1))

            plain = inlier_median(EstimatorConfig(robust="none"))
            robust = inlier_median(EstimatorConfig(robust="huber"))
            if robust < plain:
                wins += 1
        assert wins >= 45

    def test_noise_monotonicity(self):
        # statistical: mean RMS reprojection non-decreasing in pixel noise
        sigmas = [0.0, 0.5, 1.0, 2.0]
        means = []
        for sigma in sigmas:
            values = []
            for seed in range(50):
                local = np.random.default_rng(1000 + seed)
                corrs, truth, world = exact_correspondences(local, n=50)
                pixels = np.stack([c.pixel for c in corrs])
                noisy = pixels + local.normal(0, sigma, pixels.shape)
                cs = [Correspondence(world[i], noisy[i], 0, "a") for i in range(50)]
                _, diag = estimate_frame_matrix(cs, EstimatorConfig())
                values.append(diag.rms_reprojection)
            means.append(np.mean(values))
        assert all(a <= b + 1e-12 for a, b in zip(means, means[1:]))

    def test_translation_equivariance(self, rng):
        # shifting the world and compensating the extrinsics leaves residuals alone
        scale, k, rt = random_camera(rng)
        corrs, truth, world = exact_correspondences(rng, n=20, camera=(scale, k, rt))
        pixels = np.stack([c.pixel for c in corrs]) + rng.normal(0, 1.0, (20, 2))
        shift = rng.normal(scale=50.0, size=3)
        cs = [Correspondence(world[i], pixels[i], 0, "a") for i in range(20)]
        cs_shifted = [Correspondence(world[i] + shift, pixels[i], 0, "a")
                      for i in range(20)]
        _, diag = estimate_frame_matrix(cs, EstimatorConfig())
        _, diag_shifted = estimate_frame_matrix(cs_shifted, EstimatorConfig())
        assert abs(diag.rms_reprojection - diag_shifted.rms_reprojection) < 1e-9

    def test_condition_warning_flag(self, rng):
        corrs, _, _ = exact_correspondences(rng, n=8)
        _, diag = estimate_frame_matrix(corrs, EstimatorConfig(condition_warn=1.0))
        assert diag.ill_conditioned


def zero_noise_cfg(**overrides):
    base = dict(agent_count=7, frame_count=40, out_of_sight_count=1,
                noise=NoiseModel(kind="gaussian_gps", sigma_xy=0.0, sigma_z=0.0,
                                 drift_step_sigma=0.0))
    base.update(overrides)
    return SimConfig(**base)


class TestEstimateSequence:
    def test_stationary_recovers_truth(self):
        cfg = zero_noise_cfg(agent_count=5)
        scene = generate_scene(cfg, 3)
        window = TimeWindow(0, 30, 40)
        mask = sight_partition(scene, window)
        assert len(mask.in_sight) == 4
        seq, diags = estimate_matrix_sequence(scene, mask, window,
                                              EstimatorConfig(mode="stationary"))
        for frame in range(window.t_s, window.t_e):
            truth = scene.camera_truth.matrix_at(frame)
            assert np.max(np.abs(seq.matrix_at(frame).m - truth.m)) < 1e-6
        assert len(diags) == 30

    def test_sliding_window_tracks_translating_camera(self):
        cfg = zero_noise_cfg(camera_mode="translating", agent_count=8,
                             out_of_sight_count=2)
        scene = generate_scene(cfg, 11)
        window = TimeWindow(0, 25, 40)
        mask = sight_partition(scene, window)
        assert len(mask.in_sight) >= 6
        seq, diags = estimate_matrix_sequence(
            scene, mask, window,
            EstimatorConfig(mode="sliding_window", window_radius=0))
        for frame in range(window.t_s, window.t_e):
            truth = scene.camera_truth.matrix_at(frame)
            assert np.max(np.abs(seq.matrix_at(frame).m - truth.m)) < 1e-6
        assert len(diags) == 25

    def test_empty_in_sight_errors(self):
        scene = generate_scene(zero_noise_cfg(), 5)
        window = TimeWindow(0, 20, 40)
        empty = sight_partition(scene, window)
        empty = type(empty)(frozenset(), frozenset(scene.agent_ids))
        with pytest.raises(InsufficientDataError):
            estimate_matrix_sequence(scene, empty, window, EstimatorConfig())

    def test_starved_frames_listed(self):
        # 5 in-sight agents and radius 0 give 5 < 6 correspondences per frame
        cfg = zero_noise_cfg(agent_count=6, out_of_sight_count=1)
        scene = generate_scene(cfg, 7)
        window = TimeWindow(0, 10, 40)
        mask = sight_partition(scene, window)
        with pytest.raises(InsufficientDataError, match="frame"):
            estimate_matrix_sequence(
                scene, mask, window,
                EstimatorConfig(mode="sliding_window", window_radius=0))


class TestReprojectionReport:
    def test_truth_matrices_on_noise_free_scene(self):
        scene = generate_scene(zero_noise_cfg(), 2)
        window = TimeWindow(0, 30, 40)
        mask = sight_partition(scene, window)
        seq = scene.camera_truth.matrix_sequence(window)
        report = reprojection_report(seq, scene, mask)
        assert report
        assert all(rms <= 1e-9 for rms in report.values())

    def test_pixel_noise_level_reflected(self):
        # least-squares residual oracle: RMS near the injected 1 px level
        from conftest import manual_scene
        rng = np.random.default_rng(0)
        n, frames = 8, 60
        times = np.arange(frames, dtype=float)
        paths = {}
        for i in range(n):
            depth = 8.0 + 12.0 * rng.random()
            y0 = rng.uniform(-4, 4)
            vy = rng.uniform(-0.05, 0.05)
            height = rng.uniform(0.4, 3.0)
            paths[f"a{i:02d}"] = np.stack(
                [np.full(frames, depth), y0 + vy * times, np.full(frames, height)],
                axis=1)
        scene = manual_scene(paths)
        window = TimeWindow(0, 60, 60)
        mask = sight_partition(scene, window)
        assert len(mask.in_sight) * frames >= 200
        noisy_agents = []
        for agent in scene.agents:
            noisy_pixels = agent.visual.points + rng.normal(0, 1.0,
                                                            agent.visual.points.shape)
            visual = type(agent.visual).fully_present(agent.visual.frames, noisy_pixels)
            noisy_agents.append(type(agent)(agent.agent_id, agent.kind,
                                            agent.sensor_noisy, agent.sensor_clean,
                                            visual, agent.visual_gt_hidden))
        noisy_scene = type(scene)(scene.scene_id, scene.frame_hz, scene.frame_count,
                                  tuple(noisy_agents), scene.image_size,
                                  scene.camera_truth)
        seq, _ = estimate_matrix_sequence(noisy_scene, mask, window,
                                          EstimatorConfig(mode="stationary"))
        report = reprojection_report(seq, noisy_scene, mask)
        pooled = np.sqrt(np.mean([r ** 2 for r in report.values()]))
        assert 0.8 <= pooled <= 1.3

    def test_scale_invariance_of_residuals(self):
        scene = generate_scene(zero_noise_cfg(), 2)
        window = TimeWindow(0, 20, 40)
        mask = sight_partition(scene, window)
        seq, _ = estimate_matrix_sequence(scene, mask, window,
                                          EstimatorConfig(mode="stationary"))
        report = reprojection_report(seq, scene, mask)
        doubled = type(seq)(seq.window, tuple(
            CameraMatrix.from_raw(2.0 * m.m * (m.scale or 1.0)) for m in seq.matrices))
        report_doubled = reprojection_report(doubled, scene, mask)
        for agent_id in report:
            assert report[agent_id] == pytest.approx(report_doubled[agent_id],
                                                     abs=1e-9)

    def test_window_mismatch_errors(self):
        scene = generate_scene(zero_noise_cfg(frame_count=30), 2)
        mask = sight_partition(scene, TimeWindow(0, 20, 30))
        seq = scene.camera_truth.matrix_sequence(TimeWindow(0, 20, 30))
        bigger = TimeWindow(0, 35, 40)
        seq_big = type(seq)(bigger, tuple(list(seq.matrices) + [seq.matrices[0]] * 15))
        with pytest.raises(CoverageError):
            reprojection_report(seq_big, scene, mask)
