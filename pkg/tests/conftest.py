"""Shared scene-building helpers for the test suite."""

from __future__ import annotations

import math

import numpy as np
import pytest

from ostk import (AgentRecord, CameraExtrinsics, CameraIntrinsics, CameraTruth,
                  Scene, SensorTrajectory, VisualTrajectory)


def standard_camera(image_size=(1920, 1080), fov_degrees=72.0):
    """Intrinsics with the horizontal field of view spanning the image."""
    w, h = image_size
    fx = (w / 2.0) / math.tan(math.radians(fov_degrees) / 2.0)
    return CameraIntrinsics(fx=fx, fy=fx, cx=w / 2.0, cy=h / 2.0)


def forward_x_pose(position=(0.0, 0.0, 1.6)) -> CameraExtrinsics:
    """Camera at ``position`` looking along world +x, world +z up."""
    return CameraExtrinsics.look_at(position, (1.0, 0.0, 0.0))


def manual_scene(paths, frame_hz=10.0, image_size=(1920, 1080), fov_degrees=72.0,
                 poses=None, noisy_paths=None, scene_id="manual",
                 mask_absent=True):
    """Scene from explicit (frame_count, 3) world paths.

    ``paths`` maps agent_id -> path. Visual trajectories are exact
    projections of the clean paths; with ``mask_absent`` samples outside
    the field of view become ABSENT (via the simulator's classifier).
    ``visual_gt_hidden`` always carries the unmasked projection.
    """
    from ostk.simulate import _CameraFrames, _visibility

    paths = {k: np.asarray(v, dtype=float) for k, v in paths.items()}
    frame_count = next(iter(paths.values())).shape[0]
    intr = standard_camera(image_size, fov_degrees)
    if poses is None:
        poses = tuple(forward_x_pose() for _ in range(frame_count))
    camera = CameraTruth(intr, tuple(poses), scale=1.0)
    cams = _CameraFrames(camera)
    frames = np.arange(frame_count, dtype=np.int64)
    half_fov = math.radians(fov_degrees) / 2.0

    agents = []
    for agent_id, path in sorted(paths.items()):
        visible, _, pixels = _visibility(path, cams, frames, half_fov, image_size)
        present = visible if mask_absent else np.ones(frame_count, dtype=bool)
        clean = SensorTrajectory(frames, path, "clean")
        noisy_pts = noisy_paths[agent_id] if noisy_paths else path
        agents.append(AgentRecord(
            agent_id=agent_id, kind="pedestrian",
            sensor_noisy=SensorTrajectory(frames, noisy_pts, "noisy"),
            sensor_clean=clean,
            visual=VisualTrajectory(frames, np.where(present[:, None], pixels, np.nan),
                                    present),
            visual_gt_hidden=VisualTrajectory.fully_present(frames, pixels)))
    return Scene(scene_id=scene_id, frame_hz=frame_hz, frame_count=frame_count,
                 agents=tuple(agents), image_size=image_size, camera_truth=camera)


def constant_depth_scene(frame_count=40, n_in_sight=6, n_out=1, seed=0,
                         scene_id="manual", noise_sigma=0.0):
    """Scene whose agents move linearly at constant camera depth.

    Constant depth makes the projected pixel motion exactly linear in time,
    so constant-velocity extrapolation is exact in both world and pixel
    space. In-sight agents sit inside the view; out-of-sight agents move
    parallel to them far off-axis (still at positive depth).
    """
    rng = np.random.default_rng(seed)
    times = np.arange(frame_count, dtype=float)
    paths = {}
    for i in range(n_in_sight):
        depth = 12.0 + 3.0 * i
        y0 = -4.0 + 8.0 * rng.random()
        vy = rng.uniform(-0.04, 0.04)
        height = rng.uniform(1.0, 1.8)
        path = np.stack([np.full(frame_count, depth), y0 + vy * times,
                         np.full(frame_count, height)], axis=1)
        paths[f"in{i:02d}"] = path
    for i in range(n_out):
        depth = 10.0 + 2.0 * i
        y0 = 40.0 + 5.0 * i          # far off axis: bearing ~76 degrees
        vy = rng.uniform(-0.03, 0.03)
        path = np.stack([np.full(frame_count, depth), y0 + vy * times,
                         np.full(frame_count, 1.5)], axis=1)
        paths[f"out{i:02d}"] = path
    noisy = None
    if noise_sigma > 0:
        noisy = {k: v + rng.normal(0.0, noise_sigma, v.shape)
                 for k, v in paths.items()}
    return manual_scene(paths, scene_id=scene_id, noisy_paths=noisy)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
