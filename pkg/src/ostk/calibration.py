"""Camera matrix estimation from paired world/pixel trajectories.

Estimates the per-frame 3x4 projection matrix sequence from in-sight
agents' paired (sensor, visual) samples using the direct linear transform:
each correspondence contributes two homogeneous linear constraints from
``p x (M [P,1]^T) = 0``, the stack is solved by singular value
decomposition after Hartley-style normalization (world points shifted to
their centroid and scaled to RMS sqrt(3), pixels to centroid and RMS
sqrt(2)), and the solution is denormalized and put in canonical gauge.

A moving camera is handled by pooling correspondences from a small frame
neighbourhood around each frame (treating the matrix as locally constant)
and solving per frame. Optional Huber reweighting makes the solve robust
to gross pixel outliers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kalman import cv_rts_smooth, estimate_measurement_variance
from .core import Scene, SightMask, TimeWindow, slice_window
from .errors import (CoverageError, DegeneracyError, InsufficientDataError,
                     ValidationError)
from .geometry import CameraMatrix, CameraMatrixSequence

__all__ = [
    "Correspondence",
    "EstimatorConfig",
    "FrameDiagnostics",
    "estimate_frame_matrix",
    "estimate_matrix_sequence",
    "gather_correspondences",
    "reprojection_report",
]

#: Paired singular values closer than this are treated as one multiple value.
_DEGENERACY_TOL = 1e-12
_HUBER_MAX_ITERATIONS = 10


@dataclass(frozen=True)
class Correspondence:
    """One world-point / pixel pair observed at a frame."""

    world: np.ndarray  # (3,)
    pixel: np.ndarray  # (2,)
    frame: int
    agent_id: str
    weight: float = 1.0

    def __post_init__(self):
        w = np.array(self.world, dtype=float, copy=True)
        p = np.array(self.pixel, dtype=float, copy=True)
        if w.shape != (3,) or p.shape != (2,):
            raise ValidationError("Correspondence: world must be (3,), pixel (2,)")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(p))):
            raise ValidationError("Correspondence: coordinates must be finite")
        if not (0.0 < float(self.weight) <= 1.0):
            raise ValidationError("Correspondence.weight must lie in (0, 1]")
        w.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "world", w)
        object.__setattr__(self, "pixel", p)
        object.__setattr__(self, "frame", int(self.frame))
        object.__setattr__(self, "weight", float(self.weight))


@dataclass(frozen=True)
class EstimatorConfig:
    """Sequence-estimation knobs.

    ``presmooth_accel_sigma`` controls the constant-velocity RTS smoothing
    applied to each in-sight agent's (noisy) sensor window before
    correspondences are formed, with the measurement variance estimated
    from the track's own second differences. The solve assumes pixel-side
    error only, so leaving meter-scale sensor noise on the world side
    badly biases it; set the field to None to feed raw sensor samples.
    """

    mode: str = "sliding_window"       # stationary | sliding_window
    window_radius: int = 2             # frames pooled on each side
    min_correspondences: int = 6
    robust: str = "none"               # none | huber
    huber_delta: float = 2.0           # pixels
    condition_warn: float = 1e8
    presmooth_accel_sigma: float | None = 0.005  # m/frame^2; None disables

    def __post_init__(self):
        if self.mode not in ("stationary", "sliding_window"):
            raise ValidationError("EstimatorConfig.mode must be stationary or sliding_window")
        if int(self.window_radius) < 0:
            raise ValidationError("EstimatorConfig.window_radius must be >= 0")
        object.__setattr__(self, "window_radius", int(self.window_radius))
        if int(self.min_correspondences) < 6:
            raise ValidationError("EstimatorConfig.min_correspondences must be >= 6")
        object.__setattr__(self, "min_correspondences", int(self.min_correspondences))
        if self.robust not in ("none", "huber"):
            raise ValidationError("EstimatorConfig.robust must be none or huber")
        if not (float(self.huber_delta) > 0):
            raise ValidationError("EstimatorConfig.huber_delta must be > 0")
        if not (float(self.condition_warn) > 0):
            raise ValidationError("EstimatorConfig.condition_warn must be > 0")
        if self.presmooth_accel_sigma is not None:
            v = float(self.presmooth_accel_sigma)
            if not np.isfinite(v) or v < 0:
                raise ValidationError(
                    "EstimatorConfig.presmooth_accel_sigma must be finite and >= 0")
            object.__setattr__(self, "presmooth_accel_sigma", v)


@dataclass(frozen=True)
class FrameDiagnostics:
    """Solve-quality numbers for one estimated matrix.

    ``condition`` is the ratio of the constraint matrix's largest singular
    value to its second-smallest; the smallest one is the solved null
    direction and is excluded (it is ~0 for consistent data by design).
    """

    condition: float
    rms_reprojection: float
    n_correspondences: int
    ill_conditioned: bool
    huber_iterations: int = 0


def _hartley_normalizers(world: np.ndarray, pixels: np.ndarray):
    cw = world.mean(axis=0)
    rms_w = float(np.sqrt(np.mean(np.sum((world - cw) ** 2, axis=1))))
    cp = pixels.mean(axis=0)
    rms_p = float(np.sqrt(np.mean(np.sum((pixels - cp) ** 2, axis=1))))
    if rms_w <= 0 or rms_p <= 0:
        raise DegeneracyError("degenerate configuration: zero spread in points")
    sw = np.sqrt(3.0) / rms_w
    sp = np.sqrt(2.0) / rms_p
    t_world = np.diag([sw, sw, sw, 1.0])
    t_world[:3, 3] = -sw * cw
    t_pix = np.diag([sp, sp, 1.0])
    t_pix[:2, 2] = -sp * cp
    return t_world, t_pix


def _dlt_rows(world_n: np.ndarray, pixels_n: np.ndarray,
              row_weights: np.ndarray) -> np.ndarray:
    n = world_n.shape[0]
    x = np.hstack([world_n, np.ones((n, 1))])
    a = np.zeros((2 * n, 12))
    a[0::2, 0:4] = x
    a[0::2, 8:12] = -pixels_n[:, 0:1] * x
    a[1::2, 4:8] = x
    a[1::2, 8:12] = -pixels_n[:, 1:2] * x
    a *= np.repeat(np.sqrt(row_weights), 2)[:, None]
    return a


def _reprojection_errors(m: np.ndarray, world: np.ndarray,
                         pixels: np.ndarray) -> np.ndarray:
    h = world @ m[:, :3].T + m[:, 3]
    depth = h[:, 2]
    if np.any(np.abs(depth) <= 1e-15):
        raise DegeneracyError("estimated matrix projects a correspondence to zero depth")
    return np.linalg.norm(h[:, :2] / depth[:, None] - pixels, axis=1)


def estimate_frame_matrix(corrs, cfg: EstimatorConfig):
    """Solve one canonical projection matrix from pooled correspondences.

    Returns ``(CameraMatrix, FrameDiagnostics)``. Raises
    InsufficientDataError below ``cfg.min_correspondences`` and
    DegeneracyError when the constraint matrix's smallest singular value
    has multiplicity > 1 within 1e-12 (e.g. all world points collinear),
    meaning the matrix is not uniquely determined. A condition number above
    ``cfg.condition_warn`` is reported via the diagnostics flag, not an
    error.
    """
    corrs = list(corrs)
    if len(corrs) < cfg.min_correspondences:
        raise InsufficientDataError(
            f"need at least {cfg.min_correspondences} correspondences, got {len(corrs)}")
    world = np.stack([c.world for c in corrs])
    pixels = np.stack([c.pixel for c in corrs])
    base_weights = np.array([c.weight for c in corrs])

    t_world, t_pix = _hartley_normalizers(world, pixels)
    world_n = world * t_world[0, 0] + t_world[:3, 3]
    pixels_n = pixels * t_pix[0, 0] + t_pix[:2, 2]
    t_pix_inv = np.diag([1.0 / t_pix[0, 0], 1.0 / t_pix[0, 0], 1.0])
    t_pix_inv[:2, 2] = pixels.mean(axis=0)

    weights = base_weights.copy()
    iterations = 0
    m = s = None
    for _ in range(_HUBER_MAX_ITERATIONS if cfg.robust == "huber" else 1):
        a = _dlt_rows(world_n, pixels_n, weights)
        _, s, vh = np.linalg.svd(a, full_matrices=False)
        if s[-2] - s[-1] <= _DEGENERACY_TOL * max(1.0, s[0]):
            raise DegeneracyError(
                "degenerate correspondence configuration: the constraint matrix has a "
                "multiple smallest singular value (projection matrix not unique)")
        m = t_pix_inv @ vh[-1].reshape(3, 4) @ t_world
        if cfg.robust != "huber":
            break
        iterations += 1
        errors = _reprojection_errors(m, world, pixels)
        new = base_weights * np.minimum(1.0, cfg.huber_delta / np.maximum(errors, 1e-12))
        if np.max(np.abs(new - weights)) < 1e-9:
            weights = new
            break
        weights = new

    condition = float(s[0] / max(s[-2], np.finfo(float).tiny))
    rms = float(np.sqrt(np.mean(_reprojection_errors(m, world, pixels) ** 2)))
    diag = FrameDiagnostics(
        condition=condition,
        rms_reprojection=rms,
        n_correspondences=len(corrs),
        ill_conditioned=condition > cfg.condition_warn,
        huber_iterations=iterations,
    )
    return CameraMatrix.from_raw(m, reference_points=world), diag


def _presmooth(points: np.ndarray, accel_sigma: float) -> np.ndarray:
    """Per-axis CV+RTS smoothing with data-estimated measurement variance."""
    if points.shape[0] < 3:
        return points
    out = np.empty_like(points)
    q_var = accel_sigma ** 2
    for axis in range(points.shape[1]):
        r_var = estimate_measurement_variance(points[:, axis])
        out[:, axis] = cv_rts_smooth(points[:, axis], q_var, r_var)
    return out


def gather_correspondences(scene: Scene, mask: SightMask, window: TimeWindow,
                           cfg: EstimatorConfig | None = None) -> dict:
    """Per-frame correspondence lists from in-sight agents over the window.

    World coordinates come from the noisy sensor trajectory (the only one
    available at estimation time), pre-smoothed per ``cfg``; pixels from
    the visual trajectory.
    """
    per_frame = {f: [] for f in range(window.t_s, window.t_e)}
    for agent_id in sorted(mask.in_sight):
        agent = scene.agent(agent_id)
        if agent.visual is None:
            raise CoverageError(f"in-sight agent {agent_id!r} has no visual trajectory")
        sensor = slice_window(agent.sensor_noisy, window, "observation")
        visual = slice_window(agent.visual, window, "observation")
        if not visual.all_present:
            raise CoverageError(
                f"in-sight agent {agent_id!r} has ABSENT visual frames in the window")
        world = sensor.points
        if cfg is not None and cfg.presmooth_accel_sigma is not None:
            world = _presmooth(world, cfg.presmooth_accel_sigma)
        for i, frame in enumerate(sensor.frames):
            per_frame[int(frame)].append(Correspondence(
                world=world[i], pixel=visual.points[i],
                frame=int(frame), agent_id=agent_id))
    return per_frame


def estimate_matrix_sequence(scene: Scene, mask: SightMask, window: TimeWindow,
                             cfg: EstimatorConfig):
    """Estimate the matrix sequence over ``[t_s, t_e)`` from in-sight agents.

    stationary mode pools every frame's correspondences, solves once and
    replicates the matrix; sliding_window mode pools frames within
    ``window_radius`` of each frame and solves per frame. Returns
    ``(CameraMatrixSequence, [FrameDiagnostics])`` with one diagnostics
    entry per frame.
    """
    if not mask.in_sight:
        raise InsufficientDataError("no in-sight agents to estimate from")
    per_frame = gather_correspondences(scene, mask, window, cfg)
    frames = list(range(window.t_s, window.t_e))

    if cfg.mode == "stationary":
        pooled = [c for f in frames for c in per_frame[f]]
        matrix, diag = estimate_frame_matrix(pooled, cfg)
        return (CameraMatrixSequence(window, tuple([matrix] * len(frames))),
                [diag] * len(frames))

    matrices, diagnostics, starved = [], [], []
    for f in frames:
        lo = max(window.t_s, f - cfg.window_radius)
        hi = min(window.t_e - 1, f + cfg.window_radius)
        pooled = [c for g in range(lo, hi + 1) for c in per_frame[g]]
        if len(pooled) < cfg.min_correspondences:
            starved.append(f)
            continue
        try:
            matrix, diag = estimate_frame_matrix(pooled, cfg)
        except DegeneracyError as exc:
            raise DegeneracyError(f"frame {f}: {exc}") from exc
        matrices.append(matrix)
        diagnostics.append(diag)
    if starved:
        raise InsufficientDataError(
            f"insufficient pooled correspondences at frame(s) {starved}")
    return CameraMatrixSequence(window, tuple(matrices)), diagnostics


def reprojection_report(seq: CameraMatrixSequence, scene: Scene,
                        mask: SightMask) -> dict:
    """RMS pixel residual per in-sight agent under the estimated sequence.

    Projects each agent's (noisy) sensor window through the per-frame
    matrices and compares against the observed visual trajectory.
    """
    window = seq.window
    stacked = seq.stacked()
    report = {}
    for agent_id in sorted(mask.in_sight):
        agent = scene.agent(agent_id)
        if agent.visual is None:
            raise CoverageError(f"in-sight agent {agent_id!r} has no visual trajectory")
        sensor = slice_window(agent.sensor_noisy, window, "observation")
        visual = slice_window(agent.visual, window, "observation")
        if not visual.all_present:
            raise CoverageError(
                f"in-sight agent {agent_id!r} has ABSENT visual frames in the window")
        h = np.einsum("tij,tj->ti", stacked[:, :, :3], sensor.points) + stacked[:, :, 3]
        pixels = h[:, :2] / h[:, 2:3]
        report[agent_id] = float(
            np.sqrt(np.mean(np.sum((pixels - visual.points) ** 2, axis=1))))
    return report
