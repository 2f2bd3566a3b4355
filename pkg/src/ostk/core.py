"""Core domain types: trajectories, time windows, agents, scenes, sight masks.

Time is an integer frame index everywhere; wall-clock seconds are
``frame / frame_hz``. Sensor trajectories are 3-D world paths in meters and
visual trajectories are 2-D pixel paths. A visual sample may be ABSENT,
meaning the agent was outside the camera's view at that frame; absent
samples are explicit markers (not dropped rows) so per-frame coverage
checks stay O(1).

All types validate their invariants at construction and are immutable
afterwards (arrays are copied and marked read-only), so values can be
shared freely across parallel tasks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import CoverageError, ValidationError

if TYPE_CHECKING:  # pragma: no cover
    from .geometry import CameraTruth

__all__ = [
    "AGENT_KINDS",
    "PROVENANCES",
    "DEFAULT_WINDOW",
    "TimeWindow",
    "WorldPoint",
    "PixelPoint",
    "SensorTrajectory",
    "VisualTrajectory",
    "AgentRecord",
    "SightMask",
    "Scene",
    "sight_partition",
    "slice_window",
]

PROVENANCES = ("noisy", "clean", "denoised")
AGENT_KINDS = ("pedestrian", "vehicle", "robot")


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ValidationError(message)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _float_array(values, shape: tuple, name: str) -> np.ndarray:
    a = np.array(values, dtype=float, copy=True)
    if a.shape != shape:
        raise ValidationError(f"{name}: expected shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name}: entries must be finite")
    return _readonly(a)


def _frame_array(values, name: str) -> np.ndarray:
    a = np.array(values, dtype=np.int64, copy=True)
    if a.ndim != 1 or a.size == 0:
        raise ValidationError(f"{name}: frame indices must be a nonempty 1-D sequence")
    if np.any(np.diff(a) <= 0):
        raise ValidationError(f"{name}: frame indices must be strictly increasing")
    if a[0] < 0:
        raise ValidationError(f"{name}: frame indices must be >= 0")
    return _readonly(a)


@dataclass(frozen=True)
class TimeWindow:
    """Frame window: observe over ``[t_s, t_e)``, predict over ``[t_e, t_p)``."""

    t_s: int
    t_e: int
    t_p: int

    def __post_init__(self):
        for name in ("t_s", "t_e", "t_p"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                raise ValidationError(f"TimeWindow.{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        _require(self.t_s >= 0, "TimeWindow: t_s must be >= 0")
        _require(self.t_s < self.t_e, "TimeWindow: requires t_s < t_e")
        _require(self.t_e <= self.t_p, "TimeWindow: requires t_e <= t_p")

    @property
    def observation_span(self) -> int:
        return self.t_e - self.t_s

    @property
    def prediction_span(self) -> int:
        return self.t_p - self.t_e

    def observation_frames(self) -> np.ndarray:
        return np.arange(self.t_s, self.t_e, dtype=np.int64)

    def prediction_frames(self) -> np.ndarray:
        return np.arange(self.t_e, self.t_p, dtype=np.int64)


#: Default spans: observe 100 frames, predict the next 100.
DEFAULT_WINDOW = TimeWindow(0, 100, 200)


@dataclass(frozen=True)
class WorldPoint:
    """3-D world position in meters."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        for name in ("x", "y", "z"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValidationError(f"WorldPoint.{name} must be finite")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class PixelPoint:
    """2-D pixel position. May lie outside the image bounds (projection of
    off-screen points is legal)."""

    u: float
    v: float

    def __post_init__(self):
        for name in ("u", "v"):
            val = float(getattr(self, name))
            if not np.isfinite(val):
                raise ValidationError(f"PixelPoint.{name} must be finite")
            object.__setattr__(self, name, val)

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v])


@dataclass(frozen=True, eq=False)
class SensorTrajectory:
    """Timestamped 3-D world path from localization sensors.

    ``provenance`` records whether the samples are raw noisy measurements,
    noise-free ground truth, or the output of a denoiser.
    """

    frames: np.ndarray  # (N,) int64, strictly increasing
    points: np.ndarray  # (N, 3) float64 meters
    provenance: str = "noisy"

    def __post_init__(self):
        frames = _frame_array(self.frames, "SensorTrajectory.frames")
        points = _float_array(self.points, (frames.size, 3), "SensorTrajectory.points")
        _require(self.provenance in PROVENANCES,
                 f"SensorTrajectory.provenance must be one of {PROVENANCES}")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return self.frames.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, SensorTrajectory):
            return NotImplemented
        return (self.provenance == other.provenance
                and np.array_equal(self.frames, other.frames)
                and np.array_equal(self.points, other.points))

    def point_at(self, frame: int) -> WorldPoint:
        i = int(np.searchsorted(self.frames, frame))
        if i >= len(self) or self.frames[i] != frame:
            raise CoverageError(f"frame {frame} not covered by trajectory")
        return WorldPoint(*self.points[i])

    def with_provenance(self, provenance: str) -> "SensorTrajectory":
        return SensorTrajectory(self.frames, self.points, provenance)


@dataclass(frozen=True, eq=False)
class VisualTrajectory:
    """Timestamped 2-D pixel path in the camera frame.

    ``present[i]`` is False where the sample is ABSENT (agent out of the
    camera's view at that frame); the corresponding ``points`` row is NaN.
    """

    frames: np.ndarray   # (N,) int64, strictly increasing
    points: np.ndarray   # (N, 2) float64 pixels, NaN rows where absent
    present: np.ndarray  # (N,) bool

    def __post_init__(self):
        frames = _frame_array(self.frames, "VisualTrajectory.frames")
        points = np.array(self.points, dtype=float, copy=True)
        if points.shape != (frames.size, 2):
            raise ValidationError(
                f"VisualTrajectory.points: expected shape {(frames.size, 2)}, got {points.shape}")
        present = np.array(self.present, dtype=bool, copy=True)
        if present.shape != (frames.size,):
            raise ValidationError("VisualTrajectory.present: one flag per frame required")
        if not np.all(np.isfinite(points[present])):
            raise ValidationError("VisualTrajectory.points: present samples must be finite")
        points[~present] = np.nan
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "points", _readonly(points))
        object.__setattr__(self, "present", _readonly(present))

    @classmethod
    def fully_present(cls, frames, points) -> "VisualTrajectory":
        frames = np.asarray(frames)
        return cls(frames, points, np.ones(frames.size, dtype=bool))

    def __len__(self) -> int:
        return self.frames.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, VisualTrajectory):
            return NotImplemented
        return (np.array_equal(self.frames, other.frames)
                and np.array_equal(self.present, other.present)
                and np.array_equal(self.points[self.present], other.points[other.present]))

    @property
    def all_present(self) -> bool:
        return bool(np.all(self.present))

    def pixel_at(self, frame: int) -> PixelPoint | None:
        """Pixel at ``frame``, or None if the sample is ABSENT there."""
        i = int(np.searchsorted(self.frames, frame))
        if i >= len(self) or self.frames[i] != frame:
            raise CoverageError(f"frame {frame} not covered by trajectory")
        if not self.present[i]:
            return None
        return PixelPoint(*self.points[i])


@dataclass(frozen=True, eq=False)
class AgentRecord:
    """One agent's trajectories across modalities.

    ``visual_gt_hidden`` is the view-unmasked pixel ground truth kept by the
    simulator for agents that were deliberately placed out of sight; it only
    exists for synthetic scenes (or datasets with a held-out visual column)
    and is what training and evaluation compare against.
    """

    agent_id: str
    kind: str
    sensor_noisy: SensorTrajectory
    sensor_clean: SensorTrajectory | None = None
    visual: VisualTrajectory | None = None
    visual_gt_hidden: VisualTrajectory | None = None

    def __post_init__(self):
        _require(bool(self.agent_id), "AgentRecord.agent_id must be nonempty")
        _require(self.kind in AGENT_KINDS, f"AgentRecord.kind must be one of {AGENT_KINDS}")
        _require(self.sensor_noisy.provenance == "noisy",
                 "AgentRecord.sensor_noisy must have provenance 'noisy'")
        if self.sensor_clean is not None:
            _require(self.sensor_clean.provenance == "clean",
                     "AgentRecord.sensor_clean must have provenance 'clean'")
            _require(np.array_equal(self.sensor_clean.frames, self.sensor_noisy.frames),
                     "AgentRecord: sensor_noisy and sensor_clean must cover identical frames")
        for name in ("visual", "visual_gt_hidden"):
            traj = getattr(self, name)
            if traj is not None:
                _require(np.all(np.isin(traj.frames, self.sensor_noisy.frames)),
                         f"AgentRecord: {name} frames must be a subset of sensor frames")

    def __eq__(self, other) -> bool:
        if not isinstance(other, AgentRecord):
            return NotImplemented
        return (self.agent_id == other.agent_id and self.kind == other.kind
                and self.sensor_noisy == other.sensor_noisy
                and self.sensor_clean == other.sensor_clean
                and self.visual == other.visual
                and self.visual_gt_hidden == other.visual_gt_hidden)


@dataclass(frozen=True)
class SightMask:
    """Partition of a scene's agents into in-sight and out-of-sight sets."""

    in_sight: frozenset
    out_of_sight: frozenset

    def __post_init__(self):
        object.__setattr__(self, "in_sight", frozenset(self.in_sight))
        object.__setattr__(self, "out_of_sight", frozenset(self.out_of_sight))
        _require(not (self.in_sight & self.out_of_sight),
                 "SightMask: in_sight and out_of_sight must be disjoint")


@dataclass(frozen=True, eq=False)
class Scene:
    """All agents observed by one (possibly moving) camera.

    ``camera_truth`` is the generating camera for synthetic scenes: an
    (intrinsics, per-frame extrinsics, scale) triple with exactly one
    extrinsic pose per frame.
    """

    scene_id: str
    frame_hz: float
    frame_count: int
    agents: tuple
    image_size: tuple
    camera_truth: "CameraTruth | None" = None

    def __post_init__(self):
        _require(bool(self.scene_id), "Scene.scene_id must be nonempty")
        hz = float(self.frame_hz)
        _require(np.isfinite(hz) and hz > 0, "Scene.frame_hz must be finite and > 0")
        object.__setattr__(self, "frame_hz", hz)
        _require(int(self.frame_count) >= 1, "Scene.frame_count must be >= 1")
        object.__setattr__(self, "frame_count", int(self.frame_count))
        object.__setattr__(self, "agents", tuple(self.agents))
        w, h = self.image_size
        _require(int(w) > 0 and int(h) > 0, "Scene.image_size entries must be > 0")
        object.__setattr__(self, "image_size", (int(w), int(h)))

        ids = [a.agent_id for a in self.agents]
        _require(len(ids) == len(set(ids)), "Scene: agent_ids must be unique")
        for a in self.agents:
            for traj in (a.sensor_noisy, a.sensor_clean, a.visual, a.visual_gt_hidden):
                if traj is None:
                    continue
                _require(traj.frames[0] >= 0 and traj.frames[-1] < self.frame_count,
                         f"Scene: trajectory of agent {a.agent_id!r} exceeds frame range")
        if self.camera_truth is not None:
            _require(len(self.camera_truth.extrinsics) == self.frame_count,
                     "Scene: camera_truth extrinsics length must equal frame_count")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scene):
            return NotImplemented
        return (self.scene_id == other.scene_id
                and self.frame_hz == other.frame_hz
                and self.frame_count == other.frame_count
                and self.image_size == other.image_size
                and self.agents == other.agents
                and self.camera_truth == other.camera_truth)

    @property
    def agent_ids(self) -> tuple:
        return tuple(a.agent_id for a in self.agents)

    def agent(self, agent_id: str) -> AgentRecord:
        for a in self.agents:
            if a.agent_id == agent_id:
                return a
        raise KeyError(agent_id)


def sight_partition(scene: Scene, window: TimeWindow) -> SightMask:
    """Split the scene's agents by visual coverage over the observation span.

    An agent is in sight only if its visual trajectory covers every frame of
    ``[t_s, t_e)`` with no ABSENT samples; every other agent (partially
    visible, never visible, or without a visual trajectory at all) is out of
    sight. Deterministic and independent of agent ordering.
    """
    if window.t_s < 0 or window.t_p > scene.frame_count:
        raise ValidationError(
            f"window [{window.t_s},{window.t_p}) outside scene frame range "
            f"[0,{scene.frame_count})")
    needed = window.observation_frames()
    in_sight, out_of_sight = set(), set()
    for agent in scene.agents:
        traj = agent.visual
        if traj is None:
            out_of_sight.add(agent.agent_id)
            continue
        idx = np.searchsorted(traj.frames, needed)
        covered = (idx < len(traj)) & (traj.frames[np.minimum(idx, len(traj) - 1)] == needed)
        if np.all(covered) and np.all(traj.present[idx[covered]]):
            in_sight.add(agent.agent_id)
        else:
            out_of_sight.add(agent.agent_id)
    return SightMask(frozenset(in_sight), frozenset(out_of_sight))


def slice_window(traj, window: TimeWindow, segment: str):
    """Restrict a trajectory to the window's observation or prediction span.

    ``segment`` selects ``[t_s, t_e)`` ("observation") or ``[t_e, t_p)``
    ("prediction"). Raises CoverageError listing the missing frame indices
    if the trajectory does not cover the requested span.
    """
    if segment == "observation":
        lo, hi = window.t_s, window.t_e
    elif segment == "prediction":
        lo, hi = window.t_e, window.t_p
    else:
        raise ValidationError(f"segment must be 'observation' or 'prediction', got {segment!r}")
    needed = np.arange(lo, hi, dtype=np.int64)
    idx = np.searchsorted(traj.frames, needed)
    ok = (idx < len(traj)) & (traj.frames[np.minimum(idx, len(traj) - 1)] == needed)
    if not np.all(ok):
        missing = needed[~ok].tolist()
        shown = ", ".join(map(str, missing[:10])) + (", ..." if len(missing) > 10 else "")
        raise CoverageError(f"trajectory missing {len(missing)} frame(s) in "
                            f"[{lo},{hi}): {shown}")
    if isinstance(traj, SensorTrajectory):
        return SensorTrajectory(needed, traj.points[idx], traj.provenance)
    if isinstance(traj, VisualTrajectory):
        return VisualTrajectory(needed, traj.points[idx], traj.present[idx])
    raise ValidationError(f"unsupported trajectory type {type(traj).__name__}")
