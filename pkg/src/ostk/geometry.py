"""Pinhole camera model and world-to-pixel projection.

A camera is described by an intrinsic matrix K (focal lengths, principal
point), a per-frame extrinsic pose [R | t] mapping world to camera
coordinates, and a positive spatial scale factor. The three compose into a
single 3x4 projection matrix applied in homogeneous coordinates:

    [u*d, v*d, d]^T = scale * K * [R | t] * [x, y, z, 1]^T

Projection matrices are kept in a canonical gauge so they can be compared
elementwise: unit Frobenius norm, with the sign chosen so that a reference
point set projects with mostly positive depth (third homogeneous
coordinate). Projection itself is invariant to that gauge.

Visibility is deliberately not this module's concern: points at negative
depth project mathematically (and are flagged by the simulator's sight
classification); only a vanishing homogeneous depth is an error here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (PixelPoint, SensorTrajectory, TimeWindow, VisualTrajectory,
                   WorldPoint)
from .errors import CoverageError, DegeneracyError, ValidationError

__all__ = [
    "DEPTH_EPSILON",
    "CameraIntrinsics",
    "CameraExtrinsics",
    "CameraMatrix",
    "CameraMatrixSequence",
    "CameraTruth",
    "compose_camera_matrix",
    "project_point",
    "project_points",
    "project_trajectory",
]

#: Homogeneous depths at or below this magnitude are degenerate projections.
DEPTH_EPSILON = 1e-9

_ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy", "skew"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValidationError(f"CameraIntrinsics.{name} must be finite")
            object.__setattr__(self, name, v)
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("CameraIntrinsics: focal lengths must be > 0")

    def as_matrix(self) -> np.ndarray:
        return np.array([
            [self.fx, self.skew, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])


@dataclass(frozen=True, eq=False)
class CameraExtrinsics:
    """World-to-camera rigid pose: ``x_cam = rotation @ x_world + translation``."""

    rotation: np.ndarray     # (3, 3), orthonormal, det +1
    translation: np.ndarray  # (3,), meters

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float, copy=True)
        t = np.array(self.translation, dtype=float, copy=True)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValidationError("CameraExtrinsics: rotation must be 3x3, translation 3-vector")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValidationError("CameraExtrinsics: entries must be finite")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHONORMAL_TOL:
            raise ValidationError("CameraExtrinsics: rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHONORMAL_TOL:
            raise ValidationError("CameraExtrinsics: rotation determinant must be +1")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CameraExtrinsics):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def as_matrix(self) -> np.ndarray:
        return np.hstack([self.rotation, self.translation[:, None]])

    @classmethod
    def look_at(cls, position, forward, up=(0.0, 0.0, 1.0)) -> "CameraExtrinsics":
        """Pose for a camera at ``position`` looking along ``forward``.

        Camera axes: z forward, x right, y down (pixel v grows downward).
        """
        f = np.asarray(forward, dtype=float)
        nf = np.linalg.norm(f)
        if nf == 0:
            raise ValidationError("look_at: forward direction must be nonzero")
        z = f / nf
        x = np.cross(z, np.asarray(up, dtype=float))
        nx = np.linalg.norm(x)
        if nx < 1e-12:
            raise ValidationError("look_at: forward must not be parallel to up")
        x = x / nx
        y = np.cross(z, x)
        rot = np.vstack([x, y, z])
        return cls(rot, -rot @ np.asarray(position, dtype=float))


@dataclass(frozen=True, eq=False)
class CameraMatrix:
    """Canonical 3x4 world-to-pixel projection matrix.

    ``m`` has unit Frobenius norm. ``scale`` records the Frobenius norm of
    the pre-normalization matrix when known (from composition), so the
    composed ``w * K * [R | t]`` is recoverable as ``scale * m``.
    """

    m: np.ndarray
    scale: float | None = None

    def __post_init__(self):
        m = np.array(self.m, dtype=float, copy=True)
        if m.shape != (3, 4):
            raise ValidationError(f"CameraMatrix.m must be 3x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValidationError("CameraMatrix.m entries must be finite")
        norm = float(np.linalg.norm(m))
        if abs(norm - 1.0) > 1e-9:
            raise ValidationError(
                "CameraMatrix.m must be canonically normalized (unit Frobenius norm); "
                "build instances via CameraMatrix.from_raw or compose_camera_matrix")
        if self.scale is not None:
            s = float(self.scale)
            if not np.isfinite(s) or s <= 0:
                raise ValidationError("CameraMatrix.scale must be finite and > 0")
            object.__setattr__(self, "scale", s)
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CameraMatrix):
            return NotImplemented
        return np.array_equal(self.m, other.m) and self.scale == other.scale

    @classmethod
    def from_raw(cls, raw, reference_points=None) -> "CameraMatrix":
        """Canonicalize an arbitrary nonzero 3x4 matrix.

        With ``reference_points`` (N,3 world coordinates) the sign is chosen
        so the majority of them project with positive depth, a tie falling
        back to ``m[2][3] >= 0``. Without a reference set the given sign is
        kept (callers composing from scale > 0 already have the right sign).
        """
        raw = np.asarray(raw, dtype=float)
        if raw.shape != (3, 4):
            raise ValidationError(f"from_raw: expected 3x4 matrix, got {raw.shape}")
        norm = float(np.linalg.norm(raw))
        if not np.isfinite(norm) or norm == 0.0:
            raise ValidationError("from_raw: matrix norm must be finite and nonzero")
        m = raw / norm
        if reference_points is not None:
            pts = np.asarray(reference_points, dtype=float).reshape(-1, 3)
            depths = pts @ m[2, :3] + m[2, 3]
            positive = int(np.sum(depths > 0))
            negative = int(np.sum(depths < 0))
            if positive < negative or (positive == negative and m[2, 3] < 0):
                m = -m
        return cls(m, scale=norm)


@dataclass(frozen=True, eq=False)
class CameraMatrixSequence:
    """One canonical projection matrix per frame of the observation span."""

    window: TimeWindow
    matrices: tuple

    def __post_init__(self):
        mats = tuple(self.matrices)
        if len(mats) != self.window.observation_span:
            raise ValidationError(
                f"CameraMatrixSequence: expected {self.window.observation_span} matrices "
                f"for window [{self.window.t_s},{self.window.t_e}), got {len(mats)}")
        for m in mats:
            if not isinstance(m, CameraMatrix):
                raise ValidationError("CameraMatrixSequence entries must be CameraMatrix")
        object.__setattr__(self, "matrices", mats)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CameraMatrixSequence):
            return NotImplemented
        return self.window == other.window and self.matrices == other.matrices

    def __len__(self) -> int:
        return len(self.matrices)

    def matrix_at(self, frame: int) -> CameraMatrix:
        if not (self.window.t_s <= frame < self.window.t_e):
            raise CoverageError(f"frame {frame} outside sequence window "
                                f"[{self.window.t_s},{self.window.t_e})")
        return self.matrices[frame - self.window.t_s]

    def stacked(self) -> np.ndarray:
        """All matrices as one (T, 3, 4) array."""
        return np.stack([m.m for m in self.matrices])


@dataclass(frozen=True, eq=False)
class CameraTruth:
    """Ground-truth camera of a synthetic scene: intrinsics, one extrinsic
    pose per frame, and the composed scale factor."""

    intrinsics: CameraIntrinsics
    extrinsics: tuple
    scale: float = 1.0

    def __post_init__(self):
        ext = tuple(self.extrinsics)
        if not ext:
            raise ValidationError("CameraTruth: at least one extrinsic pose required")
        for e in ext:
            if not isinstance(e, CameraExtrinsics):
                raise ValidationError("CameraTruth.extrinsics entries must be CameraExtrinsics")
        s = float(self.scale)
        if not np.isfinite(s) or s <= 0:
            raise ValidationError("CameraTruth.scale must be finite and > 0")
        object.__setattr__(self, "extrinsics", ext)
        object.__setattr__(self, "scale", s)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CameraTruth):
            return NotImplemented
        return (self.intrinsics == other.intrinsics and self.scale == other.scale
                and self.extrinsics == other.extrinsics)

    def matrix_at(self, frame: int) -> CameraMatrix:
        if not (0 <= frame < len(self.extrinsics)):
            raise CoverageError(f"frame {frame} outside camera pose range "
                                f"[0,{len(self.extrinsics)})")
        return compose_camera_matrix(self.scale, self.intrinsics, self.extrinsics[frame])

    def matrix_sequence(self, window: TimeWindow) -> CameraMatrixSequence:
        mats = [self.matrix_at(f) for f in range(window.t_s, window.t_e)]
        return CameraMatrixSequence(window, tuple(mats))


def compose_camera_matrix(scale: float, k: CameraIntrinsics,
                          rt: CameraExtrinsics) -> CameraMatrix:
    """Combine scale, intrinsics and extrinsics into one canonical matrix.

    The raw product ``scale * K * [R | t]`` is normalized to unit Frobenius
    norm; since ``scale > 0`` the composed sign already projects points in
    front of the camera with positive depth, so no sign flip is applied.
    """
    s = float(scale)
    if not np.isfinite(s) or s <= 0:
        raise ValidationError("compose_camera_matrix: scale must be finite and > 0")
    raw = s * (k.as_matrix() @ rt.as_matrix())
    return CameraMatrix.from_raw(raw)


def _project_array(mats: np.ndarray, pts: np.ndarray):
    """Project points through per-row 3x4 matrices; returns (pixels, depths).

    ``mats`` broadcasts against ``pts`` ((N,3,4) with (N,3), or (3,4) with
    (N,3)). Every public projection goes through this one expression so
    batched and single-point results agree bit for bit.
    """
    mats = np.asarray(mats, dtype=float)
    pts = np.asarray(pts, dtype=float)
    if mats.ndim == 2:
        mats = np.broadcast_to(mats, pts.shape[:-1] + (3, 4))
    h = np.einsum("...ij,...j->...i", mats[..., :, :3], pts) + mats[..., :, 3]
    with np.errstate(invalid="ignore", divide="ignore"):
        pixels = h[..., :2] / h[..., 2:3]
    return pixels, h[..., 2]


def project_point(m: CameraMatrix, p_world: WorldPoint) -> PixelPoint:
    """Apply the homogeneous projection ``[p,1]^T = M [P,1]^T`` to one point.

    Raises DegeneracyError when the point lies on the camera's principal
    plane (|homogeneous depth| <= DEPTH_EPSILON); points behind the camera
    still project, visibility being a separate concern.
    """
    pixels, depths = _project_array(m.m, np.array([[p_world.x, p_world.y, p_world.z]]))
    if abs(depths[0]) <= DEPTH_EPSILON:
        raise DegeneracyError(
            f"degenerate projection: point {(p_world.x, p_world.y, p_world.z)} lies "
            "on the camera's principal plane")
    return PixelPoint(pixels[0, 0], pixels[0, 1])


def project_points(m: CameraMatrix, pts) -> np.ndarray:
    """Vectorized ``project_point`` over an (N, 3) array of world points."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    pixels, depths = _project_array(m.m, pts)
    bad = np.abs(depths) <= DEPTH_EPSILON
    if np.any(bad):
        raise DegeneracyError(
            f"degenerate projection at point index {int(np.argmax(bad))}")
    return pixels


def project_trajectory(seq: CameraMatrixSequence,
                       s_hat: SensorTrajectory) -> VisualTrajectory:
    """Project a denoised (or clean) sensor window into the visual domain,
    applying each frame's matrix to that frame's world point.

    The trajectory must cover exactly the sequence window; the output covers
    the same window with no ABSENT entries.
    """
    if s_hat.provenance not in ("clean", "denoised"):
        raise ValidationError(
            f"project_trajectory expects a clean or denoised trajectory, "
            f"got provenance {s_hat.provenance!r}")
    window = seq.window
    expected = window.observation_frames()
    if not np.array_equal(s_hat.frames, expected):
        raise CoverageError(
            f"trajectory frames do not match sequence window [{window.t_s},{window.t_e})")
    pixels, depths = _project_array(seq.stacked(), s_hat.points)
    bad = np.abs(depths) <= DEPTH_EPSILON
    if np.any(bad):
        frame = int(expected[int(np.argmax(bad))])
        raise DegeneracyError(f"degenerate projection at frame {frame}")
    return VisualTrajectory.fully_present(expected, pixels)
