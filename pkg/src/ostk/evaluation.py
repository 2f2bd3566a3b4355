"""Metric suite: per-timestamp pixel MSE and structured report aggregation.

The single underlying metric is the mean over frames of the squared
Euclidean pixel distance. Applied to the projected observation window it
is called MSE-D, to the predicted future window MSE-P, and their exact
floating-point sum is SUM (reports never re-round it, so
``sum == mse_d + mse_p`` holds bit for bit). The squared form is recorded
in every report's metadata.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import VisualTrajectory
from .errors import CoverageError, InsufficientDataError, ValidationError

__all__ = [
    "METRIC_DEFINITION",
    "WindowMetrics",
    "EvaluationReport",
    "mse_t",
    "evaluate_window",
    "aggregate",
]

METRIC_DEFINITION = "mean squared euclidean pixel distance per timestamp"


def mse_t(a: VisualTrajectory, b: VisualTrajectory) -> float:
    """Mean over frames of the squared Euclidean pixel distance.

    Both trajectories must cover identical frame sets with no ABSENT
    samples. Symmetric, nonnegative, zero iff the trajectories coincide.
    """
    if not np.array_equal(a.frames, b.frames):
        raise CoverageError("mse_t: trajectories cover different frame sets")
    if not (a.all_present and b.all_present):
        raise CoverageError("mse_t: trajectories must have no ABSENT samples")
    return float(np.mean(np.sum((a.points - b.points) ** 2, axis=1)))


def evaluate_window(projected: VisualTrajectory, predicted: VisualTrajectory,
                    gt_obs: VisualTrajectory, gt_future: VisualTrajectory):
    """Score one out-of-sight window: ``(mse_d, mse_p, sum)``.

    ``projected``/``gt_obs`` cover the observation span, ``predicted``/
    ``gt_future`` the directly following prediction span.
    """
    if gt_future.frames[0] != gt_obs.frames[-1] + 1:
        raise CoverageError("evaluate_window: prediction span must directly follow "
                            "the observation span")
    mse_d = mse_t(projected, gt_obs)
    mse_p = mse_t(predicted, gt_future)
    return mse_d, mse_p, mse_d + mse_p


@dataclass(frozen=True)
class WindowMetrics:
    """Metrics for a single (scene, agent) out-of-sight window."""

    scene_id: str
    agent_id: str
    mse_d: float
    mse_p: float
    sum: float

    def __post_init__(self):
        for name in ("mse_d", "mse_p", "sum"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"WindowMetrics.{name} must be finite and >= 0")
            object.__setattr__(self, name, v)
        if self.sum != self.mse_d + self.mse_p:
            raise ValidationError("WindowMetrics: sum must equal mse_d + mse_p exactly")


@dataclass(frozen=True)
class EvaluationReport:
    """Aggregated metrics plus provenance metadata.

    ``sum`` is the exact floating-point addition of the aggregated means;
    ``fingerprint`` hashes the configuration that produced the run.
    """

    mse_d: float
    mse_p: float
    sum: float
    per_agent: tuple
    fingerprint: str
    tool_version: str
    metric: str = METRIC_DEFINITION

    def __post_init__(self):
        for name in ("mse_d", "mse_p", "sum"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"EvaluationReport.{name} must be finite and >= 0")
            object.__setattr__(self, name, v)
        if self.sum != self.mse_d + self.mse_p:
            raise ValidationError("EvaluationReport: sum must equal mse_d + mse_p exactly")
        object.__setattr__(self, "per_agent", tuple(self.per_agent))


def aggregate(windows, fingerprint: str = "", tool_version: str = "") -> EvaluationReport:
    """Unweighted mean of per-window metrics across all evaluated windows.

    SUM is recomputed from the aggregated means (never by averaging the
    per-window sums), keeping the additive identity exact.
    """
    windows = tuple(windows)
    if not windows:
        raise InsufficientDataError("aggregate: empty report set")
    mse_d = float(np.mean([w.mse_d for w in windows]))
    mse_p = float(np.mean([w.mse_p for w in windows]))
    return EvaluationReport(
        mse_d=mse_d,
        mse_p=mse_p,
        sum=mse_d + mse_p,
        per_agent=windows,
        fingerprint=fingerprint,
        tool_version=tool_version,
    )
