"""Future-trajectory predictors over the visual (and world) domain.

The main predictor maps an observed pixel window to the next window of
pixels with a small MLP that decodes residuals relative to the last
observed point, so a freshly initialized model is a persistence predictor.
A constant-velocity extrapolation baseline is included, plus a world-space
variant of both for the two-stage baseline pipeline (predict future world
positions, then project).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _nn
from .calibration import EstimatorConfig, estimate_matrix_sequence
from .core import (DEFAULT_WINDOW, Scene, SensorTrajectory, TimeWindow,
                   VisualTrajectory, sight_partition, slice_window)
from .denoising import NormState, TrainConfig, collect_training_windows
from .errors import (DataQualityError, InsufficientDataError, ModelStateError,
                     OstkError, ShapeError, ValidationError)
from .evaluation import mse_t
from .geometry import project_trajectory

__all__ = [
    "PredictorModel",
    "constant_velocity_predict",
    "constant_velocity_predict_world",
    "predict",
    "predict_world",
    "prediction_loss",
    "train_predictor",
    "train_world_predictor",
    "gradient_check",
    "make_predictor",
]


def _cv_extrapolate(points: np.ndarray, horizon: int) -> np.ndarray:
    """Continue a point sequence with the mean displacement of the last
    min(5, len-1) steps."""
    steps = min(5, points.shape[0] - 1)
    velocity = (points[-1] - points[-1 - steps]) / steps
    return points[-1] + np.arange(1, horizon + 1)[:, None] * velocity


def constant_velocity_predict(v_obs: VisualTrajectory, horizon: int) -> VisualTrajectory:
    """Extrapolate a pixel window at the mean velocity of its last steps."""
    if len(v_obs) < 2:
        raise InsufficientDataError("constant-velocity prediction needs >= 2 frames")
    if not v_obs.all_present:
        raise ValidationError("constant-velocity prediction requires no ABSENT frames")
    if int(horizon) < 1:
        raise ValidationError("horizon must be >= 1")
    future = _cv_extrapolate(v_obs.points, int(horizon))
    frames = v_obs.frames[-1] + 1 + np.arange(int(horizon), dtype=np.int64)
    return VisualTrajectory.fully_present(frames, future)


def constant_velocity_predict_world(s_obs: SensorTrajectory,
                                    horizon: int) -> SensorTrajectory:
    """World-space constant-velocity extrapolation (two-stage baseline)."""
    if len(s_obs) < 2:
        raise InsufficientDataError("constant-velocity prediction needs >= 2 frames")
    if int(horizon) < 1:
        raise ValidationError("horizon must be >= 1")
    future = _cv_extrapolate(s_obs.points, int(horizon))
    frames = s_obs.frames[-1] + 1 + np.arange(int(horizon), dtype=np.int64)
    return SensorTrajectory(frames, future, s_obs.provenance)


@dataclass
class PredictorModel:
    """MLP mapping an observed window to residuals off its last point.

    ``channels`` is 2 for pixel-space prediction and 3 for the world-space
    variant; layer sizes are (channels*W_obs, hidden, channels*W_pred).
    """

    layer_sizes: tuple
    weights: list
    biases: list
    channels: int = 2
    norm_state: NormState | None = None

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if self.channels not in (2, 3):
            raise ValidationError("PredictorModel.channels must be 2 or 3")
        if self.layer_sizes[0] % self.channels or self.layer_sizes[-1] % self.channels:
            raise ValidationError("PredictorModel: layer widths must be multiples "
                                  "of the channel count")
        expect = list(zip(self.layer_sizes[1:], self.layer_sizes[:-1]))
        got = [w.shape for w in self.weights]
        if got != expect:
            raise ValidationError(f"PredictorModel: weight shapes {got} do not chain "
                                  f"with layer_sizes {self.layer_sizes}")

    @classmethod
    def initialize(cls, obs_frames: int, pred_frames: int, hidden: int = 64,
                   seed: int = 0, channels: int = 2) -> "PredictorModel":
        sizes = (channels * obs_frames, hidden, channels * pred_frames)
        rng = np.random.default_rng(seed)
        weights, biases = _nn.glorot_layers(sizes, rng)
        return cls(sizes, weights, biases, channels=channels)

    @property
    def obs_frames(self) -> int:
        return self.layer_sizes[0] // self.channels

    @property
    def pred_frames(self) -> int:
        return self.layer_sizes[-1] // self.channels

    def parameters(self) -> list:
        return self.weights + self.biases

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def fit_normalization(self, windows: np.ndarray) -> None:
        flat = windows.reshape(-1, self.channels)
        self.norm_state = NormState(flat.mean(axis=0),
                                    np.maximum(flat.std(axis=0), 1e-9))

    def forward_windows(self, windows: np.ndarray):
        """Predict futures for (B, W_obs, C) windows; returns (B, W_pred, C).

        Decodes residuals off the raw last observed point, so a zero output
        layer is an exact persistence predictor.
        """
        if self.norm_state is None:
            raise ModelStateError("predictor used before fitting (no norm_state)")
        b, w, c = windows.shape
        if w != self.obs_frames or c != self.channels:
            raise ShapeError(f"predictor expects (B, {self.obs_frames}, "
                             f"{self.channels}) windows, got {windows.shape}")
        x = ((windows - self.norm_state.mean) / self.norm_state.scale).reshape(b, -1)
        out, activations = _nn.mlp_forward(self.weights, self.biases, x)
        correction = out.reshape(b, self.pred_frames, c) * self.norm_state.scale
        denorm = windows[:, -1:, :] + correction
        return denorm, (x, activations)


def predict(model: PredictorModel, v_obs: VisualTrajectory) -> VisualTrajectory:
    """Predict the next ``W_pred`` pixel frames after an observed window."""
    if model.channels != 2:
        raise ValidationError("predict expects a pixel-space model (channels=2)")
    if len(v_obs) != model.obs_frames:
        raise ShapeError(f"predictor expects exactly {model.obs_frames} frames, "
                         f"got {len(v_obs)}")
    if not v_obs.all_present:
        raise ValidationError("predict requires no ABSENT frames in the window")
    out, _ = model.forward_windows(v_obs.points[None, :, :])
    frames = v_obs.frames[-1] + 1 + np.arange(model.pred_frames, dtype=np.int64)
    return VisualTrajectory.fully_present(frames, out[0])


def predict_world(model: PredictorModel, s_obs: SensorTrajectory) -> SensorTrajectory:
    """World-space counterpart of :func:`predict` (two-stage baseline)."""
    if model.channels != 3:
        raise ValidationError("predict_world expects a world-space model (channels=3)")
    if len(s_obs) != model.obs_frames:
        raise ShapeError(f"predictor expects exactly {model.obs_frames} frames, "
                         f"got {len(s_obs)}")
    out, _ = model.forward_windows(s_obs.points[None, :, :])
    frames = s_obs.frames[-1] + 1 + np.arange(model.pred_frames, dtype=np.int64)
    return SensorTrajectory(frames, out[0], s_obs.provenance)


def prediction_loss(v_pred: VisualTrajectory, v_gt: VisualTrajectory) -> float:
    """Mean squared Euclidean pixel distance (same metric as the denoising
    loss; shared implementation)."""
    return mse_t(v_pred, v_gt)


def _collect_prediction_windows(scenes, estimator_cfg, denoiser, window):
    """(observed pixel window, future pixel gt, denoised world window,
    last-frame matrix) tuples for every usable out-of-sight agent."""
    xs, gs, ws, ms = [], [], [], []
    skipped = total = 0
    for scene in scenes:
        mask = sight_partition(scene, window)
        targets = [scene.agent(a) for a in sorted(mask.out_of_sight)
                   if scene.agent(a).visual_gt_hidden is not None]
        if not targets:
            continue
        total += len(targets)
        try:
            seq, _ = estimate_matrix_sequence(scene, mask, window, estimator_cfg)
        except OstkError:
            skipped += len(targets)
            continue
        for agent in targets:
            gt_future = slice_window(agent.visual_gt_hidden, window, "prediction")
            if not gt_future.all_present:
                skipped += 1
                continue
            obs = slice_window(agent.sensor_noisy, window, "observation")
            denoised = denoiser(obs)
            projected = project_trajectory(seq, denoised)
            xs.append(projected.points)
            gs.append(gt_future.points)
            ws.append(denoised.points)
            ms.append(seq.matrices[-1].m)
    if skipped > 0.5 * total or (total and not xs):
        raise DataQualityError(
            f"window preparation failed for {skipped}/{total} training windows")
    if not xs:
        raise InsufficientDataError("no usable training windows "
                                    "(out-of-sight agents need visual_gt_hidden)")
    return (np.stack(xs), np.stack(gs), np.stack(ws), np.stack(ms), skipped, total)


def _pixel_loss_and_grads(model: PredictorModel, x: np.ndarray, g: np.ndarray,
                          want_grads: bool = True):
    b, wp = x.shape[0], model.pred_frames
    out, (_, activations) = model.forward_windows(x)
    diff = out - g
    loss = float(np.mean(np.sum(diff ** 2, axis=-1), axis=None))
    if not want_grads:
        return loss, None
    d_out = (2.0 * diff / (b * wp)) * model.norm_state.scale
    d_flat = d_out.reshape(b, -1)
    d_weights, d_biases, _ = _nn.mlp_backward(model.weights, activations, d_flat)
    return loss, d_weights + d_biases


def _world_loss_and_grads(model: PredictorModel, w_obs: np.ndarray,
                          m_last: np.ndarray, g: np.ndarray,
                          want_grads: bool = True):
    """Loss through the (fixed) last-frame projection for world predictors."""
    b, wp = w_obs.shape[0], model.pred_frames
    out, (_, activations) = model.forward_windows(w_obs)
    mats = np.broadcast_to(m_last[:, None, :, :], (b, wp, 3, 4))
    pixels, cache = _nn.project_forward(mats, out)
    diff = pixels - g
    loss = float(np.mean(np.sum(diff ** 2, axis=-1), axis=None))
    if not want_grads:
        return loss, None
    d_pixels = 2.0 * diff / (b * wp)
    d_world = _nn.project_backward(cache, d_pixels) * model.norm_state.scale
    d_flat = d_world.reshape(b, -1)
    d_weights, d_biases, _ = _nn.mlp_backward(model.weights, activations, d_flat)
    return loss, d_weights + d_biases


def _split_validation(scenes, val_scenes, seed):
    if val_scenes is not None:
        return list(scenes), list(val_scenes)
    scenes_sorted = sorted(scenes, key=lambda s: s.scene_id)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(scenes_sorted))
    n_val = max(1, round(0.15 * len(scenes_sorted))) if len(scenes_sorted) > 1 else 0
    return ([scenes_sorted[i] for i in order[n_val:]],
            [scenes_sorted[i] for i in order[:n_val]])


def train_predictor(scenes, estimator_cfg: EstimatorConfig, denoiser,
                    train_cfg: TrainConfig, window: TimeWindow = DEFAULT_WINDOW,
                    val_scenes=None, hidden: int = 64):
    """Fit the pixel-space predictor on denoised, projected observations.

    ``denoiser`` is anything :func:`ostk.denoising.make_denoiser` accepts
    (identity, kalman, or a fitted model). Each out-of-sight window is
    denoised, projected through the estimated matrices, and the predicted
    future is penalized against the hidden visual ground truth. Returns
    (model, TrainingHistory).
    """
    from .denoising import make_denoiser
    denoiser = make_denoiser(denoiser)
    train_set, val_set = _split_validation(scenes, val_scenes, train_cfg.seed)
    x, g, _, _, skipped, total = _collect_prediction_windows(
        train_set, estimator_cfg, denoiser, window)
    if val_set:
        xv, gv, _, _, _, _ = _collect_prediction_windows(
            val_set, estimator_cfg, denoiser, window)
    else:
        xv, gv = x, g

    model = PredictorModel.initialize(window.observation_span, window.prediction_span,
                                      hidden=hidden, seed=train_cfg.seed, channels=2)
    model.fit_normalization(x)

    def batch_loss_grads(idx):
        return _pixel_loss_and_grads(model, x[idx], g[idx])

    def val_loss():
        return _pixel_loss_and_grads(model, xv, gv, want_grads=False)[0]

    history = _nn.fit_adam(model.parameters(), x.shape[0], batch_loss_grads,
                           val_loss, train_cfg, "predictor")
    history.skipped_windows = skipped
    history.total_windows = total
    return model, history


def train_world_predictor(scenes, estimator_cfg: EstimatorConfig, denoiser,
                          train_cfg: TrainConfig, window: TimeWindow = DEFAULT_WINDOW,
                          val_scenes=None, hidden: int = 64):
    """Fit the world-space predictor used by the two-stage baseline.

    Predicts future world positions from the denoised sensor window; the
    fixed last-frame matrix projects them into pixels for the loss, exactly
    as the two-stage pipeline replays the matrix at inference.
    """
    from .denoising import make_denoiser
    denoiser = make_denoiser(denoiser)
    train_set, val_set = _split_validation(scenes, val_scenes, train_cfg.seed)
    _, g, w, m, skipped, total = _collect_prediction_windows(
        train_set, estimator_cfg, denoiser, window)
    if val_set:
        _, gv, wv, mv, _, _ = _collect_prediction_windows(
            val_set, estimator_cfg, denoiser, window)
    else:
        gv, wv, mv = g, w, m

    model = PredictorModel.initialize(window.observation_span, window.prediction_span,
                                      hidden=hidden, seed=train_cfg.seed, channels=3)
    model.fit_normalization(w)

    def batch_loss_grads(idx):
        return _world_loss_and_grads(model, w[idx], m[idx], g[idx])

    def val_loss():
        return _world_loss_and_grads(model, wv, mv, gv, want_grads=False)[0]

    history = _nn.fit_adam(model.parameters(), w.shape[0], batch_loss_grads,
                           val_loss, train_cfg, "world-predictor")
    history.skipped_windows = skipped
    history.total_windows = total
    return model, history


def gradient_check(model: PredictorModel, probe_batch, h: float = 1e-5) -> float:
    """Finite-difference check of the predictor's training gradients.

    ``probe_batch`` is (X, G) for pixel models or (W, M_last, G) for
    world-space models.
    """
    if model.channels == 2:
        x, g = probe_batch
        _, analytic = _pixel_loss_and_grads(model, x, g)
        loss_fn = lambda: _pixel_loss_and_grads(model, x, g, want_grads=False)[0]
    else:
        w, m, g = probe_batch
        _, analytic = _world_loss_and_grads(model, w, m, g)
        loss_fn = lambda: _world_loss_and_grads(model, w, m, g, want_grads=False)[0]
    numeric = _nn.finite_difference_gradients(model.parameters(), loss_fn, h=h)
    return _nn.max_relative_error(analytic, numeric)


def make_predictor(spec, horizon: int):
    """Resolve a predictor spec into a pixel-window -> pixel-window callable."""
    if spec == "cv" or spec is None:
        return lambda v: constant_velocity_predict(v, horizon)
    if isinstance(spec, PredictorModel):
        if spec.channels != 2:
            raise ValidationError("pixel predictor required (channels=2)")
        return lambda v: predict(spec, v)
    if callable(spec):
        return spec
    raise ValidationError(f"unrecognized predictor spec: {spec!r}")
