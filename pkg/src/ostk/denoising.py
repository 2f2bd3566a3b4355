"""Sensor-trajectory denoisers and the projection-consistency training loop.

Two denoisers are provided. The classical baseline is a per-axis
constant-velocity Kalman filter with Rauch-Tung-Striebel backward
smoothing. The trainable one is a windowed residual MLP whose supervision
never touches world coordinates: its output window is projected through
the estimated per-frame camera matrices and compared, in pixel space,
against the hidden visual ground truth of the out-of-sight agent. The
matrices are constants of that computation, so gradients flow through the
projection into the model parameters only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _nn
from ._kalman import cv_rts_smooth
from .calibration import EstimatorConfig, estimate_matrix_sequence
from .core import (DEFAULT_WINDOW, Scene, SensorTrajectory, TimeWindow,
                   VisualTrajectory, sight_partition, slice_window)
from .errors import (DataQualityError, InsufficientDataError, ModelStateError,
                     OstkError, ShapeError, ValidationError)
from .evaluation import mse_t

__all__ = [
    "KalmanParams",
    "DenoiserModel",
    "NormState",
    "TrainConfig",
    "kalman_denoise",
    "denoise",
    "denoising_loss",
    "train_denoiser",
    "gradient_check",
    "make_denoiser",
    "collect_training_windows",
]

@dataclass(frozen=True)
class KalmanParams:
    """Constant-velocity filter parameters, in meters and frames.

    The default acceleration sigma (0.005 m/frame^2, i.e. 0.5 m/s^2 at
    10 Hz) suits slowly maneuvering agents; the measurement sigmas default
    to the simulator's noise calibration.
    """

    process_accel_sigma: float = 0.005
    meas_sigma_xy: float = 2.0
    meas_sigma_z: float = 0.2
    init_cov_scale: float = 10.0

    def __post_init__(self):
        for name in ("process_accel_sigma", "meas_sigma_xy", "meas_sigma_z"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"KalmanParams.{name} must be finite and >= 0")
            object.__setattr__(self, name, v)
        s = float(self.init_cov_scale)
        if not np.isfinite(s) or s <= 0:
            raise ValidationError("KalmanParams.init_cov_scale must be > 0")
        object.__setattr__(self, "init_cov_scale", s)


def kalman_denoise(s: SensorTrajectory, params: KalmanParams) -> SensorTrajectory:
    """Forward-filter and RTS-smooth a noisy trajectory, per axis.

    State is [position, velocity] per axis with unit frame steps; the
    process covariance follows the discrete white-noise-acceleration model.
    Measurement variances of zero are floored at 1e-12, so the filter then
    reproduces the measurements to ~1e-9.
    """
    if s.provenance != "noisy":
        raise ValidationError("kalman_denoise expects a noisy trajectory")
    if len(s) < 2:
        raise InsufficientDataError("kalman_denoise needs at least 2 frames")
    if np.any(np.diff(s.frames) != 1):
        raise ValidationError("kalman_denoise requires contiguous frames")
    q_var = params.process_accel_sigma ** 2
    out = np.empty_like(s.points)
    meas_vars = (params.meas_sigma_xy ** 2, params.meas_sigma_xy ** 2,
                 params.meas_sigma_z ** 2)
    for axis in range(3):
        out[:, axis] = cv_rts_smooth(s.points[:, axis], q_var, meas_vars[axis],
                                     params.init_cov_scale)
    return SensorTrajectory(s.frames, out, "denoised")


@dataclass(frozen=True)
class NormState:
    """Per-channel normalization recorded when a model is fitted."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float, copy=True)
        scale = np.array(self.scale, dtype=float, copy=True)
        if mean.shape != scale.shape or mean.ndim != 1:
            raise ValidationError("NormState: mean and scale must be matching 1-D arrays")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(scale))):
            raise ValidationError("NormState: entries must be finite")
        if np.any(scale <= 0):
            raise ValidationError("NormState: scales must be > 0")
        mean.flags.writeable = False
        scale.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)


@dataclass
class DenoiserModel:
    """Residual MLP over one flattened observation window of 3-D points.

    ``layer_sizes`` defaults to (3*W, 64, 3*W) for a W-frame window; hidden
    activations are tanh, the output is linear. With ``residual`` the model
    predicts a correction added to its (normalized) input, and the
    zero-initialized output layer makes a fresh model the exact identity.
    """

    layer_sizes: tuple
    weights: list
    biases: list
    residual: bool = True
    norm_state: NormState | None = None

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if self.layer_sizes[0] % 3 != 0:
            raise ValidationError("DenoiserModel: input width must be 3 * window frames")
        expect = list(zip(self.layer_sizes[1:], self.layer_sizes[:-1]))
        got = [w.shape for w in self.weights]
        if got != expect:
            raise ValidationError(f"DenoiserModel: weight shapes {got} do not chain "
                                  f"with layer_sizes {self.layer_sizes}")
        for b, (rows, _) in zip(self.biases, expect):
            if b.shape != (rows,):
                raise ValidationError("DenoiserModel: bias shapes do not chain")

    @classmethod
    def initialize(cls, window_frames: int, hidden: int = 64, seed: int = 0,
                   residual: bool = True) -> "DenoiserModel":
        sizes = (3 * window_frames, hidden, 3 * window_frames)
        rng = np.random.default_rng(seed)
        weights, biases = _nn.glorot_layers(sizes, rng)
        return cls(sizes, weights, biases, residual=residual)

    @property
    def window_frames(self) -> int:
        return self.layer_sizes[0] // 3

    def parameters(self) -> list:
        return self.weights + self.biases

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def fit_normalization(self, windows: np.ndarray) -> None:
        """Record per-axis mean/scale from (N, W, 3) training windows."""
        flat = windows.reshape(-1, 3)
        self.norm_state = NormState(flat.mean(axis=0),
                                    np.maximum(flat.std(axis=0), 1e-9))

    def forward_windows(self, windows: np.ndarray):
        """Denoise (B, W, 3) windows; returns (output windows, cache).

        Residual models add the denormalized correction to the raw input,
        so a zero output layer reproduces the input bit for bit.
        """
        if self.norm_state is None:
            raise ModelStateError("denoiser used before fitting (no norm_state)")
        b, w, _ = windows.shape
        if w != self.window_frames:
            raise ShapeError(f"denoiser expects {self.window_frames}-frame windows, got {w}")
        x = ((windows - self.norm_state.mean) / self.norm_state.scale).reshape(b, -1)
        out, activations = _nn.mlp_forward(self.weights, self.biases, x)
        correction = out.reshape(b, w, 3) * self.norm_state.scale
        if self.residual:
            denorm = windows + correction
        else:
            denorm = correction + self.norm_state.mean
        return denorm, (x, activations)


def denoise(model: DenoiserModel, s: SensorTrajectory) -> SensorTrajectory:
    """Run the fitted denoiser on one observation window.

    The trajectory must cover exactly the model's window length with
    contiguous frames. Pure and deterministic.
    """
    if len(s) != model.window_frames:
        raise ShapeError(f"denoiser expects exactly {model.window_frames} frames, "
                         f"got {len(s)}")
    if np.any(np.diff(s.frames) != 1):
        raise ValidationError("denoise requires contiguous frames")
    out, _ = model.forward_windows(s.points[None, :, :])
    return SensorTrajectory(s.frames, out[0], "denoised")


def denoising_loss(v_pred: VisualTrajectory, v_gt: VisualTrajectory) -> float:
    """Mean squared Euclidean pixel distance between two visual windows."""
    return mse_t(v_pred, v_gt)


def collect_training_windows(scenes, estimator_cfg: EstimatorConfig,
                             window: TimeWindow):
    """Build (noisy window, matrix sequence, hidden pixel gt) training triples.

    One triple per out-of-sight agent carrying ``visual_gt_hidden``.
    Scenes whose matrix estimation fails are skipped and counted.
    Returns (X (N,W,3), M (N,W,3,4), G (N,W,2), skipped, total).
    """
    xs, ms, gs = [], [], []
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
        stacked = seq.stacked()
        for agent in targets:
            obs = slice_window(agent.sensor_noisy, window, "observation")
            gt = slice_window(agent.visual_gt_hidden, window, "observation")
            if not gt.all_present:
                skipped += 1
                continue
            xs.append(obs.points)
            ms.append(stacked)
            gs.append(gt.points)
    if skipped > 0.5 * total or (total and not xs):
        raise DataQualityError(
            f"matrix estimation failed for {skipped}/{total} training windows")
    if not xs:
        raise InsufficientDataError("no usable training windows "
                                    "(out-of-sight agents need visual_gt_hidden)")
    return np.stack(xs), np.stack(ms), np.stack(gs), skipped, total


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    step_size: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch: int = 16
    seed: int = 0
    early_stop_patience: int = 50

    def __post_init__(self):
        if int(self.epochs) <= 0 or int(self.batch) <= 0:
            raise ValidationError("TrainConfig: epochs and batch must be > 0")
        if not (float(self.step_size) > 0):
            raise ValidationError("TrainConfig.step_size must be > 0")
        object.__setattr__(self, "epochs", int(self.epochs))
        object.__setattr__(self, "batch", int(self.batch))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "early_stop_patience", int(self.early_stop_patience))


def _denoiser_loss_and_grads(model: DenoiserModel, x: np.ndarray, m: np.ndarray,
                             g: np.ndarray, want_grads: bool = True):
    """Pixel-space loss (and parameter gradients) over a batch of windows."""
    b, w, _ = x.shape
    out, (x_norm, activations) = model.forward_windows(x)
    pixels, cache = _nn.project_forward(m, out)
    diff = pixels - g
    loss = float(np.mean(np.sum(diff ** 2, axis=-1), axis=None))
    if not want_grads:
        return loss, None
    d_pixels = 2.0 * diff / (b * w)
    d_world = _nn.project_backward(cache, d_pixels)
    d_ynorm = (d_world * model.norm_state.scale).reshape(b, -1)
    d_weights, d_biases, _ = _nn.mlp_backward(model.weights, activations, d_ynorm)
    return loss, d_weights + d_biases


def train_denoiser(scenes, estimator_cfg: EstimatorConfig, train_cfg: TrainConfig,
                   window: TimeWindow = DEFAULT_WINDOW, val_scenes=None,
                   hidden: int = 64):
    """Fit a denoiser with projection-consistency supervision.

    For every training window the camera matrices are estimated from the
    scene's in-sight agents, the out-of-sight noisy sensor window is pushed
    through the model, projected into pixels, and penalized against the
    hidden visual ground truth. Adam updates, per-epoch train/val losses,
    early stopping, and the best-validation model returned.

    Scenes given via ``val_scenes`` are held out for validation; without
    them a deterministic 15% split (by scene) is carved from ``scenes``.
    Returns (model, TrainingHistory).
    """
    scenes = list(scenes)
    if val_scenes is None:
        scenes_sorted = sorted(scenes, key=lambda s: s.scene_id)
        rng = np.random.default_rng(train_cfg.seed)
        order = rng.permutation(len(scenes_sorted))
        n_val = max(1, round(0.15 * len(scenes_sorted))) if len(scenes_sorted) > 1 else 0
        val_scenes = [scenes_sorted[i] for i in order[:n_val]]
        scenes = [scenes_sorted[i] for i in order[n_val:]]
    x, m, g, skipped, total = collect_training_windows(scenes, estimator_cfg, window)
    if val_scenes:
        xv, mv, gv, _, _ = collect_training_windows(val_scenes, estimator_cfg, window)
    else:
        xv, mv, gv = x, m, g

    model = DenoiserModel.initialize(window.observation_span, hidden=hidden,
                                     seed=train_cfg.seed)
    model.fit_normalization(x)
    params = model.parameters()

    def batch_loss_grads(idx):
        loss, grads = _denoiser_loss_and_grads(model, x[idx], m[idx], g[idx])
        return loss, grads

    def val_loss():
        loss, _ = _denoiser_loss_and_grads(model, xv, mv, gv, want_grads=False)
        return loss

    history = _nn.fit_adam(params, x.shape[0], batch_loss_grads, val_loss,
                           train_cfg, "denoiser")
    history.skipped_windows = skipped
    history.total_windows = total
    return model, history


def gradient_check(model: DenoiserModel, probe_batch, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``probe_batch`` is an (X, M, G) triple as produced by
    :func:`collect_training_windows`. Intended for small models (<= ~500
    parameters); cost grows linearly in parameter count.
    """
    x, m, g = probe_batch
    _, analytic = _denoiser_loss_and_grads(model, x, m, g)
    numeric = _nn.finite_difference_gradients(
        model.parameters(),
        lambda: _denoiser_loss_and_grads(model, x, m, g, want_grads=False)[0],
        h=h)
    return _nn.max_relative_error(analytic, numeric)


def make_denoiser(spec, kalman_params: KalmanParams | None = None):
    """Resolve a denoiser spec into a trajectory -> trajectory callable.

    Accepts "identity" (relabel as denoised), "kalman" (optionally with
    explicit params), a fitted DenoiserModel, or any callable.
    """
    if spec == "identity" or spec is None:
        return lambda s: s.with_provenance("denoised")
    if spec == "kalman":
        params = kalman_params or KalmanParams()
        return lambda s: kalman_denoise(s, params)
    if isinstance(spec, KalmanParams):
        return lambda s: kalman_denoise(s, spec)
    if isinstance(spec, DenoiserModel):
        return lambda s: denoise(spec, s)
    if callable(spec):
        return spec
    raise ValidationError(f"unrecognized denoiser spec: {spec!r}")
