"""Minimal hand-rolled MLP machinery shared by the trainable models.

Everything is plain float64 numpy with fixed reduction order, so training
runs are bit-reproducible for a fixed seed. Gradients are written out by
hand and verified against central finite differences by the gradient-check
operations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


def glorot_layers(layer_sizes, rng: np.random.Generator):
    """Uniform +-sqrt(6/(fan_in+fan_out)) hidden layers, zero output layer.

    The zero output layer makes residual decoders start as the identity.
    """
    sizes = list(layer_sizes)
    if len(sizes) < 2 or any(int(s) <= 0 for s in sizes):
        raise ValidationError(f"layer_sizes must be >= 2 positive ints, got {sizes}")
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        if i == len(sizes) - 2:
            w = np.zeros((fan_out, fan_in))
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return weights, biases


def mlp_forward(weights, biases, x: np.ndarray):
    """tanh hidden layers, identity output. x is (B, in); returns (out, cache)."""
    activations = [x]
    h = x
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w.T + b
        h = z if i == len(weights) - 1 else np.tanh(z)
        activations.append(h)
    return h, activations


def mlp_backward(weights, activations, d_out: np.ndarray):
    """Parameter gradients for mlp_forward; returns (d_weights, d_biases, d_in)."""
    d_w = [None] * len(weights)
    d_b = [None] * len(weights)
    delta = d_out
    for i in range(len(weights) - 1, -1, -1):
        if i != len(weights) - 1:
            delta = delta * (1.0 - activations[i + 1] ** 2)  # tanh'
        d_w[i] = delta.T @ activations[i]
        d_b[i] = delta.sum(axis=0)
        delta = delta @ weights[i]
    return d_w, d_b, delta


def project_forward(mats: np.ndarray, world: np.ndarray):
    """Project world points (..., 3) through per-sample matrices (..., 3, 4).

    Returns (pixels, cache). The matrices are constants of the computation;
    gradients flow only through the world points.
    """
    h = np.einsum("...ij,...j->...i", mats[..., :, :3], world) + mats[..., :, 3]
    pixels = h[..., :2] / h[..., 2:3]
    return pixels, (mats, h, pixels)


def project_backward(cache, d_pixels: np.ndarray) -> np.ndarray:
    """d loss / d world for project_forward."""
    mats, h, pixels = cache
    depth = h[..., 2:3]
    d_h = np.concatenate(
        [d_pixels / depth,
         -np.sum(d_pixels * pixels, axis=-1, keepdims=True) / depth],
        axis=-1)
    return np.einsum("...ij,...i->...j", mats[..., :, :3], d_h)


@dataclass
class AdamState:
    """Adam optimizer state over a flat list of parameter arrays."""

    step_size: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def ensure(self, params):
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]

    def update(self, params, grads):
        """In-place Adam step. A zero gradient leaves parameters unchanged."""
        self.ensure(params)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.step_size * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainingHistory:
    """Per-epoch training/validation losses plus bookkeeping."""

    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("inf")
    skipped_windows: int = 0
    total_windows: int = 0


def fit_adam(params, n_train: int, batch_loss_grads, val_loss, cfg,
             seed_key: str) -> TrainingHistory:
    """Generic minibatch Adam loop with early stopping on validation loss.

    ``batch_loss_grads(idx)`` returns (loss, grads aligned with params) for
    the training windows at ``idx``; ``val_loss()`` evaluates the current
    parameters. The best-validation parameters are restored into ``params``
    before returning.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & (2 ** 63 - 1),
                                                        _string_key(seed_key)]))
    adam = AdamState(step_size=cfg.step_size, beta1=cfg.adam_beta1,
                     beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    history = TrainingHistory()
    best_params = [p.copy() for p in params]
    initial_val = float(val_loss())
    history.best_val = initial_val
    history.best_epoch = -1
    since_best = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_train)
        epoch_loss = 0.0
        for start in range(0, n_train, cfg.batch):
            idx = order[start:start + cfg.batch]
            loss, grads = batch_loss_grads(idx)
            adam.update(params, grads)
            epoch_loss += loss * idx.size
        history.train.append(epoch_loss / n_train)
        v = float(val_loss())
        history.val.append(v)
        if v < history.best_val:
            history.best_val = v
            history.best_epoch = epoch
            best_params = [p.copy() for p in params]
            since_best = 0
        else:
            since_best += 1
            if since_best > cfg.early_stop_patience:
                break
    for p, best in zip(params, best_params):
        p[...] = best
    return history


def _string_key(s: str) -> int:
    return int.from_bytes(s.encode()[:8].ljust(8, b"\0"), "little") & (2 ** 63 - 1)


def finite_difference_gradients(params, loss_fn, h: float = 1e-5):
    """Central-difference gradient of ``loss_fn()`` w.r.t. each parameter."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + h
            hi = loss_fn()
            flat_p[i] = orig - h
            lo = loss_fn()
            flat_p[i] = orig
            flat_g[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric) -> float:
    """max over parameters of |a - n| / max(1, |a|, |n|)."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
