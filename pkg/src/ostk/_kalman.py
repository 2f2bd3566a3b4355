"""Scalar constant-velocity Kalman filter with RTS smoothing.

Shared by the trajectory denoiser and the camera-matrix estimator's
pre-smoothing step. One call handles one coordinate axis; frames are unit
steps.
"""

from __future__ import annotations

import numpy as np

_VARIANCE_FLOOR = 1e-12  # keeps zero-sigma configurations nonsingular


def cv_rts_smooth(z: np.ndarray, q_var: float, r_var: float,
                  p0_scale: float = 10.0) -> np.ndarray:
    """Filter + smooth measurements ``z`` under a [pos, vel] CV model.

    ``q_var`` is the white-noise-acceleration variance (discretized with
    the standard [[1/4, 1/2], [1/2, 1]] kernel), ``r_var`` the measurement
    variance; both are floored at 1e-12. The state is initialized from the
    first two measurements, so exactly constant-velocity input is
    reproduced exactly.
    """
    n = z.size
    f = np.array([[1.0, 1.0], [0.0, 1.0]])
    q = max(q_var, _VARIANCE_FLOOR) * np.array([[0.25, 0.5], [0.5, 1.0]])
    r = max(r_var, _VARIANCE_FLOOR)
    x = np.zeros((n, 2))
    p = np.zeros((n, 2, 2))
    x_pred = np.zeros((n, 2))
    p_pred = np.zeros((n, 2, 2))

    x[0] = (z[0], z[1] - z[0])
    p0 = p0_scale * max(r, 1.0)
    p[0] = np.diag([p0, 2.0 * p0])
    x_pred[0] = x[0]
    p_pred[0] = p[0]
    for k in range(1, n):
        x_pred[k] = f @ x[k - 1]
        p_pred[k] = f @ p[k - 1] @ f.T + q
        innovation = z[k] - x_pred[k][0]
        s_k = p_pred[k][0, 0] + r
        gain = p_pred[k][:, 0] / s_k
        x[k] = x_pred[k] + gain * innovation
        p[k] = p_pred[k] - np.outer(gain, p_pred[k][0, :])

    xs = x.copy()
    ps = p.copy()
    for k in range(n - 2, -1, -1):
        c = p[k] @ f.T @ np.linalg.inv(p_pred[k + 1])
        xs[k] = x[k] + c @ (xs[k + 1] - x_pred[k + 1])
        ps[k] = p[k] + c @ (ps[k + 1] - p_pred[k + 1]) @ c.T
    return xs[:, 0]


def estimate_measurement_variance(z: np.ndarray) -> float:
    """White-noise variance estimate from second differences.

    For measurements = smooth signal + i.i.d. noise, the second difference
    has variance 6 sigma^2 plus a negligible signal term, so
    var(diff2) / 6 estimates sigma^2 without knowing the signal.
    """
    if z.size < 3:
        return 0.0
    d2 = np.diff(z, n=2)
    return float(max(np.var(d2) / 6.0, 0.0))
