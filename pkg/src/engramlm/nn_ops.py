"""Low-level array ops with hand-written backward passes.

Everything here works on the trailing axis and is dtype-preserving, so the
same code path serves float32 training runs and float64 gradient checks.
"""

from __future__ import annotations

import numpy as np

GELU_C = np.sqrt(2.0 / np.pi)
GELU_A = 0.044715


def rmsnorm(x: np.ndarray, gain: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """y_i = gain_i * x_i / sqrt(mean(x^2) + eps), over the last axis."""
    ms = np.mean(np.square(x), axis=-1, keepdims=True)
    return gain * x / np.sqrt(ms + eps)


def rmsnorm_backward(dy: np.ndarray, x: np.ndarray, gain: np.ndarray, eps: float = 1e-6):
    """Returns (dx, dgain); dgain is summed over all leading axes."""
    n = x.shape[-1]
    ms = np.mean(np.square(x), axis=-1, keepdims=True)
    r = np.sqrt(ms + eps)
    dg = dy * gain
    # dL/dx_j = (1/r) [ g_j dy_j - x_j/(n r^2) * sum_i(dy_i g_i x_i) ]
    inner = np.sum(dg * x, axis=-1, keepdims=True)
    dx = (dg - x * inner / (n * r * r)) / r
    axes = tuple(range(x.ndim - 1))
    dgain = np.sum(dy * x / r, axis=axes)
    return dx, dgain


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    zmax = np.max(z, axis=axis, keepdims=True)
    e = np.exp(z - zmax)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(dp: np.ndarray, p: np.ndarray, axis: int = -1) -> np.ndarray:
    inner = np.sum(dp * p, axis=axis, keepdims=True)
    return p * (dp - inner)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def gelu(x: np.ndarray) -> np.ndarray:
    """tanh-form GELU; its exact derivative is in gelu_backward."""
    return 0.5 * x * (1.0 + np.tanh(GELU_C * (x + GELU_A * x**3)))


def gelu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    u = GELU_C * (x + GELU_A * x**3)
    t = np.tanh(u)
    du = GELU_C * (1.0 + 3.0 * GELU_A * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
