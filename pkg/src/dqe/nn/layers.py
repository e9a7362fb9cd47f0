"""Dense, batch-norm and Mish primitives with hand-written backward passes.

The elementwise and per-feature reductions are fused numba loops; numpy's
vectorized exp stays outside them because it is much faster than a scalar exp.
"""

from __future__ import annotations

import numba as nb
import numpy as np

_MISH_LINEAR = 20.0  # above this, softplus(x) = x to machine precision


def mish(x: np.ndarray) -> np.ndarray:
    """x * tanh(softplus(x)), using tanh(log(1 + e^x)) = n / (n + 2) with n = e^x (e^x + 2)."""
    x = np.asarray(x)
    u = np.exp(np.minimum(x, _MISH_LINEAR))
    n = u * (u + 2)
    return np.where(x > _MISH_LINEAR, x, x * n / (n + 2))


@nb.njit(cache=True, fastmath=True, error_model="numpy")
def _mish_algebra(x, u, y, dy):
    xf, uf, yf, df = x.ravel(), u.ravel(), y.ravel(), dy.ravel()
    for i in range(xf.size):
        v = xf[i]
        w = uf[i]
        n = w * (w + 2)
        inv = 1 / (n + 2)
        t = n * inv
        yf[i] = v * t
        # dt/dx = 2 n' / (n + 2)^2 with n' = 2 u (u + 1)
        df[i] = t + v * 4 * w * (w + 1) * inv * inv


def mish_with_grad(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.ascontiguousarray(x)
    # for x > 20, u = e^20 gives t = 1 and dt ~ 1e-17, so y = x and dy = 1
    u = np.minimum(x, _MISH_LINEAR, dtype=x.dtype)
    np.exp(u, out=u)
    y = np.empty_like(x)
    dy = np.empty_like(x)
    _mish_algebra(x, u, y, dy)
    return y, dy


def dense_forward(x, W, b):
    return x @ W.T + b


def dense_backward(dout, x, W, need_dx=True):
    """Returns (dx, dW, db); dx is None when not needed."""
    return (dout @ W if need_dx else None), dout.T @ x, dout.sum(axis=0)


@nb.njit(cache=True)
def _bn_train(x, scale, shift, eps, out, xhat):
    B, F = x.shape
    mean = np.zeros(F, dtype=np.float64)
    var = np.zeros(F, dtype=np.float64)
    for i in range(B):
        for j in range(F):
            mean[j] += x[i, j]
    mean /= B
    for i in range(B):
        for j in range(F):
            d = x[i, j] - mean[j]
            var[j] += d * d
    var /= B
    inv_std = 1 / np.sqrt(var + eps)
    for i in range(B):
        for j in range(F):
            h = (x[i, j] - mean[j]) * inv_std[j]
            xhat[i, j] = h
            out[i, j] = h * scale[j] + shift[j]
    return mean, var, inv_std


def batchnorm_train(x, scale, shift, eps):
    """Batch statistics use the biased variance; returns (out, cache, mean, var)."""
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    xhat = np.empty_like(x)
    mean, var, inv_std = _bn_train(x, scale, shift, eps, out, xhat)
    dt = x.dtype
    return out, (xhat, inv_std.astype(dt)), mean.astype(dt), var.astype(dt)


def batchnorm_infer(x, scale, shift, running_mean, running_var, eps):
    inv_std = 1 / np.sqrt(running_var + eps)
    return (x - running_mean) * (inv_std * scale) + shift


@nb.njit(cache=True)
def _bn_backward(dout, xhat, inv_std, scale, dx):
    B, F = dout.shape
    dshift = np.zeros(F, dtype=np.float64)
    dscale = np.zeros(F, dtype=np.float64)
    for i in range(B):
        for j in range(F):
            g = dout[i, j]
            dshift[j] += g
            dscale[j] += g * xhat[i, j]
    # with dxhat = dout * scale: sum(dxhat) = scale * dshift, sum(dxhat * xhat) = scale * dscale
    for i in range(B):
        for j in range(F):
            s = scale[j]
            dx[i, j] = inv_std[j] * (dout[i, j] * s - (s * dshift[j] + xhat[i, j] * s * dscale[j]) / B)
    return dscale, dshift


def batchnorm_backward(dout, cache, scale):
    """Gradient through batch statistics; returns (dx, dscale, dshift)."""
    xhat, inv_std = cache
    dout = np.ascontiguousarray(dout)
    dx = np.empty_like(dout)
    dscale, dshift = _bn_backward(dout, xhat, inv_std, scale, dx)
    dt = dout.dtype
    return dx, dscale.astype(dt), dshift.astype(dt)
