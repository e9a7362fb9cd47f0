"""Residual MLP mapping history vectors to the current.

Layout: standardize -> Dense(N -> width) -> n_blocks x residual block -> Dense(width -> 1)
-> de-standardize.  A residual block computes out = T(x) + x with
T = [BatchNorm -> Mish -> Dense] applied twice.

Training-mode passes use BLAS matrix products.  Inference runs a compiled
row-at-a-time kernel with a fixed summation order, so a row's output does not
depend on which other rows share the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from ..errors import DataError
from .layers import (
    batchnorm_backward,
    batchnorm_train,
    dense_backward,
    dense_forward,
    mish_with_grad,
)


@dataclass(frozen=True)
class Architecture:
    n_features: int = 10
    width: int = 64
    n_blocks: int = 4
    n_outputs: int = 1

    def as_dict(self) -> dict:
        return {"n_features": self.n_features, "width": self.width,
                "n_blocks": self.n_blocks, "n_outputs": self.n_outputs}


@dataclass
class NormalizationStats:
    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: float
    target_std: float

    def __post_init__(self):
        self.feature_mean = np.asarray(self.feature_mean, dtype=float)
        self.feature_std = np.asarray(self.feature_std, dtype=float)
        if np.any(~(self.feature_std > 0)) or not self.target_std > 0:
            raise DataError("normalization standard deviations must be positive")

    @classmethod
    def identity(cls, n_features: int) -> "NormalizationStats":
        return cls(np.zeros(n_features), np.ones(n_features), 0.0, 1.0)


class EmulatorNet:
    """Parameters, batch-norm running statistics and normalization of the emulator."""

    def __init__(self, arch: Architecture = Architecture(), seed: int = 0,
                 dtype=np.float32, bn_eps: float = 1e-5, bn_momentum: float = 0.1):
        self.arch = arch
        self.dtype = np.dtype(dtype)
        self.bn_eps = bn_eps
        self.bn_momentum = bn_momentum
        self.stats = NormalizationStats.identity(arch.n_features)
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.version = 0
        self._packed = None
        rng = np.random.default_rng(seed)
        w = arch.width
        self._dense("proj", arch.n_features, w, rng)
        for b in range(arch.n_blocks):
            for k in (1, 2):
                self._batchnorm(f"block{b}.bn{k}", w)
                self._dense(f"block{b}.fc{k}", w, w, rng)
        self._dense("head", w, arch.n_outputs, rng)

    def _dense(self, name, fan_in, fan_out, rng):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        self.params[f"{name}.W"] = rng.uniform(-limit, limit, (fan_out, fan_in)).astype(self.dtype)
        self.params[f"{name}.b"] = np.zeros(fan_out, dtype=self.dtype)

    def _batchnorm(self, name, width):
        self.params[f"{name}.scale"] = np.ones(width, dtype=self.dtype)
        self.params[f"{name}.shift"] = np.zeros(width, dtype=self.dtype)
        self.buffers[f"{name}.running_mean"] = np.zeros(width, dtype=self.dtype)
        self.buffers[f"{name}.running_var"] = np.ones(width, dtype=self.dtype)

    def touch(self):
        """Mark parameters as modified; invalidates outstanding forward caches."""
        self.version += 1

    def set_stats(self, stats: NormalizationStats):
        if stats.feature_mean.shape != (self.arch.n_features,):
            raise ValueError("normalization statistics do not match the feature count")
        self.stats = stats
        self.touch()

    def astype(self, dtype) -> "EmulatorNet":
        self.dtype = np.dtype(dtype)
        for d in (self.params, self.buffers):
            for k in d:
                d[k] = d[k].astype(self.dtype)
        self.touch()
        return self


@dataclass
class ForwardCache:
    version: int
    training: bool
    z0: np.ndarray
    layers: list
    h_final: np.ndarray


def forward(net: EmulatorNet, x: np.ndarray, training: bool = False):
    """Standardized-scale output (B, n_outputs) and the activation cache.

    Training mode normalizes with batch statistics and updates the running
    statistics; inference mode is a pure function of the network and returns
    ``None`` for the cache.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != net.arch.n_features:
        raise ValueError(f"expected features of shape (B, {net.arch.n_features}), got {x.shape}")
    if not training:
        return _infer(net, x), None
    if x.shape[0] < 2:
        raise ValueError("training-mode batch norm needs at least two samples")
    dt = net.dtype
    P = net.params
    st = net.stats
    z0 = ((x - st.feature_mean) / st.feature_std).astype(dt)
    h = dense_forward(z0, P["proj.W"], P["proj.b"])
    layers = []
    for b in range(net.arch.n_blocks):
        block_in = h
        sub = []
        for k in (1, 2):
            name = f"block{b}.bn{k}"
            a, bn_cache, mean, var = batchnorm_train(h, P[f"{name}.scale"], P[f"{name}.shift"],
                                                     net.bn_eps)
            B = h.shape[0]
            mom = net.bn_momentum
            rm, rv = net.buffers[f"{name}.running_mean"], net.buffers[f"{name}.running_var"]
            rm *= 1 - mom
            rm += mom * mean
            rv *= 1 - mom
            rv += mom * var * (B / (B - 1))
            m, dm = mish_with_grad(a)
            fc = f"block{b}.fc{k}"
            sub.append((bn_cache, dm, m))
            h = dense_forward(m, P[f"{fc}.W"], P[f"{fc}.b"])
        h = h + block_in
        layers.append(sub)
    y = dense_forward(h, P["head.W"], P["head.b"])
    return y, ForwardCache(net.version, training, z0, layers, h)


def _packed(net: EmulatorNet):
    """Inference weights as stacked contiguous arrays, rebuilt when parameters change."""
    if net._packed is not None and net._packed[0] == net.version:
        return net._packed[1]
    P, Bf = net.params, net.buffers
    dt = net.dtype
    names = [f"block{b}.{{}}{k}" for b in range(net.arch.n_blocks) for k in (1, 2)]
    coef, shift, W, bias = [], [], [], []
    for n in names:
        bn, fc = n.format("bn"), n.format("fc")
        inv_std = 1 / np.sqrt(Bf[f"{bn}.running_var"] + net.bn_eps)
        c = (inv_std * P[f"{bn}.scale"]).astype(dt)
        coef.append(c)
        shift.append(P[f"{bn}.shift"])
        W.append(P[f"{fc}.W"].T)
        bias.append(P[f"{fc}.b"])
    w = net.arch.width
    empty = np.zeros((0, w), dtype=dt)
    packed = (
        net.stats.feature_mean, net.stats.feature_std,
        np.ascontiguousarray(P["proj.W"].T), P["proj.b"],
        np.ascontiguousarray(np.stack([Bf[n.format("bn") + ".running_mean"] for n in names])
                             if names else empty),
        np.ascontiguousarray(np.stack(coef) if names else empty),
        np.ascontiguousarray(np.stack(shift) if names else empty),
        np.ascontiguousarray(np.stack(W) if names else np.zeros((0, w, w), dtype=dt)),
        np.ascontiguousarray(np.stack(bias) if names else empty),
        np.ascontiguousarray(P["head.W"].T), P["head.b"],
    )
    net._packed = (net.version, packed)
    return packed


@nb.njit(cache=True)
def _infer_rows(x, fmean, fstd, WpT, bp, rmean, coef, shift, WbT, bb, WhT, bh, out):
    # weights are stored transposed (in, out) so every product is an axpy over
    # the output index, which vectorizes without reordering any sum
    B, N = x.shape
    w = WpT.shape[1]
    n_sub = WbT.shape[0]
    z = np.empty(N, dtype=WpT.dtype)
    h = np.empty(w, dtype=WpT.dtype)
    skip = np.empty(w, dtype=WpT.dtype)
    m = np.empty(w, dtype=WpT.dtype)
    lim = WpT.dtype.type(20.0)
    for i in range(B):
        for k in range(N):
            z[k] = (x[i, k] - fmean[k]) / fstd[k]
        h[:] = bp
        for k in range(N):
            zk = z[k]
            for o in range(w):
                h[o] += WpT[k, o] * zk
        for s in range(n_sub):
            if s % 2 == 0:
                skip[:] = h
            for j in range(w):
                a = (h[j] - rmean[s, j]) * coef[s, j] + shift[s, j]
                u = np.exp(min(a, lim))
                n = u * (u + 2)
                m[j] = a if a > lim else a * n / (n + 2)
            h[:] = bb[s]
            for k in range(w):
                mk = m[k]
                for o in range(w):
                    h[o] += WbT[s, k, o] * mk
            if s % 2 == 1:
                for j in range(w):
                    h[j] += skip[j]
        for o in range(WhT.shape[1]):
            out[i, o] = bh[o]
        for k in range(w):
            hk = h[k]
            for o in range(WhT.shape[1]):
                out[i, o] += WhT[k, o] * hk


def _infer(net: EmulatorNet, x: np.ndarray) -> np.ndarray:
    out = np.empty((x.shape[0], net.arch.n_outputs), dtype=net.dtype)
    _infer_rows(np.ascontiguousarray(x, dtype=np.float64), *_packed(net), out)
    return out


def backward(net: EmulatorNet, cache: ForwardCache, dy: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given dLoss/dy on the standardized output scale."""
    if cache is None or not cache.training:
        raise ValueError("backward needs a cache from a training-mode forward pass")
    if cache.version != net.version:
        raise ValueError("stale forward cache: parameters changed since the forward pass")
    P = net.params
    grads: dict[str, np.ndarray] = {}
    dy = np.asarray(dy, dtype=net.dtype)
    dh, grads["head.W"], grads["head.b"] = dense_backward(dy, cache.h_final, P["head.W"])
    for b in reversed(range(net.arch.n_blocks)):
        d_skip = dh
        for k in (2, 1):
            bn_cache, dm, m = cache.layers[b][k - 1]
            fc = f"block{b}.fc{k}"
            dm_out, grads[f"{fc}.W"], grads[f"{fc}.b"] = dense_backward(dh, m, P[f"{fc}.W"])
            da = dm_out * dm
            bn = f"block{b}.bn{k}"
            dh, grads[f"{bn}.scale"], grads[f"{bn}.shift"] = batchnorm_backward(
                da, bn_cache, P[f"{bn}.scale"])
        dh = dh + d_skip
    _, grads["proj.W"], grads["proj.b"] = dense_backward(dh, cache.z0, P["proj.W"], need_dx=False)
    return grads


def mse_loss(y: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to y."""
    diff = y - target.reshape(y.shape).astype(y.dtype)
    return float(np.mean(diff.astype(np.float64) ** 2)), (2.0 / diff.size) * diff


def predict(net: EmulatorNet, features: np.ndarray) -> np.ndarray:
    """Current values for a whole trajectory in one batched inference pass."""
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[1] != net.arch.n_features:
        raise ValueError(
            f"feature width {features.shape[-1]} does not match the model's {net.arch.n_features}")
    y, _ = forward(net, features, training=False)
    out = y.astype(np.float64) * net.stats.target_std + net.stats.target_mean
    return out[:, 0] if net.arch.n_outputs == 1 else out
