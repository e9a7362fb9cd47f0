"""Model checkpoints in the shared container format (magic "DQM1").

Header: architecture, batch-norm settings, training dtype and a free-form
``meta`` dict (simulation config, training schedule, dataset split).  Arrays:
every parameter and running statistic by name, then the normalization
statistics under "stats.*".  Parameters are widened to float64 on disk; a
float32 model round-trips exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import container
from .errors import DataError, ShapeMismatchError
from .nn.model import Architecture, EmulatorNet, NormalizationStats

MODEL_MAGIC = b"DQM1"


def to_bytes(net: EmulatorNet, meta: dict | None = None) -> bytes:
    header = {
        "kind": "model",
        "architecture": net.arch.as_dict(),
        "dtype": net.dtype.name,
        "bn_eps": net.bn_eps,
        "bn_momentum": net.bn_momentum,
        "target_mean": float(net.stats.target_mean),
        "target_std": float(net.stats.target_std),
        "meta": meta or {},
    }
    arrays = [(k, v) for k, v in net.params.items()]
    arrays += [(k, v) for k, v in net.buffers.items()]
    arrays += [("stats.feature_mean", net.stats.feature_mean), ("stats.feature_std", net.stats.feature_std)]
    return container.encode(MODEL_MAGIC, header, arrays)


def from_bytes(data: bytes, source: str = "<bytes>") -> tuple[EmulatorNet, dict]:
    header, arrays = container.decode(data, MODEL_MAGIC, source)
    try:
        arch = Architecture(**header["architecture"])
        net = EmulatorNet(arch, dtype=np.dtype(header["dtype"]), bn_eps=float(header["bn_eps"]),
                          bn_momentum=float(header["bn_momentum"]))
        stats = NormalizationStats(
            container.expect_shape(arrays, "stats.feature_mean", (arch.n_features,), source),
            container.expect_shape(arrays, "stats.feature_std", (arch.n_features,), source),
            float(header["target_mean"]), float(header["target_std"]))
        meta = header["meta"]
    except (KeyError, TypeError) as exc:
        raise DataError(f"{source}: malformed model header ({exc})") from exc
    for store in (net.params, net.buffers):
        for name, ref in store.items():
            store[name] = container.expect_shape(arrays, name, ref.shape, source).astype(net.dtype)
    known = set(net.params) | set(net.buffers) | {"stats.feature_mean", "stats.feature_std"}
    extra = set(arrays) - known
    if extra:
        raise ShapeMismatchError(f"{source}: unexpected arrays {sorted(extra)}")
    net.set_stats(stats)
    return net, meta


def save_model(net: EmulatorNet, path, meta: dict | None = None) -> None:
    Path(path).write_bytes(to_bytes(net, meta))


def load_model(path) -> tuple[EmulatorNet, dict]:
    return from_bytes(Path(path).read_bytes(), str(path))
