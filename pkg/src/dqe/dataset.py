"""Dataset generation, splitting, normalization and persistence.

Each record is one sampled pulse: its exact trajectory on the output grid plus
the Laguerre history vectors at the same times.  Records carry the seed their
pulse was drawn from, so any record can be regenerated on its own.
"""

from __future__ import annotations

import logging
import multiprocessing
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .errors import DataError, InvariantError, NumericalError, ShapeMismatchError
from .ising import LatticeConfig
from .laguerre import FeaturizerConfig, batch_history
from .lindblad import EvolutionConfig, evolve
from .nn.model import NormalizationStats
from .pulses import PulseParams, PulseRanges, sample_pulse

log = logging.getLogger(__name__)

DATASET_MAGIC = b"DQE1"
DEFAULT_NUM_PULSES = 704
_RECORD_ARRAYS = ("times", "field", "vector_potential", "current", "features")


@dataclass(frozen=True)
class SimulationConfig:
    """Everything that determines a record given its pulse seed."""

    lattice: LatticeConfig = LatticeConfig()
    evolution: EvolutionConfig = EvolutionConfig()
    featurizer: FeaturizerConfig = FeaturizerConfig()
    ranges: PulseRanges = PulseRanges()

    def to_dict(self) -> dict:
        return {
            "lattice": asdict(self.lattice),
            "evolution": asdict(self.evolution),
            "featurizer": asdict(self.featurizer),
            "ranges": {k: list(v) for k, v in asdict(self.ranges).items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        try:
            return cls(
                lattice=LatticeConfig(**d["lattice"]),
                evolution=EvolutionConfig(**d["evolution"]),
                featurizer=FeaturizerConfig(**d["featurizer"]),
                ranges=PulseRanges(**{k: tuple(v) for k, v in d["ranges"].items()}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"invalid simulation config: {exc}") from exc


@dataclass(frozen=True)
class TrajectoryRecord:
    pulse: PulseParams
    seed: int  # pulse was drawn by sample_pulse(seed)
    times: np.ndarray
    field: np.ndarray
    vector_potential: np.ndarray
    current: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        T = self.times.shape[0]
        for name in ("field", "vector_potential", "current"):
            if getattr(self, name).shape != (T,):
                raise ShapeMismatchError(f"{name} has shape {getattr(self, name).shape}, expected ({T},)")
        if self.features.ndim != 2 or self.features.shape[0] != T:
            raise ShapeMismatchError(f"features have shape {self.features.shape}, expected ({T}, N)")

    def __len__(self):
        return self.times.shape[0]

    def check_physical(self, cfg: LatticeConfig):
        """Finite current bounded by the operator norm n * g."""
        if not np.all(np.isfinite(self.current)):
            raise InvariantError(f"non-finite current for pulse {self.pulse.as_dict()}")
        bound = cfg.n_sites * abs(cfg.g) * (1 + 1e-9)
        peak = float(np.max(np.abs(self.current))) if len(self) else 0.0
        if peak > bound:
            raise InvariantError(f"|current| = {peak:.6g} exceeds n g = {bound:.6g} "
                                 f"for pulse {self.pulse.as_dict()}")


@dataclass(frozen=True)
class Dataset:
    config: SimulationConfig
    seed: int
    records: tuple[TrajectoryRecord, ...] = field(default_factory=tuple)

    def __len__(self):
        return len(self.records)

    def stack(self, indices) -> tuple[np.ndarray, np.ndarray]:
        """Concatenated (features, current) over the given records."""
        idx = list(indices)
        N = self.config.featurizer.N
        if not idx:
            return np.empty((0, N)), np.empty(0)
        return (np.concatenate([self.records[i].features for i in idx]),
                np.concatenate([self.records[i].current for i in idx]))


def pulse_seeds(seed: int, count: int) -> list[int]:
    """Independent 64-bit seeds, one per pulse; stable in ``count`` prefix-wise."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def make_record(cfg: SimulationConfig, pulse_seed: int) -> TrajectoryRecord:
    """sample_pulse -> evolve -> batch_history for one pulse."""
    pulse = sample_pulse(pulse_seed, cfg.ranges)
    try:
        traj = evolve(None, cfg.lattice, pulse, cfg.evolution)
    except NumericalError as exc:
        raise type(exc)(f"{exc}; pulse {pulse.as_dict()} (seed {pulse_seed})") from exc
    features = batch_history(pulse, traj.times, cfg.featurizer)
    rec = TrajectoryRecord(pulse, pulse_seed, traj.times, traj.field, traj.vector_potential,
                           traj.current, features)
    rec.check_physical(cfg.lattice)
    return rec


def _worker(args):
    cfg, s = args
    return make_record(cfg, s)


def generate(cfg: SimulationConfig = SimulationConfig(), num_pulses: int = DEFAULT_NUM_PULSES,
             seed: int = 0, workers: int = 1, progress=None) -> Dataset:
    """Simulate ``num_pulses`` independent pulses.

    With ``workers > 1`` records are computed in a process pool; results are
    assembled in seed order, so the output does not depend on ``workers``.
    ``progress(i, record)`` is called as each record completes, in order.
    """
    if num_pulses < 0:
        raise ValueError("num_pulses must be non-negative")
    seeds = pulse_seeds(seed, num_pulses)
    records = []
    jobs = [(cfg, s) for s in seeds]
    if workers > 1 and num_pulses > 1:
        with multiprocessing.get_context("fork").Pool(min(workers, num_pulses)) as pool:
            for i, rec in enumerate(pool.imap(_worker, jobs)):
                records.append(rec)
                if progress is not None:
                    progress(i, rec)
    else:
        for i, job in enumerate(jobs):
            rec = _worker(job)
            records.append(rec)
            if progress is not None:
                progress(i, rec)
    return Dataset(cfg, seed, tuple(records))


def split(ds: Dataset, test_fraction: float = 0.1, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Seeded split by pulse into sorted (train, test) record indices."""
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(ds)
    if n < 2:
        raise DataError(f"cannot split {n} pulse(s) into train and test sets")
    n_test = min(n - 1, max(1, round(n * test_fraction)))
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def fit_stats(ds: Dataset, train_indices) -> NormalizationStats:
    """Per-feature and target mean / standard deviation over training pulses only."""
    if len(train_indices) == 0:
        raise DataError("no training pulses to fit normalization statistics on")
    x, y = ds.stack(train_indices)
    return stats_from_arrays(x, y)


def stats_from_arrays(x: np.ndarray, y: np.ndarray) -> NormalizationStats:
    mx, sx = x.mean(axis=0), x.std(axis=0)
    my, sy = float(y.mean()), float(y.std())
    # a constant column can leave roundoff-level spread rather than an exact zero
    flat = ~(sx > 1e-12 * np.maximum(np.abs(mx), 1e-300))
    if np.any(flat):
        raise DataError(f"feature column(s) {np.flatnonzero(flat).tolist()} have zero variance")
    if not sy > 1e-12 * max(abs(my), 1e-300):
        raise DataError("target current has zero variance")
    return NormalizationStats(mx, sx, my, sy)


def apply_stats(stats: NormalizationStats, features=None, targets=None):
    """Standardize features and/or targets; returns whichever were given."""
    out = []
    if features is not None:
        out.append((np.asarray(features, dtype=float) - stats.feature_mean) / stats.feature_std)
    if targets is not None:
        out.append((np.asarray(targets, dtype=float) - stats.target_mean) / stats.target_std)
    return out[0] if len(out) == 1 else tuple(out)


def invert_stats(stats: NormalizationStats, features=None, targets=None):
    out = []
    if features is not None:
        out.append(np.asarray(features, dtype=float) * stats.feature_std + stats.feature_mean)
    if targets is not None:
        out.append(np.asarray(targets, dtype=float) * stats.target_std + stats.target_mean)
    return out[0] if len(out) == 1 else tuple(out)


def to_bytes(ds: Dataset) -> bytes:
    header = {
        "kind": "dataset",
        "config": ds.config.to_dict(),
        "seed": int(ds.seed),
        "record_count": len(ds),
        "records": [{"seed": r.seed, "pulse": r.pulse.as_dict(), "length": len(r)} for r in ds.records],
    }
    arrays = []
    for i, r in enumerate(ds.records):
        for name in _RECORD_ARRAYS:
            arrays.append((f"{i}.{name}", getattr(r, name)))
    return container.encode(DATASET_MAGIC, header, arrays)


def from_bytes(data: bytes, source: str = "<bytes>") -> Dataset:
    header, arrays = container.decode(data, DATASET_MAGIC, source)
    try:
        cfg = SimulationConfig.from_dict(header["config"])
        entries = header["records"]
        if int(header["record_count"]) != len(entries):
            raise ShapeMismatchError(f"{source}: record_count disagrees with the index table")
        if len(arrays) != len(_RECORD_ARRAYS) * len(entries):
            raise ShapeMismatchError(f"{source}: {len(arrays)} arrays for {len(entries)} records")
        N = cfg.featurizer.N
        records = []
        for i, e in enumerate(entries):
            T = int(e["length"])
            get = lambda name, shape: container.expect_shape(arrays, f"{i}.{name}", shape, source)  # noqa: E731
            records.append(TrajectoryRecord(
                pulse=PulseParams(**e["pulse"]),
                seed=int(e["seed"]),
                times=get("times", (T,)),
                field=get("field", (T,)),
                vector_potential=get("vector_potential", (T,)),
                current=get("current", (T,)),
                features=get("features", (T, N)),
            ))
        return Dataset(cfg, int(header["seed"]), tuple(records))
    except (KeyError, TypeError) as exc:
        raise DataError(f"{source}: malformed dataset header ({exc})") from exc


def save(ds: Dataset, path) -> None:
    Path(path).write_bytes(to_bytes(ds))


def load(path) -> Dataset:
    return from_bytes(Path(path).read_bytes(), str(path))

