"""Accuracy metrics, harmonic spectra, the chirped-pulse test and timing benchmark."""

from __future__ import annotations

import math
import os
import platform
import time
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .dataset import SimulationConfig, TrajectoryRecord
from .errors import DataError
from .laguerre import batch_history
from .lindblad import evolve
from .nn.model import EmulatorNet, predict
from .pulses import PulseParams, chirped_pulse, ten_cycle_pulse

N_HARMONICS = 21  # orders 0..20
MIN_TIMED_SECONDS = 1e-3  # repeat fast calls until one trial lasts at least this long


@dataclass(frozen=True)
class HarmonicSpectrum:
    omega: float
    orders: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        if np.any(self.amplitudes < 0):
            raise ValueError("harmonic amplitudes must be non-negative")


def spectrum(current, dt: float, omega: float, n_harmonics: int = N_HARMONICS) -> HarmonicSpectrum:
    """|DFT| of the Hann-windowed signal at exactly h * omega, h = 0..n_harmonics-1.

    Amplitudes are divided by the window sum, so a unit-amplitude tone
    cos(h omega t) reads 1/2 at order h (and 1 at h = 0 for a constant).
    """
    x = np.asarray(current, dtype=float)
    if x.ndim != 1:
        raise ValueError("current must be a 1-D array")
    if not dt > 0 or not omega > 0:
        raise ValueError("dt and omega must be positive")
    if x.size * dt < 2 * (2 * math.pi / omega):
        raise DataError(f"signal spans {x.size * dt:.4g}, shorter than two periods "
                        f"({4 * math.pi / omega:.4g}); spectrum unreliable")
    w = np.hanning(x.size)
    t = dt * np.arange(x.size)
    orders = np.arange(n_harmonics)
    phase = np.exp(-1j * omega * np.outer(orders, t))
    amps = np.abs(phase @ (w * x)) / w.sum()
    return HarmonicSpectrum(float(omega), orders, amps)


def nrmse(pred, truth) -> float:
    """Root-mean-square error divided by the range of ``truth``."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if truth.size == 0:
        raise ValueError("empty input")
    span = float(truth.max() - truth.min())
    if span == 0:
        raise DataError("nrmse undefined: truth is constant")
    return float(np.sqrt(np.mean((pred - truth) ** 2)) / span)


@dataclass(frozen=True)
class TrajectoryEvaluation:
    """Exact vs emulated current for one pulse."""

    pulse: PulseParams
    times: np.ndarray
    field: np.ndarray
    exact: np.ndarray
    predicted: np.ndarray
    nrmse: float
    spectrum_exact: HarmonicSpectrum
    spectrum_pred: HarmonicSpectrum

    @property
    def harmonic_ratios(self) -> np.ndarray:
        """Predicted over exact amplitude per order (inf where the exact one is 0)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.spectrum_pred.amplitudes / self.spectrum_exact.amplitudes

    def harmonics_within(self, factor: float = 2.0, rel_floor: float = 0.01) -> bool:
        """Every harmonic above rel_floor * peak agrees within ``factor``."""
        ex = self.spectrum_exact.amplitudes
        keep = ex > rel_floor * ex.max()
        r = self.harmonic_ratios[keep]
        return bool(np.all((r <= factor) & (r >= 1 / factor)))

    def trajectory_csv(self) -> str:
        lines = ["t,F,j_exact,j_pred"]
        for row in zip(self.times, self.field, self.exact, self.predicted):
            lines.append("{!r},{!r},{!r},{!r}".format(*map(float, row)))
        return "\n".join(lines) + "\n"

    def spectrum_csv(self) -> str:
        lines = ["h,abs_j_exact,abs_j_pred"]
        for h, a, b in zip(self.spectrum_exact.orders, self.spectrum_exact.amplitudes,
                           self.spectrum_pred.amplitudes):
            lines.append(f"{int(h)},{float(a)!r},{float(b)!r}")
        return "\n".join(lines) + "\n"


def compare(net: EmulatorNet, pulse: PulseParams, times, field, exact, features) -> TrajectoryEvaluation:
    pred = predict(net, features)
    times = np.asarray(times)
    dt = float(times[1] - times[0])
    return TrajectoryEvaluation(
        pulse=pulse, times=times, field=np.asarray(field), exact=np.asarray(exact), predicted=pred,
        nrmse=nrmse(pred, exact),
        spectrum_exact=spectrum(exact, dt, pulse.omega),
        spectrum_pred=spectrum(pred, dt, pulse.omega),
    )


def evaluate_record(net: EmulatorNet, rec: TrajectoryRecord) -> TrajectoryEvaluation:
    return compare(net, rec.pulse, rec.times, rec.field, rec.current, rec.features)


def evaluate_pulse(net: EmulatorNet, cfg: SimulationConfig, pulse: PulseParams) -> TrajectoryEvaluation:
    """Exact evolution, featurization and emulation of an arbitrary pulse."""
    traj = evolve(None, cfg.lattice, pulse, cfg.evolution)
    features = batch_history(pulse, traj.times, cfg.featurizer)
    return compare(net, pulse, traj.times, traj.field, traj.current, features)


def chirped_generalization_test(net: EmulatorNet, cfg: SimulationConfig) -> TrajectoryEvaluation:
    """Out-of-distribution check on the chirped pulse A = 16, omega = 0.2, alpha = omega^2 / (10 pi)."""
    return evaluate_pulse(net, cfg, chirped_pulse(16.0, 0.2))


@dataclass(frozen=True)
class BenchmarkReport:
    exact_seconds: float
    predict_seconds: float
    featurize_seconds: float
    trials: int
    samples: int
    environment: str

    def __post_init__(self):
        if min(self.exact_seconds, self.predict_seconds, self.featurize_seconds) <= 0:
            raise ValueError("benchmark times must be positive")

    @property
    def speedup_predict(self) -> float:
        return self.exact_seconds / self.predict_seconds

    @property
    def speedup_total(self) -> float:
        return self.exact_seconds / (self.predict_seconds + self.featurize_seconds)

    def as_text(self) -> str:
        return "\n".join([
            f"environment: {self.environment}",
            f"trajectory samples: {self.samples}, trials: {self.trials} (median)",
            f"exact evolve:     {self.exact_seconds:.6g} s",
            f"predict:          {self.predict_seconds:.6g} s",
            f"featurize:        {self.featurize_seconds:.6g} s",
            f"speedup exact/predict:               {self.speedup_predict:.6g}",
            f"speedup exact/(predict + featurize): {self.speedup_total:.6g}",
        ])

    def as_csv(self) -> str:
        return ("exact_s,predict_s,featurize_s,speedup_predict,speedup_total,trials,samples\n"
                f"{self.exact_seconds!r},{self.predict_seconds!r},{self.featurize_seconds!r},"
                f"{self.speedup_predict!r},{self.speedup_total!r},{self.trials},{self.samples}\n")


def _median_time(fn, trials: int) -> float:
    """Median wall time of ``fn``; very fast calls are repeated inside each trial."""
    reps = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(reps):
            fn()
        if time.perf_counter() - t0 >= MIN_TIMED_SECONDS:
            break
        reps *= 10
    samples = []
    for _ in range(trials):
        t0 = time.perf_counter()
        for _ in range(reps):
            fn()
        samples.append((time.perf_counter() - t0) / reps)
    return float(np.median(samples))


def environment_string() -> str:
    return (f"{platform.processor() or platform.machine()}, {os.cpu_count()} logical CPU(s), "
            f"python {platform.python_version()}, numpy {np.__version__}, single-threaded BLAS")


def benchmark(cfg: SimulationConfig, net: EmulatorNet, n_trials: int = 5,
              pulse: PulseParams | None = None) -> BenchmarkReport:
    """Median wall time of (a) exact evolve, (b) predict, (c) featurize on a 10-cycle pulse."""
    if n_trials < 3:
        raise ValueError("benchmark needs at least 3 trials")
    pulse = ten_cycle_pulse() if pulse is None else pulse
    with threadpool_limits(limits=1):
        traj = evolve(None, cfg.lattice, pulse, cfg.evolution)  # also warms up compiled kernels
        features = batch_history(pulse, traj.times, cfg.featurizer)
        predict(net, features)
        t_exact = _median_time(lambda: evolve(None, cfg.lattice, pulse, cfg.evolution), n_trials)
        t_pred = _median_time(lambda: predict(net, features), n_trials)
        t_feat = _median_time(lambda: batch_history(pulse, traj.times, cfg.featurizer), n_trials)
    return BenchmarkReport(t_exact, t_pred, t_feat, n_trials, int(traj.times.size), environment_string())
