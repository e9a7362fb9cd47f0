"""Driving waveforms: flat-top Gaussian pulses, chirped pulses and their vector potential.

The drive actually seen by the system is the analytic pulse switched on at
``onset = -5 sigma``; before that the field is exactly zero, so the vector
potential starts from A(onset) = 0 and history features have no pre-onset
contribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

RAMP_WIDTHS = 5.0  # half-window in units of sigma_env
A_REFINE = 8  # Simpson subintervals per grid interval when integrating A(t)


@dataclass(frozen=True)
class PulseParams:
    amplitude: float
    omega: float
    phi: float = 0.0
    mu: float = 0.0
    sigma_env: float | None = None
    alpha: float = 0.0

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if self.mu < 0:
            raise ValueError(f"mu must be non-negative, got {self.mu}")
        if self.sigma_env is None:
            object.__setattr__(self, "sigma_env", 2 * math.pi / self.omega)
        if self.sigma_env <= 0:
            raise ValueError(f"sigma_env must be positive, got {self.sigma_env}")

    @property
    def period(self) -> float:
        return 2 * math.pi / self.omega

    @property
    def onset(self) -> float:
        return -RAMP_WIDTHS * self.sigma_env

    @property
    def end(self) -> float:
        return self.mu + RAMP_WIDTHS * self.sigma_env

    def as_dict(self) -> dict:
        return {
            "amplitude": self.amplitude,
            "omega": self.omega,
            "phi": self.phi,
            "mu": self.mu,
            "sigma_env": self.sigma_env,
            "alpha": self.alpha,
        }


def chirped_pulse(amplitude: float = 16.0, omega: float = 0.2, phi: float = 0.0) -> PulseParams:
    """Out-of-distribution test pulse with quadratic phase rate omega^2 / (10 pi)."""
    return PulseParams(amplitude=amplitude, omega=omega, phi=phi, mu=0.0,
                       alpha=omega ** 2 / (10 * math.pi))


def envelope(p: PulseParams, t):
    """Gaussian ramps around a flat top on [0, mu]; equals 1 on the plateau."""
    t = np.asarray(t, dtype=float)
    dist = np.maximum(np.maximum(-t, 0.0), t - p.mu)
    return np.exp(-dist ** 2 / (2 * p.sigma_env ** 2))


def field_at(p: PulseParams, t):
    """Analytic field F(t) = A*omega * envelope * cos(omega t + alpha t^2 + phi)."""
    t = np.asarray(t, dtype=float)
    phase = p.omega * t + p.alpha * t * t + p.phi
    out = (p.amplitude * p.omega) * envelope(p, t) * np.cos(phase)
    return out if out.ndim else float(out)


def drive(p: PulseParams, t):
    """Field switched on at the pulse onset; zero before it."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    on = t >= p.onset
    out[on] = field_at(p, t[on])
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SampledWaveform:
    times: np.ndarray
    field: np.ndarray
    vector_potential: np.ndarray


def _check_uniform(times: np.ndarray) -> float:
    if times.ndim != 1 or times.size < 2:
        raise ValueError("time grid must be 1-D with at least two points")
    steps = np.diff(times)
    h = (times[-1] - times[0]) / (times.size - 1)
    if h <= 0 or np.max(np.abs(steps - h)) > 1e-9 * max(1.0, abs(h)):
        raise ValueError("time grid must be uniform and increasing")
    return float(h)


def vector_potential_grid(p: PulseParams, times) -> SampledWaveform:
    """A(t) = integral of the drive from its onset, on a uniform grid.

    Each grid interval is integrated by composite Simpson with A_REFINE
    subintervals and the results are accumulated.
    """
    times = np.asarray(times, dtype=float)
    h = _check_uniform(times)
    if times[0] > p.onset + 1e-12 * max(1.0, abs(p.onset)):
        raise ValueError(f"grid must start at or before the pulse onset {p.onset:.6g}")
    return SampledWaveform(times=times, field=drive(p, times),
                           vector_potential=cumulative_integral(p, times, h))


def cumulative_integral(p: PulseParams, times: np.ndarray, h: float) -> np.ndarray:
    """Integral of the drive from times[0] to each grid point."""
    sub = np.arange(A_REFINE + 1) * (h / A_REFINE)
    weights = np.ones(A_REFINE + 1)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    weights *= h / (3 * A_REFINE)
    fine = times[:-1, None] + sub[None, :]
    increments = drive(p, fine) @ weights
    return np.concatenate([[0.0], np.cumsum(increments)])


@dataclass(frozen=True)
class PulseRanges:
    amplitude: tuple[float, float] = (1.0, 16.0)
    omega: tuple[float, float] = (0.1, 0.3)
    phi: tuple[float, float] = (0.0, 2 * math.pi)
    # plateau length drawn in units of pi/omega: mu ~ U[0, 6 pi / omega]
    mu_pi_over_omega: tuple[float, float] = (0.0, 6.0)

    def __post_init__(self):
        for name in ("amplitude", "omega", "phi", "mu_pi_over_omega"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"range {name} has lo > hi: {(lo, hi)}")


def sample_pulse(seed: int | np.random.Generator, ranges: PulseRanges = PulseRanges()) -> PulseParams:
    """Draw one unchirped pulse; deterministic in the seed (PCG64 generator)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    amplitude = rng.uniform(*ranges.amplitude)
    omega = rng.uniform(*ranges.omega)
    phi = rng.uniform(*ranges.phi)
    lo, hi = ranges.mu_pi_over_omega
    mu = rng.uniform(lo, hi) * math.pi / omega
    return PulseParams(amplitude=float(amplitude), omega=float(omega), phi=float(phi),
                       mu=float(mu), alpha=0.0)


def ten_cycle_pulse(amplitude: float = 16.0, omega: float = 0.2) -> PulseParams:
    """Benchmark pulse: no plateau, so the +-5 sigma ramps span exactly 10 periods."""
    return PulseParams(amplitude=amplitude, omega=omega, phi=0.0, mu=0.0)
