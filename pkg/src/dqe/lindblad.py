"""Driven Lindblad evolution of the Ising chain.

    d rho / dt = -i [H(A(t)), rho] + gamma (L rho L^+ - 1/2 {L^+ L, rho})

integrated by classical fixed-step RK4.  hbar = 1.

Before integrating, the state is restricted to the smallest subspace that
contains the support of rho0 and is invariant under every operator the
generator is built from (Z_iZ_j sum, sum X, sum Y, L, L^+).  This is exact:
rho(t) never leaves that subspace.  For the field-free ground state of the
8-site chain it is the 30-dimensional translation- and reflection-symmetric
sector, which is what makes full-length trajectories affordable on one core.
``EvolutionConfig(restrict_support=False)`` integrates the full 2^n matrix.
"""

from __future__ import annotations

import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass

import numba
import numpy as np
from scipy.linalg import expm

from .errors import InvariantError
from .ising import LatticeConfig, build_jump_operator, chain_operators, ground_state
from .pulses import PulseParams, cumulative_integral, drive

log = logging.getLogger(__name__)

ORACLE_MAX_DIM = 16

# Sign in front of i[H, rho].  Only the self-test fault injection touches it.
_COMMUTATOR_SIGN = -1.0


@contextmanager
def flipped_commutator_sign():
    """Temporarily use +i[H, rho]; lets the self-test prove its oracle check bites."""
    global _COMMUTATOR_SIGN
    old = _COMMUTATOR_SIGN
    _COMMUTATOR_SIGN = -old
    try:
        yield
    finally:
        _COMMUTATOR_SIGN = old


@dataclass(frozen=True)
class EvolutionConfig:
    gamma: float = 0.01  # 1 / T2 with T2 = 100
    dt_integrate: float = 0.003  # upper bound on the RK4 step
    samples_per_cycle: int = 256  # output grid: T_laser / samples_per_cycle
    dt_output: float | None = None  # overrides samples_per_cycle when set
    t_start: float | None = None  # default: pulse onset (-5 sigma)
    t_end: float | None = None  # default: mu + 5 sigma
    restrict_support: bool = True
    trace_tol: float = 1e-6

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.dt_integrate <= 0:
            raise ValueError("dt_integrate must be positive")
        if self.dt_output is not None and self.dt_output <= 0:
            raise ValueError("dt_output must be positive")


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    current: np.ndarray
    field: np.ndarray
    vector_potential: np.ndarray
    trace: np.ndarray
    observables: np.ndarray  # (k, len(times)) extra expectation values, k may be 0
    final_state: np.ndarray
    dt_integrate: float
    subspace_dim: int


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def lindblad_rhs(rho: np.ndarray, H: np.ndarray, L: np.ndarray, gamma: float) -> np.ndarray:
    if not (rho.shape == H.shape == L.shape and rho.shape[0] == rho.shape[1]):
        raise ValueError(f"dimension mismatch: rho {rho.shape}, H {H.shape}, L {L.shape}")
    Ld = L.conj().T
    K = Ld @ L
    return (_COMMUTATOR_SIGN * 1j) * commutator(H, rho) + gamma * (
        L @ rho @ Ld - 0.5 * (K @ rho + rho @ K)
    )


def expectation(rho: np.ndarray, O: np.ndarray, atol: float = 1e-10) -> float:
    """Re tr(rho O); a non-negligible imaginary part means rho or O is not Hermitian."""
    if rho.shape != O.shape:
        raise ValueError(f"dimension mismatch: rho {rho.shape}, O {O.shape}")
    val = np.einsum("ij,ji->", rho, O)
    if abs(val.imag) > atol:
        raise InvariantError(f"tr(rho O) has imaginary part {val.imag:.3e}")
    return float(val.real)


def liouvillian(H: np.ndarray, L: np.ndarray, gamma: float) -> np.ndarray:
    """Matrix of the generator acting on column-stacked vec(rho)."""
    d = H.shape[0]
    eye = np.eye(d)
    K = L.conj().T @ L
    return (-1j * (np.kron(eye, H) - np.kron(H.T, eye))
            + gamma * (np.kron(L.conj(), L) - 0.5 * np.kron(eye, K) - 0.5 * np.kron(K.T, eye)))


def superoperator_expm(H: np.ndarray, L: np.ndarray, gamma: float, t: float,
                       max_dim: int = ORACLE_MAX_DIM) -> np.ndarray:
    """exp(t * Liouvillian) for a time-independent generator (small systems only).

    Apply to ``rho.reshape(-1, order="F")``.
    """
    d = H.shape[0]
    if d > max_dim:
        raise ValueError(f"oracle limited to dimension {max_dim}, got {d}")
    return expm(t * liouvillian(H, L, gamma))


def vec(rho: np.ndarray) -> np.ndarray:
    return rho.reshape(-1, order="F")


def unvec(v: np.ndarray) -> np.ndarray:
    d = math.isqrt(v.size)
    return v.reshape(d, d, order="F")


def invariant_subspace(seed: np.ndarray, generators, rtol: float = 1e-8,
                       max_iter: int = 200) -> np.ndarray:
    """Orthonormal basis of the smallest subspace containing ``seed`` columns
    and closed under every generator.

    Singular values below ``rtol`` times the largest are treated as roundoff.
    """
    d = seed.shape[0]
    U, s, _ = np.linalg.svd(seed, full_matrices=False)
    Q = U[:, s > rtol * s[0]]
    for _ in range(max_iter):
        if Q.shape[1] == d:
            return np.eye(d, dtype=seed.dtype)
        M = np.hstack([Q] + [G @ Q for G in generators])
        U, s, _ = np.linalg.svd(M, full_matrices=False)
        r = int(np.count_nonzero(s > rtol * s[0]))
        if r == Q.shape[1]:
            return Q
        Q = U[:, :r]
    raise RuntimeError("invariant subspace search did not converge")


# The kernels work on Z = [Re rho; Im rho] (2m x m, real) in a real basis where
# the Z-Z sum, sum X and L are real and sum Y is purely imaginary.  Operator
# pieces: M = Mr + i Mi with Mr^T = B0 - s*By and Mi = C0 + c*Cx, where
# c, s = cos A, sin A; rhs = M rho + (M rho)^+ + gamma L rho L^T.

@numba.njit(cache=True, fastmath=True)
def _rhs(Z, B0, By, C0, Cx, c, s, L, LT, gamma, MrT, Mi, P1, P2, Y, D, out):
    m = Z.shape[1]
    for i in range(m):
        for j in range(m):
            MrT[i, j] = B0[i, j] - s * By[i, j]
            Mi[i, j] = C0[i, j] + c * Cx[i, j]
    # Z @ X gives right products; S and A are (anti)symmetric, so these are
    # transposes of the left products M rho needs.
    np.dot(Z, MrT, P1)
    np.dot(Z, Mi, P2)
    np.dot(Z, LT, Y)
    np.dot(L, Y[:m], D[:m])
    np.dot(L, Y[m:], D[m:])
    for i in range(m):
        for j in range(m):
            P1[i, j] += P2[m + i, j]  # (Re M rho)^T
            P2[i, j] -= P1[m + i, j]  # (Im M rho)^T
    for i in range(m):
        for j in range(m):
            out[i, j] = P1[i, j] + P1[j, i] + gamma * D[i, j]
            out[m + i, j] = P2[j, i] - P2[i, j] + gamma * D[m + i, j]


@numba.njit(cache=True)
def _expect(Z, Ore, Oim):
    m = Z.shape[1]
    acc = 0.0
    for i in range(m):
        for j in range(m):
            acc += Z[i, j] * Ore[j, i] - Z[m + i, j] * Oim[j, i]
    return acc


@numba.njit(cache=True)
def _rk4_kernel(Z, B0, By, C0, Cx, L, gamma, cosA, sinA, dt, steps_per_output, n_out,
                obs_re, obs_im, trace_tol, trace_out, obs_out):
    """Integrates in place; returns -1 on success, else the output index where
    the trace drifted beyond ``trace_tol``."""
    m = Z.shape[1]
    LT = np.ascontiguousarray(L.T)
    MrT = np.empty((m, m))
    Mi = np.empty((m, m))
    P1 = np.empty_like(Z)
    P2 = np.empty_like(Z)
    Y = np.empty_like(Z)
    D = np.empty_like(Z)
    k1 = np.empty_like(Z)
    k2 = np.empty_like(Z)
    k3 = np.empty_like(Z)
    k4 = np.empty_like(Z)
    tmp = np.empty_like(Z)
    n_obs = obs_re.shape[0]
    rows = 2 * m

    for o in range(n_out):
        if o > 0:
            for st in range(steps_per_output):
                base = 2 * ((o - 1) * steps_per_output + st)
                _rhs(Z, B0, By, C0, Cx, cosA[base], sinA[base], L, LT, gamma,
                     MrT, Mi, P1, P2, Y, D, k1)
                for i in range(rows):
                    for j in range(m):
                        tmp[i, j] = Z[i, j] + 0.5 * dt * k1[i, j]
                _rhs(tmp, B0, By, C0, Cx, cosA[base + 1], sinA[base + 1], L, LT, gamma,
                     MrT, Mi, P1, P2, Y, D, k2)
                for i in range(rows):
                    for j in range(m):
                        tmp[i, j] = Z[i, j] + 0.5 * dt * k2[i, j]
                _rhs(tmp, B0, By, C0, Cx, cosA[base + 1], sinA[base + 1], L, LT, gamma,
                     MrT, Mi, P1, P2, Y, D, k3)
                for i in range(rows):
                    for j in range(m):
                        tmp[i, j] = Z[i, j] + dt * k3[i, j]
                _rhs(tmp, B0, By, C0, Cx, cosA[base + 2], sinA[base + 2], L, LT, gamma,
                     MrT, Mi, P1, P2, Y, D, k4)
                for i in range(rows):
                    for j in range(m):
                        Z[i, j] += (dt / 6.0) * (k1[i, j] + 2.0 * k2[i, j] + 2.0 * k3[i, j] + k4[i, j])
            # re-symmetrize once per output interval
            for i in range(m):
                for j in range(i, m):
                    v = 0.5 * (Z[i, j] + Z[j, i])
                    Z[i, j] = v
                    Z[j, i] = v
                    w = 0.5 * (Z[m + i, j] - Z[m + j, i])
                    Z[m + i, j] = w
                    Z[m + j, i] = -w
        tr = 0.0
        for i in range(m):
            tr += Z[i, i]
        trace_out[o] = tr
        for k in range(n_obs):
            obs_out[k, o] = _expect(Z, obs_re[k], obs_im[k])
        if abs(tr - 1.0) > trace_tol:
            return o
    return -1


def output_grid(pulse: PulseParams, evo: EvolutionConfig) -> tuple[np.ndarray, int, float]:
    """Output times, RK4 substeps per output interval and the RK4 step.

    The step is the largest value not exceeding ``dt_integrate`` that divides
    the output interval exactly.
    """
    t0 = pulse.onset if evo.t_start is None else evo.t_start
    t1 = pulse.end if evo.t_end is None else evo.t_end
    if not t0 < t1:
        raise ValueError(f"empty time window [{t0}, {t1}]")
    dt_out = evo.dt_output if evo.dt_output is not None else pulse.period / evo.samples_per_cycle
    n_out = int(math.floor((t1 - t0) / dt_out + 1e-9)) + 1
    k = max(1, math.ceil(dt_out / evo.dt_integrate - 1e-9))
    times = t0 + dt_out * np.arange(n_out)
    return times, k, dt_out / k


def _vector_potential(pulse: PulseParams, fine: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h = (fine[-1] - fine[0]) / (fine.size - 1)
    offset = 0.0
    if fine[0] > pulse.onset:
        n = max(2, math.ceil((fine[0] - pulse.onset) / h) + 1)
        pre = np.linspace(pulse.onset, fine[0], n)
        offset = cumulative_integral(pulse, pre, pre[1] - pre[0])[-1]
    return drive(pulse, fine), cumulative_integral(pulse, fine, h) + offset


def evolve(rho0: np.ndarray | None, cfg: LatticeConfig, pulse: PulseParams,
           evo: EvolutionConfig = EvolutionConfig(),
           observables: list[np.ndarray] | None = None) -> Trajectory:
    """Integrate the driven Lindblad equation and record the current.

    ``rho0=None`` starts from the field-free ground state.  Extra Hermitian
    ``observables`` (full-space matrices) are recorded at every output time.
    """
    ops = chain_operators(cfg)
    L = np.asarray(build_jump_operator(cfg))
    rho0 = ground_state(cfg) if rho0 is None else np.asarray(rho0, dtype=complex)
    d = cfg.dim
    if rho0.shape != (d, d):
        raise ValueError(f"rho0 has shape {rho0.shape}, expected {(d, d)}")
    if abs(np.trace(rho0) - 1) > 1e-10 or np.max(np.abs(rho0 - rho0.conj().T)) > 1e-10:
        raise ValueError("rho0 must be Hermitian with unit trace")

    times, k, dt = output_grid(pulse, evo)
    n_out = times.size
    fine = times[0] + (dt / 2) * np.arange(2 * k * (n_out - 1) + 1)
    field_fine, A_fine = _vector_potential(pulse, fine)

    if np.max(np.abs(L.imag)) > 1e-10:
        raise ValueError("jump operator must be real in the computational basis")
    L = np.ascontiguousarray(L.real)
    iy = (1j * np.asarray(ops.sy)).real  # i * sum Y is real antisymmetric
    gens = [ops.zz.real, ops.sx.real, iy, L, L.T]
    Q = np.eye(d)
    if evo.restrict_support:
        w, v = np.linalg.eigh(rho0)
        support = v[:, w > 1e-14 * max(w.max(), 1e-300)]
        Qs = invariant_subspace(np.hstack([support.real, support.imag]), gens)
        leak = max(np.linalg.norm(G @ Qs - Qs @ (Qs.T @ G @ Qs)) / max(1.0, np.linalg.norm(G))
                   for G in gens)
        if leak <= 1e-8:
            Q = Qs
        else:
            log.warning("invariant subspace residual %.2e too large; using full space", leak)
    full = Q.shape[1] == d

    def reduce(op):
        return np.ascontiguousarray(op if full else Q.T @ op @ Q)

    zz, sx, iy_r, Lr = (reduce(G) for G in gens[:4])
    K = Lr.T @ Lr
    sign = _COMMUTATOR_SIGN
    B0 = np.ascontiguousarray(-0.5 * evo.gamma * K)
    By = np.ascontiguousarray(-sign * cfg.g * iy_r)
    C0 = np.ascontiguousarray(sign * cfg.J * zz)
    Cx = np.ascontiguousarray(sign * cfg.g * sx)
    # sum X is real; sum Y = -i * iy_r in the reduced basis
    extra = [reduce(np.asarray(O, dtype=complex)) for O in (observables or [])]
    obs_re = np.stack([sx, np.zeros_like(sx)] + [O.real for O in extra])
    obs_im = np.stack([np.zeros_like(sx), -iy_r] + [O.imag for O in extra])
    obs_re, obs_im = np.ascontiguousarray(obs_re), np.ascontiguousarray(obs_im)

    rho_r = reduce(rho0)
    Z = np.ascontiguousarray(np.vstack([rho_r.real, rho_r.imag]))
    trace = np.empty(n_out)
    obs_out = np.empty((obs_re.shape[0], n_out))
    status = _rk4_kernel(Z, B0, By, C0, Cx, Lr, float(evo.gamma), np.cos(A_fine), np.sin(A_fine),
                         dt, k, n_out, obs_re, obs_im, evo.trace_tol, trace, obs_out)
    if status >= 0:
        raise InvariantError(
            f"trace drifted to {trace[status]:.9f}; step size {dt:.3g} too large", float(times[status])
        )

    m = Q.shape[1]
    rho = Z[:m] + 1j * Z[m:]
    final = rho if full else Q @ rho @ Q.T
    min_eig = float(np.linalg.eigvalsh(rho).min())
    if min_eig < -1e-8:
        raise InvariantError(f"final state lost positivity (min eigenvalue {min_eig:.3e})",
                             float(times[-1]))

    A_out = A_fine[:: 2 * k]
    current = -cfg.g * (np.sin(A_out) * obs_out[0] + np.cos(A_out) * obs_out[1])
    return Trajectory(
        times=times,
        current=current,
        field=field_fine[:: 2 * k],
        vector_potential=A_out,
        trace=trace,
        observables=obs_out[2:],
        final_state=final,
        dt_integrate=dt,
        subspace_dim=m,
    )
