"""Fast invariant suite behind ``dqe selftest``.

Each check returns a CheckResult; ``run_all`` executes them in order.  The
whole suite takes a few seconds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .ising import LatticeConfig, build_current_operator, build_hamiltonian, build_jump_operator
from .laguerre import FeaturizerConfig, gram_matrix
from .lindblad import EvolutionConfig, evolve, superoperator_expm, unvec, vec
from .nn.model import Architecture, EmulatorNet, backward, forward, mse_loss
from .pulses import PulseParams


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: {self.value:.3e} (tol {self.tolerance:.0e}, {self.seconds:.2f} s)"


def random_density_matrix(d: int, rng: np.random.Generator) -> np.ndarray:
    G = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = G @ G.conj().T
    return rho / np.trace(rho).real


def hermitian_basis(d: int) -> list[np.ndarray]:
    """d^2 Hermitian matrices whose expectation values determine rho:
    tr(rho S_jk) = Re rho_kj and tr(rho A_jk) = -Im rho_kj."""
    out = []
    for j in range(d):
        for k in range(d):
            E = np.zeros((d, d), dtype=complex)
            E[j, k] = 1
            out.append((E + E.T) / 2 if j <= k else 1j * (E - E.T) / 2)
    return out


def states_from_expectations(values: np.ndarray, d: int) -> np.ndarray:
    """Invert ``hermitian_basis``: values (d^2, T) -> rho (T, d, d)."""
    T = values.shape[1]
    rho = np.zeros((T, d, d), dtype=complex)
    for idx in range(d * d):
        j, k = divmod(idx, d)
        if j <= k:
            rho[:, k, j] += values[idx]
            if j != k:
                rho[:, j, k] += values[idx]
        else:
            # A_jk with j > k gives -Im rho_kj
            rho[:, k, j] -= 1j * values[idx]
            rho[:, j, k] += 1j * values[idx]
    return rho


def oracle_error(gamma: float = 0.1, t_end: float = 10.0, seed: int = 0) -> float:
    """Max entry error of RK4 vs the exponentiated Liouvillian, n = 2, no drive."""
    cfg = LatticeConfig(n_sites=2)
    d = cfg.dim
    rho0 = random_density_matrix(d, np.random.default_rng(seed))
    pulse = PulseParams(amplitude=0.0, omega=1.0)
    evo = EvolutionConfig(gamma=gamma, t_start=0.0, t_end=t_end, dt_output=0.1)
    traj = evolve(rho0, cfg, pulse, evo, observables=hermitian_basis(d))
    rho_t = states_from_expectations(traj.observables, d)
    H = build_hamiltonian(cfg, 0.0)
    L = build_jump_operator(cfg)
    err = 0.0
    for t, rho in zip(traj.times, rho_t):
        ref = unvec(superoperator_expm(H, L, gamma, float(t)) @ vec(rho0))
        err = max(err, float(np.max(np.abs(rho - ref))))
    return err


def current_identity_error(draws: int = 100, seed: int = 0, eps: float = 1e-5) -> float:
    """Max relative error of the central difference of H(A) against the current operator."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        cfg = LatticeConfig(n_sites=int(rng.integers(1, 5)), J=float(rng.uniform(-3, 3)),
                            g=float(rng.uniform(0.1, 2)))
        A = float(rng.uniform(-np.pi, np.pi))
        fd = (build_hamiltonian(cfg, A + eps) - build_hamiltonian(cfg, A - eps)) / (2 * eps)
        j = build_current_operator(cfg, A)
        worst = max(worst, float(np.linalg.norm(fd - j) / np.linalg.norm(j)))
    return worst


def orthonormality_error(cfg: FeaturizerConfig = FeaturizerConfig()) -> float:
    return float(np.max(np.abs(gram_matrix(cfg) - np.eye(cfg.N))))


def gradient_check_error(seed: int = 0, h: float = 1e-4) -> float:
    """Max relative central-difference error over every parameter entry of a tiny net."""
    rng = np.random.default_rng(seed)
    net = EmulatorNet(Architecture(n_features=3, width=4, n_blocks=2), seed=seed, dtype=np.float64)
    for name, p in net.params.items():  # move off the symmetric initial point
        p += 0.3 * rng.normal(size=p.shape)
    x = rng.normal(size=(7, 3))
    target = rng.normal(size=(7, 1))

    def loss() -> float:
        y, _ = forward(net, x, training=True)
        return mse_loss(y, target)[0]

    saved = {k: v.copy() for k, v in net.buffers.items()}
    y, cache = forward(net, x, training=True)
    value, dy = mse_loss(y, target)
    grads = backward(net, cache, dy)
    # biases feeding batch norm have zero true gradient; their difference
    # quotient is pure roundoff of size eps |loss| / h, so the floor scales with the loss
    floor = 1e-6 * max(1.0, abs(value))
    worst = 0.0
    for name, p in net.params.items():
        g = grads[name]
        for i in np.ndindex(p.shape):
            orig = p[i]

            def central(step):
                p[i] = orig + step
                lp = loss()
                p[i] = orig - step
                lm = loss()
                p[i] = orig
                return (lp - lm) / (2 * step)

            # Richardson step cancels the h^2 truncation term, which otherwise
            # reaches ~1e-4 relative on small entries
            fd = (4 * central(h / 2) - central(h)) / 3
            worst = max(worst, abs(fd - g[i]) / max(abs(fd), abs(g[i]), floor))
    net.buffers.update(saved)
    return worst


CHECKS = (
    ("Laguerre orthonormality", orthonormality_error, 1e-6),
    ("network gradient check", gradient_check_error, 1e-4),
    ("n=2 Lindblad oracle", oracle_error, 1e-6),
    ("current = dH/dA", current_identity_error, 1e-8),
)


def run_all() -> list[CheckResult]:
    results = []
    for name, fn, tol in CHECKS:
        t0 = time.perf_counter()
        value = fn()
        results.append(CheckResult(name, bool(value < tol), value, tol, time.perf_counter() - t0))
    return results
