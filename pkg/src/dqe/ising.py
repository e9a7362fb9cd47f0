"""Operators of the periodic transverse-field Ising chain coupled to a vector potential.

Basis ordering: site 0 is the most significant qubit of the computational
basis index, ``|0> = |up>`` is the +1 eigenstate of sigma_z.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache, reduce

import numpy as np

from .errors import EigensolverError, ResourceError

MAX_SITES = 12

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True)
class LatticeConfig:
    n_sites: int = 8
    J: float = -2.4
    g: float = 1.0

    def __post_init__(self):
        if self.n_sites < 1:
            raise ValueError(f"n_sites must be >= 1, got {self.n_sites}")

    @property
    def dim(self) -> int:
        return 2 ** self.n_sites

    @property
    def bonds(self) -> tuple[tuple[int, int], ...]:
        n = self.n_sites
        if n == 1:
            return ()
        if n == 2:
            return ((0, 1),)
        return tuple((i, (i + 1) % n) for i in range(n))


@dataclass(frozen=True)
class EnergyBasis:
    energies: np.ndarray
    states: np.ndarray
    # level index of each eigenvalue after grouping near-degenerate energies
    levels: np.ndarray


def _check_size(cfg: LatticeConfig, max_sites: int) -> None:
    if cfg.n_sites > max_sites:
        raise ResourceError(
            f"n_sites = {cfg.n_sites} exceeds the cap of {max_sites} "
            f"(dimension {cfg.dim} dense operators)"
        )


def _site_operator(op: np.ndarray, site: int, n: int) -> np.ndarray:
    eye = np.eye(2, dtype=complex)
    return reduce(np.kron, [op if k == site else eye for k in range(n)])


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


@dataclass(frozen=True)
class ChainOperators:
    """Field-independent building blocks, cached per lattice."""

    zz: np.ndarray  # sum over bonds of sigma_z^i sigma_z^j
    sx: np.ndarray  # sum_i sigma_x^i
    sy: np.ndarray
    sz: np.ndarray


@lru_cache(maxsize=16)
def chain_operators(cfg: LatticeConfig, max_sites: int = MAX_SITES) -> ChainOperators:
    _check_size(cfg, max_sites)
    n = cfg.n_sites
    sz_sites = [_site_operator(SIGMA_Z, i, n) for i in range(n)]
    d = cfg.dim
    zz = np.zeros((d, d), dtype=complex)
    for i, j in cfg.bonds:
        zz += sz_sites[i] @ sz_sites[j]
    sx = sum(_site_operator(SIGMA_X, i, n) for i in range(n))
    sy = sum(_site_operator(SIGMA_Y, i, n) for i in range(n))
    sz = sum(sz_sites)
    return ChainOperators(*(_frozen(np.asarray(m, dtype=complex)) for m in (zz, sx, sy, sz)))


def build_hamiltonian(cfg: LatticeConfig, A: float, max_sites: int = MAX_SITES) -> np.ndarray:
    """J * sum_<ij> Z_i Z_j + g * (cos A * sum X_i - sin A * sum Y_i)."""
    ops = chain_operators(cfg, max_sites)
    h = cfg.J * ops.zz + cfg.g * (np.cos(A) * ops.sx - np.sin(A) * ops.sy)
    return hermitize(h)


def build_current_operator(cfg: LatticeConfig, A: float, max_sites: int = MAX_SITES) -> np.ndarray:
    """dH/dA = -g * (sin A * sum X_i + cos A * sum Y_i)."""
    ops = chain_operators(cfg, max_sites)
    j = -cfg.g * (np.sin(A) * ops.sx + np.cos(A) * ops.sy)
    return hermitize(j)


def eigendecompose(H: np.ndarray, rtol: float = 1e-9) -> EnergyBasis:
    """Ascending eigenpairs of a Hermitian matrix.

    Eigenvalues closer than ``rtol * ||H||`` are assigned to the same level;
    the levels define the spectral projectors used by the jump operator.
    """
    try:
        energies, states = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"Hermitian eigensolver failed: {exc}") from exc
    scale = max(float(np.max(np.abs(energies))), np.finfo(float).tiny)
    gaps = np.diff(energies) > rtol * scale
    levels = np.concatenate([[0], np.cumsum(gaps)]).astype(np.int64)
    return EnergyBasis(energies=energies, states=states, levels=levels)


def build_jump_operator(cfg: LatticeConfig, max_sites: int = MAX_SITES) -> np.ndarray:
    """Energy-lowering part of sum_i sigma_z^i in the field-free eigenbasis.

    L = sum_{E_a < E_b} P(E_a) Sz P(E_b), returned in the lab basis.
    """
    return _jump_operator(cfg, max_sites)


@lru_cache(maxsize=16)
def _jump_operator(cfg: LatticeConfig, max_sites: int) -> np.ndarray:
    basis = eigendecompose(build_hamiltonian(cfg, 0.0, max_sites))
    V = basis.states
    sz = chain_operators(cfg, max_sites).sz
    sz_eig = V.conj().T @ sz @ V
    lowering = basis.levels[:, None] < basis.levels[None, :]
    return _frozen(V @ (sz_eig * lowering) @ V.conj().T)


def ground_state(cfg: LatticeConfig, max_sites: int = MAX_SITES) -> np.ndarray:
    """Pure-state density matrix of the lowest field-free eigenvector."""
    basis = eigendecompose(build_hamiltonian(cfg, 0.0, max_sites))
    psi = basis.states[:, 0]
    return hermitize(np.outer(psi, psi.conj()))
