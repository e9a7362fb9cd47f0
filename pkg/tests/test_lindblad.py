import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dqe.errors import InvariantError
from dqe.ising import (
    SIGMA_X,
    SIGMA_Z,
    LatticeConfig,
    build_current_operator,
    build_hamiltonian,
    build_jump_operator,
    chain_operators,
    ground_state,
)
from dqe.lindblad import (
    EvolutionConfig,
    evolve,
    expectation,
    flipped_commutator_sign,
    invariant_subspace,
    lindblad_rhs,
    output_grid,
    superoperator_expm,
    unvec,
    vec,
)
from dqe.pulses import PulseParams, ten_cycle_pulse
from dqe.selftest import hermitian_basis, oracle_error, random_density_matrix, states_from_expectations

PLUS_X = np.array([1, 1]) / np.sqrt(2)
MINUS_X = np.array([1, -1]) / np.sqrt(2)
NO_FIELD = PulseParams(amplitude=0.0, omega=1.0)


def random_hermitian(d, rng):
    G = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (G + G.conj().T) / 2


def test_maximally_mixed_state_is_stationary_without_dissipation():
    rng = np.random.default_rng(0)
    d = 4
    out = lindblad_rhs(np.eye(d) / d, random_hermitian(d, rng), rng.normal(size=(d, d)), 0.0)
    np.testing.assert_array_equal(out, 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), gamma=st.floats(0, 2))
def test_rhs_is_traceless_and_hermitian(seed, gamma):
    rng = np.random.default_rng(seed)
    d = 4
    rho = random_density_matrix(d, rng)
    L = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    out = lindblad_rhs(rho, random_hermitian(d, rng), L, gamma)
    assert abs(np.trace(out)) < 1e-12 * max(1, np.abs(out).max())
    assert np.max(np.abs(out - out.conj().T)) < 1e-12 * max(1, np.abs(out).max())


def test_two_level_dissipator_populations():
    L = np.outer(MINUS_X, PLUS_X)
    rho = np.outer(PLUS_X, PLUS_X).astype(complex)
    out = lindblad_rhs(rho, SIGMA_X.astype(complex), L, 0.5)
    assert PLUS_X @ out @ PLUS_X == pytest.approx(-0.5, abs=1e-15)
    assert MINUS_X @ out @ MINUS_X == pytest.approx(0.5, abs=1e-15)


def test_rhs_dimension_mismatch():
    with pytest.raises(ValueError):
        lindblad_rhs(np.eye(2), np.eye(4), np.eye(2), 0.1)


def test_expectation_examples():
    assert expectation(np.eye(2) / 2, SIGMA_Z.astype(complex)) == 0.0
    assert expectation(np.diag([1.0, 0.0]).astype(complex), SIGMA_Z.astype(complex)) == 1.0
    rng = np.random.default_rng(3)
    psi = rng.normal(size=8) + 1j * rng.normal(size=8)
    psi /= np.linalg.norm(psi)
    O = random_hermitian(8, rng)
    assert expectation(np.outer(psi, psi.conj()), O) == pytest.approx((psi.conj() @ O @ psi).real, rel=1e-12)
    with pytest.raises(InvariantError):  # non-Hermitian rho: tr(rho sigma_x) = i
        expectation(np.array([[1, 1j], [0, 0]]), SIGMA_X.astype(complex))


def test_superoperator_identity_and_unitary():
    H = SIGMA_Z.astype(complex)
    L = np.zeros((2, 2), dtype=complex)
    np.testing.assert_allclose(superoperator_expm(H, L, 0.3, 0.0), np.eye(4), atol=1e-15)
    U = np.diag([np.exp(-1j * np.pi), np.exp(1j * np.pi)])
    rho = random_density_matrix(2, np.random.default_rng(1))
    out = unvec(superoperator_expm(H, L, 0.0, np.pi) @ vec(rho))
    np.testing.assert_allclose(out, U @ rho @ U.conj().T, atol=1e-12)
    with pytest.raises(ValueError):
        superoperator_expm(np.eye(32), np.eye(32), 0.1, 1.0)


def test_output_grid_step_divides_output_interval():
    p = ten_cycle_pulse()
    for dt in (0.005, 0.003, 0.0011):
        times, k, step = output_grid(p, EvolutionConfig(dt_integrate=dt))
        dt_out = times[1] - times[0]
        assert step <= dt
        assert abs(dt_out / step - k) < 1e-9 and abs(k * step - dt_out) < 1e-12
        assert dt_out == pytest.approx(p.period / 256)
        assert times[0] == p.onset and times[-1] <= p.end + 1e-9


def test_energy_conserved_without_field_or_dissipation():
    cfg = LatticeConfig(n_sites=3)
    rho0 = random_density_matrix(cfg.dim, np.random.default_rng(5))
    H = build_hamiltonian(cfg, 0.0)
    evo = EvolutionConfig(gamma=0.0, t_start=0.0, t_end=40.0, dt_output=0.5)
    traj = evolve(rho0, cfg, NO_FIELD, evo, observables=[H])
    energy = traj.observables[0]
    assert np.max(np.abs(energy - energy[0])) < 1e-9


def test_purity_conserved_in_closed_system():
    cfg = LatticeConfig(n_sites=3)
    rng = np.random.default_rng(2)
    psi = rng.normal(size=cfg.dim) + 1j * rng.normal(size=cfg.dim)
    psi /= np.linalg.norm(psi)
    # a pure state sits on the positivity boundary, so the step is chosen to keep the
    # first-order RK4 error of its zero eigenvalues below the 1e-8 positivity guard
    evo = EvolutionConfig(gamma=0.0, t_start=0.0, t_end=20.0, dt_output=0.5, dt_integrate=0.001)
    traj = evolve(np.outer(psi, psi.conj()), cfg, PulseParams(amplitude=3.0, omega=0.5), evo)
    rho = traj.final_state
    assert abs(np.trace(rho @ rho).real - 1) < 1e-8


def test_two_level_decay():
    cfg = LatticeConfig(n_sites=1, g=1.0)
    gamma = 0.2
    evo = EvolutionConfig(gamma=gamma, t_start=0.0, t_end=15.0, dt_output=0.25)
    rho0 = np.outer(PLUS_X, PLUS_X).astype(complex)
    traj = evolve(rho0, cfg, NO_FIELD, evo, observables=[SIGMA_X.astype(complex)])
    expected = 2 * np.exp(-gamma * traj.times) - 1
    assert np.max(np.abs(traj.observables[0] - expected)) < 1e-6


@pytest.mark.parametrize("gamma", [0.0, 0.1, 0.5])
def test_two_site_oracle_without_field(gamma):
    assert oracle_error(gamma=gamma, t_end=10.0) < 1e-6


def test_oracle_detects_sign_flip():
    with flipped_commutator_sign():
        assert oracle_error() > 1e-3
    assert oracle_error() < 1e-6


def test_oracle_agrees_with_halved_step():
    cfg = LatticeConfig(n_sites=2)
    rho0 = random_density_matrix(4, np.random.default_rng(9))
    H, L = build_hamiltonian(cfg, 0.0), build_jump_operator(cfg)
    evo = EvolutionConfig(gamma=0.1, t_start=0.0, t_end=5.0, dt_output=0.05, dt_integrate=0.0015)
    traj = evolve(rho0, cfg, NO_FIELD, evo)
    ref = unvec(superoperator_expm(H, L, 0.1, 5.0) @ vec(rho0))
    assert np.max(np.abs(traj.final_state - ref)) < 1e-8


def test_driven_current_matches_dense_reference_rk4():
    """Independent straight-line RK4 on the full complex matrix, n = 2, with a pulse."""
    cfg = LatticeConfig(n_sites=2)
    p = PulseParams(amplitude=4.0, omega=0.6, mu=3.0)
    evo = EvolutionConfig(gamma=0.1, t_start=-2.0, t_end=6.0, dt_output=0.1, dt_integrate=0.01)
    rho0 = ground_state(cfg)
    traj = evolve(rho0, cfg, p, evo)
    L = build_jump_operator(cfg)

    from dqe.pulses import cumulative_integral, drive
    times, k, dt = output_grid(p, evo)
    fine = times[0] + (dt / 2) * np.arange(2 * k * (times.size - 1) + 1)
    pre = np.linspace(p.onset, fine[0], 4001)
    A = cumulative_integral(p, fine, dt / 2) + cumulative_integral(p, pre, pre[1] - pre[0])[-1]
    rho = rho0.copy()
    current = [expectation(rho, build_current_operator(cfg, A[0]))]
    for i in range(times.size - 1):
        for s in range(k):
            j = 2 * (i * k + s)
            H0, Hm, H1 = (build_hamiltonian(cfg, A[j + q]) for q in (0, 1, 2))
            k1 = lindblad_rhs(rho, H0, L, 0.1)
            k2 = lindblad_rhs(rho + dt / 2 * k1, Hm, L, 0.1)
            k3 = lindblad_rhs(rho + dt / 2 * k2, Hm, L, 0.1)
            k4 = lindblad_rhs(rho + dt * k3, H1, L, 0.1)
            rho = rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        current.append(expectation(rho, build_current_operator(cfg, A[2 * k * (i + 1)]), atol=1e-8))
    np.testing.assert_allclose(traj.current, current, atol=1e-10)
    np.testing.assert_allclose(traj.vector_potential, A[:: 2 * k], atol=1e-12)
    assert traj.field == pytest.approx(drive(p, times))


def test_restricted_and_full_space_agree():
    cfg = LatticeConfig(n_sites=4)
    p = PulseParams(amplitude=10.0, omega=0.25, phi=0.4)
    base = dict(gamma=0.05, t_start=-10.0, t_end=15.0)
    red = evolve(None, cfg, p, EvolutionConfig(**base))
    full = evolve(None, cfg, p, EvolutionConfig(restrict_support=False, **base))
    assert red.subspace_dim < full.subspace_dim == 16
    np.testing.assert_allclose(red.current, full.current, atol=1e-12)
    np.testing.assert_allclose(red.final_state, full.final_state, atol=1e-12)


def test_invariant_subspace_of_ground_state():
    cfg = LatticeConfig(n_sites=8)
    ops = chain_operators(cfg)
    L = build_jump_operator(cfg).real
    gens = [ops.zz.real, ops.sx.real, (1j * ops.sy).real, L, L.T]
    w, v = np.linalg.eigh(ground_state(cfg))
    Q = invariant_subspace(v[:, w > 0.5].real, gens)
    assert Q.shape == (256, 30)
    for G in gens:
        assert np.linalg.norm(G @ Q - Q @ (Q.T @ G @ Q)) < 1e-8 * max(1, np.linalg.norm(G))


def test_trace_and_positivity_on_short_window():
    cfg = LatticeConfig(n_sites=4)
    p = PulseParams(amplitude=16.0, omega=0.2, mu=5.0)
    traj = evolve(None, cfg, p, EvolutionConfig(t_end=40.0))
    assert np.max(np.abs(traj.trace - 1)) < 1e-8
    rho = traj.final_state
    assert np.max(np.abs(rho - rho.conj().T)) < 1e-10
    assert np.linalg.eigvalsh(rho).min() >= -1e-8
    assert np.max(np.abs(traj.current)) <= cfg.n_sites * cfg.g


def test_trajectory_shapes_and_uniform_grid():
    cfg = LatticeConfig(n_sites=2)
    p = PulseParams(amplitude=2.0, omega=0.3)
    traj = evolve(None, cfg, p, EvolutionConfig(t_end=0.0))
    n = traj.times.size
    assert traj.current.shape == traj.field.shape == traj.vector_potential.shape == (n,)
    steps = np.diff(traj.times)
    assert np.all(steps > 0) and np.ptp(steps) < 1e-9


def test_large_step_reports_trace_breach():
    cfg = LatticeConfig(n_sites=2)
    rho0 = random_density_matrix(4, np.random.default_rng(0))
    evo = EvolutionConfig(gamma=0.5, t_start=0.0, t_end=20.0, dt_output=2.0, dt_integrate=2.0)
    with pytest.raises(InvariantError) as info:
        evolve(rho0, cfg, PulseParams(amplitude=50.0, omega=2.0, sigma_env=3.0), evo)
    assert info.value.time is not None


def test_rejects_invalid_initial_state():
    cfg = LatticeConfig(n_sites=1)
    with pytest.raises(ValueError):
        evolve(np.eye(2), cfg, NO_FIELD, EvolutionConfig(t_start=0, t_end=1))
    with pytest.raises(ValueError):
        evolve(np.eye(4) / 4, cfg, NO_FIELD, EvolutionConfig(t_start=0, t_end=1))


def test_reconstruction_helpers_round_trip():
    rho = random_density_matrix(4, np.random.default_rng(4))
    vals = np.array([[np.trace(rho @ O).real] for O in hermitian_basis(4)])
    np.testing.assert_allclose(states_from_expectations(vals, 4)[0], rho, atol=1e-14)


def test_full_scale_subspace_is_small():
    # guards the runtime assumption behind the default 8-site configuration
    cfg = LatticeConfig()
    p = PulseParams(amplitude=16.0, omega=0.2)
    traj = evolve(None, cfg, p, EvolutionConfig(t_end=p.onset + 5.0))
    assert traj.subspace_dim == 30
    assert math.isfinite(traj.current[-1])
