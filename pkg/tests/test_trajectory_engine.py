import numpy as np
import pytest
from scipy.integrate import quad, solve_ivp

from conftest import random_joint_state
from nmtraj.bath_model import (
    DiscretizedBath,
    MemoryKernelSeries,
    discretize_semicircle_chain,
    spin_boson,
    tabulate_kernel,
)
from nmtraj.fock_space import JointState, annihilation_matrix, bath_energy_diag, enumerate_basis
from nmtraj.noise_source import NoiseSample, sample_noise
from nmtraj.trajectory_engine import (
    DegenerateProjection,
    PropagatorConfig,
    TrajectoryPropagator,
    apply_H_Q,
    phi,
    run_linear_trajectory,
    run_trajectory,
    sbar,
)

SIGMA_MINUS = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)


def closed_qubit_rho(model, psi0, times):
    """Independent reference: dense integration of the driven two-level system."""

    def rhs(t, y):
        return -1j * (model.hamiltonian(t) @ y)

    sol = solve_ivp(
        rhs, (times[0], times[-1]), np.asarray(psi0, dtype=complex),
        t_eval=times, rtol=1e-11, atol=1e-13,
    )
    states = sol.y.T
    return np.einsum("ta,tb->tab", states, states.conj())


# ---------------------------------------------------------------- sbar


def test_sbar_trivial_matrix_elements():
    basis = enumerate_basis(2, 1)
    excited = JointState.from_system_state(basis, [0.0, 1.0])
    assert sbar(excited, SIGMA_MINUS) == pytest.approx(0.0)

    plus = JointState.from_system_state(basis, np.array([1.0, 1.0]) / np.sqrt(2))
    assert sbar(plus, SIGMA_MINUS) == pytest.approx(0.5)


def test_sbar_matches_projected_density_matrix(rng):
    basis = enumerate_basis(3, 2)
    for _ in range(5):
        state = random_joint_state(basis, 4, rng)
        s_op = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        v = state.amplitudes[:4]
        rho_cond = np.outer(v, v.conj()) / np.vdot(v, v).real
        assert sbar(state, s_op) == pytest.approx(np.trace(s_op @ rho_cond))


def test_sbar_degenerate_projection_raises():
    basis = enumerate_basis(2, 1)
    state = JointState(basis, 2, np.zeros(2 * basis.dim, dtype=complex))
    state.as_matrix()[1] = [1.0, 0.0]  # no vacuum component at all
    with pytest.raises(DegenerateProjection):
        sbar(state, SIGMA_MINUS)


# ---------------------------------------------------------------- phi


def test_phi_empty_integral_is_zero():
    kernel = MemoryKernelSeries(dt=0.1, values=np.ones(5, dtype=complex))
    assert phi(0.0, [1.0 + 0j], kernel) == 0.0


def test_phi_constant_kernel_is_exact():
    # M == M0 and sbar == s0: phi(t) = -i M0 s0 t, trapezoid exact
    m0, s0, dt = 0.7 - 0.2j, 1.1 + 0.3j, 0.05
    kernel = MemoryKernelSeries(dt=dt, values=np.full(41, m0))
    hist = np.full(41, s0)
    for k in (1, 7, 40):
        t = k * dt
        assert phi(t, hist, kernel) == pytest.approx(-1j * m0 * s0 * t, rel=1e-12)


def test_phi_oscillatory_kernel_second_order():
    # single mode (omega, g=1): M(tau) = exp(-i omega tau), sbar == 1
    omega, t_end = 1.7, 4.0

    def exact(t):
        re = quad(lambda tau: np.cos(-omega * (t - tau)), 0, t, limit=200)[0]
        im = quad(lambda tau: np.sin(-omega * (t - tau)), 0, t, limit=200)[0]
        return -1j * (re + 1j * im)

    closed = (np.exp(-1j * omega * t_end) - 1.0) / omega
    assert exact(t_end) == pytest.approx(closed, rel=1e-9)

    bath = DiscretizedBath(omegas=[omega], couplings=[1.0], weights=[1.0])
    errors = []
    for dt in (0.04, 0.02):
        kernel = tabulate_kernel(bath, dt, t_end)
        steps = int(round(t_end / dt))
        hist = np.ones(steps + 1, dtype=complex)
        errors.append(abs(phi(t_end, hist, kernel) - closed))
    assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.2)  # O(dt^2)


def test_phi_requires_grid_time_and_history_coverage():
    kernel = MemoryKernelSeries(dt=0.1, values=np.ones(11, dtype=complex))
    with pytest.raises(ValueError):
        phi(0.55, np.ones(11, dtype=complex), kernel)
    with pytest.raises(ValueError):
        phi(0.5, np.ones(3, dtype=complex), kernel)


# ---------------------------------------------------------------- apply_H_Q


def _dense_hq(basis, model, bath, t, kappa, sbar_now):
    """Dense joint H_Q via Kronecker products (fock index slower)."""
    ds = model.dimension
    b = np.zeros((basis.dim, basis.dim), dtype=complex)
    for mode in range(1, basis.num_modes + 1):
        b += bath.couplings[mode - 1] * annihilation_matrix(basis, mode).toarray()
    bd = b.conj().T
    eye_f = np.eye(basis.dim)
    eye_s = np.eye(ds)
    s = model.s_op
    dense = np.kron(eye_f, model.hamiltonian(t) + kappa * s)
    dense += np.kron(bd, s) + np.kron(b, s.conj().T)
    dense -= np.conj(sbar_now) * np.kron(b, eye_s)
    dense += np.kron(np.diag(bath_energy_diag(basis, bath.omegas)), eye_s)
    return dense


def test_apply_hq_matches_dense_construction(rng):
    from nmtraj.noise_source import xi

    model = spin_boson(0.8, drive_amplitude=0.05, drive_frequency=1.3)
    for num_modes, cutoff in [(2, 2), (3, 2)]:
        bath = discretize_semicircle_chain(1.0, 0.07, num_modes)
        basis = enumerate_basis(num_modes, cutoff)
        sample = sample_noise(9, 0, num_modes)
        state = random_joint_state(basis, 2, rng)
        t, sbar_now, phi_now = 0.9, 0.3 - 0.1j, 0.05 + 0.2j
        kappa = xi(t, sample, bath) + np.conj(phi_now)
        dense = _dense_hq(basis, model, bath, t, kappa, sbar_now)
        result = apply_H_Q(state, t, sample, sbar_now, phi_now, model, bath)
        assert np.allclose(result.amplitudes, dense @ state.amplitudes, atol=1e-13)


def test_apply_hq_coupling_blocks_are_mutual_adjoints():
    model = spin_boson(1.0)
    bath = discretize_semicircle_chain(1.0, 0.07, 3)
    basis = enumerate_basis(3, 2)
    b = np.zeros((basis.dim, basis.dim), dtype=complex)
    for mode in range(1, 4):
        b += bath.couplings[mode - 1] * annihilation_matrix(basis, mode).toarray()
    emission = np.kron(b.conj().T, model.s_op)  # s ⊗ b†
    absorption = np.kron(b, model.s_op.conj().T)  # s† ⊗ b
    assert np.allclose(emission, absorption.conj().T, atol=1e-15)


def test_apply_hq_linearity(rng):
    model = spin_boson(1.0, 0.1, 1.0)
    bath = discretize_semicircle_chain(1.0, 0.05, 2)
    basis = enumerate_basis(2, 2)
    sample = sample_noise(3, 1, 2)
    a = random_joint_state(basis, 2, rng)
    b = random_joint_state(basis, 2, rng)
    alpha, beta = 0.4 + 0.3j, -0.9j
    mixed = JointState(basis, 2, alpha * a.amplitudes + beta * b.amplitudes)
    args = (0.3, sample, 0.2 + 0.1j, -0.4j, model, bath)
    combined = apply_H_Q(mixed, *args).amplitudes
    separate = alpha * apply_H_Q(a, *args).amplitudes + beta * apply_H_Q(b, *args).amplitudes
    assert np.allclose(combined, separate, atol=1e-13)


def test_apply_hq_on_bath_vacuum_ignores_annihilation_shift(rng):
    # b annihilates the bath vacuum, so the -conj(sbar) b shift cannot act
    model = spin_boson(1.0, 0.1, 1.0)
    bath = discretize_semicircle_chain(1.0, 0.05, 3)
    basis = enumerate_basis(3, 2)
    sample = NoiseSample.zeros(3)
    psi = JointState.from_system_state(basis, [0.3, np.sqrt(1 - 0.09)])
    one = apply_H_Q(psi, 0.0, sample, 0.77 - 0.2j, 0.0, model, bath)
    two = apply_H_Q(psi, 0.0, sample, 0.0, 0.0, model, bath)
    assert np.allclose(one.amplitudes, two.amplitudes)


def test_apply_hq_decoupled_limit_is_free_hamiltonian(rng):
    model = spin_boson(1.0, 0.1, 1.0)
    bath = DiscretizedBath(omegas=[1.0, 2.0], couplings=[0.0, 0.0], weights=[1.0, 1.0])
    basis = enumerate_basis(2, 1)
    state = random_joint_state(basis, 2, rng)
    out = apply_H_Q(state, 0.4, NoiseSample.zeros(2), 0.1, 0.3j, model, bath)
    y = state.as_matrix()
    expected = y @ model.hamiltonian(0.4).T + bath_energy_diag(basis, bath.omegas)[:, None] * y
    assert np.allclose(out.as_matrix(), expected, atol=1e-14)


# ---------------------------------------------------------------- stepping


def _jc_setup():
    eps, g = 1.0, 0.1
    bath = DiscretizedBath(omegas=[eps], couplings=[g], weights=[1.0])
    model = spin_boson(eps)
    return model, bath, g


def test_step_norm_preservation_on_hermitian_flow():
    # zero noise and coupling kept: H_Q is Hermitian along the z=0 JC flow
    model, bath, _ = _jc_setup()
    drifts = []
    for dt in (0.4, 0.2):
        cfg = PropagatorConfig(dt=dt, t_max=dt, truncation=1)
        prop = TrajectoryPropagator(NoiseSample.zeros(1), cfg, model, bath, [0, 1])
        prop.step()
        drifts.append(abs(prop.state.norm2() - 1.0))
    assert drifts[0] < 1e-4
    assert drifts[0] / drifts[1] > 2**5  # at least one-step order dt^5


def test_step_halving_reduces_error_sixteenfold():
    bath = DiscretizedBath(omegas=[1.0], couplings=[0.0], weights=[1.0])
    model = spin_boson(1.0, drive_amplitude=0.1, drive_frequency=1.0)

    def endpoint(dt):
        cfg = PropagatorConfig(dt=dt, t_max=8.0, truncation=0)
        rec = run_trajectory(NoiseSample.zeros(1), cfg, model, bath, [0, 1])
        return rec.conditional_rho[-1]

    reference = endpoint(8.0 / 1024)
    coarse = np.max(np.abs(endpoint(8.0 / 64) - reference))
    fine = np.max(np.abs(endpoint(8.0 / 128) - reference))
    assert coarse / fine == pytest.approx(16.0, rel=0.3)


def test_jaynes_cummings_rabi_oscillation_both_variants():
    model, bath, g = _jc_setup()
    dt = 1e-3 * np.pi / g
    cfg = PropagatorConfig(dt=dt, t_max=np.pi / g, truncation=1)
    exact = None
    for runner in (run_trajectory, run_linear_trajectory):
        rec = runner(NoiseSample.zeros(1), cfg, model, bath, [0, 1])
        occ = rec.vacuum_weight * rec.conditional_rho[:, 1, 1].real
        exact = np.cos(g * rec.times) ** 2
        assert np.max(np.abs(occ - exact)) < 1e-6


def test_zero_coupling_conditional_matches_closed_system():
    bath = DiscretizedBath(omegas=[1.0, 1.5], couplings=[0.0, 0.0], weights=[1.0, 1.0])
    model = spin_boson(1.0, drive_amplitude=0.1, drive_frequency=1.0)
    psi0 = np.array([0.0, 1.0])
    cfg = PropagatorConfig(dt=0.02, t_max=10.0, truncation=1, record_stride=25)
    rec = run_trajectory(sample_noise(4, 2, 2), cfg, model, bath, psi0)
    reference = closed_qubit_rho(model, psi0, rec.times)
    assert np.max(np.abs(rec.conditional_rho - reference)) < 1e-7
    assert np.allclose(rec.husimi_weight, 1.0, atol=1e-10)


def test_idle_excited_qubit_stays_excited():
    bath = DiscretizedBath(omegas=[1.0], couplings=[0.0], weights=[1.0])
    model = spin_boson(1.0)
    cfg = PropagatorConfig(dt=0.05, t_max=5.0, truncation=1)
    rec = run_trajectory(NoiseSample.zeros(1), cfg, model, bath, [0, 1])
    assert np.allclose(rec.conditional_rho[:, 1, 1].real, 1.0, atol=1e-12)


def test_linear_equals_nonlinear_at_zero_coupling():
    bath = DiscretizedBath(omegas=[1.0], couplings=[0.0], weights=[1.0])
    model = spin_boson(1.0, drive_amplitude=0.1, drive_frequency=1.0)
    cfg = PropagatorConfig(dt=0.05, t_max=5.0, truncation=1)
    sample = sample_noise(8, 0, 1)
    a = run_trajectory(sample, cfg, model, bath, [0, 1])
    b = run_linear_trajectory(sample, cfg, model, bath, [0, 1])
    assert np.allclose(a.conditional_rho, b.conditional_rho, atol=1e-13)
    assert np.allclose(a.vacuum_weight, b.vacuum_weight, atol=1e-13)


def test_linear_weight_starts_at_unity():
    model = spin_boson(1.0, 0.1, 1.0)
    bath = discretize_semicircle_chain(1.0, 0.05, 4)
    cfg = PropagatorConfig(dt=0.1, t_max=1.0, truncation=2, method="linear_dressed")
    rec = run_linear_trajectory(sample_noise(3, 5, 4), cfg, model, bath, [0, 1])
    assert rec.vacuum_weight[0] == pytest.approx(1.0, abs=1e-14)


def test_recorded_conditionals_are_rank_one_hermitian_unit_trace():
    model = spin_boson(1.0, 0.1, 1.0)
    bath = discretize_semicircle_chain(1.0, 0.05, 4)
    cfg = PropagatorConfig(dt=0.05, t_max=8.0, truncation=2, record_stride=8)
    rec = run_trajectory(sample_noise(17, 11, 4), cfg, model, bath, [0, 1])
    assert not rec.degenerate
    for rho in rec.conditional_rho:
        assert abs(np.trace(rho) - 1.0) < 1e-10
        assert np.allclose(rho, rho.conj().T, atol=1e-12)
        eigs = np.linalg.eigvalsh(rho)
        assert eigs[0] > -1e-12 and eigs[-1] == pytest.approx(1.0, abs=1e-10)


def test_trajectory_analyticity_in_the_noise():
    # the dressed state depends on z but not conj(z): the directional
    # derivative of <0|Psi(t)> along i*e_k equals i times the one along e_k
    from nmtraj.fock_space import vacuum_projection

    model = spin_boson(1.0, 0.1, 1.0)
    bath = discretize_semicircle_chain(1.0, 0.05, 3)
    cfg = PropagatorConfig(dt=0.05, t_max=4.0, truncation=2, method="linear_dressed")
    base = sample_noise(21, 0, 3)
    delta = 1e-6

    def final_vacuum(z):
        sample = NoiseSample(z=z, trajectory_id=-1, master_seed=0)
        prop = TrajectoryPropagator(sample, cfg, model, bath, [0.6, 0.8])
        for _ in range(cfg.num_steps):
            prop.step()
        return vacuum_projection(prop.state)

    f0 = final_vacuum(base.z)
    for k in range(3):
        bump = np.zeros(3, dtype=complex)
        bump[k] = delta
        d_real = (final_vacuum(base.z + bump) - f0) / delta
        d_imag = (final_vacuum(base.z + 1j * bump) - f0) / delta
        assert np.allclose(d_imag, 1j * d_real, atol=20 * delta)


def test_evolved_noise_matches_quadrature_of_history():
    model = spin_boson(1.0, 0.1, 1.0)
    bath = discretize_semicircle_chain(1.0, 0.05, 3)
    cfg = PropagatorConfig(
        dt=0.05, t_max=6.0, truncation=1, record_stride=20, record_evolved_noise=True
    )
    sample = sample_noise(5, 3, 3)
    rec = run_trajectory(sample, cfg, model, bath, [0, 1])
    grid = cfg.dt * np.arange(rec.sbar_history.size)
    for j, t in enumerate(rec.times):
        upto = grid <= t + 1e-12
        integrand = np.exp(-1j * np.outer(bath.omegas, grid[upto])) * np.conj(
            rec.sbar_history[upto]
        )
        expected = sample.z + 1j * bath.couplings * np.trapz(integrand, grid[upto], axis=1)
        assert np.allclose(rec.evolved_noise[j], expected, atol=1e-10)


def test_degenerate_trajectory_is_flagged_and_propagator_raises():
    model, bath, g = _jc_setup()
    cfg = PropagatorConfig(dt=0.05, t_max=20.0, truncation=1, projection_floor=0.9)
    rec = run_trajectory(NoiseSample.zeros(1), cfg, model, bath, [0, 1])
    assert rec.degenerate
    assert rec.degenerate_step is not None and rec.degenerate_step > 0

    prop = TrajectoryPropagator(NoiseSample.zeros(1), cfg, model, bath, [0, 1])
    with pytest.raises(DegenerateProjection):
        for _ in range(cfg.num_steps):
            prop.step()


@pytest.mark.slow
def test_spin_boson_long_single_trajectory_keeps_vacuum_weight():
    # one trajectory at the full-size bath: the vacuum fraction stays workable
    model = spin_boson(1.0, 0.1, 1.0)
    bath = discretize_semicircle_chain(1.0, 0.05, 20)
    cfg = PropagatorConfig(dt=0.05, t_max=180.0, truncation=2, record_stride=40)
    rec = run_trajectory(sample_noise(1, 0, 20), cfg, model, bath, [0, 1])
    assert not rec.degenerate
    fraction = rec.vacuum_weight / rec.husimi_weight
    assert fraction.min() > 1e-12
