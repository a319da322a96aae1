import numpy as np
import pytest

from nmtraj.bath_model import (
    ContinuumBath,
    DiscretizedBath,
    MemoryKernelSeries,
    SystemModel,
    discretize_semicircle_chain,
    discretize_uniform,
    memory_kernel,
    semicircle_bath,
    spin_boson,
    tabulate_kernel,
)

BAND_POWER = lambda h: 16.0 * h**3 / (3.0 * np.pi)  # integral of |c|^2 over the band


def test_semicircle_grid_matches_closed_form():
    bath = discretize_semicircle_chain(1.0, 0.05, 20)
    assert bath.num_modes == 20
    assert bath.omegas[0] == pytest.approx(1.0 + 0.1 * np.cos(np.pi / 21))
    assert np.all(bath.omegas >= 1.0 - 0.1) and np.all(bath.omegas <= 1.0 + 0.1)
    i = np.arange(1, 21)
    c_expected = 0.05 * np.sqrt(2 / np.pi) * np.sin(i * np.pi / 21)
    assert np.allclose(bath.couplings / np.sqrt(bath.weights), c_expected)


def test_semicircle_single_mode_sits_at_band_center():
    bath = discretize_semicircle_chain(1.0, 0.05, 1)
    assert bath.omegas[0] == pytest.approx(1.0)


def test_coupling_power_approaches_band_integral():
    target = BAND_POWER(0.05)
    assert target == pytest.approx(2.122e-4, rel=1e-3)
    bath = discretize_semicircle_chain(1.0, 0.05, 20)
    assert abs(bath.total_coupling_power() - target) / target < 0.05


def test_coupling_power_error_decreases_monotonically():
    target = BAND_POWER(0.05)
    errors = [
        abs(discretize_semicircle_chain(1.0, 0.05, n).total_coupling_power() - target)
        for n in (10, 20, 40, 80)
    ]
    assert all(a > b for a, b in zip(errors, errors[1:]))


def test_semicircle_rejects_bad_arguments():
    with pytest.raises(ValueError):
        discretize_semicircle_chain(1.0, -0.1, 10)
    with pytest.raises(ValueError):
        discretize_semicircle_chain(1.0, 0.05, 0)
    with pytest.raises(ValueError):
        discretize_semicircle_chain(1.0, 0.05, 10, weight_rule="simpson")


def test_kernel_at_zero_is_real_total_power():
    bath = discretize_semicircle_chain(1.0, 0.05, 20)
    m0 = memory_kernel(bath, 0.0)
    assert abs(m0.imag) < 1e-14 * abs(m0)
    assert m0.real == pytest.approx(bath.total_coupling_power(), rel=1e-14)


def test_kernel_single_mode_closed_form():
    bath = DiscretizedBath(omegas=[2.0], couplings=[0.3], weights=[1.0])
    for t in (0.0, 0.7, -3.1):
        assert memory_kernel(bath, t) == pytest.approx(0.09 * np.exp(-2.0j * t))


def test_kernel_conjugate_symmetry(rng):
    bath = discretize_semicircle_chain(1.0, 0.05, 15)
    times = rng.uniform(-50, 50, size=100)
    assert np.allclose(
        memory_kernel(bath, -times), np.conj(memory_kernel(bath, times)), atol=1e-16
    )


def test_tabulate_kernel_matches_pointwise():
    bath = discretize_semicircle_chain(1.0, 0.05, 12)
    series = tabulate_kernel(bath, dt=0.1, t_max=5.0)
    assert series.values.size == 51
    assert np.array_equal(series.values, memory_kernel(bath, series.times))
    single = tabulate_kernel(bath, dt=0.1, t_max=0.0)
    assert single.values.size == 1
    assert single.values[0] == memory_kernel(bath, 0.0)


def _recurrence_time(num_modes):
    bath = discretize_semicircle_chain(1.0, 0.05, num_modes)
    series = tabulate_kernel(bath, dt=0.5, t_max=6000.0)
    mag = np.abs(series.values) / abs(series.values[0])
    below = np.nonzero(mag < 0.1)[0]
    first_quiet = below[0]
    revived = np.nonzero(mag[first_quiet:] > 0.5)[0]
    return series.times[first_quiet + revived[0]]


def test_kernel_recurrence_time_grows_with_mode_count():
    t10 = _recurrence_time(10)
    t40 = _recurrence_time(40)
    assert t40 > 2.0 * t10


def test_continuum_semicircle_vanishes_outside_band():
    cont = semicircle_bath(1.0, 0.05)
    assert cont(0.5) == 0.0
    assert cont(2.0) == 0.0
    assert abs(cont(1.0)) == pytest.approx(0.05 * np.sqrt(2 / np.pi))


def test_tabulated_bath_roundtrip_and_uniform_discretization():
    om = np.linspace(0.5, 1.5, 11)
    cv = 0.1 * np.exp(-((om - 1.0) ** 2) / 0.02)
    cont = ContinuumBath.from_table(om, cv)
    assert abs(cont(1.0)) == pytest.approx(0.1, rel=1e-12)
    bath = discretize_uniform(cont, 32)
    assert bath.num_modes == 32
    integral = np.trapz(cv**2, om)
    assert bath.total_coupling_power() == pytest.approx(integral, rel=0.05)


def test_discretized_bath_validates_lengths():
    with pytest.raises(ValueError):
        DiscretizedBath(omegas=[1.0, 2.0], couplings=[0.1], weights=[1.0, 1.0])


def test_memory_kernel_series_validates_dt():
    with pytest.raises(ValueError):
        MemoryKernelSeries(dt=0.0, values=[1.0])


def test_system_model_hermiticity_guard():
    h0 = np.array([[0.0, 0.0], [0.0, 1.0]])
    s = np.array([[0.0, 1.0], [0.0, 0.0]])
    SystemModel(h0=h0, s_op=s)  # fine
    with pytest.raises(ValueError):
        SystemModel(h0=np.array([[0.0, 1.0], [0.0, 0.0]]), s_op=s)


def test_spin_boson_model_structure():
    model = spin_boson(1.0, drive_amplitude=0.1, drive_frequency=1.0)
    assert model.dimension == 2
    h = model.hamiltonian(0.0)
    assert h[1, 1] == pytest.approx(1.0)
    assert h[1, 0] == pytest.approx(0.1)  # f(0) = 0.1 on sigma_+
    assert np.allclose(model.hamiltonian(np.pi / 2), np.diag([0.0, 1.0]))
    assert np.allclose(model.s_op, [[0.0, 1.0], [0.0, 0.0]])
