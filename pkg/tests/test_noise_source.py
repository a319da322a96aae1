import numpy as np
import pytest

from nmtraj.bath_model import DiscretizedBath, discretize_semicircle_chain, memory_kernel
from nmtraj.noise_source import NoiseSample, sample_noise, sample_noise_block, xi


def test_sampling_is_deterministic_in_seed_and_id():
    a = sample_noise(42, 7, 5)
    b = sample_noise(42, 7, 5)
    assert np.array_equal(a.z, b.z)
    assert a.seed_lineage == (42, 7)
    c = sample_noise(42, 8, 5)
    assert not np.array_equal(a.z, c.z)
    d = sample_noise(43, 7, 5)
    assert not np.array_equal(a.z, d.z)


def test_block_matches_individual_samples():
    block = sample_noise_block(11, range(4), 3)
    for tid in range(4):
        assert np.array_equal(block[tid], sample_noise(11, tid, 3).z)


def test_sample_rejects_empty():
    with pytest.raises(ValueError):
        sample_noise(0, 0, 0)


def test_moments_of_large_sample():
    m = 10**5
    block = sample_noise_block(2021, range(m), 4)
    bound_mean = 4.0 / np.sqrt(m)
    bound_sq = 5.0 / np.sqrt(m)
    for i in range(4):
        assert abs(block[:, i].mean()) < bound_mean
        assert abs((np.abs(block[:, i]) ** 2).mean() - 1.0) < bound_sq
        # analyticity moment E[z^2] = 0
        assert abs((block[:, i] ** 2).mean()) < bound_sq


def test_streams_for_distinct_ids_are_uncorrelated():
    m = 10**5
    block = sample_noise_block(77, range(m + 1), 2)
    bound = 5.0 / np.sqrt(m)
    for i in range(2):
        cov = np.mean(block[:-1, i] * np.conj(block[1:, i]))
        assert abs(cov) < bound


def test_xi_trivial_cases():
    bath = DiscretizedBath(omegas=[2.0], couplings=[0.3 + 0.1j], weights=[1.0])
    zero = NoiseSample.zeros(1)
    assert xi(0.7, zero, bath) == 0.0

    one = NoiseSample(z=np.array([1.0 + 0j]), trajectory_id=0, master_seed=0)
    for t in (0.0, 1.3):
        assert xi(t, one, bath) == pytest.approx((0.3 - 0.1j) * np.exp(2.0j * t))


def test_xi_is_linear_in_z():
    bath = discretize_semicircle_chain(1.0, 0.05, 6)
    z1 = sample_noise(5, 0, 6)
    z2 = sample_noise(5, 1, 6)
    mix = NoiseSample(z=0.3 * z1.z - 1.7j * z2.z, trajectory_id=-1, master_seed=5)
    t = np.linspace(0.0, 10.0, 13)
    assert np.allclose(xi(t, mix, bath), 0.3 * xi(t, z1, bath) - 1.7j * xi(t, z2, bath))


def test_xi_dimension_mismatch():
    bath = discretize_semicircle_chain(1.0, 0.05, 6)
    with pytest.raises(ValueError):
        xi(0.0, NoiseSample.zeros(4), bath)


def test_noise_autocorrelation_reproduces_memory_kernel():
    # E[xi(t) conj(xi(t'))] = M(t' - t) for any discretized bath
    bath = discretize_semicircle_chain(1.0, 0.05, 10)
    m = 20000
    block = sample_noise_block(909, range(m), 10)
    coeff = block * np.conj(bath.couplings)[None, :]
    pairs = [(0.0, 0.0), (1.0, 4.0), (12.0, 3.5), (30.0, 31.0)]
    bound = 5.0 / np.sqrt(m)
    for t, tp in pairs:
        xi_t = coeff @ np.exp(1j * bath.omegas * t)
        xi_tp = coeff @ np.exp(1j * bath.omegas * tp)
        empirical = np.mean(xi_t * np.conj(xi_tp))
        assert abs(empirical - memory_kernel(bath, tp - t)) < bound
