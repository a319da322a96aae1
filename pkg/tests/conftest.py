import numpy as np
import pytest

from nmtraj.fock_space import JointState


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_joint_state(basis, system_dim, rng, time=0.0):
    """Normalized random complex joint state on the given basis."""
    n = basis.dim * system_dim
    amps = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    amps /= np.linalg.norm(amps)
    return JointState(basis=basis, system_dim=system_dim, amplitudes=amps, time=time)


def overlap(a, b):
    """<a|b> for two joint states."""
    return complex(np.vdot(a.amplitudes, b.amplitudes))
