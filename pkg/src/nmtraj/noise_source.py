"""Complex Gaussian bath measurement outcomes and the classical driving noise.

Each trajectory owns one sample z in C^N with moments
E[z_i] = 0, E[z_i z_k] = 0, E[z_i conj(z_k)] = delta_ik.  The classical
noise seen by the system is xi(t) = sum_i conj(g_i) z_i exp(+i omega_i t),
whose ensemble autocorrelation reproduces the bath memory kernel.

Per-trajectory streams are derived from (master_seed, trajectory_id) with
numpy's splittable SeedSequence, so an ensemble is reproducible regardless
of execution order or worker count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["NoiseSample", "sample_noise", "sample_noise_block", "xi"]


@dataclass(frozen=True)
class NoiseSample:
    """One bath measurement outcome z in C^N plus its seed lineage."""

    z: np.ndarray
    trajectory_id: int
    master_seed: int

    def __post_init__(self):
        object.__setattr__(self, "z", np.atleast_1d(np.asarray(self.z, dtype=np.complex128)))

    @property
    def seed_lineage(self) -> tuple:
        """(master_seed, trajectory_id) pair the sample was derived from."""
        return (self.master_seed, self.trajectory_id)

    @classmethod
    def zeros(cls, num_modes: int) -> "NoiseSample":
        """Deterministic z = 0 sample (useful for noise-free checks)."""
        return cls(z=np.zeros(num_modes, dtype=np.complex128), trajectory_id=-1, master_seed=0)


def _rng_for(master_seed: int, trajectory_id: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(trajectory_id,))
    return np.random.default_rng(seq)


def sample_noise(master_seed: int, trajectory_id: int, num_modes: int) -> NoiseSample:
    """Draw the complex Gaussian sample for one trajectory.

    z_i = (x_i + i y_i) / sqrt(2) with x, y standard normal, which gives
    E[|z_i|^2] = 1 and E[z_i^2] = 0.  Deterministic in
    (master_seed, trajectory_id).
    """
    if num_modes < 1:
        raise ValueError("num_modes must be >= 1")
    rng = _rng_for(master_seed, trajectory_id)
    xy = rng.standard_normal(2 * num_modes)
    z = (xy[:num_modes] + 1j * xy[num_modes:]) / np.sqrt(2.0)
    return NoiseSample(z=z, trajectory_id=trajectory_id, master_seed=master_seed)


def sample_noise_block(master_seed: int, trajectory_ids, num_modes: int) -> np.ndarray:
    """Stacked samples for many trajectory ids, one row per id.

    Row j is bit-identical to ``sample_noise(master_seed, ids[j], N).z``.
    """
    ids = list(trajectory_ids)
    block = np.empty((len(ids), num_modes), dtype=np.complex128)
    for row, tid in enumerate(ids):
        block[row] = sample_noise(master_seed, int(tid), num_modes).z
    return block


def xi(t, sample: NoiseSample, bath):
    """Classical driving noise xi(t) = sum_i conj(g_i) z_i exp(+i omega_i t).

    ``t`` may be a scalar or an array; the result has the same shape.
    """
    if sample.z.size != bath.num_modes:
        raise ValueError(
            f"sample has {sample.z.size} components but the bath has {bath.num_modes} modes"
        )
    t_arr = np.asarray(t, dtype=np.float64)
    coeff = np.conj(bath.couplings) * sample.z
    phases = np.exp(1j * np.multiply.outer(t_arr, bath.omegas))
    result = phases @ coeff
    if t_arr.ndim == 0:
        return complex(result)
    return result
