"""Reference solver: full Schrödinger propagation in the truncated Fock space.

The joint Hamiltonian H = H_s(t) + s b† + s† b + H_b is applied without
ever forming the joint matrix; only the Fock-side coupling operators are
kept sparse.  The wavefunction is integrated with classical RK4 and the
norm is monitored: if it drifts beyond the configured tolerance the whole
run is rejected and restarted with half the step, so the returned series
is always on the requested record grid.

The excitation cutoff of this solver is independent of the trajectory
truncation; convergence in the cutoff is established by comparing
consecutive cutoffs (see :func:`converged_cutoff`).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bath_model import DiscretizedBath, SystemModel
from .fock_space import (
    JointState,
    OccupationBasis,
    bath_energy_diag,
    coupling_matrix,
    enumerate_basis,
)

__all__ = ["NormDrift", "EDConfig", "EDResult", "apply_H_total", "propagate_ed",
           "converged_cutoff"]


class NormDrift(RuntimeError):
    """The integrator could not hold the norm within tolerance."""


@dataclass
class EDConfig:
    """Settings of one reference propagation."""

    excitation_cutoff: int
    dt: float
    t_max: float
    record_stride: int = 1
    norm_tolerance: float = 1e-8
    max_step_halvings: int = 6
    max_steps: Optional[int] = None
    checkpoint_path: Optional[str] = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.excitation_cutoff < 0:
            raise ValueError("excitation_cutoff must be >= 0")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_max < 0:
            raise ValueError("t_max must be non-negative")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")


@dataclass
class EDResult:
    """Occupation and reduced density matrix series of a reference run."""

    times: np.ndarray
    occupation: np.ndarray
    rho: np.ndarray
    norm_drift: float
    dt_used: float
    steps_done: int
    completed: bool


class _EDOperators:
    def __init__(self, model: SystemModel, bath: DiscretizedBath, basis: OccupationBasis):
        if basis.num_modes != bath.num_modes:
            raise ValueError("basis and bath mode counts differ")
        self.model = model
        self.B = coupling_matrix(basis, bath.couplings)
        self.Bd = self.B.conj().T.tocsr()
        self.hb = bath_energy_diag(basis, bath.omegas)
        self.sT = np.ascontiguousarray(model.s_op.T)
        self.sdT = np.ascontiguousarray(model.s_op.conj())

    def apply(self, y: np.ndarray, t: float) -> np.ndarray:
        """H y for amplitudes y of shape (F, ds)."""
        out = y @ self.model.hamiltonian(t).T
        out += self.Bd @ (y @ self.sT)
        out += self.B @ (y @ self.sdT)
        out += self.hb[:, None] * y
        return out


def apply_H_total(state: JointState, t: float, model: SystemModel,
                  bath: DiscretizedBath) -> JointState:
    """Apply the full Hamiltonian H_s(t) + s b† + s† b + H_b to a joint state.

    Creation overflow past the basis cutoff is projected out symmetrically
    in the two coupling terms, so the truncated operator is exactly
    Hermitian.
    """
    ops = _EDOperators(model, bath, state.basis)
    out = ops.apply(state.as_matrix(), t)
    return JointState(state.basis, state.system_dim, out.reshape(-1), state.time)


def _fingerprint(psi0, config: EDConfig, model: SystemModel, bath: DiscretizedBath) -> str:
    parts = [
        f"K={config.excitation_cutoff}", f"dt={config.dt!r}", f"tmax={config.t_max!r}",
        f"stride={config.record_stride}", f"N={bath.num_modes}",
        f"om={np.asarray(bath.omegas).tobytes().hex()}",
        f"g={np.asarray(bath.couplings).tobytes().hex()}",
        f"psi0={np.asarray(psi0, dtype=np.complex128).tobytes().hex()}",
        f"h0={model.h0.tobytes().hex()}",
        f"drive={model.drive_amplitude!r}/{model.drive_frequency!r}",
    ]
    return "|".join(parts)


def _record_steps(steps: int, stride: int) -> np.ndarray:
    recorded = list(range(0, steps + 1, stride))
    if recorded[-1] != steps:
        recorded.append(steps)
    return np.asarray(recorded, dtype=np.int64)


def propagate_ed(psi0, config: EDConfig, model: SystemModel, bath: DiscretizedBath,
                 basis: Optional[OccupationBasis] = None) -> EDResult:
    """Propagate |0>_b ⊗ |psi0> under the full truncated Hamiltonian.

    Parameters
    ----------
    psi0 : array
        Normalized system state (norm checked to 1e-8).
    config : EDConfig
        Cutoff, step, horizon, and norm-guard settings.  ``max_steps``
        stops early after so many steps (partial result, ``completed``
        False); ``checkpoint_path`` enables periodic state saves that a
        rerun with the same configuration resumes from.

    Raises
    ------
    NormDrift
        If the norm drift exceeds ``norm_tolerance`` even after
        ``max_step_halvings`` step halvings.
    """
    psi0 = np.asarray(psi0, dtype=np.complex128)
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-8:
        raise ValueError("psi0 must be normalized")
    if basis is None:
        basis = enumerate_basis(bath.num_modes, config.excitation_cutoff)
    ops = _EDOperators(model, bath, basis)
    ds = psi0.size
    fingerprint = _fingerprint(psi0, config, model, bath)

    for halving in range(config.max_step_halvings + 1):
        factor = 2 ** halving
        dt = config.dt / factor
        steps = int(round(config.t_max / config.dt)) * factor
        stride = config.record_stride * factor
        rec = _record_steps(steps, stride)
        times = rec * dt
        rho = np.zeros((rec.size, ds, ds), dtype=np.complex128)
        occupation = np.zeros(rec.size)
        occ_w = np.arange(ds, dtype=np.float64)

        y = np.zeros((basis.dim, ds), dtype=np.complex128)
        y[0, :] = psi0
        k_start, pos, drift = 0, 0, 0.0

        if config.checkpoint_path and os.path.exists(config.checkpoint_path):
            saved = np.load(config.checkpoint_path, allow_pickle=False)
            if str(saved["fingerprint"]) != fingerprint:
                raise ValueError(
                    f"checkpoint {config.checkpoint_path} belongs to a different run"
                )
            if int(saved["halving"]) == halving:
                y = saved["y"].reshape(basis.dim, ds)
                k_start = int(saved["k"])
                pos = int(saved["pos"])
                drift = float(saved["drift"])
                rho[:pos] = saved["rho"][:pos]
                occupation[:pos] = saved["occupation"][:pos]
            elif int(saved["halving"]) > halving:
                continue  # this attempt already failed before the checkpoint

        def record(y, pos):
            r = y.T @ y.conj()
            rho[pos] = r
            occupation[pos] = np.dot(occ_w, np.diagonal(r).real)

        if k_start == 0 and pos == 0:
            record(y, pos)
            pos += 1

        rejected = False
        k = k_start
        hard_stop = steps if config.max_steps is None else min(steps, k_start + config.max_steps)
        while k < hard_stop:
            t = k * dt
            k1 = -1j * ops.apply(y, t)
            k2 = -1j * ops.apply(y + (dt / 2) * k1, t + dt / 2)
            k3 = -1j * ops.apply(y + (dt / 2) * k2, t + dt / 2)
            k4 = -1j * ops.apply(y + dt * k3, t + dt)
            y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            k += 1
            drift = max(drift, abs(float(np.vdot(y, y).real) - 1.0))
            if drift > config.norm_tolerance:
                rejected = True
                break
            if pos < rec.size and k == rec[pos]:
                record(y, pos)
                pos += 1
            if (
                config.checkpoint_path
                and config.checkpoint_every > 0
                and k % config.checkpoint_every == 0
            ):
                _save_checkpoint(config.checkpoint_path, fingerprint, halving, k, pos,
                                 y, drift, rho, occupation)

        if rejected:
            if config.checkpoint_path and os.path.exists(config.checkpoint_path):
                os.remove(config.checkpoint_path)
            continue
        completed = k == steps
        if not completed and config.checkpoint_path:
            _save_checkpoint(config.checkpoint_path, fingerprint, halving, k, pos,
                             y, drift, rho, occupation)
        return EDResult(
            times=times[:pos], occupation=occupation[:pos], rho=rho[:pos],
            norm_drift=drift, dt_used=dt, steps_done=k, completed=completed,
        )

    raise NormDrift(
        f"norm drift above {config.norm_tolerance:.1e} even at dt = "
        f"{config.dt / 2 ** config.max_step_halvings:.3e}"
    )


def _save_checkpoint(path, fingerprint, halving, k, pos, y, drift, rho, occupation):
    tmp = path + ".tmp.npz"
    np.savez(
        tmp, fingerprint=fingerprint, halving=halving, k=k, pos=pos, y=y.reshape(-1),
        drift=drift, rho=rho, occupation=occupation,
    )
    os.replace(tmp, path)


def converged_cutoff(psi0, model: SystemModel, bath: DiscretizedBath, dt: float,
                     t_max: float, tol: float = 1e-3, k_min: int = 1, k_max: int = 8,
                     record_stride: int = 1):
    """Smallest cutoff K whose occupation curve differs from K-1 by < tol.

    Returns ``(K, diffs, result)`` where ``diffs`` maps each tested cutoff
    K to ``max_t |occ_K - occ_(K-1)|`` and ``result`` is the run at the
    returned cutoff.
    """
    prev = None
    diffs = {}
    for cutoff in range(max(k_min - 1, 0), k_max + 1):
        cfg = EDConfig(excitation_cutoff=cutoff, dt=dt, t_max=t_max,
                       record_stride=record_stride)
        current = propagate_ed(psi0, cfg, model, bath)
        if prev is not None and cutoff >= k_min:
            diffs[cutoff] = float(np.max(np.abs(current.occupation - prev.occupation)))
            if diffs[cutoff] < tol:
                return cutoff, diffs, current
        prev = current
    raise RuntimeError(
        f"occupation not converged to {tol} in the cutoff by K = {k_max}: {diffs}"
    )
