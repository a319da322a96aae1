"""Propagation of dressed quantum trajectories.

One trajectory evolves the joint state of the open system and its virtual
bath quanta in the truncated Fock space, for a fixed bath measurement
outcome z.  Two variants are implemented:

* nonlinear (self-consistent): the generator is

      H_Q(t) = H_s(t) + s * (xi(t) + conj(phi(t)) + b†)
               + (s† - conj(sbar(t))) * b + H_b

  where sbar(t) is the system-operator average in the vacuum-projected
  state and phi(t) = -i * int_0^t M(t - tau) sbar(tau) dtau is the retarded
  self-consistent field.  The conditional density matrix is the normalized
  vacuum-projected outer product.

* linear: the generator drops phi and the sbar shift,

      H_dress(t) = H_s(t) + s * (xi(t) + b†) + s† * b + H_b,

  and the estimator is the unnormalized vacuum-projected outer product
  (the Gaussian sampling of z carries the measurement weight).

Both generators are integrated with classical RK4.  sbar is re-evaluated
at every internal stage from the stage state; phi at stage times uses the
step-frozen sbar history, linearly extrapolated over the partial step, so
the history convolution stays O(steps^2) overall.

The propagator is vectorized over a batch of trajectories: amplitudes are
stored as an array of shape (fock_dim, batch, system_dim), which keeps
every inner operation a single BLAS or sparse call across the whole batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bath_model import DiscretizedBath, MemoryKernelSeries, SystemModel, memory_kernel
from .fock_space import (
    JointState,
    OccupationBasis,
    bath_energy_diag,
    coupling_matrix,
    enumerate_basis,
    vacuum_projection,
)
from .noise_source import NoiseSample, xi

__all__ = [
    "DegenerateProjection",
    "PropagatorConfig",
    "TrajectoryRecord",
    "sbar",
    "phi",
    "apply_H_Q",
    "TrajectoryPropagator",
    "run_trajectory",
    "run_linear_trajectory",
    "propagate_batch",
]

METHODS = ("nonlinear_dressed", "linear_dressed")


class DegenerateProjection(RuntimeError):
    """The vacuum block of the dressed state has negligible weight.

    The system-operator average sbar is then undefined and the trajectory
    must be flagged as degenerate.
    """


@dataclass
class PropagatorConfig:
    """Numerical settings of one trajectory propagation."""

    dt: float
    t_max: float
    truncation: int
    method: str = "nonlinear_dressed"
    projection_floor: float = 1e-12
    record_stride: int = 1
    record_evolved_noise: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_max < 0:
            raise ValueError("t_max must be non-negative")
        if self.truncation < 0:
            raise ValueError("truncation must be >= 0")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0.0 < self.projection_floor < 1.0:
            raise ValueError("projection_floor must lie in (0, 1)")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")

    @property
    def num_steps(self) -> int:
        return int(round(self.t_max / self.dt))


@dataclass
class TrajectoryRecord:
    """Time series produced by one trajectory.

    ``conditional_rho[k]`` is the trace-one conditional density matrix at
    ``times[k]``; ``vacuum_weight`` is the squared norm of the vacuum
    projection (so ``conditional_rho * vacuum_weight`` is the unnormalized
    estimator) and ``husimi_weight`` is the squared norm of the full dressed
    state.  ``sbar_history`` and ``phi_history`` live on the full step grid.
    """

    times: np.ndarray
    conditional_rho: np.ndarray
    sbar_history: np.ndarray
    phi_history: np.ndarray
    husimi_weight: np.ndarray
    vacuum_weight: np.ndarray
    evolved_noise: Optional[np.ndarray] = None
    degenerate: bool = False
    degenerate_step: Optional[int] = None


def sbar(state: JointState, s_op, projection_floor: float = 1e-12) -> complex:
    """Conditional system-operator average <v|s|v> / <v|v>, v = vacuum projection.

    Raises
    ------
    DegenerateProjection
        If the vacuum weight falls below ``projection_floor`` times the
        squared state norm.
    """
    v = vacuum_projection(state)
    den = float(np.vdot(v, v).real)
    total = state.norm2()
    if den < projection_floor * total or total == 0.0:
        raise DegenerateProjection(
            f"vacuum weight {den:.3e} below floor {projection_floor:.1e} * norm2 {total:.3e}"
        )
    s_op = np.asarray(s_op, dtype=np.complex128)
    return complex(np.vdot(v, s_op @ v) / den)


def phi(t: float, sbar_history, kernel: MemoryKernelSeries) -> complex:
    """Retarded field phi(t) = -i * int_0^t M(t - tau) sbar(tau) dtau.

    ``sbar_history`` must cover [0, t] on the kernel grid; the integral is
    the trapezoidal rule on that grid, so ``t`` has to be (numerically) a
    grid point.
    """
    hist = np.asarray(sbar_history, dtype=np.complex128)
    k = int(round(t / kernel.dt))
    if abs(k * kernel.dt - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"t = {t} is not on the kernel grid with dt = {kernel.dt}")
    if k >= hist.size:
        raise ValueError(f"sbar history covers {hist.size} points, need {k + 1}")
    if k >= kernel.values.size:
        raise ValueError(f"kernel table covers {kernel.values.size} points, need {k + 1}")
    if k == 0:
        return 0.0 + 0.0j
    seg = kernel.values[k::-1]  # M(t - tau_j) for j = 0..k
    acc = np.dot(seg, hist[: k + 1])
    acc -= 0.5 * (seg[0] * hist[0] + seg[k] * hist[k])
    return complex(-1j * kernel.dt * acc)


class _EngineSetup:
    """Precomputed operators shared by every trajectory of one run."""

    def __init__(self, model: SystemModel, bath: DiscretizedBath, basis: OccupationBasis,
                 config: PropagatorConfig):
        if basis.num_modes != bath.num_modes:
            raise ValueError(
                f"basis has {basis.num_modes} modes but the bath has {bath.num_modes}"
            )
        self.model = model
        self.bath = bath
        self.basis = basis
        self.config = config
        self.ds = model.dimension
        self.F = basis.dim
        self.B = coupling_matrix(basis, bath.couplings)
        self.Bd = self.B.conj().T.tocsr()
        self.hb = bath_energy_diag(basis, bath.omegas)
        self.sT = np.ascontiguousarray(model.s_op.T)
        self.sdT = np.ascontiguousarray(model.s_op.conj())  # (s†).T = conj(s)
        self.gconj = np.conj(bath.couplings)
        self.omegas = bath.omegas
        steps = config.num_steps
        # kernel on the half-step grid: index r + 2k holds M(t_k + r dt/2)
        half_times = 0.5 * config.dt * np.arange(2 * steps + 3)
        self.kernel_half = memory_kernel(bath, half_times)

    def apply_hq(self, y: np.ndarray, hs_t: np.ndarray, kappa, sbar_conj) -> np.ndarray:
        """H_Q y for a batch y of shape (F, M, ds).

        ``kappa`` is the scalar coefficient xi + conj(phi) per trajectory
        (or None), ``sbar_conj`` the conj(sbar) shift per trajectory (or
        None for the linear variant).
        """
        F, M, ds = y.shape
        ys = y @ self.sT
        out = y @ hs_t.T
        if kappa is not None:
            out += kappa[None, :, None] * ys
        out += (self.Bd @ ys.reshape(F, M * ds)).reshape(F, M, ds)
        tmp = y @ self.sdT
        if sbar_conj is not None:
            tmp -= sbar_conj[None, :, None] * y
        out += (self.B @ tmp.reshape(F, M * ds)).reshape(F, M, ds)
        out += self.hb[:, None, None] * y
        return out


def apply_H_Q(state: JointState, t: float, sample: NoiseSample, sbar_now: complex,
              phi_now: complex, model: SystemModel, bath: DiscretizedBath) -> JointState:
    """Apply the self-consistent generator H_Q to a joint state.

    The scalar coefficient of s is xi(t) + conj(phi_now) and the b term is
    shifted by -conj(sbar_now).  Returns H_Q |state> (no -i factor).
    """
    config = PropagatorConfig(dt=1.0, t_max=0.0, truncation=state.basis.max_total)
    setup = _EngineSetup(model, bath, state.basis, config)
    kappa = np.array([xi(t, sample, bath) + np.conj(phi_now)], dtype=np.complex128)
    sconj = np.array([np.conj(sbar_now)], dtype=np.complex128)
    y = state.as_matrix()[:, None, :]
    out = setup.apply_hq(y, model.hamiltonian(t), kappa, sconj)
    return JointState(state.basis, state.system_dim, out[:, 0, :].reshape(-1), state.time)


def _norm2_rows(y: np.ndarray) -> np.ndarray:
    """Squared norm per trajectory of a C-contiguous (F, M, ds) complex array."""
    yr = y.view(np.float64)
    return np.einsum("fmx,fmx->m", yr, yr)


class _BatchPropagator:
    """RK4 integrator for a batch of trajectories sharing one configuration.

    The working state is kept at unit norm; the accumulated log of the true
    norm is tracked per trajectory so unnormalized estimators are exact.
    sbar is re-evaluated at every stage; the projection floor is checked
    once per step, on the updated state — a trajectory whose vacuum weight
    collapses mid-step is flagged right after that step.  Flagged
    trajectories keep propagating with a zeroed shift (their lane cannot
    disturb the others) and are excluded by the ensemble average.
    """

    def __init__(self, model: SystemModel, bath: DiscretizedBath, config: PropagatorConfig,
                 z_block: np.ndarray, psi0: np.ndarray,
                 basis: Optional[OccupationBasis] = None):
        self.config = config
        basis = basis if basis is not None else enumerate_basis(bath.num_modes, config.truncation)
        self.setup = _EngineSetup(model, bath, basis, config)
        self.linear = config.method == "linear_dressed"
        z_block = np.atleast_2d(np.asarray(z_block, dtype=np.complex128))
        if z_block.shape[1] != bath.num_modes:
            raise ValueError("noise block width must equal the bath mode count")
        self.M = z_block.shape[0]
        psi0 = np.asarray(psi0, dtype=np.complex128)
        nrm = np.linalg.norm(psi0)
        if not nrm > 0:
            raise ValueError("initial system state must have positive norm")
        psi0 = psi0 / nrm
        self.y = np.zeros((self.setup.F, self.M, self.setup.ds), dtype=np.complex128)
        self.y[0, :, :] = psi0[None, :]
        self.log_weight = np.zeros(self.M)
        self.zg = z_block * self.setup.gconj[None, :]  # xi(t) = zg @ exp(i omega t)
        self.steps = config.num_steps
        self.k = 0
        self.sbar_hist = np.zeros((self.steps + 1, self.M), dtype=np.complex128)
        self.phi_hist = np.zeros((self.steps + 1, self.M), dtype=np.complex128)
        self.degenerate_step = np.full(self.M, -1, dtype=np.int64)
        self.zeta = z_block.copy() if config.record_evolved_noise else None
        self._seg = np.empty((3, self.steps + 1), dtype=np.complex128)
        self.sbar_hist[0] = self._sbar_rows(self.y)
        self._check_floor()

    # -- per-trajectory scalars ------------------------------------------------

    def _sbar_rows(self, y: np.ndarray) -> np.ndarray:
        """sbar per trajectory of a stage state (zero where undefined or flagged)."""
        v = y[0]
        den = (v.real * v.real + v.imag * v.imag).sum(axis=1)
        num = np.einsum("ma,ma->m", v.conj(), v @ self.setup.sT)
        good = (den > 0.0) & (self.degenerate_step < 0)
        return np.where(good, num / np.where(den > 0.0, den, 1.0), 0.0)

    def _check_floor(self):
        """Flag trajectories whose vacuum weight fell below the floor."""
        v = self.y[0]
        den = (v.real * v.real + v.imag * v.imag).sum(axis=1)
        total = _norm2_rows(self.y)
        bad = den < self.config.projection_floor * total
        if np.any(bad):
            fresh = bad & (self.degenerate_step < 0)
            self.degenerate_step[fresh] = self.k

    def _xi(self, t: float) -> np.ndarray:
        return self.zg @ np.exp(1j * self.setup.omegas * t)

    def _phi_three(self) -> np.ndarray:
        """phi at (t_k, t_k + dt/2, t_k + dt) from the step-frozen history.

        One matrix product evaluates all three shifted trapezoid sums; the
        partial segment beyond t_k uses the linearly extrapolated history.
        """
        k, dt = self.k, self.config.dt
        mh = self.setup.kernel_half
        seg = self._seg[:, : k + 1]
        for r in range(3):
            seg[r] = mh[r : r + 2 * k + 1 : 2][::-1]  # M(t_k + r dt/2 - t_j)
        hist = self.sbar_hist[: k + 1]
        acc = seg @ hist
        acc -= 0.5 * (seg[:, 0][:, None] * hist[0] + seg[:, k][:, None] * hist[k])
        acc *= dt
        s_k = self.sbar_hist[k]
        slope = (s_k - self.sbar_hist[k - 1]) if k >= 1 else np.zeros_like(s_k)
        for r in (1, 2):
            h = 0.5 * r * dt
            s_ext = s_k + (0.5 * r) * slope
            acc[r] += 0.5 * h * (mh[r] * s_k + mh[0] * s_ext)
        return -1j * acc

    # -- time stepping -----------------------------------------------------------

    def step(self):
        """Advance the whole batch by one RK4 step."""
        if self.k >= self.steps:
            raise RuntimeError("propagation already reached t_max")
        cfg = self.config
        dt, t = cfg.dt, self.k * cfg.dt
        model = self.setup.model
        hs = (model.hamiltonian(t), model.hamiltonian(t + dt / 2), model.hamiltonian(t + dt))
        if self.linear:
            kappa = (self._xi(t), self._xi(t + dt / 2), self._xi(t + dt))
            sb = lambda y: None  # noqa: E731 - no shift in the linear variant
        else:
            phi3 = self._phi_three()
            self.phi_hist[self.k] = phi3[0]
            kappa = (
                self._xi(t) + np.conj(phi3[0]),
                self._xi(t + dt / 2) + np.conj(phi3[1]),
                self._xi(t + dt) + np.conj(phi3[2]),
            )
            sb = lambda y: np.conj(self._sbar_rows(y))  # noqa: E731

        y = self.y
        k1 = -1j * self.setup.apply_hq(y, hs[0], kappa[0], sb(y))
        y2 = y + (dt / 2) * k1
        k2 = -1j * self.setup.apply_hq(y2, hs[1], kappa[1], sb(y2))
        y3 = y + (dt / 2) * k2
        k3 = -1j * self.setup.apply_hq(y3, hs[1], kappa[1], sb(y3))
        y4 = y + dt * k3
        k4 = -1j * self.setup.apply_hq(y4, hs[2], kappa[2], sb(y4))
        y_new = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

        nrm = np.sqrt(_norm2_rows(y_new))
        dead = nrm == 0.0
        if np.any(dead):
            fresh = dead & (self.degenerate_step < 0)
            self.degenerate_step[fresh] = self.k
            nrm = np.where(dead, 1.0, nrm)
        y_new /= nrm[None, :, None]
        self.log_weight += np.log(nrm)
        self.y = y_new
        self.k += 1
        if not self.linear:
            self._check_floor()
        sbar_new = self._sbar_rows(self.y)
        self.sbar_hist[self.k] = sbar_new
        if self.k == self.steps and not self.linear:
            self.phi_hist[self.k] = self._phi_grid_final()
        if self.zeta is not None:
            e_prev = np.exp(-1j * self.setup.omegas * t)
            e_next = np.exp(-1j * self.setup.omegas * (t + dt))
            incr = np.conj(self.sbar_hist[self.k - 1])[:, None] * e_prev[None, :]
            incr += np.conj(sbar_new)[:, None] * e_next[None, :]
            self.zeta += 0.5j * dt * incr * self.setup.bath.couplings[None, :]

    def _phi_grid_final(self) -> np.ndarray:
        """phi(t_k) at the current grid point, exact trapezoid (no tail)."""
        k = self.k
        seg = self.setup.kernel_half[0 : 2 * k + 1 : 2][::-1]
        hist = self.sbar_hist[: k + 1]
        acc = seg @ hist
        acc -= 0.5 * (seg[0] * hist[0] + seg[k] * hist[k])
        return -1j * self.config.dt * acc

    # -- observables ----------------------------------------------------------

    def conditional(self):
        """(rho_hat, vacuum_weight, husimi_weight) of the current batch state.

        rho_hat is trace-one per trajectory (zero matrix where the vacuum
        weight vanishes identically); weights include the accumulated norm
        factor, so vacuum_weight * rho_hat is the unnormalized estimator.
        """
        v = self.y[0]
        den = np.einsum("ma,ma->m", v.conj(), v).real
        scale = np.exp(2.0 * self.log_weight)
        outer = v[:, :, None] * v[:, None, :].conj()
        safe = np.where(den > 0.0, den, 1.0)
        rho_hat = outer / safe[:, None, None]
        return rho_hat, den * scale, scale

    @property
    def time(self) -> float:
        return self.k * self.config.dt


def _record_steps(steps: int, stride: int) -> np.ndarray:
    recorded = list(range(0, steps + 1, stride))
    if recorded[-1] != steps:
        recorded.append(steps)
    return np.asarray(recorded, dtype=np.int64)


def propagate_batch(z_block: np.ndarray, psi0, model: SystemModel, bath: DiscretizedBath,
                    config: PropagatorConfig, basis: Optional[OccupationBasis] = None) -> dict:
    """Propagate a batch of trajectories and collect per-trajectory series.

    Returns a dict with ``times`` (T,), ``rho`` (M, T, ds, ds) trace-one
    conditionals, ``vacuum_weight`` and ``husimi_weight`` (M, T),
    ``sbar_history`` and ``phi_history`` (M, steps+1), ``degenerate_step``
    (M,) with -1 for clean trajectories, and optionally ``evolved_noise``
    (M, T, N).
    """
    prop = _BatchPropagator(model, bath, config, z_block, psi0, basis=basis)
    rec = _record_steps(prop.steps, config.record_stride)
    n_rec, M, ds = rec.size, prop.M, prop.setup.ds
    rho = np.empty((M, n_rec, ds, ds), dtype=np.complex128)
    vac_w = np.empty((M, n_rec))
    husimi = np.empty((M, n_rec))
    evolved = (
        np.empty((M, n_rec, bath.num_modes), dtype=np.complex128)
        if config.record_evolved_noise
        else None
    )
    pos = 0

    def take():
        nonlocal pos
        rho_hat, den, scale = prop.conditional()
        rho[:, pos] = rho_hat
        vac_w[:, pos] = den
        husimi[:, pos] = scale
        if evolved is not None:
            evolved[:, pos] = prop.zeta
        pos += 1

    take()
    for k in range(1, prop.steps + 1):
        prop.step()
        if k == rec[pos]:
            take()
    out = {
        "times": rec * config.dt,
        "rho": rho,
        "vacuum_weight": vac_w,
        "husimi_weight": husimi,
        "sbar_history": prop.sbar_hist.T.copy(),
        "phi_history": prop.phi_hist.T.copy(),
        "degenerate_step": prop.degenerate_step.copy(),
        "record_steps": rec,
    }
    if evolved is not None:
        out["evolved_noise"] = evolved
    return out


class TrajectoryPropagator:
    """Stepwise interface to a single trajectory (thin wrapper over the batch core)."""

    def __init__(self, sample: NoiseSample, config: PropagatorConfig, model: SystemModel,
                 bath: DiscretizedBath, psi0, basis: Optional[OccupationBasis] = None):
        self._prop = _BatchPropagator(model, bath, config, sample.z[None, :], psi0, basis=basis)

    def step(self):
        """Advance by one RK4 step; raises DegenerateProjection when flagged."""
        self._prop.step()
        step_flag = int(self._prop.degenerate_step[0])
        if step_flag >= 0:
            raise DegenerateProjection(
                f"trajectory became degenerate at step {step_flag}"
            )

    @property
    def time(self) -> float:
        return self._prop.time

    @property
    def state(self) -> JointState:
        prop = self._prop
        amps = prop.y[:, 0, :].reshape(-1) * np.exp(prop.log_weight[0])
        return JointState(prop.setup.basis, prop.setup.ds, amps, time=prop.time)

    @property
    def sbar_now(self) -> complex:
        return complex(self._prop.sbar_hist[self._prop.k, 0])


def _wrap_record(result: dict, config: PropagatorConfig) -> TrajectoryRecord:
    deg_step = int(result["degenerate_step"][0])
    degenerate = deg_step >= 0
    return TrajectoryRecord(
        times=result["times"],
        conditional_rho=result["rho"][0],
        sbar_history=result["sbar_history"][0],
        phi_history=result["phi_history"][0],
        husimi_weight=result["husimi_weight"][0],
        vacuum_weight=result["vacuum_weight"][0],
        evolved_noise=result.get("evolved_noise", [None])[0],
        degenerate=degenerate,
        degenerate_step=deg_step if degenerate else None,
    )


def run_trajectory(sample: NoiseSample, config: PropagatorConfig, model: SystemModel,
                   bath: DiscretizedBath, psi0,
                   basis: Optional[OccupationBasis] = None) -> TrajectoryRecord:
    """Run one self-consistent dressed trajectory from |0>_b ⊗ |psi0>.

    A vacuum projection falling below the configured floor marks the
    trajectory as degenerate (flag plus first offending step in the
    record); entries past that step are kept but are not trustworthy, and
    ensemble averages exclude the whole trajectory with a counted warning.
    """
    if config.method != "nonlinear_dressed":
        config = PropagatorConfig(
            dt=config.dt, t_max=config.t_max, truncation=config.truncation,
            method="nonlinear_dressed", projection_floor=config.projection_floor,
            record_stride=config.record_stride,
            record_evolved_noise=config.record_evolved_noise,
        )
    result = propagate_batch(sample.z[None, :], psi0, model, bath, config, basis=basis)
    return _wrap_record(result, config)


def run_linear_trajectory(sample: NoiseSample, config: PropagatorConfig, model: SystemModel,
                          bath: DiscretizedBath, psi0,
                          basis: Optional[OccupationBasis] = None) -> TrajectoryRecord:
    """Run one linear dressed trajectory (no phi, no sbar shift).

    The Monte Carlo estimator for the reduced density matrix is
    ``conditional_rho * vacuum_weight`` averaged over Gaussian samples.
    """
    if config.method != "linear_dressed":
        config = PropagatorConfig(
            dt=config.dt, t_max=config.t_max, truncation=config.truncation,
            method="linear_dressed", projection_floor=config.projection_floor,
            record_stride=config.record_stride,
            record_evolved_noise=config.record_evolved_noise,
        )
    result = propagate_batch(sample.z[None, :], psi0, model, bath, config, basis=basis)
    return _wrap_record(result, config)
