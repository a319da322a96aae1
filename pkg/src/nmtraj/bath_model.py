"""Bath specification, frequency discretization, and memory-kernel evaluation.

A continuum bath is given by a coupling density c(omega) supported on a
finite band; discretization picks N frequencies omega_i with quadrature
weights dw_i and turns the coupling into mode amplitudes
g_i = sqrt(dw_i) * c(omega_i).  The bath autocorrelation (memory kernel)
of the discretized bath is the plain sum M(t) = sum_i |g_i|^2 exp(-i omega_i t).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "ContinuumBath",
    "DiscretizedBath",
    "SystemModel",
    "MemoryKernelSeries",
    "semicircle_bath",
    "discretize_semicircle_chain",
    "discretize_uniform",
    "memory_kernel",
    "tabulate_kernel",
    "spin_boson",
]

WEIGHT_RULES = ("midpoint", "uniform")


@dataclass(frozen=True)
class ContinuumBath:
    """Continuum coupling density c(omega) on a finite support band."""

    coupling: Callable[[np.ndarray], np.ndarray]
    support: tuple

    def __call__(self, omega):
        omega = np.asarray(omega, dtype=np.float64)
        lo, hi = self.support
        values = np.asarray(self.coupling(omega), dtype=np.complex128)
        return np.where((omega >= lo) & (omega <= hi), values, 0.0)

    @classmethod
    def from_table(cls, omegas, couplings) -> "ContinuumBath":
        """Linear interpolation of a tabulated (omega, c) list."""
        om = np.asarray(omegas, dtype=np.float64)
        cv = np.asarray(couplings, dtype=np.complex128)
        if om.ndim != 1 or om.size < 2 or om.size != cv.size:
            raise ValueError("need matching 1-d tables with at least two points")
        if np.any(np.diff(om) <= 0):
            raise ValueError("omega table must be strictly increasing")

        def interp(w):
            w = np.asarray(w, dtype=np.float64)
            return np.interp(w, om, cv.real) + 1j * np.interp(w, om, cv.imag)

        return cls(coupling=interp, support=(float(om[0]), float(om[-1])))


def semicircle_bath(eps0: float, h: float) -> ContinuumBath:
    """Semicircular coupling density of the semi-infinite hopping chain.

    The band is [eps0 - 2h, eps0 + 2h] and, writing omega = eps0 + 2h cos(theta),
    the coupling density is c(omega) = h sqrt(2/pi) sin(theta).
    """
    if h <= 0:
        raise ValueError("hopping h must be positive")

    def coupling(omega):
        x = np.clip((np.asarray(omega, dtype=np.float64) - eps0) / (2.0 * h), -1.0, 1.0)
        return h * np.sqrt(2.0 / np.pi) * np.sqrt(1.0 - x * x)

    return ContinuumBath(coupling=coupling, support=(eps0 - 2.0 * h, eps0 + 2.0 * h))


@dataclass(frozen=True)
class DiscretizedBath:
    """N bath modes with frequencies, coupling amplitudes, and quadrature weights.

    ``couplings[i]`` is g_i = sqrt(weights[i]) * c(omegas[i]); the sum of
    |g_i|^2 approximates the integral of |c|^2 over the band.
    """

    omegas: np.ndarray
    couplings: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        omegas = np.atleast_1d(np.asarray(self.omegas, dtype=np.float64))
        couplings = np.atleast_1d(np.asarray(self.couplings, dtype=np.complex128))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        if not omegas.size == couplings.size == weights.size:
            raise ValueError("omegas, couplings, and weights must have equal length")
        if omegas.size < 1:
            raise ValueError("a discretized bath needs at least one mode")
        object.__setattr__(self, "omegas", omegas)
        object.__setattr__(self, "couplings", couplings)
        object.__setattr__(self, "weights", weights)

    @property
    def num_modes(self) -> int:
        return self.omegas.size

    def total_coupling_power(self) -> float:
        """sum_i |g_i|^2, the discrete stand-in for the integral of |c|^2."""
        return float(np.sum(np.abs(self.couplings) ** 2))


def _midpoint_weights(omegas: np.ndarray) -> np.ndarray:
    """Cell widths of a sorted (monotone) frequency grid, one-sided at the ends."""
    widths = np.empty_like(omegas)
    if omegas.size == 1:
        widths[0] = 1.0
        return widths
    widths[1:-1] = np.abs(omegas[:-2] - omegas[2:]) / 2.0
    widths[0] = np.abs(omegas[0] - omegas[1])
    widths[-1] = np.abs(omegas[-2] - omegas[-1])
    return widths


def discretize_semicircle_chain(
    eps0: float, h: float, num_modes: int, weight_rule: str = "midpoint"
) -> DiscretizedBath:
    """Discretize the semicircular band on the cosine grid of the hopping chain.

    Mode i (1-based) sits at omega_i = eps0 + 2h cos(i pi / (N+1)) with
    coupling density c(omega_i) = h sqrt(2/pi) sin(i pi / (N+1)).

    Parameters
    ----------
    eps0, h : float
        On-site energy and hopping of the chain; the band is eps0 +- 2h.
    num_modes : int
        Number of retained modes N.
    weight_rule : str
        "midpoint" uses local cell widths (centered differences, one-sided
        at the band edges); "uniform" uses the constant width 4h/N.  The
        grid is non-uniform, so the two rules differ at finite N.
    """
    if h <= 0:
        raise ValueError("hopping h must be positive")
    if num_modes < 1:
        raise ValueError("num_modes must be >= 1")
    if weight_rule not in WEIGHT_RULES:
        raise ValueError(f"weight_rule must be one of {WEIGHT_RULES}, got {weight_rule!r}")
    i = np.arange(1, num_modes + 1, dtype=np.float64)
    theta = i * np.pi / (num_modes + 1)
    omegas = eps0 + 2.0 * h * np.cos(theta)
    c_values = h * np.sqrt(2.0 / np.pi) * np.sin(theta)
    if weight_rule == "uniform":
        weights = np.full(num_modes, 4.0 * h / num_modes)
    else:
        weights = _midpoint_weights(omegas)
    couplings = np.sqrt(weights) * c_values
    return DiscretizedBath(omegas=omegas, couplings=couplings, weights=weights)


def discretize_uniform(bath: ContinuumBath, num_modes: int) -> DiscretizedBath:
    """Uniform midpoint discretization of a continuum bath over its support."""
    if num_modes < 1:
        raise ValueError("num_modes must be >= 1")
    lo, hi = bath.support
    if not hi > lo:
        raise ValueError("bath support must be a non-empty interval")
    dw = (hi - lo) / num_modes
    omegas = lo + (np.arange(num_modes) + 0.5) * dw
    weights = np.full(num_modes, dw)
    couplings = np.sqrt(weights) * bath(omegas)
    return DiscretizedBath(omegas=omegas, couplings=couplings, weights=weights)


def memory_kernel(bath: DiscretizedBath, t):
    """Bath memory function M(t) = sum_i |g_i|^2 exp(-i omega_i t).

    Accepts a scalar or an array of times; M(0) is real and equals the total
    coupling power, and M(-t) = conj(M(t)).
    """
    t_arr = np.asarray(t, dtype=np.float64)
    power = np.abs(bath.couplings) ** 2
    phases = np.exp(-1j * np.multiply.outer(t_arr, bath.omegas))
    result = phases @ power
    if t_arr.ndim == 0:
        return complex(result)
    return result


@dataclass(frozen=True)
class MemoryKernelSeries:
    """Memory kernel tabulated on the uniform grid t_k = k * dt."""

    dt: float
    values: np.ndarray

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        object.__setattr__(
            self, "values", np.atleast_1d(np.asarray(self.values, dtype=np.complex128))
        )

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.values.size)


def tabulate_kernel(bath: DiscretizedBath, dt: float, t_max: float) -> MemoryKernelSeries:
    """Tabulate M on the grid k*dt for k = 0 .. ceil(t_max/dt)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_max < 0:
        raise ValueError("t_max must be non-negative")
    n_points = int(np.ceil(t_max / dt - 1e-12)) + 1
    times = dt * np.arange(n_points)
    return MemoryKernelSeries(dt=dt, values=memory_kernel(bath, times))


@dataclass
class SystemModel:
    """Finite open system: H_s(t) (Hermitian) and the bath coupling operator.

    The default time dependence is a harmonic drive,
    H_s(t) = h0 + f(t) drive_op + conj(f(t)) drive_op†  with
    f(t) = drive_amplitude * cos(drive_frequency * t).  An arbitrary
    ``h_func(t)`` overrides that structure (note: callables defined at
    module level pickle for parallel ensembles, lambdas do not).
    """

    h0: np.ndarray
    s_op: np.ndarray
    drive_op: Optional[np.ndarray] = None
    drive_amplitude: float = 0.0
    drive_frequency: float = 0.0
    h_func: Optional[Callable[[float], np.ndarray]] = None

    def __post_init__(self):
        self.h0 = np.asarray(self.h0, dtype=np.complex128)
        self.s_op = np.asarray(self.s_op, dtype=np.complex128)
        d = self.h0.shape[0]
        if self.h0.shape != (d, d) or self.s_op.shape != (d, d):
            raise ValueError("h0 and s_op must be square matrices of equal size")
        if self.drive_op is not None:
            self.drive_op = np.asarray(self.drive_op, dtype=np.complex128)
            if self.drive_op.shape != (d, d):
                raise ValueError("drive_op must match the system dimension")
        for t_probe in (0.0, 0.37, 1.7):
            h = self.hamiltonian(t_probe)
            if not np.allclose(h, h.conj().T, atol=1e-12):
                raise ValueError(f"H_s({t_probe}) is not Hermitian")

    @property
    def dimension(self) -> int:
        return self.h0.shape[0]

    def drive(self, t: float) -> complex:
        return self.drive_amplitude * np.cos(self.drive_frequency * t)

    def hamiltonian(self, t: float) -> np.ndarray:
        if self.h_func is not None:
            return np.asarray(self.h_func(t), dtype=np.complex128)
        h = self.h0.copy()
        if self.drive_op is not None and self.drive_amplitude != 0.0:
            f = self.drive(t)
            h += f * self.drive_op + np.conj(f) * self.drive_op.conj().T
        return h


def spin_boson(
    epsilon: float, drive_amplitude: float = 0.0, drive_frequency: float = 1.0
) -> SystemModel:
    """Driven two-level system coupled through its lowering operator.

    Basis ordering is (ground, excited):
    H_s(t) = epsilon |e><e| + f(t) sigma_+ + conj(f(t)) sigma_-, s = sigma_-.
    """
    sigma_minus = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=np.complex128)
    sigma_plus = sigma_minus.conj().T
    h0 = np.array([[0.0, 0.0], [0.0, epsilon]], dtype=np.complex128)
    return SystemModel(
        h0=h0,
        s_op=sigma_minus,
        drive_op=sigma_plus,
        drive_amplitude=drive_amplitude,
        drive_frequency=drive_frequency,
    )
