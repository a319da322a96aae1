"""Monte Carlo averaging of dressed trajectories to the reduced density matrix.

The ensemble mean depends on the trajectory variant:

* nonlinear (self-consistent): plain average of the trace-one conditional
  matrices — the measurement statistics are carried by the convected
  samples themselves;
* linear: average of the unnormalized vacuum-projected outer products —
  the Gaussian sampling of z carries the measurement weight.

The complementary weighting is always computed as well (``rho_mean_alt``)
so the two estimators can be compared.  Statistical errors come from batch
means over ``batches`` contiguous blocks of trajectory ids.  Trajectories
are deterministic functions of (master_seed, trajectory_id), work is
partitioned into fixed batches and fixed-size propagation chunks, and all
reductions run in id order, so results do not depend on the worker count.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bath_model import DiscretizedBath, SystemModel
from .noise_source import sample_noise_block
from .trajectory_engine import PropagatorConfig, propagate_batch

__all__ = [
    "AllDegenerate",
    "ExcessiveDegeneracy",
    "EnsembleResult",
    "PositivityReport",
    "run_ensemble",
    "positivity_check",
]


class AllDegenerate(RuntimeError):
    """Every trajectory of the ensemble was flagged degenerate."""


class ExcessiveDegeneracy(RuntimeError):
    """More than the allowed fraction of trajectories was flagged degenerate.

    This signals that the method is outside its validity regime for the
    requested model/truncation rather than a statistical accident.
    """


@dataclass
class EnsembleResult:
    """Ensemble-averaged reduced density matrix with batch-means errors.

    ``rho_mean`` is the primary estimator for the method that produced the
    run; ``rho_mean_alt`` applies the complementary weighting (unnormalized
    per-sample average for the nonlinear method, per-sample normalized for
    the linear one) and is reported as a diagnostic.  ``occupation`` is the
    expectation of the system number operator diag(0, 1, ..., d_s - 1),
    i.e. the qubit excited-state population for a two-level system.
    """

    times: np.ndarray
    rho_mean: np.ndarray
    rho_stderr: np.ndarray
    rho_mean_alt: np.ndarray
    occupation: np.ndarray
    occupation_stderr: np.ndarray
    num_trajectories: int
    num_degenerate: int
    method: str


@dataclass
class PositivityReport:
    """Minimum eigenvalue of the averaged density matrix over time."""

    min_eigenvalue: float
    time_of_min: float
    min_eigenvalue_per_time: np.ndarray


def _batch_bounds(num_trajectories: int, batches: int) -> list:
    edges = np.linspace(0, num_trajectories, batches + 1).astype(np.int64)
    return [(int(edges[b]), int(edges[b + 1])) for b in range(batches)]


def _occupation_weights(ds: int) -> np.ndarray:
    return np.arange(ds, dtype=np.float64)


def _run_batch(args):
    """Accumulate one contiguous id block; used as the parallel work unit."""
    (lo, hi, master_seed, model, bath, config, psi0, chunk_size) = args
    nested = None
    for start in range(lo, hi, chunk_size):
        ids = range(start, min(start + chunk_size, hi))
        z = sample_noise_block(master_seed, ids, bath.num_modes)
        out = propagate_batch(z, psi0, model, bath, config)
        clean = out["degenerate_step"] < 0
        rho = out["rho"]
        weighted = rho * out["vacuum_weight"][:, :, None, None]
        if nested is None:
            nested = {
                "sum_cond": np.zeros(rho.shape[1:], dtype=np.complex128),
                "sum_raw": np.zeros(rho.shape[1:], dtype=np.complex128),
                "count": 0,
                "degenerate": 0,
                "times": out["times"],
            }
        nested["sum_cond"] += rho[clean].sum(axis=0)
        nested["sum_raw"] += weighted[clean].sum(axis=0)
        nested["count"] += int(clean.sum())
        nested["degenerate"] += int((~clean).sum())
    return nested


def run_ensemble(
    num_trajectories: int,
    master_seed: int,
    model: SystemModel,
    bath: DiscretizedBath,
    config: PropagatorConfig,
    psi0,
    batches: int = 10,
    chunk_size: int = 128,
    workers: int = 1,
    max_degenerate_fraction: float = 0.01,
) -> EnsembleResult:
    """Average ``num_trajectories`` trajectories into the reduced density matrix.

    Parameters
    ----------
    num_trajectories : int
        Ensemble size M (>= 1).
    master_seed : int
        Seed of the reproducible per-trajectory noise streams.
    batches : int
        Number of contiguous id blocks used for batch-means error bars.
    chunk_size : int
        Trajectories propagated together in one vectorized batch.
    workers : int
        Process count; any value yields bit-identical results because batch
        boundaries and reduction order are fixed.
    max_degenerate_fraction : float
        Abort threshold for the excluded-trajectory fraction.
    """
    if num_trajectories < 1:
        raise ValueError("num_trajectories must be >= 1")
    if batches < 1:
        raise ValueError("batches must be >= 1")
    batches = min(batches, num_trajectories)
    tasks = [
        (lo, hi, master_seed, model, bath, config, np.asarray(psi0, dtype=np.complex128),
         chunk_size)
        for lo, hi in _batch_bounds(num_trajectories, batches)
    ]
    if workers > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(processes=workers) as pool:
            results = pool.map(_run_batch, tasks, chunksize=1)
    else:
        results = [_run_batch(task) for task in tasks]

    num_degenerate = sum(r["degenerate"] for r in results)
    total_count = sum(r["count"] for r in results)
    if total_count == 0:
        raise AllDegenerate(f"all {num_trajectories} trajectories were flagged degenerate")
    if num_degenerate > max_degenerate_fraction * num_trajectories:
        raise ExcessiveDegeneracy(
            f"{num_degenerate} of {num_trajectories} trajectories degenerate "
            f"(> {max_degenerate_fraction:.1%}); the truncated description is "
            "not trustworthy for this configuration"
        )

    times = results[0]["times"]
    primary_key = "sum_cond" if config.method == "nonlinear_dressed" else "sum_raw"
    alt_key = "sum_raw" if primary_key == "sum_cond" else "sum_cond"
    sum_primary = np.sum([r[primary_key] for r in results], axis=0)
    sum_alt = np.sum([r[alt_key] for r in results], axis=0)
    rho_mean = sum_primary / total_count
    rho_mean_alt = sum_alt / total_count

    occ_w = _occupation_weights(rho_mean.shape[-1])
    occupation = np.einsum("taa,a->t", rho_mean, occ_w).real

    batch_means = np.array(
        [r[primary_key] / r["count"] for r in results if r["count"] > 0]
    )
    b_eff = batch_means.shape[0]
    if b_eff > 1:
        spread = batch_means.std(axis=0, ddof=1) / np.sqrt(b_eff)
        rho_stderr = np.abs(spread)
        occ_batch = np.einsum("btaa,a->bt", batch_means, occ_w).real
        occupation_stderr = occ_batch.std(axis=0, ddof=1) / np.sqrt(b_eff)
    else:
        rho_stderr = np.zeros_like(rho_mean, dtype=np.float64)
        occupation_stderr = np.zeros_like(occupation)

    return EnsembleResult(
        times=times,
        rho_mean=rho_mean,
        rho_stderr=rho_stderr,
        rho_mean_alt=rho_mean_alt,
        occupation=occupation,
        occupation_stderr=occupation_stderr,
        num_trajectories=num_trajectories,
        num_degenerate=num_degenerate,
        method=config.method,
    )


def positivity_check(result: EnsembleResult) -> PositivityReport:
    """Minimum eigenvalue of rho_mean(t) over all recorded times.

    Averages of pure-state projectors are positive semidefinite, so the
    minimum should be >= 0 up to roundoff.
    """
    hermitized = 0.5 * (result.rho_mean + np.conj(np.swapaxes(result.rho_mean, 1, 2)))
    eigenvalues = np.linalg.eigvalsh(hermitized)
    per_time = eigenvalues[:, 0]
    idx = int(np.argmin(per_time))
    return PositivityReport(
        min_eigenvalue=float(per_time[idx]),
        time_of_min=float(result.times[idx]),
        min_eigenvalue_per_time=per_time,
    )
