"""Non-Markovian open-system dynamics via dressed quantum trajectories.

The joint state of a small open system and its cloud of virtual bath
quanta is propagated in a truncated Fock space for stochastically sampled
bath measurement outcomes; Monte Carlo averaging of the conditional
density matrices recovers the reduced system state.  An exact propagation
of the full truncated Schrödinger equation serves as the reference solver.
"""

from .bath_model import (
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
from .ed_oracle import EDConfig, EDResult, NormDrift, converged_cutoff, propagate_ed
from .ensemble_driver import (
    AllDegenerate,
    EnsembleResult,
    ExcessiveDegeneracy,
    PositivityReport,
    positivity_check,
    run_ensemble,
)
from .fock_space import (
    JointState,
    OccupationBasis,
    apply_annihilation,
    apply_bath_number,
    apply_coupling_b,
    apply_coupling_b_dagger,
    apply_creation,
    enumerate_basis,
    vacuum_projection,
)
from .noise_source import NoiseSample, sample_noise, xi
from .trajectory_engine import (
    DegenerateProjection,
    PropagatorConfig,
    TrajectoryPropagator,
    TrajectoryRecord,
    apply_H_Q,
    phi,
    run_linear_trajectory,
    run_trajectory,
    sbar,
)

__version__ = "0.1.0"

__all__ = [
    "AllDegenerate",
    "ContinuumBath",
    "DegenerateProjection",
    "DiscretizedBath",
    "EDConfig",
    "EDResult",
    "EnsembleResult",
    "ExcessiveDegeneracy",
    "JointState",
    "MemoryKernelSeries",
    "NoiseSample",
    "NormDrift",
    "OccupationBasis",
    "PositivityReport",
    "PropagatorConfig",
    "SystemModel",
    "TrajectoryPropagator",
    "TrajectoryRecord",
    "apply_H_Q",
    "apply_annihilation",
    "apply_bath_number",
    "apply_coupling_b",
    "apply_coupling_b_dagger",
    "apply_creation",
    "converged_cutoff",
    "discretize_semicircle_chain",
    "discretize_uniform",
    "enumerate_basis",
    "memory_kernel",
    "phi",
    "positivity_check",
    "propagate_ed",
    "run_ensemble",
    "run_linear_trajectory",
    "run_trajectory",
    "sample_noise",
    "sbar",
    "semicircle_bath",
    "spin_boson",
    "tabulate_kernel",
    "vacuum_projection",
    "xi",
]
