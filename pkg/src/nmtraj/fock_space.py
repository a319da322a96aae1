"""Truncated bosonic Fock space for the joint system-bath state.

The bath Hilbert space is spanned by occupation vectors ``(m_1, ..., m_N)``
with total occupation ``sum(m_i) <= n``, which gives dimension
``C(N + n, n)``.  States are ordered by grade (total occupation ascending)
and, inside each grade, by descending lexicographic order of the occupation
tuple.  With this ordering the vacuum has index 0, each grade is a
contiguous index range, and the single excitation of mode i sits at index i.

A joint state stores one complex amplitude per (Fock state, system level)
pair with the system index varying fastest, i.e. amplitude ``k`` belongs to
Fock index ``k // d_s`` and system level ``k % d_s``.

Creation operators are truncated by projection: any component that would
exceed the total-occupation cutoff is dropped, which keeps the norm
non-increasing and makes the truncated creation matrix exactly the adjoint
of the truncated annihilation matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse

__all__ = [
    "OccupationBasis",
    "JointState",
    "enumerate_basis",
    "apply_annihilation",
    "apply_creation",
    "apply_coupling_b",
    "apply_coupling_b_dagger",
    "apply_bath_number",
    "vacuum_projection",
    "annihilation_matrix",
    "coupling_matrix",
    "bath_number_diag",
    "bath_energy_diag",
]


def _binomial_table(a_max: int) -> np.ndarray:
    """Pascal triangle C(a, b) as an int64 table of shape (a_max+1, a_max+1)."""
    table = np.zeros((a_max + 1, a_max + 1), dtype=np.int64)
    table[:, 0] = 1
    for a in range(1, a_max + 1):
        table[a, 1 : a + 1] = table[a - 1, 1 : a + 1] + table[a - 1, 0:a]
    return table


def _enumerate_occupations(num_modes: int, max_total: int) -> np.ndarray:
    """All occupation vectors with total <= max_total, graded desc-lex order.

    Built iteratively over the number of modes: compositions of t into p
    modes are the concatenation over the first coordinate m (descending)
    of [m | compositions of t - m into p - 1 modes].
    """
    if max_total > np.iinfo(np.int16).max:
        raise ValueError("max_total too large for int16 occupation storage")
    by_total = [np.full((1, 1), t, dtype=np.int16) for t in range(max_total + 1)]
    for p in range(2, num_modes + 1):
        new_by_total = []
        for t in range(max_total + 1):
            blocks = []
            for m1 in range(t, -1, -1):
                rest = by_total[t - m1]
                block = np.empty((rest.shape[0], p), dtype=np.int16)
                block[:, 0] = m1
                block[:, 1:] = rest
                blocks.append(block)
            new_by_total.append(np.concatenate(blocks, axis=0))
        by_total = new_by_total
    return np.concatenate(by_total, axis=0)


@dataclass(eq=False)
class OccupationBasis:
    """Enumerated Fock basis of ``num_modes`` modes with total occupation <= ``max_total``.

    Immutable after construction; all derived tables are precomputed or
    cached lazily, so instances can be shared freely across threads and
    worker processes.
    """

    num_modes: int
    max_total: int
    dim: int
    occupations: np.ndarray  # (dim, num_modes) int16, graded desc-lex order
    totals: np.ndarray  # (dim,) int64
    _binom: np.ndarray = field(repr=False)
    _grade_offsets: np.ndarray = field(repr=False)  # first index of each grade
    _connectivity: dict = field(default_factory=dict, repr=False)

    def grade_slice(self, total: int) -> slice:
        """Index range of the states with the given total occupation."""
        if not 0 <= total <= self.max_total:
            raise ValueError(f"total must be in [0, {self.max_total}], got {total}")
        return slice(self._grade_offsets[total], self._grade_offsets[total + 1])

    def rank(self, occupation) -> int:
        """Index of an occupation vector in the basis ordering."""
        occ = np.asarray(occupation, dtype=np.int64)
        if occ.shape != (self.num_modes,):
            raise ValueError(f"occupation must have length {self.num_modes}")
        if np.any(occ < 0):
            raise ValueError("occupations must be non-negative")
        total = int(occ.sum())
        if total > self.max_total:
            raise ValueError(f"total occupation {total} exceeds cutoff {self.max_total}")
        return int(self._grade_offsets[total] + self._rank_in_grade(occ[None, :])[0])

    def unrank(self, index: int) -> tuple:
        """Occupation vector at a basis index (inverse of :meth:`rank`)."""
        if not 0 <= index < self.dim:
            raise ValueError(f"index must be in [0, {self.dim}), got {index}")
        return tuple(int(m) for m in self.occupations[index])

    def _rank_in_grade(self, occ_rows: np.ndarray) -> np.ndarray:
        """Vectorized desc-lex rank within the grade for rows of occupations.

        rank = sum_j C(S_{j+1} - 1 + P_j, P_j) over positions j with
        P_j modes remaining after j and S_{j+1} quanta left to place.
        """
        n_rows, n_modes = occ_rows.shape
        if n_modes == 1:
            return np.zeros(n_rows, dtype=np.int64)
        suffix = np.cumsum(occ_rows[:, ::-1], axis=1)[:, ::-1]  # S_j inclusive
        s_after = suffix[:, 1:]  # S_{j+1} for j = 0..N-2
        p_after = np.arange(n_modes - 1, 0, -1, dtype=np.int64)  # P_j
        a = s_after - 1 + p_after[None, :]
        terms = np.where(s_after > 0, self._binom[np.maximum(a, 0), p_after[None, :]], 0)
        return terms.sum(axis=1)

    def lowered_rank(self, rows: np.ndarray, mode: int) -> np.ndarray:
        """Indices of occupations ``rows`` with one quantum removed from ``mode`` (0-based).

        Callers must ensure the occupations at ``mode`` are positive.
        """
        occ = self.occupations[rows].astype(np.int64)
        occ[:, mode] -= 1
        totals = self.totals[rows] - 1
        return self._grade_offsets[totals] + self._rank_in_grade(occ)

    def connectivity(self, mode: int):
        """Sparse arrows of the ladder pair on ``mode`` (0-based).

        Returns ``(upper, lower, factor)`` where annihilation maps amplitude
        at ``upper`` to ``lower`` with weight ``factor = sqrt(m_mode)`` and
        creation is the reverse map with the same weight.
        """
        if mode not in self._connectivity:
            upper = np.nonzero(self.occupations[:, mode])[0]
            lower = self.lowered_rank(upper, mode)
            factor = np.sqrt(self.occupations[upper, mode].astype(np.float64))
            self._connectivity[mode] = (upper, lower, factor)
        return self._connectivity[mode]


def enumerate_basis(num_modes: int, max_total: int) -> OccupationBasis:
    """Build the truncated Fock basis for ``num_modes`` modes and cutoff ``max_total``.

    Parameters
    ----------
    num_modes : int
        Number of bath modes N, at least 1.
    max_total : int
        Maximum total occupation n, at least 0.
    """
    if num_modes < 1:
        raise ValueError(f"num_modes must be >= 1, got {num_modes}")
    if max_total < 0:
        raise ValueError(f"max_total must be >= 0, got {max_total}")
    binom = _binomial_table(num_modes + max_total)
    dim = int(binom[num_modes + max_total, max_total])
    occs = _enumerate_occupations(num_modes, max_total)
    if occs.shape[0] != dim:
        raise AssertionError("basis enumeration does not match the stars-and-bars count")
    totals = occs.sum(axis=1).astype(np.int64)
    # grade T starts at C(T - 1 + N, N) states; sentinel at the end
    offsets = np.empty(max_total + 2, dtype=np.int64)
    for t in range(max_total + 2):
        offsets[t] = binom[num_modes + t - 1, num_modes] if t >= 1 else 0
    return OccupationBasis(
        num_modes=num_modes,
        max_total=max_total,
        dim=dim,
        occupations=occs,
        totals=totals,
        _binom=binom,
        _grade_offsets=offsets,
    )


@dataclass
class JointState:
    """Complex amplitudes over the (Fock state ⊗ system level) product basis.

    ``amplitudes`` has length ``basis.dim * system_dim`` with the system
    index varying fastest.  ``time`` is carried along for bookkeeping and is
    expressed in inverse energy units.
    """

    basis: OccupationBasis
    system_dim: int
    amplitudes: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        if self.system_dim < 1:
            raise ValueError("system_dim must be positive")
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        expected = self.basis.dim * self.system_dim
        if self.amplitudes.shape != (expected,):
            raise ValueError(
                f"amplitude vector must have length {expected}, got {self.amplitudes.shape}"
            )

    @classmethod
    def from_system_state(cls, basis: OccupationBasis, psi0, time: float = 0.0) -> "JointState":
        """Joint state |0>_b ⊗ |psi0> with the bath in its vacuum."""
        psi0 = np.asarray(psi0, dtype=np.complex128)
        amps = np.zeros(basis.dim * psi0.size, dtype=np.complex128)
        amps[: psi0.size] = psi0
        return cls(basis=basis, system_dim=psi0.size, amplitudes=amps, time=time)

    def as_matrix(self) -> np.ndarray:
        """View of the amplitudes as a (fock_dim, system_dim) array."""
        return self.amplitudes.reshape(self.basis.dim, self.system_dim)

    def norm2(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def copy(self) -> "JointState":
        return JointState(self.basis, self.system_dim, self.amplitudes.copy(), self.time)

    def _like(self, amps2d: np.ndarray) -> "JointState":
        return JointState(self.basis, self.system_dim, amps2d.reshape(-1), self.time)


def _check_mode(basis: OccupationBasis, mode: int) -> int:
    """Validate a 1-based mode index and return it 0-based."""
    if not 1 <= mode <= basis.num_modes:
        raise ValueError(f"mode must be in [1, {basis.num_modes}], got {mode}")
    return mode - 1


def apply_annihilation(state: JointState, mode: int) -> JointState:
    """Apply the annihilation operator of ``mode`` (1-based) to a joint state."""
    m0 = _check_mode(state.basis, mode)
    upper, lower, factor = state.basis.connectivity(m0)
    y = state.as_matrix()
    out = np.zeros_like(y)
    out[lower] = factor[:, None] * y[upper]
    return state._like(out)


def apply_creation(state: JointState, mode: int) -> JointState:
    """Apply the truncated creation operator of ``mode`` (1-based).

    Components that would exceed the total-occupation cutoff are projected
    out.
    """
    m0 = _check_mode(state.basis, mode)
    upper, lower, factor = state.basis.connectivity(m0)
    y = state.as_matrix()
    out = np.zeros_like(y)
    out[upper] = factor[:, None] * y[lower]
    return state._like(out)


def apply_coupling_b(state: JointState, bath) -> JointState:
    """Apply the collective bath coupling b = sum_i g_i a_i."""
    g = np.asarray(bath.couplings, dtype=np.complex128)
    if g.size != state.basis.num_modes:
        raise ValueError(
            f"bath has {g.size} modes but the basis has {state.basis.num_modes}"
        )
    y = state.as_matrix()
    out = np.zeros_like(y)
    for m0 in range(state.basis.num_modes):
        if g[m0] == 0:
            continue
        upper, lower, factor = state.basis.connectivity(m0)
        out[lower] += (g[m0] * factor)[:, None] * y[upper]
    return state._like(out)


def apply_coupling_b_dagger(state: JointState, bath) -> JointState:
    """Apply the adjoint coupling b† = sum_i conj(g_i) a_i† (truncated)."""
    g = np.asarray(bath.couplings, dtype=np.complex128)
    if g.size != state.basis.num_modes:
        raise ValueError(
            f"bath has {g.size} modes but the basis has {state.basis.num_modes}"
        )
    y = state.as_matrix()
    out = np.zeros_like(y)
    for m0 in range(state.basis.num_modes):
        if g[m0] == 0:
            continue
        upper, lower, factor = state.basis.connectivity(m0)
        out[upper] += (np.conj(g[m0]) * factor)[:, None] * y[lower]
    return state._like(out)


def apply_bath_number(state: JointState) -> JointState:
    """Apply the total bath number operator sum_i a_i† a_i (diagonal)."""
    y = state.as_matrix()
    return state._like(state.basis.totals[:, None] * y)


def vacuum_projection(state: JointState) -> np.ndarray:
    """System amplitudes of the all-modes-empty Fock component, <0|_b |state>."""
    return state.amplitudes[: state.system_dim].copy()


def annihilation_matrix(basis: OccupationBasis, mode: int) -> sparse.csr_matrix:
    """Sparse matrix of the annihilation operator on ``mode`` (1-based)."""
    m0 = _check_mode(basis, mode)
    upper, lower, factor = basis.connectivity(m0)
    mat = sparse.coo_matrix(
        (factor, (lower, upper)), shape=(basis.dim, basis.dim), dtype=np.complex128
    )
    return mat.tocsr()


def coupling_matrix(basis: OccupationBasis, couplings) -> sparse.csr_matrix:
    """Sparse matrix of b = sum_i g_i a_i on the Fock factor.

    The adjoint b† (with the truncation projection) is exactly the conjugate
    transpose of the returned matrix.
    """
    g = np.asarray(couplings, dtype=np.complex128)
    if g.size != basis.num_modes:
        raise ValueError(f"need {basis.num_modes} couplings, got {g.size}")
    rows, cols, data = [], [], []
    for m0 in range(basis.num_modes):
        if g[m0] == 0:
            continue
        upper, lower, factor = basis.connectivity(m0)
        rows.append(lower)
        cols.append(upper)
        data.append(g[m0] * factor)
    if not rows:
        return sparse.csr_matrix((basis.dim, basis.dim), dtype=np.complex128)
    mat = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(basis.dim, basis.dim),
    )
    return mat.tocsr()


def bath_number_diag(basis: OccupationBasis) -> np.ndarray:
    """Diagonal of the total bath number operator."""
    return basis.totals.astype(np.float64)


def bath_energy_diag(basis: OccupationBasis, omegas) -> np.ndarray:
    """Diagonal of the free bath Hamiltonian sum_i omega_i a_i† a_i."""
    omegas = np.asarray(omegas, dtype=np.float64)
    if omegas.size != basis.num_modes:
        raise ValueError(f"need {basis.num_modes} frequencies, got {omegas.size}")
    return basis.occupations.astype(np.float64) @ omegas
