"""Truncated-Fock / qutrit operator algebra on composite Hilbert spaces.

Slot ordering convention (fixed everywhere in the package): slot 0 is the
transmon, slots 1.. are the bosonic modes.  States and operators are dense;
anything performance critical lives in :mod:`ecsim.dynamics`.

All values are immutable after construction (arrays are marked read-only) and
safe to share between threads or worker processes.
"""

from __future__ import annotations

import math
from dataclasses import InitVar, dataclass, field
from functools import reduce
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.special import gammainc

from .errors import InvalidDimensionError, NumericError, TruncationOverflowError

__all__ = [
    "HilbertSpace",
    "Operator",
    "DensityMatrix",
    "StateVector",
    "mode_operators",
    "coherent_state",
    "coherent_leakage",
    "default_fock_dim",
    "displacement_operator",
    "embed",
    "tensor",
    "partial_trace",
    "partial_transpose",
]

# Positivity is an O(dim^3) check; run it eagerly only below this size.
# Larger density matrices are audited explicitly (see DensityMatrix.check_positive
# and the trajectory audits in dynamics).
_EAGER_POSITIVITY_DIM = 64

HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-9
# Matches the snapshot audit gate in the run layer: an error-controlled
# integration is allowed eigenvalue dips to -1e-7 before we call it a failure.
POSITIVITY_TOL = 1e-7
NORM_TOL = 1e-10


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=complex, copy=True, order="C")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class HilbertSpace:
    """Ordered subsystem dimensions; slot 0 = transmon, slots 1.. = modes."""

    dims: tuple[int, ...]

    def __init__(self, dims: Iterable[int]):
        dims = tuple(int(d) for d in dims)
        if not dims:
            raise InvalidDimensionError("need at least one subsystem")
        for d in dims:
            if d < 2:
                raise InvalidDimensionError(f"subsystem dimension {d} < 2")
        object.__setattr__(self, "dims", dims)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_slots(self) -> int:
        return len(self.dims)

    def index(self, levels: Sequence[int]) -> int:
        """Flat index of the basis state |levels[0], levels[1], ...>."""
        if len(levels) != self.n_slots:
            raise InvalidDimensionError("level tuple length mismatch")
        return int(np.ravel_multi_index(tuple(levels), self.dims))


@dataclass(frozen=True, eq=False)
class Operator:
    space: HilbertSpace
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = _readonly(self.matrix)
        if m.shape != (self.space.total_dim, self.space.total_dim):
            raise InvalidDimensionError(
                f"matrix shape {m.shape} does not match space dimension "
                f"{self.space.total_dim}"
            )
        object.__setattr__(self, "matrix", m)

    def dag(self) -> "Operator":
        return Operator(self.space, self.matrix.conj().T)

    def __matmul__(self, other: "Operator") -> "Operator":
        if other.space.dims != self.space.dims:
            raise InvalidDimensionError("operator spaces differ")
        return Operator(self.space, self.matrix @ other.matrix)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, unit-trace, positive-semidefinite matrix on a composite space.

    Hermiticity (<= 1e-10 max-abs) and trace (<= 1e-9) are verified on every
    construction.  Positivity (min eigenvalue >= -1e-7) is verified eagerly for
    small matrices and on demand via :meth:`check_positive` for large ones,
    where the O(dim^3) eigensolve would dominate the simulation itself.
    Pass ``check=False`` to skip the eager eigenvalue gate when the matrix is
    a trace-preserving reduction of a state that was already checked.
    """

    space: HilbertSpace
    matrix: np.ndarray = field(repr=False)
    check: InitVar[bool] = True

    def __post_init__(self, check: bool = True):
        m = _readonly(self.matrix)
        if m.shape != (self.space.total_dim, self.space.total_dim):
            raise InvalidDimensionError(
                f"matrix shape {m.shape} does not match space dimension "
                f"{self.space.total_dim}"
            )
        herm = np.max(np.abs(m - m.conj().T))
        if herm > HERMITICITY_TOL:
            raise NumericError(f"density matrix not Hermitian: defect {herm:.3e}")
        tr = m.trace()
        if abs(tr - 1.0) > TRACE_TOL:
            raise NumericError(f"density matrix trace {tr:.12g} != 1")
        object.__setattr__(self, "matrix", m)
        if check and m.shape[0] <= _EAGER_POSITIVITY_DIM:
            self.check_positive()

    def check_positive(self, tol: float = POSITIVITY_TOL) -> float:
        """Raise NumericError if min eigenvalue < -tol; return min eigenvalue."""
        w = np.linalg.eigvalsh(self.matrix)
        lam_min = float(w[0])
        if lam_min < -tol:
            raise NumericError(f"density matrix min eigenvalue {lam_min:.3e} < -{tol:g}")
        return lam_min

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def trace_defect(self) -> float:
        return float(abs(self.matrix.trace() - 1.0))

    def purity(self) -> float:
        return float(np.sum(np.abs(self.matrix) ** 2).real)


@dataclass(frozen=True, eq=False)
class StateVector:
    space: HilbertSpace
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = _readonly(self.amplitudes).reshape(-1)
        if v.shape != (self.space.total_dim,):
            raise InvalidDimensionError(
                f"amplitude vector length {v.shape[0]} does not match space "
                f"dimension {self.space.total_dim}"
            )
        nrm = np.linalg.norm(v)
        if abs(nrm - 1.0) > NORM_TOL:
            raise NumericError(f"state vector norm {nrm:.12g} != 1")
        object.__setattr__(self, "amplitudes", v)

    def to_density(self) -> DensityMatrix:
        return DensityMatrix(self.space, np.outer(self.amplitudes, self.amplitudes.conj()))

    def overlap(self, other: "StateVector") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))


### constructors ###


def mode_operators(dim: int) -> tuple[Operator, Operator, Operator]:
    """Annihilation, creation and number operator on a dim-level Fock space."""
    if dim < 2:
        raise InvalidDimensionError(f"fock dimension {dim} < 2")
    sp = HilbertSpace((dim,))
    a = np.zeros((dim, dim), dtype=complex)
    ns = np.arange(1, dim)
    a[ns - 1, ns] = np.sqrt(ns)
    n = np.diag(np.arange(dim, dtype=float)).astype(complex)
    return Operator(sp, a), Operator(sp, a.conj().T), Operator(sp, n)


def coherent_leakage(dim: int, alpha: complex) -> float:
    """Poisson tail P(n >= dim) of the untruncated |alpha> photon statistics."""
    x = abs(alpha) ** 2
    if x == 0.0:
        return 0.0
    # regularized lower incomplete gamma = upper Poisson tail P(N >= dim)
    return float(gammainc(dim, x))


def default_fock_dim(alpha_max: complex | float) -> int:
    """Truncation rule keeping coherent tail leakage comfortably below 1e-6."""
    a = abs(alpha_max)
    return int(math.ceil(a * a + 6.0 * a + 5.0))


def coherent_state(dim: int, alpha: complex, leak_tol: float = 1e-6) -> StateVector:
    """Coherent state |alpha> on a truncated Fock space (renormalized).

    Raises TruncationOverflowError when the untruncated tail beyond `dim`
    exceeds `leak_tol`; use :func:`coherent_leakage` to inspect the tail.
    """
    if dim < 2:
        raise InvalidDimensionError(f"fock dimension {dim} < 2")
    leak = coherent_leakage(dim, alpha)
    if leak > leak_tol:
        raise TruncationOverflowError(
            f"coherent state |alpha|={abs(alpha):.3g} leaks {leak:.3e} > {leak_tol:g} "
            f"beyond dim={dim}; need dim >= {default_fock_dim(alpha)}"
        )
    amps = np.empty(dim, dtype=complex)
    amps[0] = 1.0
    for n in range(1, dim):
        amps[n] = amps[n - 1] * alpha / math.sqrt(n)
    amps /= np.linalg.norm(amps)
    return StateVector(HilbertSpace((dim,)), amps)


def displacement_operator(dim: int, alpha: complex) -> Operator:
    """D(alpha) = exp(alpha a^dag - alpha* a), exact on the truncated space.

    Built from the matrix exponential of the truncated generator (so it is
    exactly unitary up to expm round-off), not from the analytic Fock-basis
    formula of the untruncated operator.
    """
    a, adag, _ = mode_operators(dim)
    gen = alpha * adag.matrix - np.conj(alpha) * a.matrix
    return Operator(a.space, expm(gen))


### composite-space plumbing ###


def tensor(*ops: Operator) -> Operator:
    """Kronecker product respecting slot order."""
    mats = [o.matrix for o in ops]
    dims = tuple(d for o in ops for d in o.space.dims)
    return Operator(HilbertSpace(dims), reduce(np.kron, mats))


def embed(op: Operator, slot: int, space: HilbertSpace) -> Operator:
    """Identity everywhere except `slot`, where `op` acts."""
    if not 0 <= slot < space.n_slots:
        raise InvalidDimensionError(f"slot {slot} out of range for {space.dims}")
    if op.space.total_dim != space.dims[slot]:
        raise InvalidDimensionError(
            f"operator dim {op.space.total_dim} != dims[{slot}]={space.dims[slot]}"
        )
    mats = [
        op.matrix if s == slot else np.eye(d, dtype=complex)
        for s, d in enumerate(space.dims)
    ]
    return Operator(space, reduce(np.kron, mats))


def _as_tensor(matrix: np.ndarray, dims: tuple[int, ...]) -> np.ndarray:
    return matrix.reshape(dims + dims)


def partial_trace(rho: DensityMatrix, keep: Iterable[int]) -> DensityMatrix:
    """Trace out every slot not in `keep`; kept slots retain their order."""
    keep = sorted(set(int(k) for k in keep))
    dims = rho.space.dims
    n = len(dims)
    if not keep:
        raise InvalidDimensionError("keep set must be non-empty")
    for k in keep:
        if not 0 <= k < n:
            raise InvalidDimensionError(f"slot {k} out of range")
    t = _as_tensor(rho.matrix, dims)
    # trace dropped slots from the highest index down so axis numbers stay valid
    dropped = [s for s in range(n) if s not in keep]
    n_cur = n
    cur_slots = list(range(n))
    for s in sorted(dropped, reverse=True):
        pos = cur_slots.index(s)
        t = np.trace(t, axis1=pos, axis2=pos + n_cur)
        cur_slots.pop(pos)
        n_cur -= 1
    kept_dims = tuple(dims[s] for s in keep)
    d_tot = int(np.prod(kept_dims))
    # tracing preserves trace and Hermiticity; skip the redundant eigenvalue gate
    return DensityMatrix(HilbertSpace(kept_dims), t.reshape(d_tot, d_tot), check=False)


def partial_transpose(rho: DensityMatrix, slot: int) -> np.ndarray:
    """Transpose on one slot; returns a plain (generally non-positive) matrix."""
    dims = rho.space.dims
    n = len(dims)
    if not 0 <= slot < n:
        raise InvalidDimensionError(f"slot {slot} out of range")
    t = _as_tensor(rho.matrix, dims)
    t = np.swapaxes(t, slot, slot + n)
    d = rho.space.total_dim
    return np.ascontiguousarray(t.reshape(d, d))
