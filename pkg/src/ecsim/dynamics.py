"""Rotating-frame Hamiltonians, dissipators and the Lindblad propagator.

Master equation (H expressed as H/hbar, rad/s):

    drho/dt = i [rho, H] + sum_j (w_j/Q_j) [ n_j^th L[a_j^dag] + (n_j^th+1) L[a_j] ]
              + (1/T1) L[c] + (1/T2) L[c^dag c]

with L[o]rho = (2 o rho o^dag - o^dag o rho - rho o^dag o)/2.  The bath
occupation n_j^th is computed from the system temperature; the ModeSpec.n_th
field only seeds the *initial* state.

Frame conventions
-----------------
* The qubit drift w_q c^dag c commutes with every coupling and dissipator
  term, so it is removed exactly (w_q' = 0 by default); only the
  anharmonicity -(E_C/2) c^dag c^dag c c remains on the qubit.
* Each bosonic mode is bookkept in its own rotating frame.  During an
  interaction window at modulation frequency omega_ac, a resonant mode
  (Delta_j = w_j - omega_ac ~ 0) acquires the static coupling
  -g_j c^dag c (a_j e^{i theta} + a_j^dag e^{-i theta}).  A far-detuned mode
  (|Delta_j| >= 100 g_j, with rwa_drop_detuned) is left alone entirely: its
  free phase is exact in its own frame and the thermal dissipators are
  phase-covariant, so no bookkeeping correction is needed.  A retained
  detuned mode evolves with Delta_j a^dag a + coupling in the window frame;
  callers must rotate it back by exp(i Delta_j tau n) afterwards (see
  protocols.run_protocol).

The propagator never forms the dim^2 x dim^2 superoperator.  Every term of
the right-hand side is a slicing operation on rho viewed as a rank-2n tensor
(numbers and ladder operators act on single axes), which keeps the cost at
O(dim^2) per term.  An independent dense-superoperator construction is
provided for oracle testing only.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .device import ModeSpec, TransmonSpec, thermal_occupation
from .errors import (
    InvalidDimensionError,
    NumericError,
    PhysicsError,
    StiffnessError,
    TruncationOverflowError,
)
from .hilbert import DensityMatrix, HilbertSpace, Operator, embed, mode_operators

TWO_PI = 2.0 * math.pi

__all__ = [
    "SystemSpec",
    "FrameConfig",
    "DissipatorSet",
    "Trajectory",
    "build_hamiltonian",
    "build_dissipators",
    "lindblad_rhs",
    "dense_superoperator",
    "evolve",
    "thermal_state",
    "initial_state",
]


@dataclass(frozen=True)
class SystemSpec:
    """Transmon + bosonic modes + common bath temperature."""

    transmon: TransmonSpec
    modes: tuple[ModeSpec, ...]
    temperature: float = 0.0
    coupling_phase_theta: float = math.pi

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        if not self.modes:
            raise PhysicsError("need at least one bosonic mode")
        if self.temperature < 0:
            raise PhysicsError("temperature must be >= 0")

    def space(self) -> HilbertSpace:
        return HilbertSpace((self.transmon.levels,) + tuple(m.fock_dim for m in self.modes))

    def bath_occupation(self, j: int) -> float:
        return thermal_occupation(self.modes[j].omega, self.temperature)


@dataclass(frozen=True)
class FrameConfig:
    """Rotating-frame bookkeeping for one interaction window."""

    omega_ac: float
    active_modes: frozenset[int] = frozenset()
    rwa_drop_detuned: bool = True

    def __post_init__(self):
        object.__setattr__(self, "active_modes", frozenset(self.active_modes))


@dataclass(frozen=True)
class DissipatorSet:
    """Jump operators with their rates; rates are plain 1/s."""

    terms: tuple[tuple[float, Operator], ...]

    def __post_init__(self):
        for rate, _ in self.terms:
            if rate < 0:
                raise PhysicsError(f"negative dissipator rate {rate}")

    def __iter__(self):
        return iter(self.terms)

    def __len__(self):
        return len(self.terms)


@dataclass
class Trajectory:
    """Time series of metric records plus (sparsely) stored snapshots."""

    times: np.ndarray
    records: dict[str, np.ndarray]
    snapshots: list[tuple[float, DensityMatrix]] = field(default_factory=list)
    audits: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise NumericError("trajectory times must be strictly increasing")
        self.times = t


### mode classification ###

ACTIVE, RETAINED, DROPPED = "active", "retained", "dropped"


def _classify_modes(spec: SystemSpec, frame: FrameConfig) -> list[str]:
    out = []
    for j, m in enumerate(spec.modes):
        delta = m.omega - frame.omega_ac
        if j in frame.active_modes:
            if abs(delta) > m.g_tilde / 10.0:
                raise PhysicsError(
                    f"mode {j} labeled resonant but |Delta| = {abs(delta):.3e} "
                    f"> g_tilde/10 = {m.g_tilde / 10.0:.3e}"
                )
            out.append(ACTIVE)
        elif frame.rwa_drop_detuned and abs(delta) >= 100.0 * m.g_tilde:
            out.append(DROPPED)
        else:
            out.append(RETAINED)
    return out


def _rwa_warn(spec: SystemSpec, frame: FrameConfig) -> None:
    for j, m in enumerate(spec.modes):
        ratio = m.g_tilde / (m.omega + frame.omega_ac)
        if ratio >= 0.01:
            warnings.warn(
                f"mode {j}: g_tilde/(omega+omega_ac) = {ratio:.3f} >= 0.01; "
                "the rotating-wave approximation behind the window Hamiltonian "
                "is questionable",
                stacklevel=3,
            )


### dense builders (API + oracle inputs) ###


def build_hamiltonian(spec: SystemSpec, frame: FrameConfig, coupling_on: bool = True,
                      theta: float | None = None, omega_q_prime: float = 0.0) -> Operator:
    """Dense rotating-frame Hamiltonian (units of rad/s, i.e. H/hbar).

    Dropped modes (rwa_drop_detuned and |Delta_j| >= 100 g_j) contribute no
    terms at all -- they are tracked in their own frames, where the detuning
    term vanishes identically (see module docstring).
    """
    space = spec.space()
    L = spec.transmon.levels
    nq = np.arange(L, dtype=float)
    theta = spec.coupling_phase_theta if theta is None else theta
    # qubit drift: residual frequency + anharmonicity  -(E_C/2) n(n-1)
    ec = TWO_PI * spec.transmon.E_C
    hq = omega_q_prime * nq - 0.5 * ec * nq * (nq - 1.0)
    h = embed(Operator(HilbertSpace((L,)), np.diag(hq).astype(complex)), 0, space).matrix.copy()
    kinds = _classify_modes(spec, frame)
    for j, (m, kind) in enumerate(zip(spec.modes, kinds)):
        if kind == DROPPED:
            continue
        slot = 1 + j
        a, adag, n = mode_operators(m.fock_dim)
        delta = m.omega - frame.omega_ac
        h += delta * embed(n, slot, space).matrix
        if coupling_on:
            mj = a.matrix * np.exp(1j * theta) + adag.matrix * np.exp(-1j * theta)
            nq_op = embed(Operator(HilbertSpace((L,)), np.diag(nq).astype(complex)), 0, space)
            mj_op = embed(Operator(a.space, mj), slot, space)
            h += -m.g_tilde * (nq_op.matrix @ mj_op.matrix)
    return Operator(space, h)


def build_dissipators(spec: SystemSpec) -> DissipatorSet:
    """Thermal mode dissipators plus qubit decay/dephasing, zero rates dropped."""
    space = spec.space()
    L = spec.transmon.levels
    terms: list[tuple[float, Operator]] = []
    for j, m in enumerate(spec.modes):
        slot = 1 + j
        a, adag, _ = mode_operators(m.fock_dim)
        kappa = m.omega / m.Q
        n_bath = spec.bath_occupation(j)
        if kappa * n_bath > 0:
            terms.append((kappa * n_bath, embed(adag, slot, space)))
        if kappa * (n_bath + 1.0) > 0:
            terms.append((kappa * (n_bath + 1.0), embed(a, slot, space)))
    c, cdag, nq = mode_operators(L)
    if math.isfinite(spec.transmon.T1):
        terms.append((1.0 / spec.transmon.T1, embed(c, 0, space)))
    if math.isfinite(spec.transmon.T2):
        terms.append((1.0 / spec.transmon.T2, embed(nq, 0, space)))
    return DissipatorSet(tuple(terms))


def lindblad_rhs(rho: DensityMatrix | np.ndarray, H: Operator,
                 dissipators: DissipatorSet | Iterable[tuple[float, Operator]]) -> np.ndarray:
    """Reference drho/dt = i[rho,H] + sum rate * L[o] rho, termwise dense.

    This is the plain matrix-product form (no superoperator is ever built).
    The production propagator uses the structured tensor kernels instead;
    the two are cross-checked against each other and against the dense
    superoperator oracle in the test suite.
    """
    r = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    hm = H.matrix
    if r.shape != hm.shape:
        raise InvalidDimensionError(f"shape mismatch rho {r.shape} vs H {hm.shape}")
    out = 1j * (r @ hm - hm @ r)
    for rate, op in dissipators:
        o = op.matrix
        if o.shape != r.shape:
            raise InvalidDimensionError("dissipator dimension mismatch")
        odo = o.conj().T @ o
        out += rate * (o @ r @ o.conj().T - 0.5 * (odo @ r + r @ odo))
    return out


def dense_superoperator(H: Operator, dissipators) -> np.ndarray:
    """Explicit dim^2 x dim^2 Liouvillian (oracle only; row-major vec).

    With vec(rho) = rho.reshape(-1) (row stacking), vec(A rho B) =
    (A kron B^T) vec(rho), so

        Lsup = i[(I kron H^T) - (H kron I)]
             + sum rate [ (o kron conj(o)) - (o^dag o kron I)/2 - (I kron (o^dag o)^T)/2 ]
    """
    hm = H.matrix
    d = hm.shape[0]
    eye = np.eye(d, dtype=complex)
    sup = 1j * (np.kron(eye, hm.T) - np.kron(hm, eye))
    for rate, op in dissipators:
        o = op.matrix
        odo = o.conj().T @ o
        sup += rate * (np.kron(o, o.conj())
                       - 0.5 * np.kron(odo, eye)
                       - 0.5 * np.kron(eye, odo.T))
    return sup


### structured right-hand side ###


def _bshape(ndim: int, axes_vecs: Sequence[tuple[int, np.ndarray]]) -> np.ndarray:
    """Broadcastable product of 1-d coefficient vectors placed on given axes."""
    out = np.array(1.0)
    for ax, vec in axes_vecs:
        shape = [1] * ndim
        shape[ax] = len(vec)
        out = out * vec.reshape(shape)
    return out


class _ShiftOp:
    """out[slices_out] += coef * rho[slices_in]   (precompiled slice arithmetic)."""

    __slots__ = ("sl_out", "sl_in", "coef")

    def __init__(self, sl_out, sl_in, coef):
        self.sl_out = sl_out
        self.sl_in = sl_in
        self.coef = coef

    def apply(self, src, dst):
        dst[self.sl_out] += self.coef * src[self.sl_in]


def _slices(ndim, **axis_sl):
    sl = [slice(None)] * ndim
    for ax, s in axis_sl.items():
        sl[int(ax)] = s
    return tuple(sl)


class _StructuredRHS:
    """Matrix-free Lindblad RHS for a window, built once per SystemSpec/frame.

    rho is manipulated as a tensor of shape dims + dims; the Hamiltonian
    commutator is assembled from a diagonal drift field plus ladder shifts,
    and every dissipator anticommutator is diagonal (all jump operators here
    have diagonal o^dag o), so it folds into the same drift field.
    """

    def __init__(self, spec: SystemSpec, frame: FrameConfig, coupling_on: bool,
                 theta: float | None = None, omega_q_prime: float = 0.0):
        self.dims = tuple(spec.space().dims)
        self.n = len(self.dims)
        self.D = int(np.prod(self.dims))
        L = self.dims[0]
        nd = 2 * self.n
        nq = np.arange(L, dtype=float)
        theta = spec.coupling_phase_theta if theta is None else theta
        kinds = _classify_modes(spec, frame)

        # --- diagonal Hamiltonian field h (rad/s) and total leak field gamma ---
        ec = TWO_PI * spec.transmon.E_C
        h_axes = [(0, omega_q_prime * nq - 0.5 * ec * nq * (nq - 1.0))]
        g_axes = []
        t1 = spec.transmon.T1
        t2 = spec.transmon.T2
        if math.isfinite(t1):
            g_axes.append((0, nq / t1))            # diag(c^dag c)
        if math.isfinite(t2):
            g_axes.append((0, nq * nq / t2))       # diag((c^dag c)^2)
        self.sandwiches: list[_ShiftOp] = []
        self.full_sandwich = None                   # (coef broadcast) for L[c^dag c]
        self.couplings = []                         # (shift ops acting on col side)

        for j, (m, kind) in enumerate(zip(spec.modes, kinds)):
            if kind == DROPPED:
                continue
            ax = 1 + j
            F = self.dims[ax]
            ns = np.arange(F, dtype=float)
            delta = m.omega - frame.omega_ac
            if delta != 0.0:
                h_axes.append((ax, delta * ns))
        # dissipators act in every window regardless of detuning bookkeeping
        for j, m in enumerate(spec.modes):
            ax = 1 + j
            F = self.dims[ax]
            ns = np.arange(F, dtype=float)
            kappa = m.omega / m.Q
            n_bath = spec.bath_occupation(j)
            r_dn = kappa * (n_bath + 1.0)
            r_up = kappa * n_bath
            if r_dn > 0:
                g_axes.append((ax, r_dn * ns))              # diag(a^dag a)
            if r_up > 0:
                aad = ns + 1.0
                aad[-1] = 0.0   # truncated a a^dag: no creation out of the top level
                g_axes.append((ax, r_up * aad))
            sq = np.sqrt(ns[1:])                            # sqrt(1..F-1)
            if r_dn > 0:    # a rho a^dag : shift both axes down
                coef = r_dn * _bshape(nd, [(ax, sq), (self.n + ax, sq)])
                self.sandwiches.append(_ShiftOp(
                    _slices(nd, **{str(ax): slice(0, F - 1), str(self.n + ax): slice(0, F - 1)}),
                    _slices(nd, **{str(ax): slice(1, F), str(self.n + ax): slice(1, F)}),
                    coef))
            if r_up > 0:    # a^dag rho a : shift both axes up
                coef = r_up * _bshape(nd, [(ax, sq), (self.n + ax, sq)])
                self.sandwiches.append(_ShiftOp(
                    _slices(nd, **{str(ax): slice(1, F), str(self.n + ax): slice(1, F)}),
                    _slices(nd, **{str(ax): slice(0, F - 1), str(self.n + ax): slice(0, F - 1)}),
                    coef))

        # qubit sandwiches
        sqq = np.sqrt(nq[1:])
        if math.isfinite(t1):   # c rho c^dag
            coef = (1.0 / t1) * _bshape(nd, [(0, sqq), (self.n, sqq)])
            self.sandwiches.append(_ShiftOp(
                _slices(nd, **{"0": slice(0, L - 1), str(self.n): slice(0, L - 1)}),
                _slices(nd, **{"0": slice(1, L), str(self.n): slice(1, L)}),
                coef))
        if math.isfinite(t2):   # (c^dag c) rho (c^dag c): pure elementwise scale
            self.full_sandwich = (1.0 / t2) * _bshape(nd, [(0, nq), (self.n, nq)])

        # coupling shifts: B = sum_j i*kappa_j * rho . (N_q kron M_j), col side only
        if coupling_on:
            for j, (m, kind) in enumerate(zip(spec.modes, kinds)):
                if kind == DROPPED:
                    continue
                ax = 1 + j
                F = self.dims[ax]
                sq = np.sqrt(np.arange(1, F, dtype=float))
                pref = 1j * (-m.g_tilde)
                # right-multiply by  e^{i theta} a: out[.., m] += e^{i th} sqrt(m) x[.., m-1]
                coef_a = (pref * np.exp(1j * theta)) * _bshape(
                    nd, [(self.n, nq), (self.n + ax, sq)])
                self.couplings.append(_ShiftOp(
                    _slices(nd, **{str(self.n + ax): slice(1, F)}),
                    _slices(nd, **{str(self.n + ax): slice(0, F - 1)}),
                    coef_a))
                # right-multiply by e^{-i theta} a^dag: out[.., m] += e^{-i th} sqrt(m+1) x[.., m+1]
                coef_ad = (pref * np.exp(-1j * theta)) * _bshape(
                    nd, [(self.n, nq), (self.n + ax, sq)])
                self.couplings.append(_ShiftOp(
                    _slices(nd, **{str(self.n + ax): slice(0, F - 1)}),
                    _slices(nd, **{str(self.n + ax): slice(1, F)}),
                    coef_ad))

        # assemble drift Psi[I,J] = -i (h[I]-h[J]) - (gamma[I]+gamma[J])/2
        h_field = np.zeros(self.dims)
        for ax, vec in h_axes:
            h_field = h_field + _bshape(self.n, [(ax, vec)])
        g_field = np.zeros(self.dims)
        for ax, vec in g_axes:
            g_field = g_field + _bshape(self.n, [(ax, vec)])
        hv = h_field.reshape(self.D)
        gv = g_field.reshape(self.D)
        self.psi = (-1j) * (hv[:, None] - hv[None, :]) - 0.5 * (gv[:, None] + gv[None, :])

    def __call__(self, rho: np.ndarray, out: np.ndarray, scratch: np.ndarray) -> None:
        """out <- RHS(rho).  rho must be Hermitian; all args shape (D, D)."""
        ts = self.dims + self.dims
        r = rho.reshape(ts)
        o = out.reshape(ts)
        out.fill(0.0)
        for op in self.couplings:
            op.apply(r, o)
        # B + B^dag completes i[rho, H_coupling]; scratch is free until the
        # drift multiply below, so borrow it to avoid a 2 D^2 allocation
        np.conjugate(out, out=scratch)
        out += scratch.T
        np.multiply(self.psi, rho, out=scratch)
        out += scratch
        for op in self.sandwiches:
            op.apply(r, o)
        if self.full_sandwich is not None:
            s = scratch.reshape(ts)
            np.multiply(self.full_sandwich, r, out=s)
            out += scratch


### integrators ###

# Dormand-Prince 5(4) coefficients (FSAL)
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_BH = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_DP_E = tuple(b - bh for b, bh in zip(_DP_B, _DP_BH))


def _err_norm(e: np.ndarray, y0: np.ndarray, y1: np.ndarray,
              rtol: float, atol: float) -> float:
    sc = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    q = np.abs(e) / sc
    return float(np.sqrt(np.mean(q * q)))


class _Dopri5:
    """Adaptive embedded RK 5(4) marching a (D,D) complex array in place."""

    def __init__(self, rhs_call, shape, rtol, atol):
        self.rhs = rhs_call
        self.rtol = rtol
        self.atol = atol
        self.k = [np.zeros(shape, dtype=complex) for _ in range(7)]
        self.work = np.zeros(shape, dtype=complex)
        self.scratch = np.zeros(shape, dtype=complex)
        self.ynew = np.zeros(shape, dtype=complex)
        self.h = None
        self.have_k1 = False
        self.n_steps = 0
        self.n_rejected = 0
        self.n_rhs = 0

    def _eval(self, y, out):
        self.rhs(y, out, self.scratch)
        self.n_rhs += 1

    def _initial_h(self, y, span):
        self._eval(y, self.k[0])
        self.have_k1 = True
        sc = self.atol + self.rtol * np.abs(y)
        d0 = float(np.sqrt(np.mean((np.abs(y) / sc) ** 2)))
        d1 = float(np.sqrt(np.mean((np.abs(self.k[0]) / sc) ** 2)))
        h = 0.01 * d0 / d1 if d1 > 1e-30 else span * 1e-3
        return min(h, span)

    def advance(self, y: np.ndarray, t0: float, t1: float) -> None:
        """Integrate y from t0 to t1 in place (t1 > t0)."""
        span = t1 - t0
        if self.h is None:
            self.h = self._initial_h(y, span)
        t = t0
        k = self.k
        while t < t1 - 1e-15 * max(abs(t1), 1.0):
            if not self.have_k1:
                self._eval(y, k[0])
                self.have_k1 = True
            h = min(self.h, t1 - t)
            clipped = h < self.h
            for s in range(1, 7):
                np.copyto(self.work, y)
                for i, a in enumerate(_DP_A[s]):
                    if a != 0.0:
                        self.work += (h * a) * k[i]
                if s < 6:
                    self._eval(self.work, k[s])
                else:
                    # stage 6 work array *is* y_new (b row equals a row 7, FSAL)
                    np.copyto(self.ynew, self.work)
                    self._eval(self.ynew, k[6])
            np.multiply(k[0], _DP_E[0], out=self.work)
            for i in (2, 3, 4, 5, 6):
                self.work += _DP_E[i] * k[i]
            self.work *= h
            err = _err_norm(self.work, y, self.ynew, self.rtol, self.atol)
            if err <= 1.0:
                t += h
                np.copyto(y, self.ynew)
                np.copyto(k[0], k[6])       # FSAL
                self.n_steps += 1
                fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
                newh = h * fac
                if not clipped or newh > self.h:
                    self.h = newh
            else:
                self.n_rejected += 1
                self.have_k1 = True          # k1 still valid at (t, y)
                self.h = h * min(1.0, max(0.1, 0.9 * err ** -0.2))
                if self.h < 1e-13 * span:
                    raise StiffnessError(
                        f"step size underflow at t={t:.3e} (h={self.h:.3e})")


class _RK4Fixed:
    """Classic fixed-step RK4; bit-reproducible given identical inputs."""

    def __init__(self, rhs_call, shape, dt):
        self.rhs = rhs_call
        self.dt = float(dt)
        self.k1 = np.zeros(shape, dtype=complex)
        self.k2 = np.zeros(shape, dtype=complex)
        self.k3 = np.zeros(shape, dtype=complex)
        self.k4 = np.zeros(shape, dtype=complex)
        self.work = np.zeros(shape, dtype=complex)
        self.scratch = np.zeros(shape, dtype=complex)
        self.n_steps = 0
        self.n_rhs = 0

    def _eval(self, y, out):
        self.rhs(y, out, self.scratch)
        self.n_rhs += 1

    def advance(self, y: np.ndarray, t0: float, t1: float) -> None:
        span = t1 - t0
        n_sub = max(1, int(math.ceil(span / self.dt - 1e-12)))
        h = span / n_sub
        for _ in range(n_sub):
            self._eval(y, self.k1)
            np.copyto(self.work, y)
            self.work += (0.5 * h) * self.k1
            self._eval(self.work, self.k2)
            np.copyto(self.work, y)
            self.work += (0.5 * h) * self.k2
            self._eval(self.work, self.k3)
            np.copyto(self.work, y)
            self.work += h * self.k3
            self._eval(self.work, self.k4)
            y += (h / 6.0) * self.k1
            y += (h / 3.0) * self.k2
            y += (h / 3.0) * self.k3
            y += (h / 6.0) * self.k4
            self.n_steps += 1


### audits ###


def _occupations(rho_t: np.ndarray, dims: tuple[int, ...]) -> list[float]:
    """<n_j> for each mode slot from the diagonal of rho."""
    d = int(np.prod(dims))
    diag = np.real(np.einsum("ii->i", rho_t.reshape(d, d))).reshape(dims)
    out = []
    for ax in range(1, len(dims)):
        pops = diag.sum(axis=tuple(i for i in range(len(dims)) if i != ax))
        out.append(float(np.dot(pops, np.arange(dims[ax]))))
    return out


def _top_fock_population(rho_t: np.ndarray, dims: tuple[int, ...]) -> list[float]:
    """Combined population of the top two Fock levels, per mode."""
    d = int(np.prod(dims))
    diag = np.real(np.einsum("ii->i", rho_t.reshape(d, d))).reshape(dims)
    out = []
    for ax in range(1, len(dims)):
        pops = diag.sum(axis=tuple(i for i in range(len(dims)) if i != ax))
        out.append(float(pops[-2:].sum()))
    return out


def evolve(rho0: DensityMatrix, spec: SystemSpec, frame: FrameConfig,
           duration: float, coupling_on: bool = True,
           record_every: float | None = None, *,
           theta: float | None = None, omega_q_prime: float = 0.0,
           rtol: float = 1e-8, atol: float = 1e-10,
           method: str = "dopri5", fixed_dt: float | None = None,
           observer: Callable[[float, np.ndarray], dict] | None = None,
           snapshot_stride: int = 0, t_offset: float = 0.0,
           truncation_tol: float = 1e-4) -> Trajectory:
    """Propagate the master equation for `duration`, recording on a grid.

    record_every sets the metric/record grid spacing (defaults to the full
    duration, i.e. endpoints only).  snapshot_stride > 0 stores a full
    DensityMatrix every that-many grid points (plus the final point); 0 keeps
    only the endpoints.  The observer callback receives (t, rho_ndarray) at
    every grid time and may return extra record columns.

    Raises TruncationOverflowError when the top two Fock levels of any mode
    accumulate more than `truncation_tol` population, and StiffnessError on
    step-size underflow.
    """
    if duration <= 0:
        raise PhysicsError("duration must be positive")
    space = spec.space()
    if rho0.space.dims != space.dims:
        raise InvalidDimensionError(
            f"initial state dims {rho0.space.dims} != system dims {space.dims}")
    if coupling_on:
        _rwa_warn(spec, frame)
    dims = space.dims
    D = space.total_dim
    if record_every is None or record_every >= duration:
        n_rec = 1
    else:
        if record_every <= 0:
            raise PhysicsError("record_every must be positive")
        n_rec = max(1, int(round(duration / record_every)))
    times = np.linspace(0.0, duration, n_rec + 1)

    rhs = _StructuredRHS(spec, frame, coupling_on, theta=theta,
                         omega_q_prime=omega_q_prime)
    y = np.array(rho0.matrix, dtype=complex)
    y = 0.5 * (y + y.conj().T)      # exact Hermitian start; kernels preserve it

    if method == "dopri5":
        stepper = _Dopri5(rhs, (D, D), rtol, atol)
    elif method == "rk4":
        if fixed_dt is None or fixed_dt <= 0:
            raise PhysicsError("rk4 mode needs fixed_dt > 0")
        stepper = _RK4Fixed(rhs, (D, D), fixed_dt)
    else:
        raise PhysicsError(f"unknown integrator {method!r}")

    rec: dict[str, list[float]] = {}
    snapshots: list[tuple[float, DensityMatrix]] = []
    max_trace_defect = 0.0
    max_herm_defect = 0.0
    max_leak = 0.0

    def record(idx: int, t: float) -> None:
        nonlocal max_trace_defect, max_herm_defect, max_leak
        # re-Hermitize at record points; drift per step is O(eps) but free to remove
        np.copyto(y, 0.5 * (y + y.conj().T))
        occ = _occupations(y, dims)
        tops = _top_fock_population(y, dims)
        tr_def = abs(float(np.real(np.trace(y))) - 1.0)
        herm_def = 0.0  # exact by construction after the symmetrization above
        purity = float(np.sum(np.abs(y) ** 2).real)
        row = {"time_s": t_offset + t, "purity": purity, "trace_defect": tr_def}
        for j, v in enumerate(occ):
            row[f"n_mode{j + 1}"] = v
        for j, v in enumerate(tops):
            row[f"top_fock_pop_mode{j + 1}"] = v
            if v > truncation_tol:
                raise TruncationOverflowError(
                    f"mode {j + 1} top-two Fock population {v:.3e} > {truncation_tol:g} "
                    f"at t={t_offset + t:.3e}s; raise fock_dim")
        if observer is not None:
            extra = observer(t_offset + t, y)
            if extra:
                row.update(extra)
        for key, v in row.items():
            rec.setdefault(key, []).append(float(v))
        max_trace_defect = max(max_trace_defect, tr_def)
        max_herm_defect = max(max_herm_defect, herm_def)
        max_leak = max(max_leak, max(tops))
        want_snap = (idx == len(times) - 1 or idx == 0
                     or (snapshot_stride > 0 and idx % snapshot_stride == 0))
        if want_snap:
            snapshots.append((t_offset + t, DensityMatrix(space, y.copy())))

    record(0, 0.0)
    for i in range(1, len(times)):
        stepper.advance(y, times[i - 1], times[i])
        record(i, times[i])

    records = {k: np.asarray(v) for k, v in rec.items()}
    audits = {
        "max_trace_defect": max_trace_defect,
        "max_hermiticity_defect": max_herm_defect,
        "max_truncation_population": max_leak,
        "n_steps": float(stepper.n_steps),
        "n_rhs_evals": float(stepper.n_rhs),
    }
    if isinstance(stepper, _Dopri5):
        audits["n_rejected_steps"] = float(stepper.n_rejected)
    return Trajectory(times=records["time_s"], records=records,
                      snapshots=snapshots, audits=audits)


### initial states ###


def thermal_state(dim: int, n_th: float) -> DensityMatrix:
    """Truncated, renormalized Gibbs state of a harmonic mode."""
    if dim < 2:
        raise InvalidDimensionError("dim must be >= 2")
    if n_th < 0:
        raise PhysicsError("n_th must be >= 0")
    if n_th == 0.0:
        p = np.zeros(dim)
        p[0] = 1.0
    else:
        r = n_th / (1.0 + n_th)
        tail = r ** dim
        if tail > 1e-9:
            raise NumericError(
                f"thermal tail {tail:.3e} beyond dim={dim} too heavy for n_th={n_th}")
        p = (1.0 - r) * r ** np.arange(dim)
        p /= p.sum()
    return DensityMatrix(HilbertSpace((dim,)), np.diag(p).astype(complex))


def initial_state(spec: SystemSpec) -> DensityMatrix:
    """Qubit ground state tensor thermal modes at their configured n_th."""
    L = spec.transmon.levels
    q = np.zeros((L, L), dtype=complex)
    q[0, 0] = 1.0
    rho = q
    for m in spec.modes:
        rho = np.kron(rho, thermal_state(m.fock_dim, m.n_th).matrix)
    return DensityMatrix(spec.space(), rho)
