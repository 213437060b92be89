"""Pulse/window sequences that assemble entangled coherent states.

A protocol is a flat tuple of steps:

* PrepareSuperposition(chi): qubit |0> -> (|0> + e^{i chi} |1>)/sqrt(2).
* QubitPulse(axis, angle): R = exp(+i angle sigma_axis / 2) on the qubit's
  two-level subspace (identity on any higher transmon levels).
* InteractionWindow(omega_ac, duration, theta): flux modulation at omega_ac
  for `duration`; evolved under the full master equation.  Modes within
  g/10 of omega_ac are treated as resonant; far-detuned modes (>= 100 g)
  are left to precess freely in their own frames.
* ProjectQubit(outcome): projective qubit measurement, keeping one outcome
  and renormalizing; returns the mode-only state.

Builders produce the three canonical sequences.  All of them aim the window
phase so the realized branch amplitude equals `alpha_target` exactly:
the excited-qubit branch picks up alpha = g * tau * e^{i(pi/2 - theta)}, so
the builders set theta = pi/2 - arg(alpha_target).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .dynamics import (
    FrameConfig,
    SystemSpec,
    Trajectory,
    evolve,
    initial_state,
)
from .errors import (
    ImpossibleOutcomeError,
    InvalidDimensionError,
    SequencingError,
)
from .hilbert import DensityMatrix, HilbertSpace

PROJECTION_PROB_FLOOR = 1e-12

__all__ = [
    "PrepareSuperposition",
    "QubitPulse",
    "InteractionWindow",
    "ProjectQubit",
    "Step",
    "ProtocolResult",
    "rotation_matrix",
    "prepare_matrix",
    "apply_qubit_unitary",
    "project_qubit",
    "project_qubit_raw",
    "window_theta_for",
    "bell_sequence",
    "noon_sequence",
    "general_ecs_sequence",
    "validate_sequence",
    "run_protocol",
    "ideal_components",
    "tail_unitary",
    "sequence_duration",
]


@dataclass(frozen=True)
class PrepareSuperposition:
    chi: float = 0.0


@dataclass(frozen=True)
class QubitPulse:
    axis: str
    angle: float

    def __post_init__(self):
        if self.axis not in ("x", "y", "z"):
            raise SequencingError(f"unknown pulse axis {self.axis!r}")


@dataclass(frozen=True)
class InteractionWindow:
    omega_ac: float
    duration: float
    theta: float | None = None
    rwa_drop_detuned: bool = True

    def __post_init__(self):
        if self.duration <= 0:
            raise SequencingError("window duration must be positive")


@dataclass(frozen=True)
class ProjectQubit:
    outcome: int = 0

    def __post_init__(self):
        if self.outcome < 0:
            raise SequencingError("outcome must be a nonnegative level index")


Step = Union[PrepareSuperposition, QubitPulse, InteractionWindow, ProjectQubit]

_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def rotation_matrix(axis: str, angle: float, levels: int = 2) -> np.ndarray:
    """R = exp(+i angle sigma/2) acting on the lowest two levels."""
    u2 = math.cos(angle / 2.0) * np.eye(2) + 1j * math.sin(angle / 2.0) * _PAULI[axis]
    u = np.eye(levels, dtype=complex)
    u[:2, :2] = u2
    return u


def prepare_matrix(chi: float, levels: int = 2) -> np.ndarray:
    """Unitary sending |0> to (|0> + e^{i chi}|1>)/sqrt(2)."""
    s = 1.0 / math.sqrt(2.0)
    u2 = np.array([[s, -s * cmath.exp(-1j * chi)],
                   [s * cmath.exp(1j * chi), s]], dtype=complex)
    u = np.eye(levels, dtype=complex)
    u[:2, :2] = u2
    return u


def _apply_axis(u: np.ndarray, tens: np.ndarray, axis: int) -> np.ndarray:
    out = np.tensordot(u, tens, axes=([1], [axis]))
    return np.moveaxis(out, 0, axis)


def apply_qubit_unitary(rho: np.ndarray, dims: tuple[int, ...], u: np.ndarray) -> np.ndarray:
    """(U x I) rho (U x I)^dag without forming the full-space unitary."""
    n = len(dims)
    d = int(np.prod(dims))
    if rho.shape != (d, d):
        raise InvalidDimensionError(f"rho shape {rho.shape} incompatible with dims {dims}")
    if u.shape != (dims[0], dims[0]):
        raise InvalidDimensionError(
            f"qubit unitary shape {u.shape} does not match qubit dim {dims[0]}")
    t = rho.reshape(dims + dims)
    t = _apply_axis(u, t, 0)
    t = _apply_axis(u.conj(), t, n)
    return np.ascontiguousarray(t.reshape(d, d))


def project_qubit(rho: DensityMatrix, outcome: int,
                  prob_floor: float = PROJECTION_PROB_FLOOR
                  ) -> tuple[float, DensityMatrix]:
    """Measure the qubit, keep `outcome`, renormalize; returns (p, mode state)."""
    dims = rho.space.dims
    L = dims[0]
    if not 0 <= outcome < L:
        raise SequencingError(f"outcome {outcome} outside transmon levels 0..{L - 1}")
    M = int(np.prod(dims[1:]))
    block = rho.matrix.reshape(L, M, L, M)[outcome, :, outcome, :]
    p = float(np.real(np.trace(block)))
    if p < prob_floor:
        raise ImpossibleOutcomeError(
            f"qubit outcome {outcome} has probability {p:.3e} < {prob_floor:g}")
    return p, DensityMatrix(HilbertSpace(dims[1:]), block / p)


def project_qubit_raw(rho: np.ndarray, dims: tuple[int, ...],
                      qubit_vector: np.ndarray) -> tuple[float, np.ndarray]:
    """<v|rho|v> over the qubit slot, unnormalized: (weight, mode block).

    Fast path for per-grid-point conditional metrics; no DensityMatrix
    validation.  `qubit_vector` is a length-L amplitude vector.
    """
    L = dims[0]
    M = int(np.prod(dims[1:]))
    t = rho.reshape(L, M, L, M)
    block = np.einsum("i,iajb,j->ab", qubit_vector.conj(), t, qubit_vector,
                      optimize=True)
    p = float(np.real(np.trace(block)))
    return p, block


def window_theta_for(alpha_target: complex) -> float:
    """Window phase that realizes the requested complex amplitude."""
    return 0.5 * math.pi - cmath.phase(complex(alpha_target))


### sequence builders ###


def _require_two_modes(system: SystemSpec, what: str) -> None:
    if len(system.modes) != 2:
        raise SequencingError(f"{what} needs exactly 2 modes, got {len(system.modes)}")


def bell_sequence(system: SystemSpec, alpha_target: complex, chi: float = 0.0,
                  outcome: int = 0) -> tuple[Step, ...]:
    """(|0,0> + e^{i chi}|a,a>)-type sequence on two degenerate modes.

    Both modes are driven in a single window, so they must be mutually
    resonant and equally coupled; otherwise the branch amplitudes could not
    match a single alpha_target.
    """
    _require_two_modes(system, "bell_sequence")
    m1, m2 = system.modes
    g = m1.g_tilde
    if abs(m1.omega - m2.omega) > min(m1.g_tilde, m2.g_tilde) / 10.0:
        raise SequencingError(
            "bell_sequence needs degenerate modes: "
            f"|w1-w2| = {abs(m1.omega - m2.omega):.3e} exceeds g/10")
    if abs(m1.g_tilde - m2.g_tilde) > 1e-9 * g:
        raise SequencingError("bell_sequence needs equal couplings on both modes")
    a = complex(alpha_target)
    if abs(a) == 0:
        raise SequencingError("alpha_target must be nonzero")
    return (
        PrepareSuperposition(chi),
        InteractionWindow(omega_ac=m1.omega, duration=abs(a) / g,
                          theta=window_theta_for(a)),
        QubitPulse("y", math.pi / 2.0),
        ProjectQubit(outcome),
    )


def _require_separated(system: SystemSpec, what: str) -> None:
    m1, m2 = system.modes
    gap = abs(m1.omega - m2.omega)
    need = 100.0 * max(m1.g_tilde, m2.g_tilde)
    if gap < need:
        raise SequencingError(
            f"{what} addresses each mode in its own window; mode splitting "
            f"{gap:.3e} rad/s is below the 100*g separation {need:.3e}")


def noon_sequence(system: SystemSpec, alpha_target: complex,
                  outcome: int = 0) -> tuple[Step, ...]:
    """(|a,0> + |0,a>)-type sequence: displace, flip, displace the other mode."""
    _require_two_modes(system, "noon_sequence")
    _require_separated(system, "noon_sequence")
    m1, m2 = system.modes
    a = complex(alpha_target)
    if abs(a) == 0:
        raise SequencingError("alpha_target must be nonzero")
    th = window_theta_for(a)
    return (
        PrepareSuperposition(0.0),
        InteractionWindow(omega_ac=m1.omega, duration=abs(a) / m1.g_tilde, theta=th),
        QubitPulse("x", math.pi),
        InteractionWindow(omega_ac=m2.omega, duration=abs(a) / m2.g_tilde, theta=th),
        QubitPulse("y", math.pi / 2.0),
        ProjectQubit(outcome),
    )


def general_ecs_sequence(system: SystemSpec, alpha_target: complex,
                         outcome: int = 0) -> tuple[Step, ...]:
    """Four-component sequence: outcome 0 keeps (|00> + |0a> + |a0> - |aa>)/2.

    The mid-sequence pi/2 rotation splits each branch before the second
    window; the closing rotation must be the inverse (-pi/2), which is what
    makes outcome 0 carry the (+,+,+,-) sign pattern.
    """
    _require_two_modes(system, "general_ecs_sequence")
    _require_separated(system, "general_ecs_sequence")
    m1, m2 = system.modes
    a = complex(alpha_target)
    if abs(a) == 0:
        raise SequencingError("alpha_target must be nonzero")
    th = window_theta_for(a)
    return (
        PrepareSuperposition(0.0),
        InteractionWindow(omega_ac=m1.omega, duration=abs(a) / m1.g_tilde, theta=th),
        QubitPulse("y", math.pi / 2.0),
        InteractionWindow(omega_ac=m2.omega, duration=abs(a) / m2.g_tilde, theta=th),
        QubitPulse("y", -math.pi / 2.0),
        ProjectQubit(outcome),
    )


### executor ###


@dataclass
class ProtocolResult:
    trajectory: Trajectory
    final_full: DensityMatrix
    projected: DensityMatrix | None = None
    probability: float | None = None
    windows: tuple[InteractionWindow, ...] = ()


def validate_sequence(steps: Sequence[Step]) -> None:
    if not steps:
        raise SequencingError("empty protocol")
    for i, s in enumerate(steps):
        if isinstance(s, ProjectQubit) and i != len(steps) - 1:
            raise SequencingError("ProjectQubit must be the final step")
    if sum(isinstance(s, ProjectQubit) for s in steps) > 1:
        raise SequencingError("at most one ProjectQubit per protocol")
    if not any(isinstance(s, InteractionWindow) for s in steps):
        raise SequencingError("protocol contains no interaction window")


def _frame_for(system: SystemSpec, win: InteractionWindow) -> FrameConfig:
    active = frozenset(
        j for j, m in enumerate(system.modes)
        if abs(m.omega - win.omega_ac) <= m.g_tilde / 10.0)
    return FrameConfig(omega_ac=win.omega_ac, active_modes=active,
                       rwa_drop_detuned=win.rwa_drop_detuned)


def _detuned_phase_fix(rho: np.ndarray, system: SystemSpec, frame: FrameConfig,
                       duration: float) -> np.ndarray:
    """Rotate retained detuned modes back into their own frames after a window.

    In the window frame such a mode carries Delta n as a drift; undoing it at
    the end (rho -> U rho U^dag with U = e^{+i Delta tau n}) restores the
    own-frame bookkeeping used everywhere between windows.
    """
    dims = (system.transmon.levels,) + tuple(m.fock_dim for m in system.modes)
    n = len(dims)
    t = rho.reshape(dims + dims)
    for j, m in enumerate(system.modes):
        delta = m.omega - frame.omega_ac
        if j in frame.active_modes:
            continue
        if frame.rwa_drop_detuned and abs(delta) >= 100.0 * m.g_tilde:
            continue  # dropped: never left its own frame
        if delta == 0.0:
            continue
        ph = np.exp(1j * delta * duration * np.arange(dims[1 + j]))
        sh_row = [1] * (2 * n)
        sh_row[1 + j] = dims[1 + j]
        sh_col = [1] * (2 * n)
        sh_col[n + 1 + j] = dims[1 + j]
        t = t * ph.reshape(sh_row)
        t = t * ph.conj().reshape(sh_col)
    return np.ascontiguousarray(t.reshape(rho.shape))


def sequence_duration(steps: Sequence[Step]) -> float:
    """Total evolved time: the sum of window durations (pulses are instant)."""
    return sum(s.duration for s in steps if isinstance(s, InteractionWindow))


def tail_unitary(steps: Sequence[Step], levels: int) -> np.ndarray:
    """Product of the instantaneous unitaries after the last window.

    This is the pulse block a projective measurement 'sees'; projecting the
    recorded (pre-pulse) state through it gives the same statistics as
    applying the block and then projecting.
    """
    u = np.eye(levels, dtype=complex)
    for step in steps:
        if isinstance(step, InteractionWindow):
            u = np.eye(levels, dtype=complex)
        elif isinstance(step, PrepareSuperposition):
            u = prepare_matrix(step.chi, levels) @ u
        elif isinstance(step, QubitPulse):
            u = rotation_matrix(step.axis, step.angle, levels) @ u
    return u


def ideal_components(system: SystemSpec, steps: Sequence[Step], t: float
                     ) -> list[tuple[int, tuple[complex, ...], complex]]:
    """Loss-free branch expansion of the pre-projection state at time t.

    Returns (qubit_level, mode_amplitudes, coeff) triples representing
    sum_k coeff_k |q_k> |amp_k1> |amp_k2> ... .  Windows displace the
    excited-qubit branch of their resonant modes at rate
    g * exp(i(pi/2 - theta)); pulses mix the lowest two qubit levels;
    dissipation and off-resonant residuals are ignored.  When t lands
    exactly on a window boundary the following pulses are *not* applied,
    matching the convention for recorded trajectory rows.
    """
    nm = len(system.modes)
    comps: dict[tuple[int, tuple[complex, ...]], complex] = {
        (0, (0j,) * nm): 1.0 + 0j}

    def mix(u2: np.ndarray) -> None:
        nonlocal comps
        new: dict[tuple[int, tuple[complex, ...]], complex] = {}
        for (q, amps), c in comps.items():
            for q2 in range(2):
                w = u2[q2, q]
                if w != 0:
                    key = (q2, amps)
                    new[key] = new.get(key, 0j) + c * w
        comps = {k: v for k, v in new.items() if v != 0}

    consumed = 0.0
    tol = 1e-12 * max(abs(t), 1e-300)
    for step in steps:
        if isinstance(step, PrepareSuperposition):
            mix(prepare_matrix(step.chi, 2))
        elif isinstance(step, QubitPulse):
            mix(rotation_matrix(step.axis, step.angle, 2))
        elif isinstance(step, InteractionWindow):
            dt = min(step.duration, t - consumed)
            if dt > 0.0:
                theta = (step.theta if step.theta is not None
                         else system.coupling_phase_theta)
                frame = _frame_for(system, step)
                direction = cmath.exp(1j * (0.5 * math.pi - theta))
                new: dict[tuple[int, tuple[complex, ...]], complex] = {}
                for (q, amps), c in comps.items():
                    if q == 1:
                        na = list(amps)
                        ph = 1.0 + 0j
                        for j in sorted(frame.active_modes):
                            d = system.modes[j].g_tilde * dt * direction
                            # D(d)|a> = e^{i Im(d a*)} |a + d>
                            ph *= cmath.exp(1j * (d * amps[j].conjugate()).imag)
                            na[j] = na[j] + d
                        key = (1, tuple(na))
                        new[key] = new.get(key, 0j) + c * ph
                    else:
                        new[(q, amps)] = new.get((q, amps), 0j) + c
                comps = new
            consumed += step.duration
            if t - consumed <= tol:
                break
    return [(q, amps, c) for (q, amps), c in comps.items()]


def run_protocol(system: SystemSpec, steps: Sequence[Step], *,
                 rho0: DensityMatrix | None = None,
                 record_every: float | None = None,
                 record_counts: Sequence[int] | None = None,
                 rtol: float = 1e-8, atol: float = 1e-10,
                 method: str = "dopri5", fixed_dt: float | None = None,
                 observer=None, snapshot_stride: int = 0,
                 truncation_tol: float = 1e-4) -> ProtocolResult:
    """Execute a step sequence; unitaries are instantaneous, windows evolve.

    The stitched trajectory has one record row per grid time; window
    boundaries keep a single row (instant pulses do not change occupations,
    purity or any observer metric that projects through the final pulse).
    `record_counts` pins the number of recorded intervals per window so a
    caller can guarantee an exact total row count.
    """
    validate_sequence(steps)
    if record_counts is not None:
        n_win = sum(isinstance(s, InteractionWindow) for s in steps)
        if len(record_counts) != n_win:
            raise SequencingError(
                f"record_counts has {len(record_counts)} entries for {n_win} windows")
        if any(c < 1 for c in record_counts):
            raise SequencingError("record_counts entries must be >= 1")
    space = system.space()
    dims = space.dims
    L = system.transmon.levels
    if rho0 is None:
        rho0 = initial_state(system)
    elif rho0.space.dims != dims:
        raise InvalidDimensionError("rho0 dimensions do not match the system")
    rho = np.array(rho0.matrix, dtype=complex)

    t_now = 0.0
    windows: list[InteractionWindow] = []
    merged: dict[str, list[np.ndarray]] = {}
    snapshots: list[tuple[float, DensityMatrix]] = []
    audits: dict[str, float] = {}
    probability = None
    projected = None

    def absorb(traj: Trajectory, first_window: bool) -> None:
        lo = 0 if first_window else 1
        for k, v in traj.records.items():
            merged.setdefault(k, []).append(v[lo:])
        snapshots.extend(traj.snapshots[1:] if not first_window else traj.snapshots)
        for k, v in traj.audits.items():
            if k.startswith("max_"):
                audits[k] = max(audits.get(k, 0.0), v)
            else:
                audits[k] = audits.get(k, 0.0) + v

    for step in steps:
        if isinstance(step, PrepareSuperposition):
            rho = apply_qubit_unitary(rho, dims, prepare_matrix(step.chi, L))
        elif isinstance(step, QubitPulse):
            rho = apply_qubit_unitary(rho, dims, rotation_matrix(step.axis, step.angle, L))
        elif isinstance(step, InteractionWindow):
            frame = _frame_for(system, step)
            if record_counts is not None:
                rec = step.duration / record_counts[len(windows)]
            else:
                rec = record_every
            traj = evolve(DensityMatrix(space, rho), system, frame, step.duration,
                          coupling_on=True, record_every=rec,
                          theta=step.theta, rtol=rtol, atol=atol, method=method,
                          fixed_dt=fixed_dt, observer=observer,
                          snapshot_stride=snapshot_stride, t_offset=t_now,
                          truncation_tol=truncation_tol)
            rho = np.array(traj.snapshots[-1][1].matrix, dtype=complex)
            rho = _detuned_phase_fix(rho, system, frame, step.duration)
            absorb(traj, first_window=not windows)
            windows.append(step)
            t_now += step.duration
        elif isinstance(step, ProjectQubit):
            final = DensityMatrix(space, rho)
            probability, projected = project_qubit(final, step.outcome)
        else:
            raise SequencingError(f"unknown step type {type(step).__name__}")

    records = {k: np.concatenate(v) for k, v in merged.items()}
    trajectory = Trajectory(times=records["time_s"], records=records,
                            snapshots=snapshots, audits=audits)
    return ProtocolResult(trajectory=trajectory,
                          final_full=DensityMatrix(space, rho),
                          projected=projected, probability=probability,
                          windows=tuple(windows))
