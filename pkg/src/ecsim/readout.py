"""Interferometric readout of two-mode entangled coherent states.

The probe couples an ancilla qubit to both modes through conditional
displacements: with the ancilla in (|0> + e^{i phi}|1>)/sqrt(2), the branch
conditioned on |1> receives D_i(beta_i) D_j(beta_j), after which

    <sigma_x> = Re[ e^{i phi} <Psi| D_i(beta_i) D_j(beta_j) |Psi> ].

States are described in the four-component form

    |Psi> ~ c0|0,0> + c1|0,a> + c2|a,0> + c3|a,a>,   c_k = |c_k| e^{i theta_k},

with the formal normalization sum |c_k|^2 = 1 and the gauge theta_0 = 0.
The coherent components are not orthogonal, so the physical state built from
these coefficients must be renormalized (ecs_state does); the closed-form
expectation table below drops the O(e^{-|a|^2/2}) overlap corrections and is
therefore the large-|a| limit the reconstruction inverts.

A nine-setting schedule beta in {+a, -a, 0}^2 at fixed phi = pi/4
overdetermines the accessible products; reconstruct() inverts the four
two-cosine pairs and verify_bell() turns the leftover consistency identities
into a yes/no entanglement witness for Bell-type states (c1 = c2 = 0,
|c0| = |c3|, theta_3 in {0, pi}).
"""

from __future__ import annotations

import cmath
import csv
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, InvalidDimensionError, PhysicsError
from .hilbert import (
    HilbertSpace,
    StateVector,
    coherent_state,
    default_fock_dim,
    displacement_operator,
)

SETTING_LABELS = ("++", "--", "+-", "-+", "+0", "-0", "0+", "0-", "00")
RECONSTRUCTION_PHI = math.pi / 4.0
COEFF_NORM_TOL = 1e-9

__all__ = [
    "ECSCoefficients",
    "bell_coefficients",
    "ecs_state",
    "nine_settings",
    "ReadoutRecord",
    "conditional_displacement",
    "readout_run",
    "predict_sigma_x",
    "ReconstructionResult",
    "reconstruct",
    "BellCheck",
    "verify_bell",
    "write_readout_csv",
    "read_readout_csv",
]


@dataclass(frozen=True)
class ECSCoefficients:
    """Four-component description (alpha; c0..c3) with sum |c|^2 = 1, arg c0 = 0."""

    alpha: complex
    c: tuple[complex, complex, complex, complex]

    def __post_init__(self):
        object.__setattr__(self, "alpha", complex(self.alpha))
        c = tuple(complex(v) for v in self.c)
        if len(c) != 4:
            raise InvalidDimensionError("need exactly four coefficients")
        object.__setattr__(self, "c", c)
        norm = sum(abs(v) ** 2 for v in c)
        if abs(norm - 1.0) > COEFF_NORM_TOL:
            raise PhysicsError(f"coefficient normalization sum|c|^2 = {norm} != 1")
        if abs(self.alpha) == 0:
            raise PhysicsError("alpha must be nonzero")
        if abs(c[0]) > COEFF_NORM_TOL and abs(cmath.phase(c[0])) > 1e-6:
            raise PhysicsError("gauge violation: arg(c0) must be 0 (rotate first)")

    @classmethod
    def from_unnormalized(cls, alpha: complex, c: Sequence[complex]) -> "ECSCoefficients":
        """Normalize sum |c|^2 to one and rotate the global phase so arg c0 = 0."""
        arr = np.asarray(c, dtype=complex)
        if arr.shape != (4,):
            raise InvalidDimensionError("need exactly four coefficients")
        norm = math.sqrt(float(np.sum(np.abs(arr) ** 2)))
        if norm == 0:
            raise PhysicsError("all coefficients vanish")
        arr = arr / norm
        anchor = next((v for v in arr if abs(v) > COEFF_NORM_TOL), None)
        if anchor is not None:
            arr = arr * cmath.exp(-1j * cmath.phase(anchor))
        return cls(alpha=alpha, c=tuple(arr))

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(np.asarray(self.c))

    @property
    def phases(self) -> np.ndarray:
        return np.angle(np.asarray(self.c))


def bell_coefficients(alpha: complex, sign: int = +1) -> ECSCoefficients:
    """(|0,0> +/- |a,a>)/sqrt(2) in the four-component form."""
    if sign not in (+1, -1):
        raise PhysicsError("sign must be +1 or -1")
    s = 1.0 / math.sqrt(2.0)
    return ECSCoefficients(alpha=alpha, c=(s, 0.0, 0.0, sign * s))


def ecs_state(coeffs: ECSCoefficients, fock_dim: int | None = None) -> StateVector:
    """Physical (renormalized) two-mode state for the given coefficients."""
    a = coeffs.alpha
    dim = fock_dim if fock_dim is not None else default_fock_dim(abs(a))
    v0 = coherent_state(dim, 0.0).amplitudes
    va = coherent_state(dim, a).amplitudes
    comps = (np.kron(v0, v0), np.kron(v0, va), np.kron(va, v0), np.kron(va, va))
    psi = sum(ck * b for ck, b in zip(coeffs.c, comps))
    nrm = np.linalg.norm(psi)
    if nrm < 1e-12:
        raise PhysicsError("coefficients produce a vanishing physical state")
    return StateVector(HilbertSpace((dim, dim)), psi / nrm)


def nine_settings(alpha: complex) -> tuple[tuple[str, complex, complex], ...]:
    """(label, beta_i, beta_j) for the canonical schedule beta in {+a,-a,0}^2."""
    a = complex(alpha)
    by = {"+": a, "-": -a, "0": 0.0 + 0.0j}
    return tuple((lab, by[lab[0]], by[lab[1]]) for lab in SETTING_LABELS)


@dataclass(frozen=True)
class ReadoutRecord:
    label: str
    beta_i: complex
    beta_j: complex
    phi: float
    value: float


def conditional_displacement(fock_dim: int, beta: complex,
                             ancilla_levels: int = 2) -> np.ndarray:
    """|0><0| x I + |1><1| x D(beta) on (ancilla, mode); identity above level 1."""
    if ancilla_levels < 2:
        raise InvalidDimensionError("ancilla needs at least two levels")
    d = displacement_operator(fock_dim, beta).matrix
    out = np.zeros((ancilla_levels * fock_dim,) * 2, dtype=complex)
    for k in range(ancilla_levels):
        blk = d if k == 1 else np.eye(fock_dim)
        out[k * fock_dim:(k + 1) * fock_dim, k * fock_dim:(k + 1) * fock_dim] = blk
    return out


def readout_run(coeffs: ECSCoefficients, phi: float,
                settings: Sequence[tuple[str, complex, complex]] | None = None,
                fock_dim: int | None = None) -> tuple[ReadoutRecord, ...]:
    """Numerically exact <sigma_x> for each displacement setting.

    The Fock space is sized for the displaced components (|a| + max |beta|)
    so the conditional displacements do not clip.
    """
    a = coeffs.alpha
    if settings is None:
        settings = nine_settings(a)
    bmax = max((abs(b) for _, bi, bj in settings for b in (bi, bj)), default=0.0)
    dim = fock_dim if fock_dim is not None else default_fock_dim(abs(a) + bmax)
    psi = ecs_state(coeffs, dim).amplitudes.reshape(dim, dim)
    cache: dict[complex, np.ndarray] = {}

    def disp(beta: complex) -> np.ndarray:
        key = complex(beta)
        if key not in cache:
            cache[key] = (np.eye(dim, dtype=complex) if key == 0
                          else displacement_operator(dim, key).matrix)
        return cache[key]

    out = []
    for label, bi, bj in settings:
        displaced = disp(bi) @ psi @ disp(bj).T
        val = float(np.real(cmath.exp(1j * phi) * np.vdot(psi, displaced)))
        out.append(ReadoutRecord(label=label, beta_i=complex(bi), beta_j=complex(bj),
                                 phi=float(phi), value=val))
    return tuple(out)


def predict_sigma_x(coeffs: ECSCoefficients, phi: float) -> dict[str, float]:
    """Closed-form large-|alpha| expectation table for the nine settings.

    Each entry keeps only the displacement-matched overlaps; every neglected
    term carries at least one factor e^{-|a|^2/2}.
    """
    c = coeffs.magnitudes
    t = coeffs.phases

    def cos(*, plus: float = 0.0) -> float:
        return math.cos(phi + plus)

    return {
        "++": c[0] * c[3] * cos(plus=t[0] - t[3]),
        "--": c[0] * c[3] * cos(plus=t[3] - t[0]),
        "+-": c[1] * c[2] * cos(plus=t[1] - t[2]),
        "-+": c[1] * c[2] * cos(plus=t[2] - t[1]),
        "+0": c[0] * c[2] * cos(plus=t[0] - t[2]) + c[1] * c[3] * cos(plus=t[1] - t[3]),
        "-0": c[0] * c[2] * cos(plus=t[2] - t[0]) + c[1] * c[3] * cos(plus=t[3] - t[1]),
        "0+": c[0] * c[1] * cos(plus=t[0] - t[1]) + c[2] * c[3] * cos(plus=t[2] - t[3]),
        "0-": c[0] * c[1] * cos(plus=t[1] - t[0]) + c[2] * c[3] * cos(plus=t[3] - t[2]),
        "00": float(np.sum(c ** 2)) * math.cos(phi),
    }


@dataclass(frozen=True)
class ReconstructionResult:
    """Products and relative phases recoverable at phi = pi/4, theta_0 = 0 gauge."""

    c0c3: float
    theta3: float
    c1c2: float
    theta2_minus_theta1: float
    residual_f: float
    residual_g: float
    a26_residual: float
    degenerate: bool


def _pair_invert(plus_setting: float, minus_setting: float,
                 floor: float) -> tuple[float, float, bool]:
    """Solve {x = P cos(pi/4 - d), y = P cos(pi/4 + d)} for (P, d)."""
    x, y = plus_setting, minus_setting
    product = math.sqrt(x * x + y * y)
    degenerate = product < floor
    delta = 0.0 if degenerate else math.atan2(x - y, x + y)
    return product, delta, degenerate


def reconstruct(values: Mapping[str, float], *, phi: float = RECONSTRUCTION_PHI,
                degeneracy_floor: float = 1e-12) -> ReconstructionResult:
    """Invert the closed-form table measured at phi = pi/4.

    The four paired settings give the products c0c3 and c1c2 with their
    relative phases exactly.  The mixed settings are not inverted; they feed
    the two consistency residuals (residual_f, residual_g) which vanish for
    Bell-type states, as does the population residual a26_residual
    (= (c0 - c3)^2 when c1 = c2 = 0).
    """
    if abs(phi - RECONSTRUCTION_PHI) > 1e-12:
        raise DomainError("reconstruction is derived for phi = pi/4")
    missing = [k for k in SETTING_LABELS if k not in values]
    if missing:
        raise PhysicsError(f"missing readout settings: {missing}")
    c0c3, theta3, deg03 = _pair_invert(values["++"], values["--"], degeneracy_floor)
    c1c2, d21, deg12 = _pair_invert(values["+-"], values["-+"], degeneracy_floor)
    A, B = values["+0"], values["-0"]
    C, D = values["0+"], values["0-"]
    residual_f = 2.0 * A * B - 2.0 * c0c3 * c1c2 * math.cos(theta3 + d21)
    residual_g = 2.0 * C * D - 2.0 * c0c3 * c1c2 * math.cos(theta3 - d21)
    a26 = math.sqrt(2.0) * values["00"] - 2.0 * c0c3
    return ReconstructionResult(
        c0c3=c0c3, theta3=theta3, c1c2=c1c2, theta2_minus_theta1=d21,
        residual_f=residual_f, residual_g=residual_g, a26_residual=a26,
        degenerate=deg03 and deg12)


@dataclass(frozen=True)
class BellCheck:
    is_bell: bool
    c_bell: float
    c0c3: float
    c1c2: float
    theta3: float
    residual_f: float
    residual_g: float
    a26_residual: float


def verify_bell(values: Mapping[str, float], tol: float = 1e-6) -> BellCheck:
    """Decide whether the nine measured values are consistent with a Bell ECS.

    Bell here means (|0,0> + e^{i theta}|a,a>)/N with theta in {0, pi}: the
    cross products c1c2 and both mixed-setting identities must vanish, and
    the population identity must give |c0| = |c3|.  theta3 is reported but
    not constrained (both parities are Bell states).
    """
    rec = reconstruct(values)
    checks = (rec.c1c2, rec.residual_f, rec.residual_g, rec.a26_residual)
    ok = all(abs(v) <= tol for v in checks)
    c_bell = (2.0 ** -0.25) * math.sqrt(max(values["00"], 0.0))
    return BellCheck(is_bell=ok, c_bell=c_bell, c0c3=rec.c0c3, c1c2=rec.c1c2,
                     theta3=rec.theta3, residual_f=rec.residual_f,
                     residual_g=rec.residual_g, a26_residual=rec.a26_residual)


### CSV I/O (round-trippable complex literals) ###


def _fmt_complex(z: complex) -> str:
    return f"({z.real:.16e}{z.imag:+.16e}j)"


def write_readout_csv(records: Sequence[ReadoutRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["setting", "beta_i", "beta_j", "phi", "value"])
        for r in records:
            wr.writerow([r.label, _fmt_complex(r.beta_i), _fmt_complex(r.beta_j),
                         f"{r.phi:.16e}", f"{r.value:.16e}"])


def read_readout_csv(path) -> tuple[ReadoutRecord, ...]:
    out = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header[:5] != ["setting", "beta_i", "beta_j", "phi", "value"]:
            raise PhysicsError(f"unexpected readout CSV header: {header}")
        for row in rd:
            out.append(ReadoutRecord(label=row[0], beta_i=complex(row[1]),
                                     beta_j=complex(row[2]), phi=float(row[3]),
                                     value=float(row[4])))
    return tuple(out)
