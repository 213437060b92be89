"""Device parameter calculators.

Pure functions mapping physical hardware numbers (SQUID flux bias, YIG sphere
geometry, beam geometry) to the effective model parameters used by the
simulator: qubit frequency, mode frequencies, static and modulated coupling
rates, thermal occupations.

Unit conventions
----------------
* Energies in the public API are frequencies, E/h in Hz (the way device
  papers quote them, e.g. "E_C/h = 300 MHz").
* Returned rates/frequencies are angular (rad/s) unless the name says Hz.
* The saturation magnetization enters the magnetostatic mode-splitting as the
  field-unit quantity mu_0*M_s multiplying gamma0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .constants import HBAR, K_B, MU_0, PHI_0
from .errors import (
    DomainError,
    InvalidDimensionError,
    NearNodeError,
    PhysicsError,
    RegimeError,
)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TransmonSpec:
    """Transmon parameters.  E_C and E_J_max are E/h in Hz.

    T1/T2 may be math.inf to switch the corresponding decay channel off.
    The SQUID is assumed symmetric; `asymmetry` is reserved and must be 0.
    """

    E_C: float
    E_J_max: float
    phi_b: float = 0.0
    levels: int = 3
    T1: float = math.inf
    T2: float = math.inf
    asymmetry: float = 0.0

    def __post_init__(self):
        if self.levels < 2:
            raise InvalidDimensionError("transmon needs at least 2 levels")
        if self.E_C <= 0 or self.E_J_max <= 0:
            raise PhysicsError("E_C and E_J_max must be positive")
        if self.T1 <= 0 or self.T2 <= 0:
            raise PhysicsError("T1 and T2 must be positive (use inf to disable)")
        if self.asymmetry != 0.0:
            raise PhysicsError("junction asymmetry is out of scope; must be 0")
        ratio = self.E_J_max * abs(math.cos(self.phi_b)) / self.E_C
        if ratio < 20.0:
            raise RegimeError(
                f"E_J|cos(phi_b)|/E_C = {ratio:.2f} < 20: not in the transmon regime"
            )
        if ratio < 50.0:
            warnings.warn(
                f"E_J|cos(phi_b)|/E_C = {ratio:.1f} < 50: marginal transmon regime",
                stacklevel=2,
            )


@dataclass(frozen=True)
class ModeSpec:
    """One bosonic mode: frequency, coupling, loss and initial occupation.

    n_th is the *initial* thermal occupation of the mode; the bath occupation
    entering the dissipator rates is computed from the system temperature
    (see dynamics.build_dissipators).
    """

    kind: str
    omega: float
    g_tilde: float
    Q: float
    n_th: float = 0.0
    fock_dim: int = 10

    def __post_init__(self):
        if self.kind not in ("magnon", "phonon"):
            raise PhysicsError(f"unknown mode kind {self.kind!r}")
        if self.omega <= 0:
            raise PhysicsError("mode frequency must be positive")
        if not self.Q > 0:
            raise PhysicsError("quality factor must be positive")
        if self.n_th < 0:
            raise PhysicsError("thermal occupation must be >= 0")
        if self.fock_dim < 2:
            raise InvalidDimensionError("fock_dim must be >= 2")


@dataclass(frozen=True)
class MagnetGeometry:
    d: float            # sphere-to-loop distance [m]
    mu_zpf: float       # zero-point magnetic moment fluctuation [J/T]
    B_z: float          # bias field [T]
    B_ani: float        # anisotropy field [T]
    M_s: float          # saturation magnetization [A/m]
    l: int = 1          # angular momentum quantum number of the magnon mode

    def __post_init__(self):
        if self.d <= 0:
            raise PhysicsError("distance d must be positive")
        if self.l < 1:
            raise PhysicsError("angular momentum l must be >= 1")


@dataclass(frozen=True)
class BeamGeometry:
    length: float       # beam length [m]
    beta0: float        # mode shape factor
    B_z: float          # bias field [T]
    x_zpf: float        # zero-point displacement [m]
    mass: float         # beam mass [kg]

    def __post_init__(self):
        for name in ("length", "beta0", "x_zpf", "mass"):
            if getattr(self, name) <= 0:
                raise PhysicsError(f"{name} must be positive")
        if self.B_z < 0:
            raise PhysicsError("B_z must be >= 0")


### calculators ###


def josephson_energy(E_J_max: float, phi_b: float, phi_offsets=()) -> float:
    """Flux-modulated Josephson energy (E/h in Hz).

    E_J = E_J_max |cos phi_b| (1 - tan(phi_b) * sum(phi_offsets)), valid to
    first order in the small reduced flux offsets.
    """
    c = math.cos(phi_b)
    if abs(c) < 1e-3:
        raise NearNodeError(
            f"|cos(phi_b)| = {abs(c):.2e} < 1e-3: linearized flux expansion invalid"
        )
    total = 0.0
    for off in phi_offsets:
        if abs(off) >= 0.1:
            raise PhysicsError(f"flux offset {off:+.3g} too large (|offset| must be < 0.1)")
        if abs(off) > 0.01:
            warnings.warn(f"flux offset {off:+.3g} > 0.01: first-order expansion is rough",
                          stacklevel=2)
        total += off
    return E_J_max * abs(c) * (1.0 - math.tan(phi_b) * total)


def transmon_frequency(E_J: float, E_C: float) -> tuple[float, float]:
    """(omega_q, anharmonicity) in rad/s from E_J, E_C given as E/h in Hz.

    omega_q = 2 pi (sqrt(8 E_J E_C) - E_C); anharmonicity = -2 pi E_C.
    """
    if E_C <= 0 or E_J <= 0:
        raise PhysicsError("energies must be positive")
    if E_J / E_C < 20.0:
        raise RegimeError(f"E_J/E_C = {E_J / E_C:.2f} < 20: outside transmon regime")
    omega_q = TWO_PI * (math.sqrt(8.0 * E_J * E_C) - E_C)
    return omega_q, -TWO_PI * E_C


def flux_zpf(geometry: MagnetGeometry | BeamGeometry) -> float:
    """Zero-point reduced-flux amplitude threading the SQUID.

    beam:   phi_x_zpf = pi beta0 B_z l x_zpf / Phi_0
    magnet: phi_m_zpf = mu_0 mu_zpf / (4 sqrt(2) d Phi_0)
    """
    if isinstance(geometry, BeamGeometry):
        return math.pi * geometry.beta0 * geometry.B_z * geometry.length * geometry.x_zpf / PHI_0
    if isinstance(geometry, MagnetGeometry):
        return MU_0 * geometry.mu_zpf / (4.0 * math.sqrt(2.0) * geometry.d * PHI_0)
    raise PhysicsError(f"unsupported geometry {type(geometry).__name__}")


def coupling_strengths(transmon: TransmonSpec, phi_zpf: float) -> tuple[float, float]:
    """(g_static, g_tilde) in rad/s for a given zero-point flux amplitude.

    omega_p = 2 pi sqrt(8 E_J_max E_C) is the bare plasma frequency;
    g_static = (omega_p/2) (sin phi_b / sqrt(cos phi_b)) phi_zpf is the always-on
    radiation-pressure coupling away from the sweetspot, and
    g_tilde = (omega_p/4) phi_zpf is the coupling activated by flux modulation
    (independent of the bias point).
    """
    c = math.cos(transmon.phi_b)
    if c <= 0:
        raise DomainError(f"cos(phi_b) = {c:.3g} <= 0: bias outside the principal branch")
    omega_p = TWO_PI * math.sqrt(8.0 * transmon.E_J_max * transmon.E_C)
    g_static = 0.5 * omega_p * (math.sin(transmon.phi_b) / math.sqrt(c)) * phi_zpf
    g_tilde = 0.25 * omega_p * phi_zpf
    return g_static, g_tilde


def mode_frequency(geometry: MagnetGeometry | BeamGeometry,
                   gamma0: float | None = None) -> float:
    """Bare mode frequency in rad/s.

    magnet: omega = gamma0 (B_z + B_ani) + gamma0 (mu_0 M_s) (l-1)/(3(2l+1))
            (Kittel mode for l = 1, magnetostatic branch above)
    beam:   omega = hbar / (2 m x_zpf^2)
    """
    if isinstance(geometry, BeamGeometry):
        return HBAR / (2.0 * geometry.mass * geometry.x_zpf ** 2)
    if isinstance(geometry, MagnetGeometry):
        if gamma0 is None:
            raise PhysicsError("gamma0 (rad/s/T) required for magnon modes")
        l = geometry.l
        shift = gamma0 * (MU_0 * geometry.M_s) * (l - 1) / (3.0 * (2 * l + 1))
        return gamma0 * (geometry.B_z + geometry.B_ani) + shift
    raise PhysicsError(f"unsupported geometry {type(geometry).__name__}")


def thermal_occupation(omega: float, T: float) -> float:
    """Bose-Einstein occupation 1/(exp(hbar w / k T) - 1); 0 at T = 0."""
    if omega <= 0:
        raise PhysicsError("omega must be positive")
    if T < 0:
        raise PhysicsError("temperature must be >= 0")
    if T == 0.0:
        return 0.0
    x = HBAR * omega / (K_B * T)
    if x > 700.0:
        return 0.0
    return 1.0 / math.expm1(x)
