"""State metrics: fidelity, entanglement, entropies, Wigner quasiprobability.

Conventions (fixed across the package and its output files):

* fidelity(rho, psi) = sqrt(<psi|rho|psi>)  -- the square-root convention.
* log-negativity is reported in bits: E_N = log2 ||rho^{T_B}||_1.
* von Neumann entropies are in nats; eigenvalues below 1e-12 are clamped
  before the log.
* Wigner function normalized so that  integral W d(Re a) d(Im a) = 1, which
  puts the vacuum peak at 2/pi.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import eval_genlaguerre, gammaln

from .errors import InvalidDimensionError, ReliabilityWarning
from .hilbert import (
    DensityMatrix,
    StateVector,
    partial_trace,
    partial_transpose,
)

ENTROPY_EIG_CLAMP = 1e-12

__all__ = [
    "fidelity",
    "log_negativity",
    "von_neumann_entropy",
    "conditional_entropy",
    "occupation",
    "purity",
    "WignerGrid",
    "wigner",
    "bosonic_thermal_entropy",
    "bell_ecs_log_negativity",
    "bell_ecs_reduced_eigenvalues",
    "bell_ecs_conditional_entropy",
    "ideal_window_amplitude",
    "ideal_curves",
]


def fidelity(rho: DensityMatrix, target: StateVector | np.ndarray) -> float:
    """sqrt(<psi|rho|psi>) for a pure target state."""
    psi = target.amplitudes if isinstance(target, StateVector) else np.asarray(target)
    if psi.shape[0] != rho.matrix.shape[0]:
        raise InvalidDimensionError(
            f"target dim {psi.shape[0]} != rho dim {rho.matrix.shape[0]}")
    val = np.real(psi.conj() @ rho.matrix @ psi)
    return math.sqrt(max(val, 0.0))


def log_negativity(rho: DensityMatrix, transpose_slot: int = 1) -> float:
    """E_N = log2 ||rho^{T_B}||_1 in bits, transposing the given slot."""
    rt = partial_transpose(rho, transpose_slot)
    eigs = np.linalg.eigvalsh(rt)
    trace_norm = float(np.sum(np.abs(eigs)))
    return math.log2(max(trace_norm, 1.0))


def von_neumann_entropy(rho: DensityMatrix | np.ndarray) -> float:
    """S(rho) = -Tr rho ln rho in nats, with eigenvalue clamping."""
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    eigs = np.linalg.eigvalsh(m)
    eigs = np.clip(eigs.real, ENTROPY_EIG_CLAMP, None)
    return float(-np.sum(eigs * np.log(eigs)))


def conditional_entropy(rho: DensityMatrix, conditioning_slot: int) -> float:
    """S(rest | slot) = S(rho) - S(rho_slot) in nats.

    Negative values witness entanglement across the cut.
    """
    reduced = partial_trace(rho, keep=(conditioning_slot,))
    return von_neumann_entropy(rho) - von_neumann_entropy(reduced)


def occupation(rho: DensityMatrix, slot: int) -> float:
    """<n> of one slot (number operator expectation from the diagonal)."""
    red = partial_trace(rho, keep=(slot,))
    d = red.matrix.shape[0]
    return float(np.real(np.diag(red.matrix) @ np.arange(d)))


def purity(rho: DensityMatrix) -> float:
    return rho.purity()


@dataclass(frozen=True)
class WignerGrid:
    """W sampled on a rectangular phase-space grid; values[i, j] = W(re[i] + 1j*im[j])."""

    re: np.ndarray
    im: np.ndarray
    values: np.ndarray

    def integral(self) -> float:
        """Trapezoid integral over the grid; ~1 when the state fits inside."""
        return float(np.trapezoid(np.trapezoid(self.values, self.im, axis=1), self.re))


def wigner(rho: DensityMatrix | np.ndarray, re: np.ndarray, im: np.ndarray) -> WignerGrid:
    """Wigner function of a single-mode state on a rectangular grid.

    Uses the displaced-parity form rewritten as a single displacement,

        W(a) = (2/pi) Tr[ D(a)^dag rho D(a) P ] = (2/pi) Tr[ rho P D(-2a) ],

    with <m|D(g)|n> evaluated in closed form through associated Laguerre
    polynomials.  Unlike truncating expm(g a^dag - g* a), this is the exact
    Wigner function of the truncated density matrix: tails decay as genuine
    Gaussians and the phase-space integral converges to Tr rho.
    """
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidDimensionError("wigner expects a square single-mode matrix")
    dim = m.shape[0]
    re = np.asarray(re, dtype=float)
    im = np.asarray(im, dtype=float)
    alpha = re[:, None] + 1j * im[None, :]
    amax = float(np.max(np.abs(alpha)))
    if amax * amax + 6.0 * amax + 5.0 > dim:
        warnings.warn(
            f"Wigner grid reaches |alpha|={amax:.3g} but fock_dim={dim} is only "
            f"reliable out to |alpha|^2+6|alpha|+5 <= dim; tail values reflect "
            f"the truncated state, not the physical one",
            ReliabilityWarning, stacklevel=2)
    gamma = -2.0 * alpha
    x = np.abs(gamma) ** 2                      # = 4 |a|^2
    acc = np.zeros_like(alpha)
    # sum over diagonals k = m - n of rho; k < 0 contributes the conjugate
    for k in range(dim):
        diag = np.diagonal(m, offset=k)
        if not np.any(diag):
            continue
        s = np.zeros_like(x, dtype=complex)
        for n in range(dim - k):
            c = diag[n]
            if c == 0.0:
                continue
            # (-1)^m sqrt(n!/m!) with m = n + k, via gammaln for stability
            w = (-1.0) ** (n + k) * math.exp(
                0.5 * (gammaln(n + 1) - gammaln(n + k + 1)))
            s += (c * w) * eval_genlaguerre(n, k, x)
        term = s * gamma ** k
        acc += term if k == 0 else term + np.conj(term)
    vals = (2.0 / math.pi) * np.exp(-0.5 * x) * np.real(acc)
    return WignerGrid(re=re, im=im, values=vals)


### closed forms used as oracles and ideal reference curves ###


def bosonic_thermal_entropy(n_bar: float) -> float:
    """Entropy of a thermal oscillator state, nats: (1+n)ln(1+n) - n ln n."""
    if n_bar < 0:
        raise ValueError("n_bar must be >= 0")
    if n_bar == 0.0:
        return 0.0
    return float((1.0 + n_bar) * math.log1p(n_bar) - n_bar * math.log(n_bar))


def bell_ecs_reduced_eigenvalues(alpha_mag: float) -> tuple[float, float]:
    """Nonzero single-mode eigenvalues of (|0,0> + |a,a>)/N_+.

    With s = exp(-|a|^2/2) the reduced state lives in span{|0>, |a>} and has
    eigenvalues (1 +/- s)^2 / (2 (1 + s^2)).
    """
    s = math.exp(-0.5 * alpha_mag * alpha_mag)
    denom = 2.0 * (1.0 + s * s)
    return ((1.0 + s) ** 2 / denom, (1.0 - s) ** 2 / denom)


def bell_ecs_log_negativity(alpha_mag: float) -> float:
    """E_N in bits of the even two-mode ECS: log2[ 2 / (1 + e^{-|a|^2}) ]."""
    q = math.exp(-alpha_mag * alpha_mag)
    return math.log2(2.0 / (1.0 + q))


def bell_ecs_conditional_entropy(alpha_mag: float) -> float:
    """S(1|2) of the pure even ECS = -S(reduced), nats; -> -ln 2 for large |a|."""
    lam = bell_ecs_reduced_eigenvalues(alpha_mag)
    s_red = 0.0
    for p in lam:
        if p > ENTROPY_EIG_CLAMP:
            s_red -= p * math.log(p)
    return -s_red


def ideal_window_amplitude(g_tilde: float, theta: float, t: float | np.ndarray):
    """Coherent amplitude accumulated by the excited-qubit branch.

    alpha(t) = g * t * exp(i (pi/2 - theta)); theta = pi (the package default)
    gives alpha = -i g t.
    """
    return g_tilde * np.asarray(t) * np.exp(1j * (0.5 * math.pi - theta))


def ideal_curves(g_tilde: float, times: np.ndarray) -> dict[str, np.ndarray]:
    """Dissipationless closed forms for the symmetric two-mode protocol.

    n_ideal(t) = |g t|^2 / 2 per mode and
    E_N_ideal(t) = log2[ 2 / (e^{-|g t|^2} + 1) ] bits; both exact for the
    post-selected state with no loss, any theta.
    """
    gt2 = (g_tilde * np.asarray(times, dtype=float)) ** 2
    return {
        "n_ideal": 0.5 * gt2,
        "log_negativity_ideal_bits": np.log2(2.0 / (np.exp(-gt2) + 1.0)),
    }
