"""Displacement-interferometry readout: predictions, inversion, witnessing."""

import cmath
import math

import numpy as np
import pytest

from ecsim.errors import DomainError, InvalidDimensionError, PhysicsError
from ecsim.readout import (
    SETTING_LABELS,
    BellCheck,
    ECSCoefficients,
    ReadoutRecord,
    bell_coefficients,
    conditional_displacement,
    ecs_state,
    nine_settings,
    predict_sigma_x,
    read_readout_csv,
    readout_run,
    reconstruct,
    verify_bell,
    write_readout_csv,
)

PHI = math.pi / 4.0


def random_coeffs(alpha, seed=0):
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=4) + 1j * rng.normal(size=4)
    return ECSCoefficients.from_unnormalized(alpha, raw)


# --- coefficient bookkeeping ----------------------------------------------


def test_coefficients_validation():
    s = 1.0 / math.sqrt(2.0)
    ECSCoefficients(alpha=2.0, c=(s, 0.0, 0.0, s))
    with pytest.raises(PhysicsError, match="normalization"):
        ECSCoefficients(alpha=2.0, c=(1.0, 1.0, 0.0, 0.0))
    with pytest.raises(PhysicsError, match="gauge"):
        ECSCoefficients(alpha=2.0, c=(s * cmath.exp(0.3j), 0.0, 0.0, s))
    with pytest.raises(PhysicsError, match="alpha"):
        ECSCoefficients(alpha=0.0, c=(s, 0.0, 0.0, s))
    with pytest.raises(InvalidDimensionError):
        ECSCoefficients.from_unnormalized(2.0, (1.0, 0.0))
    with pytest.raises(PhysicsError, match="vanish"):
        ECSCoefficients.from_unnormalized(2.0, (0.0, 0.0, 0.0, 0.0))


def test_from_unnormalized_fixes_norm_and_gauge():
    c = ECSCoefficients.from_unnormalized(
        3.0, (2.0 * cmath.exp(0.8j), 1j, 0.5, -0.25))
    assert sum(abs(v) ** 2 for v in c.c) == pytest.approx(1.0, abs=1e-12)
    assert cmath.phase(c.c[0]) == pytest.approx(0.0, abs=1e-12)


def test_from_unnormalized_anchors_on_first_nonzero():
    # c0 = 0: the gauge is set by the next component instead
    c = ECSCoefficients.from_unnormalized(2.0, (0.0, 1j, 1.0, 0.0))
    assert abs(c.c[0]) == 0.0
    assert cmath.phase(c.c[1]) == pytest.approx(0.0, abs=1e-12)


def test_bell_coefficients():
    for sign in (+1, -1):
        c = bell_coefficients(3.0, sign)
        assert c.c[1] == 0.0 and c.c[2] == 0.0
        assert c.c[0] == pytest.approx(1 / math.sqrt(2))
        assert c.c[3] == pytest.approx(sign / math.sqrt(2))
    with pytest.raises(PhysicsError):
        bell_coefficients(3.0, sign=2)


def test_ecs_state_normalized_despite_overlaps():
    c = bell_coefficients(1.0, +1)     # heavy overlap at small alpha
    psi = ecs_state(c)
    assert np.linalg.norm(psi.amplitudes) == pytest.approx(1.0, abs=1e-12)


def test_nine_settings_schedule():
    a = 2.0 + 1.0j
    sched = nine_settings(a)
    assert tuple(lab for lab, _, _ in sched) == SETTING_LABELS
    by = dict((lab, (bi, bj)) for lab, bi, bj in sched)
    assert by["+-"] == (a, -a)
    assert by["0+"] == (0.0, a)
    assert by["00"] == (0.0, 0.0)


# --- conditional displacement: independent ancilla route -------------------


def test_conditional_displacement_blocks():
    d = 8
    beta = 0.6 - 0.2j
    cd = conditional_displacement(d, beta, ancilla_levels=3)
    from ecsim.hilbert import displacement_operator
    dm = displacement_operator(d, beta).matrix
    assert np.allclose(cd[:d, :d], np.eye(d), atol=1e-15)
    assert np.allclose(cd[d:2 * d, d:2 * d], dm, atol=1e-15)
    assert np.allclose(cd[2 * d:, 2 * d:], np.eye(d), atol=1e-15)
    assert np.max(np.abs(cd[:d, d:2 * d])) == 0.0
    with pytest.raises(InvalidDimensionError):
        conditional_displacement(d, beta, ancilla_levels=1)


def test_readout_value_equals_explicit_ancilla_interferometer():
    # build the (ancilla, mode_i, mode_j) circuit in full and measure
    # sigma_x on the ancilla; must match the overlap shortcut exactly
    alpha = 1.2
    coeffs = random_coeffs(alpha, seed=3)
    dim = 20
    label, bi, bj = nine_settings(alpha)[0]       # the ++ setting
    records = readout_run(coeffs, PHI, settings=[(label, bi, bj)], fock_dim=dim)
    psi_modes = ecs_state(coeffs, dim).amplitudes

    from ecsim.hilbert import displacement_operator
    anc = np.array([1.0, cmath.exp(1j * PHI)], dtype=complex) / math.sqrt(2.0)
    full = np.kron(anc, psi_modes)
    di = displacement_operator(dim, bi).matrix
    dj = displacement_operator(dim, bj).matrix
    p0 = np.diag([1.0, 0.0]).astype(complex)
    p1 = np.diag([0.0, 1.0]).astype(complex)
    eye = np.eye(dim, dtype=complex)
    cd_i = np.kron(p0, np.kron(eye, eye)) + np.kron(p1, np.kron(di, eye))
    cd_j = np.kron(p0, np.kron(eye, eye)) + np.kron(p1, np.kron(eye, dj))
    after = cd_j @ (cd_i @ full)
    sx = np.kron(np.array([[0, 1], [1, 0]], dtype=complex), np.kron(eye, eye))
    expected = float(np.real(np.vdot(after, sx @ after)))
    assert records[0].value == pytest.approx(expected, abs=1e-12)


# --- closed-form table vs exact simulation ---------------------------------


def test_prediction_table_matches_simulation_at_large_alpha():
    # neglected overlap terms carry e^{-|a|^2/2} ~ 1.5e-8 at |a| = 6
    coeffs = random_coeffs(6.0, seed=11)
    table = predict_sigma_x(coeffs, PHI)
    for rec in readout_run(coeffs, PHI):
        assert rec.value == pytest.approx(table[rec.label], abs=1e-6), rec.label


def test_prediction_table_accuracy_at_alpha_five():
    # e^{-12.5} ~ 3.7e-6: the table is good to ~1e-5 here, no better
    coeffs = random_coeffs(5.0, seed=7)
    table = predict_sigma_x(coeffs, PHI)
    for rec in readout_run(coeffs, PHI):
        assert rec.value == pytest.approx(table[rec.label], abs=1e-5), rec.label


def test_readout_gauge_invariance():
    # a global phase on the raw coefficients must not change any value
    alpha = 2.0
    rng = np.random.default_rng(5)
    raw = rng.normal(size=4) + 1j * rng.normal(size=4)
    c1 = ECSCoefficients.from_unnormalized(alpha, raw)
    c2 = ECSCoefficients.from_unnormalized(alpha, raw * cmath.exp(1.234j))
    r1 = readout_run(c1, PHI)
    r2 = readout_run(c2, PHI)
    for a, b in zip(r1, r2):
        assert a.value == pytest.approx(b.value, abs=1e-12)


# --- reconstruction --------------------------------------------------------


def test_reconstruction_inverts_the_table_exactly():
    coeffs = random_coeffs(5.0, seed=23)
    table = predict_sigma_x(coeffs, PHI)
    rec = reconstruct(table)
    m = coeffs.magnitudes
    t = coeffs.phases
    assert rec.c0c3 == pytest.approx(m[0] * m[3], abs=1e-12)
    assert rec.c1c2 == pytest.approx(m[1] * m[2], abs=1e-12)
    # phases enter through differences in the theta_0 = 0 gauge
    d3 = math.remainder(t[3] - t[0], 2.0 * math.pi)
    d21 = math.remainder(t[2] - t[1], 2.0 * math.pi)
    assert rec.theta3 == pytest.approx(d3, abs=1e-12)
    assert rec.theta2_minus_theta1 == pytest.approx(d21, abs=1e-12)


def test_reconstruction_from_simulated_bell_readout():
    coeffs = bell_coefficients(5.0, +1)
    values = {r.label: r.value for r in readout_run(coeffs, PHI)}
    rec = reconstruct(values)
    assert rec.c0c3 == pytest.approx(0.5, abs=1e-6)
    assert rec.theta3 == pytest.approx(0.0, abs=1e-5)
    assert rec.c1c2 == pytest.approx(0.0, abs=1e-6)


def test_reconstruction_guards():
    coeffs = random_coeffs(5.0, seed=2)
    table = predict_sigma_x(coeffs, PHI)
    with pytest.raises(DomainError, match="pi/4"):
        reconstruct(table, phi=0.3)
    incomplete = dict(table)
    incomplete.pop("-0")
    with pytest.raises(PhysicsError, match="missing readout settings"):
        reconstruct(incomplete)


def test_reconstruction_degenerate_flag():
    # single-component state: both products vanish identically
    c = ECSCoefficients(alpha=3.0, c=(1.0, 0.0, 0.0, 0.0))
    rec = reconstruct(predict_sigma_x(c, PHI))
    assert rec.degenerate
    assert rec.c0c3 == pytest.approx(0.0, abs=1e-15)


# --- Bell witnessing -------------------------------------------------------


@pytest.mark.parametrize("sign", [+1, -1])
def test_verify_bell_accepts_exact_bell_tables(sign):
    coeffs = bell_coefficients(5.0, sign)
    check = verify_bell(predict_sigma_x(coeffs, PHI), tol=1e-9)
    assert isinstance(check, BellCheck)
    assert check.is_bell
    assert check.c_bell == pytest.approx(1 / math.sqrt(2), abs=1e-9)
    expected_theta = 0.0 if sign > 0 else math.pi
    assert abs(math.remainder(check.theta3 - expected_theta, 2 * math.pi)) < 1e-9


def test_verify_bell_accepts_simulated_bell_at_large_alpha():
    coeffs = bell_coefficients(6.0, +1)
    values = {r.label: r.value for r in readout_run(coeffs, PHI)}
    assert verify_bell(values, tol=1e-6).is_bell


def test_verify_bell_rejects_cross_products():
    # c1 c2 ~ 0.12 >> tol: clearly not a Bell-type state
    coeffs = ECSCoefficients.from_unnormalized(5.0, (0.65, 0.35, 0.35, -0.55))
    m = coeffs.magnitudes
    assert m[1] * m[2] > 0.05
    check = verify_bell(predict_sigma_x(coeffs, PHI), tol=1e-3)
    assert not check.is_bell
    assert check.c1c2 > 0.05


def test_verify_bell_rejects_unbalanced_populations():
    # c1 = c2 = 0 but |c0| != |c3|: the population identity must flag it
    coeffs = ECSCoefficients.from_unnormalized(5.0, (0.9, 0.0, 0.0, 0.436))
    check = verify_bell(predict_sigma_x(coeffs, PHI), tol=1e-3)
    assert not check.is_bell
    assert abs(check.a26_residual) > 0.05


# --- CSV round trip --------------------------------------------------------


def test_readout_csv_round_trip(tmp_path):
    coeffs = random_coeffs(3.0, seed=9)
    records = readout_run(coeffs, PHI)
    path = tmp_path / "readout.csv"
    write_readout_csv(records, path)
    back = read_readout_csv(path)
    assert len(back) == len(records)
    for a, b in zip(records, back):
        assert a.label == b.label
        assert a.beta_i == b.beta_i
        assert a.beta_j == b.beta_j
        assert a.phi == b.phi
        assert a.value == b.value          # 17 significant digits: exact
