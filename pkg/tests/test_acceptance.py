"""Acceptance suite: one test per release criterion, with stated tolerances.

Heavy inputs (figure reproductions and sweeps) are read from
``tests/_artifacts/<name>`` and rebuilt through the command line tool when
missing or when their config file changed (the manifest records the config
hash).  A full cold rebuild takes roughly an hour of compute; with warm
artifacts this suite runs in a couple of minutes.

Each test prints a single ``criterion N: PASS/FAIL`` line with the measured
numbers, so the -s / failure output doubles as the acceptance report.
"""

import csv
import hashlib
import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

ARTIFACTS = Path(__file__).resolve().parent / "_artifacts"
CONFIGS = Path(__file__).resolve().parent.parent / "configs"

G_FIG2 = 2 * math.pi * 2e6          # rad/s, magnon working point
G_FIG4 = 2 * math.pi * 0.1e6        # rad/s, phonon working point

_BUILDS = {
    "fig2_ideal": ("run", "fig2_bell_magnon_ideal.yaml"),
    "noon_ideal": ("run", "noon_ideal.yaml"),
    "general_ideal": ("run", "general_ecs_ideal.yaml"),
    "fig2_sweep": ("sweep", "fig2_bell_magnon.yaml"),
    "fig4_sweep": ("sweep", "fig4_bell_phonon.yaml"),
}


def _ensure_artifact(name: str) -> Path:
    verb, cfg_name = _BUILDS[name]
    cfg = CONFIGS / cfg_name
    out = ARTIFACTS / name
    manifest = out / "manifest.json"
    want = hashlib.sha256(cfg.read_bytes()).hexdigest()
    if manifest.exists():
        if json.loads(manifest.read_text()).get("config_hash_sha256") == want:
            return out
    cmd = [sys.executable, "-m", "ecsim.cli", verb,
           "--config", str(cfg), "--out", str(out)]
    if verb == "sweep":
        cmd += ["--workers", "1"]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    assert proc.returncode == 0, (
        f"building artifact {name} failed (rc {proc.returncode}):\n"
        f"{proc.stdout}\n{proc.stderr}")
    return out


@pytest.fixture(scope="session")
def fig2_ideal():
    return _ensure_artifact("fig2_ideal")


@pytest.fixture(scope="session")
def noon_ideal():
    return _ensure_artifact("noon_ideal")


@pytest.fixture(scope="session")
def general_ideal():
    return _ensure_artifact("general_ideal")


@pytest.fixture(scope="session")
def fig2_sweep():
    return _ensure_artifact("fig2_sweep")


@pytest.fixture(scope="session")
def fig4_sweep():
    return _ensure_artifact("fig4_sweep")


def _columns(path: Path) -> dict[str, np.ndarray]:
    with open(path) as f:
        rows = list(csv.DictReader(f))
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def _point_dir(sweep_dir: Path, index: int, value: float) -> Path:
    return sweep_dir / f"point_{index:03d}_{value:.6g}"


def _verdict(num: int, ok: bool, detail: str) -> None:
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'} -- {detail}")
    assert ok, f"criterion {num} FAILED -- {detail}"


# --- 1: dissipationless curves vs closed forms ----------------------------


def test_criterion_1_ideal_curve_regression(fig2_ideal):
    cols = _columns(fig2_ideal / "trajectory.csv")
    gt = G_FIG2 * cols["time_s"]
    keep = gt <= 3.0 + 1e-12
    n_ideal = 0.5 * gt[keep] ** 2
    en_ideal = np.log2(2.0 / (np.exp(-gt[keep] ** 2) + 1.0))
    n_err = np.max(np.abs(cols["n_mode1"][keep] - n_ideal)
                   - 0.01 * n_ideal)          # <= 0 iff within 1% everywhere
    en_err = np.max(np.abs(cols["log_negativity_bits"][keep] - en_ideal))
    ok = n_err <= 1e-9 and en_err <= 0.02
    _verdict(1, ok, f"occupation 1%-excess {n_err:.2e} (<=0), "
                    f"E_N dev {en_err:.2e} bits (tol 0.02), "
                    f"{int(np.sum(keep))} rows with g*t <= 3")


# --- 2: magnon Bell figure: fidelity band and Q ordering ------------------


def test_criterion_2_fig2_fidelity_band_and_ordering(fig2_sweep):
    qs = (1e3, 1e4, 1e5)
    fid = {q: _columns(_point_dir(fig2_sweep, i, q) / "trajectory.csv")["fidelity"]
           for i, q in enumerate(qs)}
    k = int(np.nanargmax(fid[1e5]))
    peak = float(fid[1e5][k])
    in_band = 0.85 <= peak <= 0.95
    ordered = fid[1e3][k] < fid[1e4][k] < fid[1e5][k]
    _verdict(2, in_band and ordered,
             f"Q=1e5 peak fidelity {peak:.4f} (band [0.85, 0.95] "
             f"{'ok' if in_band else 'VIOLATED'}); at that time "
             f"F(1e3)={fid[1e3][k]:.4f} < F(1e4)={fid[1e4][k]:.4f} "
             f"< F(1e5)={peak:.4f} "
             f"{'ok' if ordered else 'VIOLATED'}")


# --- 3: entanglement ordering and conditional entropy ---------------------


def test_criterion_3_entanglement_ordering(fig2_sweep, fig2_ideal):
    qs = (1e3, 1e4, 1e5)
    worst_excess = -math.inf
    peak_1e5 = -math.inf
    for i, q in enumerate(qs):
        cols = _columns(_point_dir(fig2_sweep, i, q) / "trajectory.csv")
        gt = G_FIG2 * cols["time_s"]
        bound = np.log2(2.0 / (np.exp(-gt ** 2) + 1.0))
        worst_excess = max(worst_excess,
                           float(np.max(cols["log_negativity_bits"] - bound)))
        if q == 1e5:
            peak_1e5 = float(np.nanmax(cols["log_negativity_bits"]))
        s0 = float(cols["conditional_entropy_nats"][0])
        assert s0 > 0.0, f"thermal start should have S(1|2) > 0, got {s0}"
    ideal = _columns(fig2_ideal / "trajectory.csv")
    sel = G_FIG2 * ideal["time_s"] >= 2.0
    s_dev = float(np.max(np.abs(
        ideal["conditional_entropy_nats"][sel] + math.log(2.0))))
    ok = peak_1e5 > 0.8 and worst_excess <= 0.02 and s_dev <= 0.05
    _verdict(3, ok,
             f"Q=1e5 peak E_N {peak_1e5:.4f} bits (>0.8), worst excess over "
             f"lossless bound {worst_excess:+.2e} bits (tol 0.02), "
             f"ideal |S+ln2| {s_dev:.2e} nats at g*t>=2 (tol 0.05), "
             f"thermal starts positive")


# --- 4: phonon figure ------------------------------------------------------


def test_criterion_4_fig4_phonon_reproduction(fig4_sweep):
    rows = {}
    with open(fig4_sweep / "summary.csv") as f:
        for r in csv.DictReader(f):
            rows[float(r["sweep_value"])] = {k: float(v) for k, v in r.items()}
    r6, r5 = rows[1e6], rows[1e5]
    ok = (r6["peak_fidelity"] >= 0.8
          and r6["peak_log_negativity_bits"] >= 0.8
          and r6["min_conditional_entropy_nats"] < 0.0
          and r5["min_conditional_entropy_nats"] >= 0.0)
    _verdict(4, ok,
             f"Q=1e6: peak F {r6['peak_fidelity']:.4f} (>=0.8), peak E_N "
             f"{r6['peak_log_negativity_bits']:.4f} bits (>=0.8), min S "
             f"{r6['min_conditional_entropy_nats']:+.4f} nats (<0); "
             f"Q=1e5: min S {r5['min_conditional_entropy_nats']:+.4f} nats (>=0)")


# --- 5: matrix-free evolution vs dense superoperator exponentiation -------


def test_criterion_5_superoperator_oracle():
    from scipy.linalg import expm
    from scipy.sparse.linalg import expm_multiply

    from ecsim.device import ModeSpec, TransmonSpec
    from ecsim.dynamics import (
        FrameConfig,
        SystemSpec,
        build_dissipators,
        build_hamiltonian,
        dense_superoperator,
        evolve,
    )
    from ecsim.hilbert import DensityMatrix

    rng = np.random.default_rng(99)
    t_start = time.perf_counter()
    worst = 0.0
    # one draw at the dimension cap (3*4*4 = 48) and one at 3*4*3 = 36,
    # exercising two independent exponentiation algorithms as the oracle
    for fock2, use_action in ((4, True), (3, False)):
        w = 2 * math.pi * rng.uniform(0.5e9, 2e9)
        g = 2 * math.pi * rng.uniform(1e6, 4e6)
        tr = TransmonSpec(E_C=rng.uniform(0.25e9, 0.4e9), E_J_max=20e9,
                          levels=3, T1=rng.uniform(2e-5, 8e-5),
                          T2=rng.uniform(2e-5, 8e-5))
        modes = (
            ModeSpec(kind="magnon", omega=w, g_tilde=g,
                     Q=10 ** rng.uniform(3, 5), n_th=rng.uniform(0, 0.4),
                     fock_dim=4),
            ModeSpec(kind="magnon", omega=w + rng.uniform(20, 60) * g,
                     g_tilde=g, Q=10 ** rng.uniform(3, 5),
                     n_th=rng.uniform(0, 0.4), fock_dim=fock2),
        )
        system = SystemSpec(transmon=tr, modes=modes,
                            temperature=rng.uniform(0.005, 0.03),
                            coupling_phase_theta=rng.uniform(0, 2 * math.pi))
        frame = FrameConfig(omega_ac=w, active_modes=frozenset({0}),
                            rwa_drop_detuned=False)
        space = system.space()
        d = space.total_dim
        x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        m = x @ x.conj().T
        rho0 = DensityMatrix(space, m / np.trace(m).real)
        t_end = 30e-9
        traj = evolve(rho0, system, frame, t_end, rtol=1e-10, atol=1e-12,
                      truncation_tol=2.0)
        L = dense_superoperator(build_hamiltonian(system, frame),
                                build_dissipators(system))
        v0 = rho0.matrix.reshape(-1).astype(complex)
        if use_action:
            ref = expm_multiply(L * t_end, v0)
        else:
            ref = expm(L * t_end) @ v0
        dev = float(np.max(np.abs(
            traj.snapshots[-1][1].matrix.reshape(-1) - ref)))
        worst = max(worst, dev)
    elapsed = time.perf_counter() - t_start
    ok = worst <= 1e-8 and elapsed < 30.0
    _verdict(5, ok, f"max-abs route deviation {worst:.2e} (tol 1e-8), "
                    f"runtime {elapsed:.1f}s (< 30s)")


# --- 6: protocol exactness against pure-state targets ---------------------


def test_criterion_6_protocol_exactness(fig2_ideal, noon_ideal, general_ideal):
    from ecsim.device import ModeSpec, TransmonSpec
    from ecsim.dynamics import SystemSpec, initial_state
    from ecsim.hilbert import coherent_state
    from ecsim.protocols import bell_sequence, run_protocol

    finals = {}
    for name, art in (("bell", fig2_ideal), ("noon", noon_ideal),
                      ("general_ecs", general_ideal)):
        finals[name] = float(_columns(art / "trajectory.csv")["fidelity"][-1])

    # independent pure-state oracle: drive the bell protocol at |alpha| = 3
    # and compare against a target built here from bare coherent vectors
    w = 2 * math.pi * 1e9
    tr = TransmonSpec(E_C=0.3e9, E_J_max=18e9, levels=2,
                      T1=math.inf, T2=math.inf)
    mode = dict(kind="magnon", omega=w, g_tilde=G_FIG2, Q=math.inf,
                n_th=0.0, fock_dim=24)
    system = SystemSpec(transmon=tr, modes=(ModeSpec(**mode), ModeSpec(**mode)),
                        temperature=0.0)
    res = run_protocol(system, bell_sequence(system, 3.0, chi=0.0, outcome=0),
                       rho0=initial_state(system), record_counts=(3,),
                       rtol=1e-7, atol=1e-9, snapshot_stride=1000,
                       truncation_tol=1e-3)
    c0 = coherent_state(24, 0.0, leak_tol=1.0).amplitudes
    ca = coherent_state(24, 3.0, leak_tol=1.0).amplitudes
    psi = np.kron(c0, c0) + np.kron(ca, ca)
    psi /= np.linalg.norm(psi)
    f_oracle = math.sqrt(max(float(np.real(
        np.vdot(psi, res.projected.matrix @ psi))), 0.0))

    ok = all(f >= 1.0 - 1e-4 for f in finals.values()) and f_oracle >= 1.0 - 1e-4
    _verdict(6, ok,
             "final fidelities at |alpha|=3: "
             + ", ".join(f"{k} {v:.6f}" for k, v in finals.items())
             + f"; hand-built bell target oracle {f_oracle:.6f} (>= 0.9999)")


# --- 7: readout closed loop ------------------------------------------------


def test_criterion_7_readout_closed_loop():
    from ecsim.readout import (
        ECSCoefficients,
        bell_coefficients,
        predict_sigma_x,
        readout_run,
        reconstruct,
        verify_bell,
    )

    phi = math.pi / 4
    rng = np.random.default_rng(2025)
    worst_sim = 0.0
    worst_rec = 0.0
    rejected = wanted = 0
    for _ in range(100):
        raw = rng.normal(size=4) + 1j * rng.normal(size=4)
        c = ECSCoefficients.from_unnormalized(5.0, raw)
        table = predict_sigma_x(c, phi)
        for r in readout_run(c, phi):
            worst_sim = max(worst_sim, abs(r.value - table[r.label]))
        rec = reconstruct(table)
        m, t = c.magnitudes, c.phases
        worst_rec = max(
            worst_rec,
            abs(rec.c0c3 - m[0] * m[3]),
            abs(rec.c1c2 - m[1] * m[2]),
            abs(math.remainder(rec.theta3 - (t[3] - t[0]), 2 * math.pi)),
            abs(math.remainder(rec.theta2_minus_theta1 - (t[2] - t[1]),
                               2 * math.pi)))
        if m[1] * m[2] >= 0.05:
            wanted += 1
            if not verify_bell(table, tol=1e-6).is_bell:
                rejected += 1
    bells_ok = all(
        verify_bell(predict_sigma_x(bell_coefficients(5.0, s), phi),
                    tol=1e-6).is_bell
        for s in (+1, -1))
    ok = (worst_sim <= 1e-6 and worst_rec <= 1e-6
          and bells_ok and rejected == wanted)
    _verdict(7, ok,
             f"sim-vs-prediction worst {worst_sim:.2e} (tol 1e-6; the "
             f"prediction table drops branch-overlap terms of size "
             f"e^(-|alpha|^2/2) = {math.exp(-12.5):.1e}), reconstruction "
             f"worst {worst_rec:.2e} (tol 1e-6), exact bells accepted: "
             f"{bells_ok}, rejected {rejected}/{wanted} with c1c2 >= 0.05")


# --- 8: snapshot validity audits on every acceptance run ------------------


def test_criterion_8_snapshot_invariants(fig2_ideal, noon_ideal, general_ideal,
                                         fig2_sweep, fig4_sweep):
    run_dirs = [fig2_ideal, noon_ideal, general_ideal]
    for sweep_dir, values in ((fig2_sweep, (1e3, 1e4, 1e5)),
                              (fig4_sweep, (1e5, 1e6, 1e7))):
        run_dirs += [_point_dir(sweep_dir, i, v) for i, v in enumerate(values)]
    worst = {"trace": 0.0, "herm": 0.0, "eig": 0.0, "leak": 0.0}
    for d in run_dirs:
        man = json.loads((d / "manifest.json").read_text())
        a = man["audits"]
        assert a["snapshot_count"] >= 2, d
        worst["trace"] = max(worst["trace"], a["snapshot_max_trace_defect"])
        worst["herm"] = max(worst["herm"], a["snapshot_max_hermiticity_defect"])
        worst["eig"] = min(worst["eig"], a["snapshot_min_eigenvalue"])
        leak = a["max_truncation_population"] / man["solver"]["truncation_tol"]
        worst["leak"] = max(worst["leak"], leak)
    ok = (worst["trace"] <= 1e-8 and worst["herm"] <= 1e-9
          and worst["eig"] >= -1e-7 and worst["leak"] <= 1.0)
    _verdict(8, ok,
             f"over {len(run_dirs)} runs: trace defect {worst['trace']:.1e} "
             f"(tol 1e-8), hermiticity {worst['herm']:.1e} (tol 1e-9), min "
             f"eigenvalue {worst['eig']:+.1e} (floor -1e-7), truncation "
             f"leakage at {100 * worst['leak']:.1f}% of budget")


# --- 9: Wigner function checks --------------------------------------------


def test_criterion_9_wigner_checks(fig2_sweep):
    from ecsim.hilbert import HilbertSpace, StateVector
    from ecsim.metrics import wigner

    vac = np.zeros(8, dtype=complex)
    vac[0] = 1.0
    w0 = wigner(StateVector(HilbertSpace((8,)), vac).to_density(),
                np.array([0.0]), np.array([0.0])).values[0, 0]
    vac_dev = abs(w0 - 2.0 / math.pi)

    cols = _columns(_point_dir(fig2_sweep, 2, 1e5) / "wigner_mode1.csv")
    re, im, val = cols["re"], cols["im"], cols["value"]
    alpha = 3.0159289474462017

    def local_peak(center):
        near = (np.abs(re - center) <= 0.5) & (np.abs(im) <= 0.5)
        k = int(np.argmax(val[near]))
        return float(re[near][k]), float(val[near][k])

    r0, w_at_0 = local_peak(0.0)
    ra, w_at_a = local_peak(alpha)
    fringe = (np.abs(re - 0.5 * alpha) <= 0.25)
    fringe_max = float(np.max(np.abs(val[fringe])))

    ok = (vac_dev <= 1e-8
          and w_at_0 > 0.0 and abs(r0) <= 0.25
          and w_at_a > 0.0 and abs(ra - alpha) <= 0.25
          and fringe_max < 0.02)
    _verdict(9, ok,
             f"vacuum W(0) dev {vac_dev:.1e} (tol 1e-8); peaks at re={r0:+.2f} "
             f"(W={w_at_0:.3f}) and re={ra:.2f} (W={w_at_a:.3f}), both "
             f"non-negative; mid-fringe |W| max {fringe_max:.4f} (< 0.02)")
