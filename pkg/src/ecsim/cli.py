"""Command line front end.

Verbs:

* ``run --config C --out D``          one experiment, outputs into D
* ``sweep --config C --out D``        every sweep point + summary.csv
* ``verify-readout --config C``       reconstruct ECS coefficients from the
                                      interference readout and test the
                                      Bell-form hypothesis (exit 1 if it fails)
* ``oracle-check``                    built-in cross-checks of the two
                                      independent generator routes and the
                                      closed-form benchmarks

Exit codes: 0 success, 1 verification failure / unexpected error,
2 config error, 3 physics-validity error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import sys
import traceback

from . import __version__
from .errors import ConfigError, EcsimError


def _cmd_run(args) -> int:
    from .config import load_config
    from .runner import run_experiment

    cfg = load_config(args.config)
    if cfg.sweep is not None:
        raise ConfigError(
            "config contains a sweep section; use the sweep command")
    out = args.out if args.out is not None else cfg.output
    art = run_experiment(cfg, out)
    print(f"run complete: {len(art.trajectory.times)} grid rows -> {art.out_dir}")
    for name in art.manifest["outputs"]:
        print(f"  wrote {name}")
    for w in art.manifest["warnings"]:
        print(f"  warning: {w}")
    return 0


def _cmd_sweep(args) -> int:
    from .config import load_config
    from .runner import run_sweep

    cfg = load_config(args.config)
    if cfg.sweep is None:
        raise ConfigError("config has no sweep section; use the run command")
    out = args.out if args.out is not None else cfg.output
    rows = run_sweep(cfg, out, workers=args.workers)
    n_fail = sum(1 for r in rows if r["error"])
    print(f"sweep complete: {len(rows)} points, {n_fail} failed -> {out}")
    for r in rows:
        status = r["error"] if r["error"] else (
            f"peak_EN={r['peak_log_negativity_bits']:.6f} bits "
            f"at t={r['time_of_peak_s']:.3e}s")
        print(f"  value={r['sweep_value']:g}: {status}")
    return 0


def _cmd_verify_readout(args) -> int:
    from .config import load_config
    from .runner import _ideal_readout_coefficients, _sample_shots
    from .readout import readout_run, verify_bell

    cfg = load_config(args.config)
    if cfg.readout is None:
        raise ConfigError("config has no readout section")
    coeffs = _ideal_readout_coefficients(cfg)
    records = readout_run(coeffs, cfg.readout.phi)
    if cfg.readout.shots is not None:
        records = _sample_shots(records, cfg.readout.shots, cfg.seed)
    values = {r.label: r.value for r in records}
    check = verify_bell(values, tol=cfg.readout.tol)
    print(f"reconstructed |c0 c3| = {check.c0c3:.9f}, theta3 = {check.theta3:+.3e}")
    print(f"cross-branch |c1 c2| = {check.c1c2:.3e}")
    print(f"residuals: f = {check.residual_f:+.3e}, g = {check.residual_g:+.3e}, "
          f"a26 = {check.a26_residual:+.3e}")
    print(f"bell coefficient estimate c = {check.c_bell:.9f}")
    verdict = "PASS" if check.is_bell else "FAIL"
    print(f"bell-form hypothesis at tol {cfg.readout.tol:g}: {verdict}")
    return 0 if check.is_bell else 1


def _cmd_oracle_check(args) -> int:
    import math

    import numpy as np

    from .device import ModeSpec, TransmonSpec
    from .dynamics import (
        FrameConfig,
        SystemSpec,
        build_dissipators,
        build_hamiltonian,
        dense_superoperator,
        evolve,
        initial_state,
        lindblad_rhs,
    )
    from .hilbert import DensityMatrix
    from .metrics import (
        bell_ecs_log_negativity,
        bosonic_thermal_entropy,
        log_negativity,
        von_neumann_entropy,
        wigner,
    )

    failures = []

    def check(name: str, err: float, tol: float) -> None:
        ok = err <= tol
        print(f"  {'ok  ' if ok else 'FAIL'} {name}: deviation {err:.3e} (tol {tol:g})")
        if not ok:
            failures.append(name)

    print("generator cross-check (dense superoperator vs matrix-free):")
    tr = TransmonSpec(E_C=0.3e9, E_J_max=18e9, levels=2, T1=40e-6, T2=60e-6)
    w = 2 * math.pi * 1e9
    g = 2 * math.pi * 2e6
    modes = (ModeSpec(kind="magnon", omega=w, g_tilde=g, Q=1e4, n_th=0.0, fock_dim=4),
             ModeSpec(kind="magnon", omega=w + 30 * g, g_tilde=g, Q=2e4, n_th=0.0,
                      fock_dim=3))
    system = SystemSpec(transmon=tr, modes=modes, temperature=0.01)
    frame = FrameConfig(omega_ac=w, active_modes=frozenset({0}),
                        rwa_drop_detuned=False)
    ham = build_hamiltonian(system, frame)
    diss = build_dissipators(system)
    lsup = dense_superoperator(ham, diss)
    rng = np.random.default_rng(7)
    d = system.space().total_dim
    x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = x @ x.conj().T
    rho /= np.trace(rho).real
    dense = (lsup @ rho.reshape(-1)).reshape(d, d)
    direct = lindblad_rhs(rho, ham, diss)
    check("generator route agreement",
          float(np.max(np.abs(dense - direct))) / float(np.max(np.abs(dense))),
          1e-12)

    from scipy.linalg import expm
    t_end = 40e-9
    rho0 = initial_state(system)
    traj = evolve(rho0, system, frame, t_end, rtol=1e-10, atol=1e-12,
                  truncation_tol=2.0)
    prop = expm(lsup * t_end)
    rho_ref = (prop @ rho0.matrix.reshape(-1)).reshape(d, d)
    check("time propagation vs matrix exponential",
          float(np.max(np.abs(traj.snapshots[-1][1].matrix - rho_ref))), 1e-8)

    print("closed-form benchmarks:")
    from .hilbert import HilbertSpace, StateVector, coherent_state
    a = 2.0
    dim = 24
    c0 = coherent_state(dim, 0.0).amplitudes
    ca = coherent_state(dim, a).amplitudes
    psi = np.kron(c0, c0) + np.kron(ca, ca)
    psi /= np.linalg.norm(psi)
    sv = StateVector(HilbertSpace((dim, dim)), psi)
    check("even-ECS log-negativity vs closed form",
          abs(log_negativity(sv.to_density()) - bell_ecs_log_negativity(a)), 1e-8)

    from .dynamics import thermal_state
    th = thermal_state(40, 0.1)
    check("thermal entropy vs closed form",
          abs(von_neumann_entropy(th) - bosonic_thermal_entropy(0.1)), 1e-8)

    import warnings

    from .errors import ReliabilityWarning
    ax = np.linspace(-4.5, 4.5, 41)
    with warnings.catch_warnings():
        # the wide grid is deliberate: the tails must integrate correctly
        warnings.simplefilter("ignore", ReliabilityWarning)
        grid = wigner(coherent_state(30, 1.0).to_density(), ax, ax)
    check("Wigner normalization (coherent state)", abs(grid.integral() - 1.0), 1e-6)

    if failures:
        print(f"oracle-check: {len(failures)} FAILED")
        return 4
    print("oracle-check: all ok")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ecsim",
        description="entangled cat state protocol simulator")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="execute one configured experiment")
    pr.add_argument("--config", required=True, help="YAML experiment file")
    pr.add_argument("--out", default=None, help="output directory (default: config's)")
    pr.set_defaults(func=_cmd_run)

    ps = sub.add_parser("sweep", help="execute every sweep point")
    ps.add_argument("--config", required=True, help="YAML experiment file")
    ps.add_argument("--out", default=None, help="output directory (default: config's)")
    ps.add_argument("--workers", type=int, default=1,
                    help="concurrent sweep processes (default 1)")
    ps.set_defaults(func=_cmd_sweep)

    pv = sub.add_parser("verify-readout",
                        help="test the Bell-form hypothesis from readout data")
    pv.add_argument("--config", required=True, help="YAML experiment file")
    pv.set_defaults(func=_cmd_verify_readout)

    po = sub.add_parser("oracle-check",
                        help="run built-in dual-route and closed-form checks")
    po.set_defaults(func=_cmd_oracle_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EcsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", 1)
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
