"""Experiment execution: run a config, write the output files, run sweeps.

Outputs of a single run, inside the chosen output directory:

* ``trajectory.csv``   -- one row per configured grid time with the fixed
  column set (time_s, n_mode1, n_mode2, fidelity, log_negativity_bits,
  conditional_entropy_nats, purity, trace_defect).  Metrics that were not
  requested, or that need a second mode the system lacks, are written as nan
  so the header never changes shape.
* ``wigner_modeK.csv`` -- (re, im, value) rows for each requested mode K,
  computed on the post-selected state at the end of the protocol.
* ``readout.csv``      -- interference readout record (setting label, both
  displacement amplitudes, phase, expectation value) evaluated on the ideal
  target coefficients of the configured protocol; see the README for why the
  readout takes displacements the truncated simulation grid cannot support.
* ``manifest.json``    -- config hash, versions, wall time, solver audits,
  warnings.  Excluded from byte-reproducibility claims (wall time).

Conditional metrics project the evolving state through the pulse block that
follows the last interaction window (``tail_unitary``) onto the configured
outcome, so every row answers: "if the protocol stopped growing the state
here and ran its final pulses, how good would the post-selected state be?"
The fidelity column compares that conditional state against the protocol's
*final* loss-free target (the state the full sequence aims at), so fidelity
rises over a run and its peak is the headline generation fidelity;
entanglement and entropy columns are properties of the conditional state
itself and need no reference.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, expand_sweep_point
from .constants import CONSTANTS_VERSION
from .dynamics import Trajectory, initial_state
from .errors import EcsimError, NumericError
from .hilbert import DensityMatrix, HilbertSpace, coherent_state, partial_trace
from .metrics import (
    conditional_entropy,
    fidelity,
    log_negativity,
    wigner,
)
from .protocols import (
    InteractionWindow,
    ProtocolResult,
    ideal_components,
    project_qubit_raw,
    run_protocol,
    sequence_duration,
    tail_unitary,
)
from .readout import (
    ECSCoefficients,
    bell_coefficients,
    readout_run,
    write_readout_csv,
)

TRAJECTORY_COLUMNS = (
    "time_s",
    "n_mode1",
    "n_mode2",
    "fidelity",
    "log_negativity_bits",
    "conditional_entropy_nats",
    "purity",
    "trace_defect",
)

SUMMARY_COLUMNS = (
    "sweep_value",
    "peak_fidelity",
    "peak_log_negativity_bits",
    "min_conditional_entropy_nats",
    "time_of_peak_s",
)

# audit gates applied to recorded snapshots of every run
SNAPSHOT_TRACE_TOL = 1e-8
SNAPSHOT_HERMITICITY_TOL = 1e-9
SNAPSHOT_POSITIVITY_TOL = -1e-7

__all__ = [
    "run_experiment",
    "run_sweep",
    "RunArtifacts",
    "write_trajectory_csv",
    "format_float",
    "TRAJECTORY_COLUMNS",
    "SUMMARY_COLUMNS",
]


def format_float(x: float) -> str:
    """Fixed 17-significant-digit scientific form; round-trips every double."""
    return f"{x:.16e}"


def _fmt(x) -> str:
    return format_float(float(x))


@dataclass
class RunArtifacts:
    out_dir: Path
    trajectory: Trajectory
    result: ProtocolResult
    manifest: dict = field(default_factory=dict)


class _ConditionalMetrics:
    """Per-grid-point observer: conditional fidelity / E_N / S(1|2).

    Projects rho(t) through the final pulse block onto the configured qubit
    outcome; fidelity is taken against the end-of-protocol loss-free target.
    """

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.system = cfg.system
        self.dims = cfg.system.space().dims
        self.mode_dims = self.dims[1:]
        self.mode_space = HilbertSpace(self.mode_dims)
        L = self.dims[0]
        u_tail = tail_unitary(cfg.steps, L)
        e_out = np.zeros(L, dtype=complex)
        e_out[cfg.outcome] = 1.0
        self.v = u_tail.conj().T @ e_out
        self.two_mode = len(self.mode_dims) == 2
        self.want_f = "fidelity" in cfg.metrics
        self.want_en = "log_negativity" in cfg.metrics and self.two_mode
        self.want_sc = "conditional_entropy" in cfg.metrics and self.two_mode
        self.psi_final = self.target_vector(sequence_duration(cfg.steps))

    def target_vector(self, t: float) -> np.ndarray:
        comps = ideal_components(self.system, self.cfg.steps, t)
        psi = np.zeros(int(np.prod(self.mode_dims)), dtype=complex)
        for q, amps, c in comps:
            w = np.conj(self.v[q]) * c
            if w == 0:
                continue
            vec = np.ones(1, dtype=complex)
            for dim, a in zip(self.mode_dims, amps):
                vec = np.kron(vec, coherent_state(dim, a, leak_tol=1.0).amplitudes)
            psi += w * vec
        norm = np.linalg.norm(psi)
        if norm == 0.0:
            raise NumericError(f"ideal target vanishes at t={t:g}")
        return psi / norm

    def __call__(self, t: float, rho: np.ndarray) -> dict[str, float]:
        p, block = project_qubit_raw(rho, self.dims, self.v)
        out = {"projection_probability": p}
        if p <= 0.0:
            out.update(fidelity=math.nan, log_negativity_bits=math.nan,
                       conditional_entropy_nats=math.nan)
            return out
        cond = DensityMatrix(self.mode_space, block / p)
        out["fidelity"] = (
            fidelity(cond, self.psi_final) if self.want_f else math.nan)
        out["log_negativity_bits"] = (
            log_negativity(cond, transpose_slot=1) if self.want_en else math.nan)
        out["conditional_entropy_nats"] = (
            conditional_entropy(cond, conditioning_slot=1) if self.want_sc else math.nan)
        return out


def _record_counts(cfg: ExperimentConfig) -> list[int]:
    """Grid intervals per window; sums to n_points - 1 exactly."""
    durations = [s.duration for s in cfg.steps if isinstance(s, InteractionWindow)]
    total = sum(durations)
    n_int = cfg.n_points - 1
    counts, cum, prev = [], 0.0, 0
    for d in durations:
        cum += d
        b = round(cum / total * n_int)
        counts.append(max(b - prev, 1))
        prev = sum(counts)
    counts[-1] += n_int - sum(counts)
    if counts[-1] < 1:
        raise NumericError("time grid too coarse for the window structure")
    return counts


def write_trajectory_csv(path: Path, traj: Trajectory) -> None:
    n = len(traj.times)
    nan_col = np.full(n, math.nan)
    cols = {name: traj.records.get(name, nan_col) for name in TRAJECTORY_COLUMNS}
    with open(path, "w", newline="\n") as f:
        f.write(",".join(TRAJECTORY_COLUMNS) + "\n")
        for i in range(n):
            f.write(",".join(_fmt(cols[name][i]) for name in TRAJECTORY_COLUMNS) + "\n")


def _write_wigner_csv(path: Path, grid) -> None:
    with open(path, "w", newline="\n") as f:
        f.write("re,im,value\n")
        for i, re in enumerate(grid.re):
            for j, im in enumerate(grid.im):
                f.write(f"{_fmt(re)},{_fmt(im)},{_fmt(grid.values[i, j])}\n")


def _snapshot_audit(res: ProtocolResult) -> dict[str, float]:
    """Validity gates on the recorded snapshots (trace, hermiticity, positivity)."""
    worst_trace = worst_herm = 0.0
    min_eig = math.inf
    for _, dm in res.trajectory.snapshots:
        m = dm.matrix
        worst_trace = max(worst_trace, abs(np.trace(m).real - 1.0))
        worst_herm = max(worst_herm, float(np.max(np.abs(m - m.conj().T))))
        min_eig = min(min_eig, float(np.linalg.eigvalsh(m)[0]))
    return {
        "snapshot_max_trace_defect": worst_trace,
        "snapshot_max_hermiticity_defect": worst_herm,
        "snapshot_min_eigenvalue": (min_eig if math.isfinite(min_eig) else math.nan),
        "snapshot_count": float(len(res.trajectory.snapshots)),
    }


def _ideal_readout_coefficients(cfg: ExperimentConfig) -> ECSCoefficients:
    """Target ECS coefficients of the configured named protocol and outcome."""
    a = cfg.alpha
    if cfg.protocol_name == "bell":
        return bell_coefficients(a, sign=+1 if cfg.outcome == 0 else -1)
    if cfg.protocol_name == "noon":
        c = (0, 1, 1, 0) if cfg.outcome == 0 else (0, 1, -1, 0)
        return ECSCoefficients.from_unnormalized(a, c)
    if cfg.protocol_name == "general_ecs":
        c = (1, 1, 1, -1) if cfg.outcome == 0 else (1, -1, 1, 1)
        return ECSCoefficients.from_unnormalized(a, c)
    raise EcsimError(f"no ideal readout target for protocol {cfg.protocol_name!r}")


def _sample_shots(records, shots: int, seed: int):
    """Replace exact <sigma_x> values by finite-shot binomial estimates."""
    rng = np.random.default_rng(seed)
    out = []
    for r in records:
        p_up = min(max(0.5 * (1.0 + r.value), 0.0), 1.0)
        est = 2.0 * rng.binomial(shots, p_up) / shots - 1.0
        out.append(type(r)(label=r.label, beta_i=r.beta_i, beta_j=r.beta_j,
                           phi=r.phi, value=est))
    return out


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path) -> RunArtifacts:
    """Execute one configured run and write all its output files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    caught: list[str] = []

    observer = _ConditionalMetrics(cfg)
    counts = _record_counts(cfg)
    # a handful of full-state snapshots per run for the validity audit
    stride = max(1, (cfg.n_points - 1) // 6)

    with warnings.catch_warnings(record=True) as wlist:
        warnings.simplefilter("always")
        res = run_protocol(
            cfg.system, cfg.steps,
            rho0=initial_state(cfg.system),
            record_counts=counts,
            rtol=cfg.rtol, atol=cfg.atol,
            method=cfg.method, fixed_dt=cfg.fixed_dt,
            observer=observer, snapshot_stride=stride,
            truncation_tol=cfg.truncation_tol)
        traj = res.trajectory
        if len(traj.times) != cfg.n_points:
            raise NumericError(
                f"stitched grid has {len(traj.times)} rows, expected {cfg.n_points}")
        write_trajectory_csv(out / "trajectory.csv", traj)
        outputs = ["trajectory.csv"]

        if cfg.wigner is not None and res.projected is not None:
            ax = np.linspace(-cfg.wigner.extent, cfg.wigner.extent, cfg.wigner.points)
            for label in cfg.wigner.modes:
                reduced = partial_trace(res.projected, keep=(label - 1,))
                grid = wigner(reduced, ax, ax)
                name = f"wigner_mode{label}.csv"
                _write_wigner_csv(out / name, grid)
                outputs.append(name)

        if cfg.readout is not None:
            coeffs = _ideal_readout_coefficients(cfg)
            records = readout_run(coeffs, cfg.readout.phi)
            if cfg.readout.shots is not None:
                records = _sample_shots(records, cfg.readout.shots, cfg.seed)
            write_readout_csv(records, out / "readout.csv")
            outputs.append("readout.csv")

        caught = [f"{w.category.__name__}: {w.message}" for w in wlist]

    audits = dict(traj.audits)
    audits.update(_snapshot_audit(res))
    if audits["snapshot_max_trace_defect"] > SNAPSHOT_TRACE_TOL:
        raise NumericError(
            f"snapshot trace defect {audits['snapshot_max_trace_defect']:.3e} "
            f"exceeds {SNAPSHOT_TRACE_TOL:g}")
    if audits["snapshot_max_hermiticity_defect"] > SNAPSHOT_HERMITICITY_TOL:
        raise NumericError(
            f"snapshot hermiticity defect "
            f"{audits['snapshot_max_hermiticity_defect']:.3e} "
            f"exceeds {SNAPSHOT_HERMITICITY_TOL:g}")
    if audits["snapshot_min_eigenvalue"] < SNAPSHOT_POSITIVITY_TOL:
        raise NumericError(
            f"snapshot eigenvalue {audits['snapshot_min_eigenvalue']:.3e} "
            f"below {SNAPSHOT_POSITIVITY_TOL:g}")
    if res.probability is not None:
        audits["projection_probability"] = res.probability

    manifest = {
        "tool_version": __version__,
        "constants_version": CONSTANTS_VERSION,
        "config_hash_sha256": cfg.config_hash,
        "config_source": cfg.source,
        "protocol": cfg.protocol_name,
        "solver": {
            "method": cfg.method,
            "rtol": cfg.rtol,
            "atol": cfg.atol,
            "fixed_dt_s": cfg.fixed_dt,
            "truncation_tol": cfg.truncation_tol,
        },
        "grid_points": cfg.n_points,
        "audits": audits,
        "warnings": caught,
        "outputs": outputs,
        "wall_time_s": time.perf_counter() - t0,
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return RunArtifacts(out_dir=out, trajectory=traj, result=res, manifest=manifest)


def _point_dir_name(index: int, value: float) -> str:
    return f"point_{index:03d}_{value:.6g}"


def _sweep_worker(args) -> dict:
    index, value, base_cfg, point_dir = args
    row = {"sweep_value": value, "peak_fidelity": math.nan,
           "peak_log_negativity_bits": math.nan,
           "min_conditional_entropy_nats": math.nan,
           "time_of_peak_s": math.nan, "error": ""}
    try:
        # substitution happens here so that a value that breaks the point
        # config counts as a failure of this point, not of the sweep
        art = run_experiment(expand_sweep_point(base_cfg, value), point_dir)
        rec = art.trajectory.records
        t = art.trajectory.times
        f = rec.get("fidelity")
        en = rec.get("log_negativity_bits")
        sc = rec.get("conditional_entropy_nats")
        if f is not None and np.any(np.isfinite(f)):
            row["peak_fidelity"] = float(np.nanmax(f))
        if en is not None and np.any(np.isfinite(en)):
            k = int(np.nanargmax(en))
            row["peak_log_negativity_bits"] = float(en[k])
            row["time_of_peak_s"] = float(t[k])
        if sc is not None and np.any(np.isfinite(sc)):
            row["min_conditional_entropy_nats"] = float(np.nanmin(sc))
    except Exception as exc:  # a failed point must not kill the sweep
        row["error"] = f"{type(exc).__name__}: {exc}"
        Path(point_dir).mkdir(parents=True, exist_ok=True)
        with open(Path(point_dir) / "error.txt", "w") as fh:
            fh.write(row["error"] + "\n")
    return row


def run_sweep(cfg: ExperimentConfig, out_dir: str | Path,
              workers: int = 1) -> list[dict]:
    """Run every sweep point (concurrently if workers > 1), write summary.csv.

    A failing point gets an ``error.txt`` in its subdirectory and a nan row
    in the summary; the other points are unaffected.
    """
    from .errors import ConfigError

    if cfg.sweep is None:
        raise ConfigError("config has no sweep section")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(i, v, cfg, str(out / _point_dir_name(i, v)))
            for i, v in enumerate(cfg.sweep.values)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_worker, jobs))
    else:
        rows = [_sweep_worker(j) for j in jobs]

    with open(out / "summary.csv", "w", newline="\n") as f:
        f.write(",".join(SUMMARY_COLUMNS) + "\n")
        for row in rows:
            f.write(",".join(_fmt(row[c]) for c in SUMMARY_COLUMNS) + "\n")

    manifest = {
        "tool_version": __version__,
        "constants_version": CONSTANTS_VERSION,
        "config_hash_sha256": cfg.config_hash,
        "config_source": cfg.source,
        "sweep_parameter": cfg.sweep.parameter,
        "sweep_values": list(cfg.sweep.values),
        "point_dirs": [j[3] for j in jobs],
        "failures": {f"{row['sweep_value']:g}": row["error"]
                     for row in rows if row["error"]},
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return rows
