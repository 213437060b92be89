"""Experiment configuration: YAML schema, validation, sweep expansion.

A config file describes one experiment: the device (transmon + bosonic
modes), a protocol, the recording grid, solver knobs, and optional wigner /
readout / sweep sections.  Frequencies in the file are ordinary frequencies
in Hz (what a spectrum analyzer shows); the library works in angular units,
so the loader multiplies by 2*pi.  Unknown keys anywhere are an error -- a
typo should never silently fall back to a default.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .device import ModeSpec, TransmonSpec
from .dynamics import SystemSpec
from .errors import ConfigError
from .protocols import (
    InteractionWindow,
    PrepareSuperposition,
    ProjectQubit,
    QubitPulse,
    Step,
    bell_sequence,
    general_ecs_sequence,
    noon_sequence,
    validate_sequence,
)

TWO_PI = 2.0 * math.pi

PROTOCOL_NAMES = ("bell", "noon", "general_ecs", "custom")
SOLVER_METHODS = ("dopri5", "rk4")
METRIC_NAMES = ("fidelity", "log_negativity", "conditional_entropy")

__all__ = [
    "ExperimentConfig",
    "WignerConfig",
    "ReadoutConfig",
    "SweepConfig",
    "load_config",
    "parse_config",
    "expand_sweep",
    "expand_sweep_point",
    "set_by_path",
]


def _require_mapping(obj: Any, where: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be a mapping, got {type(obj).__name__}")
    return obj


def _take(d: dict, where: str, allowed: dict[str, Any]) -> dict[str, Any]:
    """Pull values for the allowed keys out of d; reject anything else.

    `allowed` maps key -> default; a default of ... marks a required key.
    """
    unknown = set(d) - set(allowed)
    if unknown:
        k = sorted(unknown)[0]
        raise ConfigError(f"unknown key {where}.{k}")
    out = {}
    for key, default in allowed.items():
        if key in d and d[key] is not None:
            out[key] = d[key]
        elif default is ...:
            raise ConfigError(f"missing required key {where}.{key}")
        else:
            out[key] = default
    return out


def _as_float(v: Any, where: str) -> float:
    if isinstance(v, bool):
        raise ConfigError(f"{where} must be a number, got {v!r}")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        # YAML 1.1 resolves '1.0e4' (no exponent sign) as a string; accept it
        try:
            return float(v)
        except ValueError:
            pass
    raise ConfigError(f"{where} must be a number, got {v!r}")


def _as_pos(v: Any, where: str) -> float:
    x = _as_float(v, where)
    if not x > 0:
        raise ConfigError(f"{where} must be > 0, got {x}")
    return x


def _as_int(v: Any, where: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where} must be an integer, got {v!r}")
    return v


def _as_complex(v: Any, where: str) -> complex:
    """A number, or a [re, im] pair."""
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return complex(v)
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(_as_float(v[0], where), _as_float(v[1], where))
    raise ConfigError(f"{where} must be a number or a [re, im] pair, got {v!r}")


@dataclass(frozen=True)
class WignerConfig:
    modes: tuple[int, ...]          # 1-based mode labels, matching file names
    extent: float = 5.0
    points: int = 61


@dataclass(frozen=True)
class ReadoutConfig:
    phi: float = 0.25 * math.pi
    tol: float = 1e-6
    shots: int | None = None        # None: exact expectation values


@dataclass(frozen=True)
class SweepConfig:
    parameter: str                  # dotted path into the raw config, * = every list item
    values: tuple[float, ...]


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemSpec
    protocol_name: str
    steps: tuple[Step, ...]
    alpha: complex                  # target amplitude of the named protocol (0 for custom)
    outcome: int
    n_points: int
    method: str
    rtol: float
    atol: float
    fixed_dt: float | None
    truncation_tol: float
    metrics: frozenset[str]
    wigner: WignerConfig | None
    readout: ReadoutConfig | None
    sweep: SweepConfig | None
    seed: int
    output: str
    raw: dict = field(repr=False, default_factory=dict)
    config_hash: str = ""
    source: str = ""


def _build_transmon(d: dict) -> TransmonSpec:
    vals = _take(_require_mapping(d, "system.transmon"), "system.transmon", {
        "E_C_hz": 0.3e9,
        "E_J_max_hz": None,
        "phi_bias": 0.0,
        "levels": 3,
        "T1_s": None,
        "T2_s": None,
    })
    e_c = _as_pos(vals["E_C_hz"], "system.transmon.E_C_hz")
    e_j = vals["E_J_max_hz"]
    if e_j is None:
        e_j = 60.0 * e_c        # comfortably inside the transmon regime
    else:
        e_j = _as_pos(e_j, "system.transmon.E_J_max_hz")
    t1 = math.inf if vals["T1_s"] is None else _as_pos(vals["T1_s"], "system.transmon.T1_s")
    t2 = math.inf if vals["T2_s"] is None else _as_pos(vals["T2_s"], "system.transmon.T2_s")
    return TransmonSpec(
        E_C=e_c, E_J_max=e_j,
        phi_b=_as_float(vals["phi_bias"], "system.transmon.phi_bias"),
        levels=_as_int(vals["levels"], "system.transmon.levels"),
        T1=t1, T2=t2)


def _build_mode(d: dict, where: str) -> ModeSpec:
    vals = _take(_require_mapping(d, where), where, {
        "kind": ...,
        "omega_hz": ...,
        "g_tilde_hz": ...,
        "Q": math.inf,
        "n_th": 0.0,
        "fock_dim": 10,
    })
    q = _as_float(vals["Q"], f"{where}.Q")
    if not q > 0:
        raise ConfigError(f"{where}.Q must be > 0")
    n_th = _as_float(vals["n_th"], f"{where}.n_th")
    if n_th < 0:
        raise ConfigError(f"{where}.n_th must be >= 0")
    return ModeSpec(
        kind=str(vals["kind"]),
        omega=TWO_PI * _as_pos(vals["omega_hz"], f"{where}.omega_hz"),
        g_tilde=TWO_PI * _as_pos(vals["g_tilde_hz"], f"{where}.g_tilde_hz"),
        Q=q, n_th=n_th,
        fock_dim=_as_int(vals["fock_dim"], f"{where}.fock_dim"))


def _build_system(d: dict) -> SystemSpec:
    vals = _take(_require_mapping(d, "system"), "system", {
        "transmon": {},
        "modes": ...,
        "temperature_K": 0.0,
        "coupling_phase_theta": math.pi,
    })
    modes_raw = vals["modes"]
    if not isinstance(modes_raw, list) or not modes_raw:
        raise ConfigError("system.modes must be a non-empty list")
    modes = tuple(_build_mode(m, f"system.modes[{i}]") for i, m in enumerate(modes_raw))
    temp = _as_float(vals["temperature_K"], "system.temperature_K")
    if temp < 0:
        raise ConfigError("system.temperature_K must be >= 0")
    return SystemSpec(
        transmon=_build_transmon(vals["transmon"]),
        modes=modes,
        temperature=temp,
        coupling_phase_theta=_as_float(vals["coupling_phase_theta"],
                                       "system.coupling_phase_theta"))


_STEP_KEYS = {
    "prepare": {"type": ..., "chi": 0.0},
    "pulse": {"type": ..., "axis": ..., "angle": ...},
    "window": {"type": ..., "omega_ac_hz": ..., "duration_s": ...,
               "theta": None, "rwa_drop_detuned": True},
    "project": {"type": ..., "outcome": 0},
}


def _build_step(d: dict, where: str) -> Step:
    d = _require_mapping(d, where)
    kind = d.get("type")
    if kind not in _STEP_KEYS:
        raise ConfigError(
            f"{where}.type must be one of {sorted(_STEP_KEYS)}, got {kind!r}")
    vals = _take(d, where, _STEP_KEYS[kind])
    if kind == "prepare":
        return PrepareSuperposition(chi=_as_float(vals["chi"], f"{where}.chi"))
    if kind == "pulse":
        return QubitPulse(axis=str(vals["axis"]),
                          angle=_as_float(vals["angle"], f"{where}.angle"))
    if kind == "window":
        theta = vals["theta"]
        return InteractionWindow(
            omega_ac=TWO_PI * _as_pos(vals["omega_ac_hz"], f"{where}.omega_ac_hz"),
            duration=_as_pos(vals["duration_s"], f"{where}.duration_s"),
            theta=None if theta is None else _as_float(theta, f"{where}.theta"),
            rwa_drop_detuned=bool(vals["rwa_drop_detuned"]))
    return ProjectQubit(outcome=_as_int(vals["outcome"], f"{where}.outcome"))


def _build_protocol(d: dict, system: SystemSpec) -> tuple[str, tuple[Step, ...], complex, int]:
    vals = _take(_require_mapping(d, "protocol"), "protocol", {
        "name": ...,
        "alpha": None,
        "chi": 0.0,
        "outcome": 0,
        "steps": None,
    })
    name = vals["name"]
    if name not in PROTOCOL_NAMES:
        raise ConfigError(f"protocol.name must be one of {PROTOCOL_NAMES}, got {name!r}")
    outcome = _as_int(vals["outcome"], "protocol.outcome")
    if outcome not in (0, 1):
        raise ConfigError("protocol.outcome must be 0 or 1")
    chi = _as_float(vals["chi"], "protocol.chi")
    if name == "custom":
        if vals["steps"] is None:
            raise ConfigError("protocol.steps is required when protocol.name is custom")
        if vals["alpha"] is not None:
            raise ConfigError("protocol.alpha is only meaningful for named protocols")
        if not isinstance(vals["steps"], list):
            raise ConfigError("protocol.steps must be a list")
        steps = tuple(_build_step(s, f"protocol.steps[{i}]")
                      for i, s in enumerate(vals["steps"]))
        validate_sequence(steps)
        return name, steps, 0j, outcome
    if vals["steps"] is not None:
        raise ConfigError("protocol.steps is only allowed when protocol.name is custom")
    if vals["alpha"] is None:
        raise ConfigError(f"protocol.alpha is required for protocol.name {name!r}")
    alpha = _as_complex(vals["alpha"], "protocol.alpha")
    if alpha == 0:
        raise ConfigError("protocol.alpha must be nonzero")
    if name == "bell":
        steps = tuple(bell_sequence(system, alpha, chi=chi, outcome=outcome))
    elif name == "noon":
        steps = tuple(noon_sequence(system, alpha, outcome=outcome))
    else:
        steps = tuple(general_ecs_sequence(system, alpha, outcome=outcome))
    return name, steps, alpha, outcome


def _build_wigner(d: Any, system: SystemSpec) -> WignerConfig | None:
    if d is None:
        return None
    vals = _take(_require_mapping(d, "wigner"), "wigner", {
        "modes": ...,
        "extent": 5.0,
        "points": 61,
    })
    modes_raw = vals["modes"]
    if not isinstance(modes_raw, list) or not modes_raw:
        raise ConfigError("wigner.modes must be a non-empty list of 1-based mode labels")
    modes = tuple(_as_int(m, "wigner.modes[*]") for m in modes_raw)
    for m in modes:
        if not 1 <= m <= len(system.modes):
            raise ConfigError(f"wigner.modes entry {m} out of range 1..{len(system.modes)}")
    points = _as_int(vals["points"], "wigner.points")
    if points < 2:
        raise ConfigError("wigner.points must be >= 2")
    return WignerConfig(modes=modes,
                        extent=_as_pos(vals["extent"], "wigner.extent"),
                        points=points)


def _build_readout(d: Any, protocol_name: str) -> ReadoutConfig | None:
    if d is None:
        return None
    if protocol_name == "custom":
        raise ConfigError("readout requires a named protocol (bell/noon/general_ecs)")
    vals = _take(_require_mapping(d, "readout"), "readout", {
        "phi": 0.25 * math.pi,
        "tol": 1e-6,
        "shots": None,
    })
    shots = vals["shots"]
    if shots is not None:
        shots = _as_int(shots, "readout.shots")
        if shots < 1:
            raise ConfigError("readout.shots must be >= 1")
    return ReadoutConfig(phi=_as_float(vals["phi"], "readout.phi"),
                         tol=_as_pos(vals["tol"], "readout.tol"),
                         shots=shots)


def _build_sweep(d: Any) -> SweepConfig | None:
    if d is None:
        return None
    vals = _take(_require_mapping(d, "sweep"), "sweep", {
        "parameter": ...,
        "values": ...,
    })
    if not isinstance(vals["values"], list) or not vals["values"]:
        raise ConfigError("sweep.values must be a non-empty list")
    values = tuple(_as_float(v, "sweep.values[*]") for v in vals["values"])
    param = str(vals["parameter"])
    return SweepConfig(parameter=param, values=values)


def parse_config(raw: dict, *, config_hash: str = "", source: str = "") -> ExperimentConfig:
    """Validate a parsed YAML mapping and build the experiment description."""
    top = _take(_require_mapping(raw, "config"), "config", {
        "system": ...,
        "protocol": ...,
        "time_grid": {},
        "solver": {},
        "metrics": list(METRIC_NAMES),
        "wigner": None,
        "readout": None,
        "sweep": None,
        "seed": 0,
        "output": "out",
    })
    system = _build_system(top["system"])
    name, steps, alpha, outcome = _build_protocol(top["protocol"], system)

    grid = _take(_require_mapping(top["time_grid"], "time_grid"), "time_grid",
                 {"n_points": 61})
    n_points = _as_int(grid["n_points"], "time_grid.n_points")
    n_windows = sum(isinstance(s, InteractionWindow) for s in steps)
    if n_points < n_windows + 1:
        raise ConfigError(
            f"time_grid.n_points must be >= {n_windows + 1} for {n_windows} windows")

    sol = _take(_require_mapping(top["solver"], "solver"), "solver", {
        "method": "dopri5",
        "rtol": 1e-8,
        "atol": 1e-10,
        "fixed_dt_s": None,
        "truncation_tol": 1e-4,
    })
    method = sol["method"]
    if method not in SOLVER_METHODS:
        raise ConfigError(f"solver.method must be one of {SOLVER_METHODS}, got {method!r}")
    fixed_dt = sol["fixed_dt_s"]
    if fixed_dt is not None:
        fixed_dt = _as_pos(fixed_dt, "solver.fixed_dt_s")
    if method == "rk4" and fixed_dt is None:
        raise ConfigError("solver.fixed_dt_s is required when solver.method is rk4")

    metrics_raw = top["metrics"]
    if not isinstance(metrics_raw, list):
        raise ConfigError("metrics must be a list")
    for m in metrics_raw:
        if m not in METRIC_NAMES:
            raise ConfigError(f"unknown metric {m!r}; choose from {METRIC_NAMES}")

    return ExperimentConfig(
        system=system,
        protocol_name=name,
        steps=steps,
        alpha=alpha,
        outcome=outcome,
        n_points=n_points,
        method=method,
        rtol=_as_pos(sol["rtol"], "solver.rtol"),
        atol=_as_pos(sol["atol"], "solver.atol"),
        fixed_dt=fixed_dt,
        truncation_tol=_as_pos(sol["truncation_tol"], "solver.truncation_tol"),
        metrics=frozenset(metrics_raw),
        wigner=_build_wigner(top["wigner"], system),
        readout=_build_readout(top["readout"], name),
        sweep=_build_sweep(top["sweep"]),
        seed=_as_int(top["seed"], "seed"),
        output=str(top["output"]),
        raw=raw,
        config_hash=config_hash,
        source=source,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    """Read, hash and validate a YAML config file."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(data)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        at = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"invalid YAML in {path}{at}: {exc}") from exc
    if raw is None:
        raise ConfigError(f"config file {path} is empty")
    digest = hashlib.sha256(data).hexdigest()
    return parse_config(raw, config_hash=digest, source=str(path))


def set_by_path(raw: dict, dotted: str, value: Any) -> None:
    """Assign raw[a][b]...[z] = value; '*' fans out over every list element.

    Used by sweeps: e.g. 'system.modes.*.Q' sets Q on every mode.
    """
    parts = dotted.split(".")

    def descend(node: Any, idx: int) -> None:
        part = parts[idx]
        last = idx == len(parts) - 1
        if part == "*":
            if not isinstance(node, list):
                raise ConfigError(
                    f"sweep path {dotted!r}: '*' at position {idx + 1} needs a list")
            for k in range(len(node)):
                if last:
                    node[k] = value
                else:
                    descend(node[k], idx + 1)
            return
        if isinstance(node, list):
            try:
                key: Any = int(part)
            except ValueError:
                raise ConfigError(
                    f"sweep path {dotted!r}: list index expected, got {part!r}") from None
            if not 0 <= key < len(node):
                raise ConfigError(f"sweep path {dotted!r}: index {key} out of range")
        elif isinstance(node, dict):
            if part not in node and not last:
                raise ConfigError(f"sweep path {dotted!r}: key {part!r} not found")
            key = part
        else:
            raise ConfigError(
                f"sweep path {dotted!r}: cannot descend into {type(node).__name__}")
        if last:
            node[key] = value
        else:
            descend(node[key], idx + 1)

    descend(raw, 0)


def expand_sweep_point(cfg: ExperimentConfig, value: float) -> ExperimentConfig:
    """Validated config for a single sweep value (sweep section removed).

    May raise ConfigError if the substituted value makes the point config
    invalid; sweep execution treats that as a failure of this point only.
    """
    if cfg.sweep is None:
        raise ConfigError("config has no sweep section")
    import copy

    raw = copy.deepcopy(cfg.raw)
    raw.pop("sweep", None)
    set_by_path(raw, cfg.sweep.parameter, value)
    return parse_config(raw, config_hash=cfg.config_hash, source=cfg.source)


def expand_sweep(cfg: ExperimentConfig) -> list[tuple[float, ExperimentConfig]]:
    """One validated point config per sweep value (sweep section removed)."""
    if cfg.sweep is None:
        raise ConfigError("config has no sweep section")
    return [(v, expand_sweep_point(cfg, v)) for v in cfg.sweep.values]
