"""Configuration parsing, run orchestration, and result serialization.

Runs are described by a single JSON document with five blocks::

    {
      "system":   {"epsilon": 1.0, "drive_amplitude": 0.1,
                   "drive_frequency": 1.0, "initial_state": "excited"},
      "bath":     {"kind": "semicircle_chain", "eps0": 1.0, "h": 0.05,
                   "num_modes": 20, "weight_rule": "midpoint"},
      "method":   {"name": "dressed", "truncation": 2, "dt": 0.05,
                   "t_max": 60.0, "record_stride": 1},
      "ensemble": {"trajectories": 2000, "master_seed": 1},
      "output":   {"path": "run.dat"}
    }

Unknown keys are rejected and every validation error names the offending
dotted key path.  Results are written as columnar text with a ``#`` header
that embeds the fully resolved configuration (defaults filled in, CLI
overrides applied), so any output file can be regenerated from its own
header.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ed_oracle, ensemble_driver
from .bath_model import (
    ContinuumBath,
    DiscretizedBath,
    SystemModel,
    WEIGHT_RULES,
    discretize_semicircle_chain,
    discretize_uniform,
    spin_boson,
)
from .trajectory_engine import DegenerateProjection, PropagatorConfig

__all__ = [
    "ConfigError",
    "RunConfig",
    "RunData",
    "parse_config",
    "load_config",
    "run_from_config",
    "write_results",
    "read_results",
    "regenerate_data_section",
    "cli_main",
    "main",
]

METHOD_NAMES = ("dressed", "linear", "ed")
_REQUIRED = object()


class ConfigError(ValueError):
    """A configuration document failed validation."""


class _Section:
    """Strict reader for one nested config block."""

    def __init__(self, data, path: str):
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected an object")
        self._data = dict(data)
        self._path = path

    def take(self, key, default=_REQUIRED, cast=None):
        path = f"{self._path}.{key}"
        if key not in self._data:
            if default is _REQUIRED:
                raise ConfigError(f"missing required key {path}")
            return default
        value = self._data.pop(key)
        if cast is None:
            return value
        try:
            return cast(value, path)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def finish(self):
        if self._data:
            unknown = ", ".join(f"{self._path}.{k}" for k in sorted(self._data))
            raise ConfigError(f"unknown key(s): {unknown}")


def _number(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _positive(value, path):
    x = _number(value, path)
    if x <= 0:
        raise ConfigError(f"{path}: must be positive, got {x}")
    return x


def _nonnegative(value, path):
    x = _number(value, path)
    if x < 0:
        raise ConfigError(f"{path}: must be non-negative, got {x}")
    return x


def _integer(value, path):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    return value


def _positive_int(value, path):
    x = _integer(value, path)
    if x < 1:
        raise ConfigError(f"{path}: must be >= 1, got {x}")
    return x


def _nonnegative_int(value, path):
    x = _integer(value, path)
    if x < 0:
        raise ConfigError(f"{path}: must be >= 0, got {x}")
    return x


def _boolean(value, path):
    if not isinstance(value, bool):
        raise ConfigError(f"{path}: expected true/false, got {value!r}")
    return value


def _string(value, path):
    if not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {value!r}")
    return value


def _choice(options):
    def cast(value, path):
        value = _string(value, path)
        if value not in options:
            raise ConfigError(f"{path}: must be one of {options}, got {value!r}")
        return value

    return cast


def _complex_pairs(value, path):
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
        raise ConfigError(f"{path}: expected a list of [re, im] pairs")
    return arr[:, 0] + 1j * arr[:, 1]


@dataclass
class RunConfig:
    """Fully resolved run description (defaults filled, overrides applied)."""

    system: dict
    bath: dict
    method: dict
    ensemble: dict
    output: dict

    def to_dict(self) -> dict:
        return {
            "system": dict(self.system),
            "bath": dict(self.bath),
            "method": dict(self.method),
            "ensemble": dict(self.ensemble),
            "output": dict(self.output),
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON run configuration."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected an object")
    top = _Section(raw, "")

    sys_sec = _Section(top.take("system"), "system")
    system = {
        "epsilon": sys_sec.take("epsilon", cast=_number),
        "drive_amplitude": sys_sec.take("drive_amplitude", 0.0, cast=_number),
        "drive_frequency": sys_sec.take("drive_frequency", 1.0, cast=_number),
        "initial_state": sys_sec.take("initial_state", "excited"),
    }
    sys_sec.finish()
    _validate_initial_state(system["initial_state"])

    bath_raw = _Section(top.take("bath"), "bath")
    kind = bath_raw.take("kind", "semicircle_chain", cast=_choice(("semicircle_chain", "tabulated")))
    bath = {"kind": kind, "num_modes": bath_raw.take("num_modes", cast=_positive_int)}
    if kind == "semicircle_chain":
        bath["eps0"] = bath_raw.take("eps0", cast=_number)
        bath["h"] = bath_raw.take("h", cast=_positive)
        bath["weight_rule"] = bath_raw.take("weight_rule", "midpoint", cast=_choice(WEIGHT_RULES))
    else:
        omegas = bath_raw.take("omega_table")
        couplings = bath_raw.take("coupling_table")
        om = np.asarray(omegas, dtype=np.float64)
        if om.ndim != 1 or om.size < 2:
            raise ConfigError("bath.omega_table: expected a list of at least two frequencies")
        cv = np.asarray(couplings, dtype=np.float64)
        if cv.shape != om.shape:
            raise ConfigError("bath.coupling_table: must match omega_table in length")
        bath["omega_table"] = om.tolist()
        bath["coupling_table"] = cv.tolist()
    bath_raw.finish()

    met_sec = _Section(top.take("method"), "method")
    name = met_sec.take("name", cast=_choice(METHOD_NAMES))
    method = {
        "name": name,
        "dt": met_sec.take("dt", cast=_positive),
        "t_max": met_sec.take("t_max", cast=_nonnegative),
        "record_stride": met_sec.take("record_stride", 1, cast=_positive_int),
        "truncation": met_sec.take("truncation", 0, cast=_nonnegative_int),
        "excitation_cutoff": met_sec.take("excitation_cutoff", 0, cast=_nonnegative_int),
        "projection_floor": met_sec.take("projection_floor", 1e-12, cast=_positive),
        "record_evolved_noise": met_sec.take("record_evolved_noise", False, cast=_boolean),
        "norm_tolerance": met_sec.take("norm_tolerance", 1e-8, cast=_positive),
        "checkpoint_path": met_sec.take("checkpoint_path", None),
        "checkpoint_every": met_sec.take("checkpoint_every", 0, cast=_nonnegative_int),
        "max_steps": met_sec.take("max_steps", None),
    }
    met_sec.finish()
    if method["projection_floor"] >= 1.0:
        raise ConfigError("method.projection_floor: must be < 1")
    if method["checkpoint_path"] is not None and not isinstance(method["checkpoint_path"], str):
        raise ConfigError("method.checkpoint_path: expected a string or null")
    if method["max_steps"] is not None:
        method["max_steps"] = _positive_int(method["max_steps"], "method.max_steps")

    ens_sec = _Section(top.take("ensemble", {}), "ensemble")
    ensemble = {
        "trajectories": ens_sec.take("trajectories", 1, cast=_positive_int),
        "master_seed": ens_sec.take("master_seed", 0, cast=_nonnegative_int),
        "batches": ens_sec.take("batches", 10, cast=_positive_int),
        "chunk_size": ens_sec.take("chunk_size", 128, cast=_positive_int),
        "workers": ens_sec.take("workers", 1, cast=_positive_int),
        "max_degenerate_fraction": ens_sec.take("max_degenerate_fraction", 0.01, cast=_nonnegative),
    }
    ens_sec.finish()

    out_sec = _Section(top.take("output", {}), "output")
    output = {
        "path": out_sec.take("path", "results.dat", cast=_string),
        "format": out_sec.take("format", "columns", cast=_choice(("columns",))),
    }
    out_sec.finish()
    top.finish()

    return RunConfig(system=system, bath=bath, method=method, ensemble=ensemble, output=output)


def _validate_initial_state(value):
    if isinstance(value, str):
        if value not in ("ground", "excited"):
            raise ConfigError(
                f"system.initial_state: must be 'ground', 'excited', or [re, im] pairs, got {value!r}"
            )
        return
    amps = _complex_pairs(value, "system.initial_state")
    if amps.size != 2:
        raise ConfigError("system.initial_state: expected two [re, im] pairs for the qubit")
    if np.linalg.norm(amps) == 0:
        raise ConfigError("system.initial_state: must have positive norm")


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_config(handle.read())


def build_model(config: RunConfig) -> SystemModel:
    block = config.system
    return spin_boson(block["epsilon"], block["drive_amplitude"], block["drive_frequency"])


def build_bath(config: RunConfig) -> DiscretizedBath:
    block = config.bath
    if block["kind"] == "semicircle_chain":
        return discretize_semicircle_chain(
            block["eps0"], block["h"], block["num_modes"], block["weight_rule"]
        )
    continuum = ContinuumBath.from_table(block["omega_table"], block["coupling_table"])
    return discretize_uniform(continuum, block["num_modes"])


def initial_system_state(config: RunConfig) -> np.ndarray:
    value = config.system["initial_state"]
    if isinstance(value, str):
        psi = np.array([1.0, 0.0] if value == "ground" else [0.0, 1.0], dtype=np.complex128)
    else:
        psi = _complex_pairs(value, "system.initial_state")
    return psi / np.linalg.norm(psi)


@dataclass
class RunData:
    """Flat result bundle shared by every method, ready for serialization."""

    times: np.ndarray
    occupation: np.ndarray
    occupation_stderr: np.ndarray
    rho: np.ndarray
    num_degenerate: int
    ensemble: Optional[ensemble_driver.EnsembleResult] = field(default=None, repr=False)


def run_from_config(config: RunConfig) -> RunData:
    """Execute the configured run and return its observable series."""
    model = build_model(config)
    bath = build_bath(config)
    psi0 = initial_system_state(config)
    m = config.method
    if m["name"] == "ed":
        ed_cfg = ed_oracle.EDConfig(
            excitation_cutoff=m["excitation_cutoff"],
            dt=m["dt"],
            t_max=m["t_max"],
            record_stride=m["record_stride"],
            norm_tolerance=m["norm_tolerance"],
            max_steps=m["max_steps"],
            checkpoint_path=m["checkpoint_path"],
            checkpoint_every=m["checkpoint_every"],
        )
        result = ed_oracle.propagate_ed(psi0, ed_cfg, model, bath)
        return RunData(
            times=result.times,
            occupation=result.occupation,
            occupation_stderr=np.zeros_like(result.occupation),
            rho=result.rho,
            num_degenerate=0,
        )
    prop_cfg = PropagatorConfig(
        dt=m["dt"],
        t_max=m["t_max"],
        truncation=m["truncation"],
        method="nonlinear_dressed" if m["name"] == "dressed" else "linear_dressed",
        projection_floor=m["projection_floor"],
        record_stride=m["record_stride"],
        record_evolved_noise=m["record_evolved_noise"],
    )
    ens = config.ensemble
    result = ensemble_driver.run_ensemble(
        ens["trajectories"],
        ens["master_seed"],
        model,
        bath,
        prop_cfg,
        psi0,
        batches=ens["batches"],
        chunk_size=ens["chunk_size"],
        workers=ens["workers"],
        max_degenerate_fraction=ens["max_degenerate_fraction"],
    )
    return RunData(
        times=result.times,
        occupation=result.occupation,
        occupation_stderr=result.occupation_stderr,
        rho=result.rho_mean,
        num_degenerate=result.num_degenerate,
        ensemble=result,
    )


def _column_names(ds: int) -> list:
    names = ["time", "occupation", "occupation_stderr"]
    for a in range(ds):
        for b in range(ds):
            names.append(f"re_rho_{a}{b}")
            names.append(f"im_rho_{a}{b}")
    names.append("num_degenerate")
    return names


def render_data_section(data: RunData) -> str:
    """Data rows as text, bit-reproducible for identical runs."""
    ds = data.rho.shape[-1]
    lines = []
    for k in range(data.times.size):
        fields = [data.times[k], data.occupation[k], data.occupation_stderr[k]]
        for a in range(ds):
            for b in range(ds):
                fields.append(data.rho[k, a, b].real)
                fields.append(data.rho[k, a, b].imag)
        fields.append(data.num_degenerate)
        lines.append(" ".join(_format_value(x) for x in fields))
    return "\n".join(lines) + "\n"


def _format_value(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_results(data: RunData, path: str, config: RunConfig) -> None:
    """Write the columnar result file with the resolved config in the header."""
    ds = data.rho.shape[-1]
    header = [
        "# nmtraj results v1",
        f"# config {config.canonical_json()}",
        f"# columns {' '.join(_column_names(ds))}",
    ]
    body = render_data_section(data)
    try:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write("\n".join(header) + "\n")
            handle.write(body)
    except OSError as exc:
        raise OSError(f"cannot write results to {path!r}: {exc}") from exc


def read_results(path: str):
    """Parse a result file back into (config, column names, data array)."""
    config_line = columns_line = None
    rows = []
    try:
        with open(path, "r", encoding="utf-8") as handle:
            for line in handle:
                line = line.rstrip("\n")
                if line.startswith("# config "):
                    config_line = line[len("# config "):]
                elif line.startswith("# columns "):
                    columns_line = line[len("# columns "):]
                elif line.startswith("#") or not line.strip():
                    continue
                else:
                    rows.append([float(x) for x in line.split()])
    except OSError as exc:
        raise OSError(f"cannot read results from {path!r}: {exc}") from exc
    if config_line is None or columns_line is None:
        raise ValueError(f"{path!r} is missing the embedded header")
    raw = json.loads(config_line)
    config = parse_config(json.dumps(raw))
    return config, columns_line.split(), np.asarray(rows)


def data_section(path: str) -> str:
    """The non-header portion of a result file, verbatim."""
    with open(path, "r", encoding="utf-8") as handle:
        return "".join(line for line in handle if not line.startswith("#"))


def regenerate_data_section(path: str) -> str:
    """Re-run the configuration embedded in a result file and render the rows.

    For a file produced by :func:`write_results` the returned text is
    byte-identical to the file's own data section.
    """
    config, _, _ = read_results(path)
    return render_data_section(run_from_config(config))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nmtraj",
        description="Non-Markovian open-system dynamics via dressed quantum trajectories",
    )
    parser.add_argument("--config", required=True, help="path to the JSON run configuration")
    parser.add_argument("--method", choices=METHOD_NAMES, help="override method.name")
    parser.add_argument("--trajectories", type=int, help="override ensemble.trajectories")
    parser.add_argument("--seed", type=int, help="override ensemble.master_seed")
    parser.add_argument(
        "--truncation", type=int,
        help="override the active cutoff (truncation for dressed/linear, excitation_cutoff for ed)",
    )
    parser.add_argument("--dt", type=float, help="override method.dt")
    parser.add_argument("--t-max", type=float, help="override method.t_max")
    parser.add_argument("--output", help="override output.path")
    return parser


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    if args.method is not None:
        config.method["name"] = args.method
    if args.trajectories is not None:
        config.ensemble["trajectories"] = _positive_int(args.trajectories, "--trajectories")
    if args.seed is not None:
        config.ensemble["master_seed"] = _nonnegative_int(args.seed, "--seed")
    if args.truncation is not None:
        key = "excitation_cutoff" if config.method["name"] == "ed" else "truncation"
        config.method[key] = _nonnegative_int(args.truncation, "--truncation")
    if args.dt is not None:
        config.method["dt"] = _positive(args.dt, "--dt")
    if args.t_max is not None:
        config.method["t_max"] = _nonnegative(args.t_max, "--t-max")
    if args.output is not None:
        config.output["path"] = args.output
    return config


def cli_main(argv=None) -> int:
    """Entry point; returns the process exit code.

    0 on success, 2 for configuration/usage problems, 3 for runtime
    failures (norm drift, degenerate ensembles).
    """
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        config = load_config(args.config)
        config = _apply_overrides(config, args)
    except (ConfigError, OSError) as exc:
        print(f"nmtraj: config error: {exc}", file=sys.stderr)
        return 2
    try:
        data = run_from_config(config)
    except (
        ensemble_driver.AllDegenerate,
        ensemble_driver.ExcessiveDegeneracy,
        ed_oracle.NormDrift,
        DegenerateProjection,
    ) as exc:
        print(f"nmtraj: run failed: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"nmtraj: config error: {exc}", file=sys.stderr)
        return 2
    try:
        write_results(data, config.output["path"], config)
    except OSError as exc:
        print(f"nmtraj: {exc}", file=sys.stderr)
        return 3
    print(
        f"nmtraj: wrote {config.output['path']} "
        f"({data.times.size} rows, method={config.method['name']}, "
        f"degenerate={data.num_degenerate})"
    )
    return 0


def main() -> None:
    sys.exit(cli_main())
