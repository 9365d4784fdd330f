"""Experiment configuration: TOML file plus command-line overrides."""
from __future__ import annotations

import hashlib
import json
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ValidationError
from .groups import GroupModel
from .measures import MeasureCurve, StepMeasure

COMMANDS = ("simulate", "oracle", "escape", "entropy", "green", "covariance", "derivative", "clt", "verify")

# keys every command accepts
COMMON_KEYS = {"group", "mu0", "phi", "command", "seed", "out"}

# command-specific parameters and their types
PARAM_TYPES: dict[str, type | tuple] = {
    "n": int,
    "N": int,
    "metric": str,
    "checkpoints": list,
    "lambda": (float, list),
    "csv": bool,
    "op": str,
    "engine": str,
    "method": str,
    "target": str,
    "alpha": float,
    "one_sided": bool,
    "exact": bool,
    "z": str,
    "R": int,
    "T": int,
    "grid": list,
    "n_max": int,
    "profile": str,
}

COMMAND_PARAMS = {
    "simulate": {"n", "N", "metric", "checkpoints", "lambda", "csv"},
    "oracle": {"op", "n", "n_max", "engine", "metric"},
    "escape": {"n", "N", "metric"},
    "entropy": {"method", "n", "N", "n_max"},
    "green": {"method", "z", "R", "T", "engine"},
    "covariance": {"n", "N", "metric", "exact"},
    "derivative": {"method", "target", "lambda", "alpha", "n", "N", "metric", "one_sided"},
    "clt": {"grid", "N", "metric"},
    "verify": {"profile"},
}

DEFAULTS: dict[str, Any] = {
    "group": "free:2",
    "mu0": "uniform",
    "seed": 0,
    "out": "results",
}


@dataclass
class ExperimentSpec:
    command: str
    group: str
    mu0: Any
    phi: Any
    seed: int
    out: str
    params: dict = field(default_factory=dict)

    @property
    def model(self) -> GroupModel:
        return GroupModel.parse(self.group)

    @property
    def measure(self) -> StepMeasure:
        return parse_measure(self.model, self.mu0)

    @property
    def curve(self) -> MeasureCurve:
        if self.phi is None:
            raise ValidationError(f"command {self.command!r} needs phi (the tilt of the curve)")
        return MeasureCurve.from_mapping(self.measure, parse_mapping(self.phi))

    def echo(self) -> dict:
        """Canonical, JSON-ready description; the input hash is taken over this."""
        return {
            "command": self.command,
            "group": self.group,
            "mu0": self.mu0,
            "phi": self.phi,
            "seed": self.seed,
            "params": dict(sorted(self.params.items())),
        }

    def input_hash(self) -> str:
        blob = json.dumps(self.echo(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def parse_mapping(value) -> dict[str, float]:
    """``{"a": 0.3}`` or ``"a=0.3,b=0.2"``."""
    if isinstance(value, dict):
        return {str(k): _number(v, k) for k, v in value.items()}
    if isinstance(value, str):
        out = {}
        for part in filter(None, (p.strip() for p in value.split(","))):
            key, eq, v = part.partition("=")
            if not eq:
                raise ValidationError(f"expected letter=value, got {part!r}")
            out[key.strip()] = _number(v.strip(), key)
        return out
    raise ValidationError(f"cannot read a letter mapping from {value!r}")


def _number(v, key) -> float:
    if isinstance(v, bool):
        raise ValidationError(f"value for {key!r} must be a number")
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ValidationError(f"value for {key!r} must be a number, got {v!r}") from None


def parse_measure(model: GroupModel, value) -> StepMeasure:
    if value is None or value == "uniform":
        return StepMeasure.uniform(model)
    return StepMeasure.from_mapping(model, parse_mapping(value)).check()


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(rf'^[ \t]*"?{re.escape(key)}"?[ \t]*=', re.M)
    mt = pat.search(text)
    return text.count("\n", 0, mt.start()) + 1 if mt else None


def _anchor(path: str, text: str, key: str, msg: str) -> ValidationError:
    line = _line_of(text, key)
    where = f"{path}:{line}" if line else path
    return ValidationError(f"{where}: {msg}")


def read_config(path: str | Path) -> tuple[dict, str]:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    # a [params] table is accepted as an alternative to top-level parameters
    params = data.pop("params", {})
    if not isinstance(params, dict):
        raise _anchor(str(path), text, "params", "params must be a table")
    for k, v in params.items():
        if k in data:
            raise _anchor(str(path), text, k, f"{k!r} given twice")
        data[k] = v
    return data, text


def build_spec(command: str | None, file_values: dict | None = None, overrides: dict | None = None,
               path: str = "<config>", text: str = "") -> ExperimentSpec:
    """Merge defaults < config file < flags and validate the result."""
    values = dict(DEFAULTS)
    file_values = dict(file_values or {})
    if command is None:
        command = file_values.get("command")
    if command not in COMMANDS:
        raise ValidationError(f"unknown or missing command {command!r}")
    if file_values.get("command", command) != command:
        raise _anchor(path, text, "command", f"config is for {file_values['command']!r}, not {command!r}")
    allowed = COMMON_KEYS | COMMAND_PARAMS[command]
    for key, v in file_values.items():
        if key not in allowed:
            raise _anchor(path, text, key, f"unknown key {key!r} for command {command!r}")
        if key in PARAM_TYPES and not _type_ok(v, PARAM_TYPES[key]):
            raise _anchor(path, text, key, f"{key!r} has the wrong type ({type(v).__name__})")
        values[key] = v
    for key, v in (overrides or {}).items():
        if v is not None:
            values[key] = v
    params = {k: values[k] for k in COMMAND_PARAMS[command] if k in values}
    seed = values.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ValidationError("seed must be a nonnegative integer")
    spec = ExperimentSpec(
        command=command,
        group=str(values["group"]),
        mu0=values.get("mu0"),
        phi=values.get("phi"),
        seed=seed,
        out=str(values.get("out", "results")),
        params=params,
    )
    _validate(spec)
    return spec


def _type_ok(v, t) -> bool:
    types = t if isinstance(t, tuple) else (t,)
    if float in types and isinstance(v, int) and not isinstance(v, bool):
        return True
    if int in types and isinstance(v, bool):
        return False
    return isinstance(v, types)


def _validate(spec: ExperimentSpec) -> None:
    spec.measure  # parses the group and checks the measure
    if spec.phi is not None:
        spec.curve
    for key in ("n", "N", "R", "T", "n_max"):
        v = spec.params.get(key)
        if v is not None and v < (1 if key in ("n", "N") else 0):
            raise ValidationError(f"{key} must be positive")


def load_config(path: str | Path, command: str | None = None, overrides: dict | None = None) -> ExperimentSpec:
    data, text = read_config(path)
    return build_spec(command, data, overrides, str(path), text)
