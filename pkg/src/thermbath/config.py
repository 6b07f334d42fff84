"""Run configurations: JSON schema, default resolution and physics validation.

A configuration is a JSON object with a ``command`` and one parameter block
per command.  Validation happens in two passes: the JSON schema rejects
unknown keys and ill-typed values (reported with their JSON path), and then
:func:`check_physics` rejects parameter combinations that are well formed
but cannot be simulated.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from importlib import resources

import jsonschema

COMMANDS = (
    "bath-relax", "steady-state", "transfer-spectrum", "transfer-dynamics",
    "two-mode-spectrum", "probe-fit", "allaser", "fgr", "marcus", "surfaces", "resonances",
)

# block name used by each command
BLOCKS = {
    "bath-relax": "bath",
    "steady-state": "bath",
    "transfer-spectrum": "transfer",
    "transfer-dynamics": "transfer",
    "two-mode-spectrum": "transfer",
    "probe-fit": "probe",
    "allaser": "drive",
    "fgr": "fgr",
    "marcus": "marcus",
    "surfaces": "transfer",
    "resonances": "resonances",
}


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the JSON path of the offending value."""

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.reason = message

    def to_dict(self) -> dict:
        return {"error": "config", "path": self.path, "message": self.reason}


def _num(minimum=None, exclusive=None, default=None):
    s: dict = {"type": "number"}
    if minimum is not None:
        s["minimum"] = minimum
    if exclusive is not None:
        s["exclusiveMinimum"] = exclusive
    if default is not None:
        s["default"] = default
    return s


def _int(minimum=None, default=None):
    s: dict = {"type": "integer"}
    if minimum is not None:
        s["minimum"] = minimum
    if default is not None:
        s["default"] = default
    return s


def _obj(props: dict, required=(), default=None):
    s = {"type": "object", "properties": props, "additionalProperties": False}
    if required:
        s["required"] = list(required)
    if default is not None:
        s["default"] = default
    return s


_GRID = _obj({"start": _num(), "stop": _num(), "step": _num(exclusive=0)},
             required=("start", "stop", "step"))

_MODE = _obj({
    "g": _num(),
    "omega": _num(exclusive=0, default=1.0),
    "bath": _obj({"gamma": _num(0, default=0.0), "nbar": _num(0, default=0.0)}, default={}),
}, required=("g",))

_TRANSFER = _obj({
    "delta_e": _num(default=0.0),
    "v": _num(),
    "modes": {"type": "array", "items": _MODE, "minItems": 1, "maxItems": 2},
    "imperfections": _obj({"gamma_z": _num(0, default=0.0), "gamma_m": _num(0, default=0.0)},
                          default={}),
    "cutoffs": {"type": ["array", "null"], "items": _int(2), "default": None},
    "grid": _GRID,
    "t_sim": {"type": ["number", "null"], "exclusiveMinimum": 0, "default": None},
    "dt": {"type": ["number", "null"], "exclusiveMinimum": 0, "default": None},
    "safety": _num(exclusive=0, default=0.05),
}, required=("v", "modes"))

_BATH = _obj({
    "gamma_c": _num(exclusive=0),
    "gamma_h": {"type": "number", "minimum": 0},
    "n0": _num(0, default=0.0),
    "initial": {"enum": ["thermal", "fock"], "default": "thermal"},
    "cutoff": _int(2, default=40),
    "t_max": _num(exclusive=0, default=3.0),
    "n_points": _int(2, default=101),
    "tail_tol": _num(exclusive=0, default=1e-6),
}, required=("gamma_c", "gamma_h"))

_PROBE = _obj({
    "nbar": _num(0),
    "omega_rabi": _num(exclusive=0, default=2 * math.pi * 0.05),
    "gamma_d": _num(0, default=0.002),
    "n_points": _int(4, default=25),
    "span": _num(exclusive=0, default=10 * math.pi),
    "shots": _int(1, default=200),
    "n_max": _int(0, default=25),
    "constraint_scale": _num(exclusive=0, default=500.0),
    "omega_jitter": _num(0, default=0.0),
}, required=("nbar",))

_DRIVE = _obj({
    "omega_b_khz": _num(0),
    "gamma_decay_khz": _num(exclusive=0),
    "tau_ms": _num(exclusive=0),
    "n_ss": {"type": ["number", "null"], "exclusiveMinimum": 0, "default": None},
    "omega_r_khz": {"type": ["number", "null"], "minimum": 0, "default": None},
    "cutoff": _int(2, default=40),
    "n0": _num(0, default=0.1),
    "tail_tol": _num(exclusive=0, default=1e-3),
    "t_max_ms": _num(exclusive=0, default=30.0),
    "dt_ms": {"type": ["number", "null"], "exclusiveMinimum": 0, "default": None},
    "n_traj": _int(2, default=50),
}, required=("omega_b_khz", "gamma_decay_khz", "tau_ms"))

_FGR = _obj({
    "v": _num(), "g": _num(), "omega": _num(exclusive=0, default=1.0),
    "nbar": {"type": "array", "items": _num(0), "minItems": 1},
    "grid": _GRID,
    "prefactor": _num(exclusive=0, default=1.18),
}, required=("v", "g", "nbar", "grid"))

_MARCUS = _obj({
    "v": _num(), "g": _num(), "omega": _num(exclusive=0, default=1.0),
    "k_bt": _num(exclusive=0),
    "grid": _GRID,
}, required=("v", "g", "k_bt", "grid"))

_RESONANCES = _obj({
    "v": _num(), "omega1": _num(exclusive=0, default=1.0), "omega2": _num(exclusive=0),
    "l_max": _int(1, default=3),
}, required=("v", "omega2"))

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["command"],
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "seed": _int(0, default=0),
        "workers": {"type": ["integer", "null"], "minimum": 1, "default": None},
        "out_dir": {"type": "string", "default": "out"},
        "dump_state": {"type": "boolean", "default": False},
        "bath": _BATH,
        "transfer": _TRANSFER,
        "probe": _PROBE,
        "drive": _DRIVE,
        "fgr": _FGR,
        "marcus": _MARCUS,
        "resonances": _RESONANCES,
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration with every default materialized."""

    data: dict

    @property
    def command(self) -> str:
        return self.data["command"]

    @property
    def block(self) -> dict:
        return self.data[BLOCKS[self.command]]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)


def _fill_defaults(schema: dict, value):
    """Insert schema defaults into ``value`` (recursively, in place)."""
    if isinstance(value, dict) and "properties" in schema:
        for key, sub in schema["properties"].items():
            if key not in value and "default" in sub:
                value[key] = copy.deepcopy(sub["default"])
            if key in value:
                _fill_defaults(sub, value[key])
    elif isinstance(value, list) and "items" in schema:
        for item in value:
            _fill_defaults(schema["items"], item)
    return value


def _schema_error(err: jsonschema.ValidationError) -> ConfigError:
    return ConfigError(err.message, err.json_path)


def parse_config(document) -> RunConfig:
    """Validate a config (JSON text or already-decoded object) and resolve defaults.

    Raises
    ------
    ConfigError
        For schema violations (with the JSON path) and physics violations
        (with a remediation hint).
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ConfigError("configuration must be a JSON object")
    data = copy.deepcopy(document)
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        raise _schema_error(errors[0])
    block = BLOCKS[data["command"]]
    if block not in data:
        raise ConfigError(f"command {data['command']!r} needs a {block!r} block", "$")
    extra = [k for k in BLOCKS.values() if k in data and k != block]
    if extra:
        raise ConfigError(f"block {extra[0]!r} is not used by {data['command']!r}", f"$.{extra[0]}")
    _fill_defaults(SCHEMA, data)
    check_physics(data)
    return RunConfig(data)


def _check_grid(grid: dict, path: str) -> None:
    if grid["stop"] < grid["start"]:
        raise ConfigError("stop must not be below start", path)
    if (grid["stop"] - grid["start"]) / grid["step"] > 1e6:
        raise ConfigError("grid has more than a million points; enlarge step", path)


def grid_values(grid: dict):
    """Inclusive grid ``start, start+step, ..., <= stop`` rounded to kill float drift."""
    import numpy as np
    n = int(math.floor((grid["stop"] - grid["start"]) / grid["step"] + 1e-9))
    return np.round(grid["start"] + grid["step"] * np.arange(n + 1), 12)


def check_physics(data: dict) -> None:
    cmd = data["command"]
    if cmd in ("bath-relax", "steady-state"):
        from .hilbert import thermal_tail
        b = data["bath"]
        nss = b["gamma_h"] / b["gamma_c"]
        for name, nb in (("n_ss", nss), ("n0", b["n0"] if b["initial"] == "thermal" else 0.0)):
            tail = thermal_tail(nb, b["cutoff"])
            if tail > b["tail_tol"]:
                raise ConfigError(
                    f"cutoff {b['cutoff']} truncates a thermal state with {name} = {nb:.4g} "
                    f"(lost mass {tail:.2e} > tail_tol); increase cutoff",
                    "$.bath.cutoff")
        if b["initial"] == "fock" and (b["n0"] != int(b["n0"]) or b["n0"] >= b["cutoff"]):
            raise ConfigError("a Fock initial state needs an integer n0 below the cutoff", "$.bath.n0")
    elif cmd in ("transfer-spectrum", "transfer-dynamics", "two-mode-spectrum", "surfaces"):
        t = data["transfer"]
        if cmd == "two-mode-spectrum" and len(t["modes"]) != 2:
            raise ConfigError("two-mode-spectrum needs exactly two modes", "$.transfer.modes")
        if t["cutoffs"] is not None and len(t["cutoffs"]) != len(t["modes"]):
            raise ConfigError("give one cutoff per mode", "$.transfer.cutoffs")
        if cmd in ("transfer-spectrum", "two-mode-spectrum"):
            if "grid" not in t:
                raise ConfigError("a spectrum needs a delta_e grid", "$.transfer")
            _check_grid(t["grid"], "$.transfer.grid")
        if cmd != "surfaces" and t["t_sim"] is None and not any(
                m["bath"]["gamma"] > 0 for m in t["modes"]):
            raise ConfigError("set t_sim or give at least one mode a damping rate gamma > 0",
                              "$.transfer.t_sim")
    elif cmd == "allaser":
        from .allaser import NonEquilibratingError, StochasticDriveSpec, effective_rates
        d = data["drive"]
        if (d["n_ss"] is None) == (d["omega_r_khz"] is None):
            raise ConfigError("give exactly one of n_ss and omega_r_khz", "$.drive")
        if d["omega_r_khz"] is not None:
            import warnings
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                spec = StochasticDriveSpec(2 * math.pi * d["omega_r_khz"],
                                           2 * math.pi * d["omega_b_khz"],
                                           2 * math.pi * d["gamma_decay_khz"], d["tau_ms"],
                                           d["cutoff"])
            try:
                effective_rates(spec)
            except NonEquilibratingError as exc:
                raise ConfigError(str(exc), "$.drive.omega_r_khz") from exc
        if d["dt_ms"] is not None:
            ratio = d["tau_ms"] / d["dt_ms"]
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
                raise ConfigError("tau_ms must be an integer multiple of dt_ms", "$.drive.dt_ms")
    elif cmd in ("fgr", "marcus"):
        _check_grid(data[cmd]["grid"], f"$.{cmd}.grid")


def fixture_names() -> list[str]:
    root = resources.files("thermbath") / "fixtures"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_fixture(name: str) -> dict:
    """Decoded JSON of a shipped reference fixture."""
    root = resources.files("thermbath") / "fixtures"
    path = root / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"unknown fixture {name!r}; available: {', '.join(fixture_names())}")
    return json.loads(path.read_text())
