"""Experiment configuration files: JSON schema, defaults and object builders.

The format is documented in ``docs/config.md``. A config has a ``kind``:

* ``monte_carlo`` -- seeded simulation of the greedy or event-triggered scheme
* ``lqr_exact`` -- exact cost integration for the single-disturbance plant
* ``bennett`` -- Lloyd-Max distortion against the high-rate estimate
"""

import copy
import json
from importlib import resources

import jsonschema

from quantctl.control import SystemSpec
from quantctl.density import from_spec
from quantctl.errors import InvalidParameterError
from quantctl.sim import ErasureRate, ExperimentConfig, FixedRate, RateSchedule


def _when(key, value, required, forbidden):
    # discriminated union: required/forbidden fields depend on one tag field
    return {
        "if": {"properties": {key: {"const": value}}, "required": [key]},
        "then": {"required": required, "not": {"anyOf": [{"required": [f]} for f in forbidden]}},
    }


_PDF = {"type": "string", "pattern": "^[A-Za-z]+:[^:]*$"}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["kind"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "kind": {"enum": ["monte_carlo", "lqr_exact", "bennett"]},
        "plant": {
            "type": "object",
            "required": ["a", "disturbance", "horizon"],
            "additionalProperties": False,
            "properties": {
                "a": {"type": "number", "not": {"const": 0}},
                "disturbance": _PDF,
                "horizon": {"type": "integer", "minimum": 1},
            },
        },
        "cost": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "state_weight": {"type": "number", "minimum": 0},
                "control_weight": {"type": "number", "minimum": 0},
            },
        },
        "rates": {
            "type": "object",
            "required": ["model"],
            "additionalProperties": False,
            "properties": {
                "model": {"enum": ["fixed", "schedule", "erasure"]},
                "rate": {"type": "integer", "minimum": 0},
                "rates": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "p_drop": {"type": "number", "minimum": 0, "maximum": 1},
            },
            "allOf": [
                _when("model", "fixed", ["rate"], ["rates", "p_drop"]),
                _when("model", "schedule", ["rates"], ["rate", "p_drop"]),
                _when("model", "erasure", ["p_drop", "rate"], ["rates"]),
            ],
        },
        "policy": {
            "type": "object",
            "required": ["name"],
            "additionalProperties": False,
            "properties": {
                "name": {"enum": ["greedy", "event", "lqr"]},
                "rate_bar": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    "minItems": 1,
                },
                "baseline": {"type": "boolean"},
            },
        },
        "trials": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "numerics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "points": {"type": "integer", "minimum": 8},
                "tail_mass": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.001},
                "max_points": {"type": "integer", "minimum": 8},
            },
        },
        "subcells": {"type": "integer", "minimum": 0, "maximum": 12},
        "densities": {"type": "array", "items": _PDF, "minItems": 1},
        "bennett_rates": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 12}, "minItems": 1},
        "max_iter": {"type": "integer", "minimum": 1},
    },
    "allOf": [
        {
            "if": {"properties": {"kind": {"enum": ["monte_carlo", "lqr_exact"]}}, "required": ["kind"]},
            "then": {"required": ["plant", "rates", "policy"]},
        },
        {
            "if": {"properties": {"kind": {"const": "bennett"}}, "required": ["kind"]},
            "then": {"required": ["densities", "bennett_rates"]},
        },
    ],
}

DEFAULTS = {
    "cost": {"state_weight": 1.0, "control_weight": 0.0},
    "trials": 1000,
    "seed": 0,
    "numerics": {"points": 256, "tail_mass": 1e-9, "max_points": 1024},
    "subcells": 0,
    "max_iter": 100_000,
}

PRESETS = ("fig2", "fig3", "table1", "bennett")


class ConfigError(InvalidParameterError):
    """Schema violation; ``path`` is the dotted location of the offending field."""

    def __init__(self, message, path=""):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


def _path(err):
    parts = []
    for p in err.absolute_path:
        parts.append(f"[{p}]" if isinstance(p, int) else ("." if parts else "") + str(p))
    return "".join(parts)


def validate(cfg):
    """Raise :class:`ConfigError` for the most specific schema violation."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    err = jsonschema.exceptions.best_match(validator.iter_errors(cfg))
    if err is not None:
        raise ConfigError(err.message, _path(err))
    kind = cfg["kind"]
    if kind == "lqr_exact" and cfg["policy"]["name"] != "lqr":
        raise ConfigError("lqr_exact needs policy 'lqr'", "policy.name")
    if kind == "monte_carlo" and cfg["policy"]["name"] == "lqr":
        raise ConfigError("policy 'lqr' runs with kind 'lqr_exact'", "policy.name")
    if kind == "monte_carlo" and cfg["policy"]["name"] == "event" and "rate_bar" not in cfg["policy"]:
        raise ConfigError("event policy needs rate_bar", "policy")


def with_defaults(cfg):
    out = copy.deepcopy(cfg)
    for key, val in DEFAULTS.items():
        if isinstance(val, dict):
            out[key] = {**val, **out.get(key, {})}
        else:
            out.setdefault(key, val)
    return out


def load(path):
    """Read, validate and complete a config file."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON ({exc.msg} at line {exc.lineno})") from exc
    validate(cfg)
    return with_defaults(cfg)


def preset_path(name):
    if name not in PRESETS:
        raise InvalidParameterError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return resources.files("quantctl") / "presets" / f"{name}.json"


def load_preset(name):
    with resources.as_file(preset_path(name)) as p:
        return load(p)


def build_spec(cfg):
    """The :class:`SystemSpec` described by ``plant``, ``cost`` and ``rates``."""
    plant, num = cfg["plant"], cfg["numerics"]
    T = plant["horizon"]
    d = from_spec(plant["disturbance"], points=num["points"], tail_mass=num["tail_mass"])
    mode = "lqr" if cfg["kind"] == "lqr_exact" else "iid"
    rm = cfg["rates"]
    if rm["model"] == "schedule":
        rates = rm["rates"]
        if len(rates) != T - 1:
            raise ConfigError(f"schedule needs horizon - 1 = {T - 1} entries, got {len(rates)}", "rates.rates")
    else:
        rates = rm["rate"]
    return SystemSpec(
        plant["a"], T, cfg["cost"]["state_weight"], cfg["cost"]["control_weight"], rates, d, mode,
        tail_mass=num["tail_mass"], max_points=num["max_points"],
    )


def rate_model(cfg):
    rm = cfg["rates"]
    if rm["model"] == "fixed":
        return FixedRate(rm["rate"])
    if rm["model"] == "schedule":
        return RateSchedule(tuple(rm["rates"]))
    return ErasureRate(rm["p_drop"], rm["rate"])


def experiments(cfg, spec=None):
    """``(label, ExperimentConfig)`` pairs for a ``monte_carlo`` config.

    An event policy yields one experiment per target rate ``rate_bar`` with
    silence probability ``1 - rate_bar``; ``baseline`` adds the rate-1 greedy run.
    """
    spec = build_spec(cfg) if spec is None else spec
    pol = cfg["policy"]
    common = dict(trials=cfg["trials"], seed=cfg["seed"])
    if pol["name"] == "greedy":
        return [("greedy", ExperimentConfig(spec, "greedy", rate_model=rate_model(cfg), **common))]
    out = []
    for rb in pol["rate_bar"]:
        out.append((f"rbar{rb:g}", ExperimentConfig(spec, "event", delta=1.0 - rb, **common)))
    if pol.get("baseline", False):
        out.append(("greedy_R1", ExperimentConfig(spec, "greedy", rate_model=FixedRate(1), **common)))
    return out
