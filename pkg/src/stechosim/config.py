"""Experiment configuration: a JSON document checked against a schema.

Durations are written as strings with units (``"200us"``, ``"1.8ms"``) or as
plain numbers of seconds; they go through the same parser as pulse programs.

Example
-------
::

    {
      "schema_version": 1,
      "name": "tails",
      "seed": 7,
      "sample": {"n_isochromats": 20000,
                 "offsets": {"kind": "lorentzian", "width": 1111},
                 "z_range": [-0.25, 0.25], "b1_profile": [1, 0, -0.8],
                 "b1_sigma": 0.05, "t1": "200ms", "t2": "1.8ms"},
      "pulse": {"pi_duration": "25.5us"},
      "sequence": {"builtin": "CP2", "tau": "200us", "duration": "80ms"},
      "gradient": {"g": 0},
      "sweep": {"tau": ["100us", "200us"], "g": [0, 10, 30]},
      "analysis": {"fit": true},
      "output": {"directory": "out/tails", "plots": true}
    }
"""

from __future__ import annotations

import copy
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema

from .core import GradientSpec, OffsetDistribution, SampleSpec
from .seqlang import BUILTINS, ValidationError, parse_duration

CONFIG_SCHEMA_VERSION = 1

SWEEP_AXES = ("sequence", "tau", "t1", "g", "b1_sigma", "n")

_duration = {"oneOf": [{"type": "number", "minimum": 0},
                       {"type": "string", "pattern": r"^\s*[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?\s*(s|ms|us|µs)\s*$"}]}
_opt_duration = {"oneOf": [_duration, {"type": "null"}]}

SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "sequence"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": CONFIG_SCHEMA_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "engine": {"enum": ["bloch", "liouville"]},
        "workers": {"type": "integer", "minimum": 1},
        "sample": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_isochromats": {"type": "integer", "minimum": 1},
                "offsets": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["delta", "uniform", "gaussian", "lorentzian"]},
                        "width": {"type": "number", "minimum": 0},
                        "center": {"type": "number"},
                    },
                },
                "z_range": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "b1_profile": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "b1_sigma": {"type": "number", "minimum": 0},
                "t1": _opt_duration,
                "t2": _opt_duration,
                "gamma": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "pulse": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "model": {"enum": ["delta", "hard"]},
                "rf_amplitude": {"type": "number", "exclusiveMinimum": 0},
                "pi_duration": _duration,
            },
        },
        "sequence": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "builtin": {"enum": list(BUILTINS)},
                "source": {"type": "string"},
                "tau": _duration,
                "t1": _duration,
                "n": {"type": "integer", "minimum": 1},
                "duration": _duration,
                "window": _duration,
                "dwell": _duration,
                "pathway": {"enum": ["all", "ste", "he", "both"]},
            },
            "oneOf": [{"required": ["builtin", "tau"]}, {"required": ["source"]}],
        },
        "gradient": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"g": {"type": "number", "minimum": 0}},
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sequence": {"type": "array", "items": {"enum": list(BUILTINS)}, "minItems": 1},
                "tau": {"type": "array", "items": _duration, "minItems": 1},
                "t1": {"type": "array", "items": _duration, "minItems": 1},
                "g": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "b1_sigma": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "n": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
            },
        },
        "spin_system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["offsets"],
            "properties": {
                "offsets": {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 10},
                "couplings": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                "b1_scale": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
            },
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "fit": {"type": "boolean"},
                "t_short": _duration,
                "compare_he": {"type": "boolean"},
                "ratio_window": _duration,
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "traces": {"type": "boolean"},
                "plots": {"type": "boolean"},
            },
        },
    },
}


class ConfigError(ValidationError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


def _path(parts) -> str:
    return ".".join(str(p) for p in parts)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration (the raw JSON is kept verbatim in ``raw``)."""

    raw: dict = field(repr=False)

    # -- construction ------------------------------------------------------
    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        validator = jsonschema.Draft202012Validator(SCHEMA)
        errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
        if errors:
            e = errors[0]
            raise ConfigError(_path(e.absolute_path), e.message)
        cfg = cls(copy.deepcopy(doc))
        cfg._check_semantics()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(doc)

    def _check_semantics(self):
        try:
            self.sample_spec()
        except ValueError as exc:
            raise ConfigError("sample", str(exc)) from None
        seq = self.raw["sequence"]
        if "builtin" in seq and seq["builtin"].startswith("STE") and "t1" not in seq \
                and "t1" not in self.raw.get("sweep", {}):
            raise ConfigError("sequence.t1", f"{seq['builtin']} needs t1")
        if seq.get("pathway", "all") != "all" and "source" in seq:
            raise ConfigError("sequence.pathway", "pathway selection needs a three-pulse builtin")
        pulse = self.raw.get("pulse", {})
        if pulse.get("model") == "hard" and not ("rf_amplitude" in pulse or "pi_duration" in pulse):
            raise ConfigError("pulse", "hard pulses need rf_amplitude or pi_duration")
        if self.engine == "liouville":
            if "spin_system" not in self.raw:
                raise ConfigError("spin_system", "engine 'liouville' requires a spin_system block")
            ss = self.raw["spin_system"]
            n = len(ss["offsets"])
            c = ss.get("couplings")
            if c is not None and (len(c) != n or any(len(r) != n for r in c)):
                raise ConfigError("spin_system.couplings", f"must be a {n}x{n} matrix")
            if "b1_scale" in ss and len(ss["b1_scale"]) not in (1, n):
                raise ConfigError("spin_system.b1_scale", f"needs 1 or {n} entries")
            gs = [self.raw.get("gradient", {}).get("g", 0.0)] + list(self.raw.get("sweep", {}).get("g", []))
            if any(g != 0 for g in gs):
                raise ConfigError("gradient.g", "the liouville engine has no spatial model; gradient must be 0")
            if "b1_sigma" in self.raw.get("sweep", {}):
                raise ConfigError("sweep.b1_sigma", "the liouville engine has no B1 distribution to sweep")
        for axis, values in self.raw.get("sweep", {}).items():
            if len(set(map(json.dumps, values))) != len(values):
                raise ConfigError(f"sweep.{axis}", "duplicate sweep values")

    # -- accessors -------------------------------------------------------------
    @property
    def name(self) -> str:
        return self.raw.get("name", "experiment")

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def engine(self) -> str:
        return self.raw.get("engine", "bloch")

    @property
    def workers(self) -> int:
        return int(self.raw.get("workers", 1))

    @property
    def output_dir(self) -> Path:
        return Path(self.raw.get("output", {}).get("directory", f"out/{self.name}"))

    @property
    def write_traces(self) -> bool:
        return bool(self.raw.get("output", {}).get("traces", True))

    @property
    def write_plots(self) -> bool:
        return bool(self.raw.get("output", {}).get("plots", False))

    @property
    def analysis(self) -> dict:
        return self.raw.get("analysis", {})

    @property
    def has_sweep(self) -> bool:
        return bool(self.raw.get("sweep"))

    def digest(self) -> str:
        """Stable hash of everything that influences results."""
        doc = {k: v for k, v in self.raw.items() if k not in ("output", "workers", "description")}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    def sample_spec(self, b1_sigma: float | None = None) -> SampleSpec:
        s = self.raw.get("sample", {})
        off = s.get("offsets", {"kind": "delta"})
        kw = dict(
            n_isochromats=s.get("n_isochromats", 10_000),
            offsets=OffsetDistribution(off["kind"], float(off.get("width", 0.0)), float(off.get("center", 0.0))),
            z_range=tuple(s.get("z_range", (-0.25, 0.25))),
            b1_profile=tuple(s.get("b1_profile", (1.0,))),
            b1_sigma=float(s.get("b1_sigma", 0.0) if b1_sigma is None else b1_sigma),
            t1=_opt_seconds(s.get("t1")),
            t2=_opt_seconds(s.get("t2")),
        )
        if "gamma" in s:
            kw["gamma"] = float(s["gamma"])
        return SampleSpec(**kw)

    def rf_amplitude(self) -> float | None:
        p = self.raw.get("pulse", {})
        model = p.get("model", "hard" if ("rf_amplitude" in p or "pi_duration" in p) else "delta")
        if model == "delta":
            return None
        if "rf_amplitude" in p:
            return float(p["rf_amplitude"])
        return math.pi / parse_duration(p["pi_duration"])

    def t_short(self) -> float | None:
        if "t_short" in self.analysis:
            return parse_duration(self.analysis["t_short"])
        t2 = self.raw.get("sample", {}).get("t2")
        return _opt_seconds(t2)

    # -- grid ------------------------------------------------------------------
    def grid(self) -> list[dict]:
        """Cartesian product of the sweep axes in declaration order.

        Each point is a dict of the swept values in canonical units (seconds
        for durations); axes that are not swept are absent.
        """
        sweep = self.raw.get("sweep", {})
        axes = [a for a in sweep]
        values = []
        for a in axes:
            vals = sweep[a]
            if a in ("tau", "t1"):
                vals = [parse_duration(v) for v in vals]
            values.append(vals)
        return [dict(zip(axes, combo)) for combo in itertools.product(*values)] or [{}]

    def point_settings(self, params: dict) -> dict:
        """Merge a grid point into the base settings."""
        seq = self.raw["sequence"]
        out = {
            "sequence": params.get("sequence", seq.get("builtin")),
            "source": seq.get("source"),
            "tau": params.get("tau", parse_duration(seq["tau"]) if "tau" in seq else None),
            "t1": params.get("t1", parse_duration(seq["t1"]) if "t1" in seq else None),
            "n": params.get("n", seq.get("n")),
            "duration": parse_duration(seq["duration"]) if "duration" in seq else None,
            "window": parse_duration(seq.get("window", 0)),
            "dwell": parse_duration(seq["dwell"]) if "dwell" in seq else None,
            "pathway": seq.get("pathway", "all"),
            "g": float(params.get("g", self.raw.get("gradient", {}).get("g", 0.0))),
            "b1_sigma": params.get("b1_sigma"),
        }
        return out

    def gradient(self, g: float) -> GradientSpec:
        return GradientSpec(g)


def _opt_seconds(v):
    return None if v is None else parse_duration(v)


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.load(path)
