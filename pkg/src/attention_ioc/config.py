"""Experiment configuration: JSON schema, defaults, scale presets and hashing."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import jsonschema
import numpy as np

from .model import DRIVER_THETA, AttentionProblem, DriverConfig, build_driver_problem


class ConfigError(ValueError):
    pass


_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}

SCHEMA: dict = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "horizon": _POS_INT,
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "steering_ratio": {"type": "number", "exclusiveMinimum": 0},
        "process_noise": {
            "oneOf": [
                {"type": "null"},
                {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 4, "maxItems": 4},
                 "minItems": 4, "maxItems": 4},
            ]
        },
        "d_max": {"oneOf": [{"type": "null"}, _POS_INT]},
        "discretization": {"enum": ["euler", "zoh"]},
        "theta": {"type": "array", "items": _NUM, "minItems": 6, "maxItems": 6},
        "scenarios": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": {
                "type": "object",
                "additionalProperties": False,
                "required": ["speed", "curvature"],
                "properties": {"speed": {"type": "number", "exclusiveMinimum": 0}, "curvature": _NUM},
            },
        },
        "train_scenario": {"type": "string"},
        "pool_size": {"oneOf": [{"type": "null"}, _POS_INT]},
        "eval_count": _POS_INT,
        "k_grid": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "methods": {"type": "array", "items": {"enum": ["MCE", "MCL", "DPE"]}, "minItems": 1,
                    "uniqueItems": True},
        "output_dir": {"type": "string"},
        "barrier_weight": {"type": "number", "minimum": 0},
        "rel_grad_tol": {"type": "number", "exclusiveMinimum": 0},
        "max_iters": _POS_INT,
        "smoothing_eps": {"type": "number", "minimum": 0},
        "dpe_folds": {"type": "integer", "minimum": 2},
        "scale": {"enum": ["desk", "paper"]},
    },
}

DEFAULTS: dict = {
    "horizon": 175,
    "dt": 0.04,
    "steering_ratio": 1.0 / 16.0,
    "process_noise": None,
    "d_max": None,
    "discretization": "euler",
    "theta": DRIVER_THETA.tolist(),
    "scenarios": {
        "S1": {"speed": 500.0 / 36.0, "curvature": 14e-4},
        "S2": {"speed": 800.0 / 36.0, "curvature": -14e-4},
    },
    "train_scenario": "S1",
    "pool_size": None,
    "methods": ["MCE", "MCL", "DPE"],
    "output_dir": "e1_out",
    "barrier_weight": 1e-4,
    "rel_grad_tol": 1e-6,
    "max_iters": 200,
    "smoothing_eps": 1e-6,
    "dpe_folds": 5,
    "scale": "desk",
}

PRESETS: dict = {
    "desk": {"eval_count": 500, "seeds": [0, 1, 2, 3, 4], "k_grid": [0, 4, 8]},
    "paper": {"eval_count": 1976, "seeds": [0, 1, 2, 3, 4], "k_grid": list(range(11)), "pool_size": 3000},
}

# keys that do not change results
_NON_SEMANTIC = ("output_dir",)


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict

    def __getattr__(self, key: str) -> Any:
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    @property
    def theta_vector(self) -> np.ndarray:
        return np.asarray(self.values["theta"], dtype=float)

    @property
    def resolved_pool_size(self) -> int:
        return self.values["pool_size"] or 2 ** max(self.values["k_grid"])

    def to_json(self) -> str:
        return json.dumps(self.values, indent=2, sort_keys=True)

    def hash(self) -> str:
        semantic = {k: v for k, v in self.values.items() if k not in _NON_SEMANTIC}
        blob = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def driver_config(self, scenario: str) -> DriverConfig:
        sc = self.values["scenarios"][scenario]
        pn = self.values["process_noise"]
        return DriverConfig(speed=sc["speed"], curvature=sc["curvature"],
                            steering_ratio=self.values["steering_ratio"], dt=self.values["dt"],
                            horizon=self.values["horizon"],
                            process_noise=None if pn is None else np.asarray(pn, dtype=float),
                            d_max=self.values["d_max"], discretization=self.values["discretization"])

    def problem(self, scenario: str) -> AttentionProblem:
        return build_driver_problem(self.driver_config(scenario), name=scenario)


def _field(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def resolve_config(raw: Optional[dict] = None, scale: Optional[str] = None) -> ExperimentConfig:
    """Validate ``raw`` and fill defaults.

    Precedence: built-in defaults, then the scale preset (``scale`` argument,
    else the ``scale`` key, else desk), then the keys given in ``raw``.
    """
    raw = {} if raw is None else copy.deepcopy(raw)
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("; ".join(f"{_field(e)}: {e.message}" for e in errors))
    values = copy.deepcopy(DEFAULTS)
    values["scale"] = scale or raw.get("scale", "desk")
    values.update(copy.deepcopy(PRESETS[values["scale"]]))
    values.update({k: v for k, v in raw.items() if k != "scale"})
    if values["d_max"] is None:
        values["d_max"] = values["horizon"]
    values["theta"] = [float(x) for x in values["theta"]]
    if values["train_scenario"] not in values["scenarios"]:
        raise ConfigError(f"train_scenario: {values['train_scenario']!r} is not a defined scenario")
    if any(x >= 0 for x in values["theta"][:4]):
        raise ConfigError("theta: the four primary-task parameters must be negative")
    pool = values["pool_size"]
    if pool is not None and 2 ** max(values["k_grid"]) > pool:
        raise ConfigError(f"k_grid: 2^{max(values['k_grid'])} exceeds pool_size {pool}")
    return ExperimentConfig(values)


def load_config(path, scale: Optional[str] = None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return resolve_config(raw, scale)


def echo_config(config: ExperimentConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"config_{config.hash()}.json"
    path.write_text(config.to_json() + "\n")
    return path
