"""Run configuration: JSON schema, validation, and spec-dict builders.

Configs are JSON objects validated against a published schema before
anything runs; unknown keys are rejected and errors carry the offending
key path.  The same small spec dicts describe meshes, flux models,
sources, initial states, and schemes both in user configs and in the
built-in scenario catalog.  All quantities are nondimensional.
"""

from __future__ import annotations

import json

import numpy as np

from . import flux as _flux
from .mesh import Mesh, build_interval_mesh, build_rect_mesh, solution_points
from .timestepping import SchemeSpec


class ConfigError(ValueError):
    """Bad run configuration; message names the offending key."""


_VELOCITY_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name"],
    "properties": {
        "name": {"enum": ["constant", "converging", "rotation"]},
        "value": {"type": ["number", "array"]},
        "rate": {"type": "number"},
    },
}

_KERNEL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"enum": ["gaussian", "uniform", "sine"]},
        "amplitude": {"type": "number"},
        "sigma": {"type": "number", "exclusiveMinimum": 0},
        "value": {"type": ["number", "array"]},
        "matrix_file": {"type": "string"},
    },
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["mesh", "flux", "source", "initial", "dt", "steps"],
    "properties": {
        "name": {"type": "string"},
        "backend": {"enum": ["fv", "fve"]},
        "mesh": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["interval", "rect"]},
                "a": {"type": "number"},
                "b": {"type": "number"},
                "n": {"type": "integer", "minimum": 1},
                "x0": {"type": "number"},
                "x1": {"type": "number"},
                "y0": {"type": "number"},
                "y1": {"type": "number"},
                "nx": {"type": "integer", "minimum": 1},
                "ny": {"type": "integer", "minimum": 1},
            },
        },
        "flux": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family"],
            "properties": {
                "family": {"enum": ["none", "plaplacian", "doubly_nonlinear",
                                    "advective", "nonlocal"]},
                "k": {"type": "number", "exclusiveMinimum": 0},
                "p": {"type": "number", "exclusiveMinimum": 1},
                "r": {"type": "number", "minimum": 0},
                "eps": {"type": "number", "minimum": 0},
                "velocity": _VELOCITY_SCHEMA,
                "delta": {"type": "number", "exclusiveMinimum": 0},
                "kernel_g": _KERNEL_SCHEMA,
                "kernel_k": _KERNEL_SCHEMA,
            },
        },
        "source": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": ["zero", "constant", "linear"]},
                "value": {"type": "number"},
                "a": {"type": "number"},
                "b": {"type": "number"},
            },
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": ["zero", "constant", "dome"]},
                "value": {"type": "number", "minimum": 0},
                "height": {"type": "number", "minimum": 0},
                "center": {"type": ["number", "array"]},
                "radius": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "scheme": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["theta", "dirk_midpoint", "dirk_sstable2"]},
                "theta": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "dt": {
            "anyOf": [
                {"type": "number", "exclusiveMinimum": 0},
                {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                 "minItems": 1},
            ],
        },
        "steps": {"type": "integer", "minimum": 1},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
            },
        },
        "output_dir": {"type": "string"},
        "seed": {"type": "integer"},
        "snapshot_every": {"type": "integer", "minimum": 0},
    },
}

_DEFAULTS = {
    "name": "run",
    "backend": "fv",
    "scheme": {"kind": "theta", "theta": 1.0},
    "solver": {"tol": 1e-10, "max_iter": 200},
    "seed": 0,
    "snapshot_every": 10,
}


def load_config(path) -> dict:
    """Read and validate a JSON config file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return validate_config(raw)


def validate_config(cfg: dict) -> dict:
    """Schema-validate and fill defaults; raises ConfigError naming the key."""
    import jsonschema

    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at '{path}': {exc.message}") from exc
    out = dict(cfg)
    for key, val in _DEFAULTS.items():
        if key not in out:
            out[key] = val if not isinstance(val, dict) else dict(val)
        elif isinstance(val, dict):
            merged = dict(val)
            merged.update(out[key])
            out[key] = merged
    if not np.isscalar(out["dt"]) and len(out["dt"]) != out["steps"]:
        raise ConfigError(
            f"config error at 'dt': schedule has {len(out['dt'])} entries "
            f"but steps={out['steps']}")
    if out["backend"] == "fve" and out["mesh"].get("kind", "interval") != "interval":
        raise ConfigError("config error at 'backend': the fve backend needs an "
                          "interval mesh (the dual mesh is 1D only)")
    return out


# ---------------------------------------------------------------------------
# builders


def build_mesh(spec: dict) -> Mesh:
    kind = spec.get("kind", "interval")
    if kind == "interval":
        return build_interval_mesh(spec.get("a", 0.0), spec.get("b", 1.0),
                                   int(spec["n"]))
    return build_rect_mesh((spec.get("x0", 0.0), spec.get("x1", 1.0)),
                           (spec.get("y0", 0.0), spec.get("y1", 1.0)),
                           int(spec["nx"]), int(spec["ny"]))


def build_velocity(spec: dict) -> _flux.VelocityField:
    name = spec["name"]
    if name == "constant":
        return _flux.constant_velocity(spec.get("value", 1.0))
    if name == "converging":
        return _flux.converging_velocity(spec.get("rate", 1.0))
    if name == "rotation":
        return _flux.rotation_velocity(spec.get("rate", 1.0))
    raise ConfigError(f"unknown velocity field {name!r}")


def build_kernel(spec: dict | None):
    if spec is None:
        return None
    if "matrix_file" in spec:
        return np.loadtxt(spec["matrix_file"])
    name = spec.get("name")
    if name == "gaussian":
        return _flux.gaussian_kernel(spec.get("amplitude", 1.0), spec["sigma"])
    if name == "uniform":
        return _flux.uniform_vector_kernel(spec.get("value", 1.0))
    if name == "sine":
        return _flux.sine_vector_kernel(spec.get("amplitude", 1.0))
    raise ConfigError(f"unknown kernel {name!r}")


def build_flux(spec: dict, mesh: Mesh | None = None):
    family = spec["family"]
    if family == "none":
        return None
    if family == "plaplacian":
        return _flux.PLaplacianFlux(k=spec.get("k", 1.0), p=spec.get("p", 2.0))
    if family == "doubly_nonlinear":
        return _flux.DoublyNonlinearFlux(k=spec.get("k", 1.0),
                                         r=spec.get("r", 1.0),
                                         p=spec.get("p", 2.0))
    if family == "advective":
        return _flux.AdvectiveFlux(velocity=build_velocity(spec["velocity"]),
                                   eps=spec.get("eps", 0.0),
                                   p=spec.get("p", 2.0))
    if family == "nonlocal":
        return _flux.NonlocalFlux(kernel_g=build_kernel(spec.get("kernel_g")),
                                  kernel_k=build_kernel(spec.get("kernel_k")),
                                  delta=spec.get("delta", 1.0))
    raise ConfigError(f"unknown flux family {family!r}")


def build_source(spec: dict) -> _flux.SourceModel:
    name = spec["name"]
    if name == "zero":
        return _flux.zero_source()
    if name == "constant":
        return _flux.constant_source(spec["value"])
    if name == "linear":
        return _flux.linear_source(spec.get("a", 0.0), spec.get("b", 0.0))
    raise ConfigError(f"unknown source {name!r}")


def build_scheme(spec: dict) -> SchemeSpec:
    return SchemeSpec(kind=spec["kind"], theta=spec.get("theta"))


def build_initial(spec: dict, mesh: Mesh, backend: str) -> np.ndarray:
    pts = solution_points(mesh, backend)
    name = spec["name"]
    if name == "zero":
        return np.zeros(pts.shape[0])
    if name == "constant":
        return np.full(pts.shape[0], float(spec["value"]))
    if name == "dome":
        center = np.atleast_1d(np.asarray(spec.get("center", 0.5), dtype=float))
        radius = float(spec["radius"])
        height = float(spec.get("height", 1.0))
        d2 = np.sum((pts - center[None, :]) ** 2, axis=1)
        return np.maximum(height * (1.0 - d2 / radius ** 2), 0.0)
    raise ConfigError(f"unknown initial state {name!r}")


def config_from_scenario(scenario, output_dir: str | None = None,
                         **overrides) -> dict:
    cfg = {
        "name": scenario.name,
        "backend": scenario.backend,
        "mesh": dict(scenario.mesh),
        "flux": dict(scenario.flux),
        "source": dict(scenario.source),
        "initial": dict(scenario.initial),
        "scheme": dict(scenario.scheme),
        "dt": scenario.dt,
        "steps": scenario.steps,
        "seed": scenario.seed,
    }
    if output_dir is not None:
        cfg["output_dir"] = str(output_dir)
    cfg.update(overrides)
    return validate_config(cfg)
