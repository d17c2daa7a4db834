"""Experiment configuration: JSON documents validated against a bundled schema.

Defaults live in the schema (``default`` keywords) and are filled in by
:func:`normalize`, so a normalized document is complete and re-normalizing it is
a no-op.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .disturbance import UniformField, load_field_file, make_spinning, make_vortex
from .gridworld import GridWorld
from .sim import Scenario
from .solvers.base import RewardModel
from .transition import NoiseConfig


class ConfigError(ValueError):
    """The document does not satisfy the schema or cannot be built."""


@lru_cache(maxsize=1)
def schema() -> dict:
    text = resources.files("tvmdp").joinpath("data/config.schema.json").read_text()
    return json.loads(text)


def _where(error) -> str:
    path = "/".join(str(p) for p in error.absolute_path)
    return path or "<root>"


def validate(doc) -> None:
    """Raise :class:`ConfigError` naming the first offending key."""
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(list(e.absolute_path)), e.message))
    if not errors:
        return
    err = errors[0]
    # oneOf failures are more useful reported from the branch matching "type"
    if err.validator == "oneOf" and isinstance(err.instance, dict):
        kind = err.instance.get("type")
        for sub in err.context or ():
            branch = err.validator_value[sub.schema_path[0]]
            if branch.get("properties", {}).get("type", {}).get("const") == kind:
                err = sub
                break
    raise ConfigError(f"{_where(err)}: {err.message}")


def _resolve(node: dict, root: dict) -> dict:
    while "$ref" in node:
        name = node["$ref"].rsplit("/", 1)[-1]
        node = root["$defs"][name]
    return node


_MISSING = object()


def _fill(doc, node, root):
    node = _resolve(node, root)
    if "oneOf" in node and isinstance(doc, dict):
        for branch in node["oneOf"]:
            if branch.get("properties", {}).get("type", {}).get("const") == doc.get("type"):
                return _fill(doc, branch, root)
        return doc
    if isinstance(doc, dict) and "properties" in node:
        for key, sub in node["properties"].items():
            default = sub.get("default", _resolve(sub, root).get("default", _MISSING))
            if key not in doc and default is not _MISSING:
                doc[key] = copy.deepcopy(default)
            if key in doc:
                doc[key] = _fill(doc[key], sub, root)
    elif isinstance(doc, list) and "items" in node and isinstance(node["items"], dict):
        return [_fill(item, node["items"], root) for item in doc]
    return doc


def normalize(doc: dict) -> dict:
    """Validated copy of ``doc`` with every default filled in."""
    validate(doc)
    out = _fill(copy.deepcopy(doc), schema(), schema())
    grid = out["grid"]
    if "origin" not in grid:
        grid["origin"] = [0.5 * grid["cell_size"], 0.5 * grid["cell_size"]]
    for spec in out["solvers"]:
        spec.setdefault("label", spec["name"])
    labels = [s["label"] for s in out["solvers"]]
    dup = sorted({x for x in labels if labels.count(x) > 1})
    if dup:
        raise ConfigError(f"solvers: duplicate labels {dup}; give each entry a distinct 'label'")
    n_cells = grid["width"] * grid["height"]
    for key in ("goal",):
        if grid[key] >= n_cells:
            raise ConfigError(f"grid/{key}: {grid[key]} outside a grid of {n_cells} cells")
    if out["start"]["state"] >= n_cells:
        raise ConfigError(f"start/state: {out['start']['state']} outside a grid of {n_cells} cells")
    return out


@dataclass
class ExperimentConfig:
    """A normalized config document plus the directory relative paths resolve against."""

    doc: dict
    base_dir: Path = Path(".")

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "ExperimentConfig":
        return cls(normalize(doc), Path(base_dir))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        return cls.from_dict(doc, path.parent)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.doc)

    def dumps(self) -> str:
        return json.dumps(self.doc, indent=2, sort_keys=True) + "\n"

    @property
    def solvers(self) -> list[dict]:
        return self.doc["solvers"]

    @property
    def seeds(self) -> list[int]:
        return self.doc["seeds"]

    def field_path(self) -> Path | None:
        spec = self.doc["field"]
        if spec["type"] != "file":
            return None
        p = Path(spec["path"])
        return p if p.is_absolute() else (self.base_dir / p).resolve()

    def resolved(self) -> "ExperimentConfig":
        """Copy whose field file path is absolute, so it works from any directory."""
        doc = self.to_dict()
        if doc["field"]["type"] == "file":
            doc["field"]["path"] = str(self.field_path())
        return ExperimentConfig(doc, self.base_dir)

    # -- builders ---------------------------------------------------------

    def grid(self) -> GridWorld:
        g = self.doc["grid"]
        try:
            return GridWorld(
                g["width"], g["height"], g["cell_size"], tuple(g["origin"]), g["goal"],
                frozenset(g["obstacles"]),
            )
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from None

    def field(self):
        spec = dict(self.doc["field"])
        kind = spec.pop("type")
        horizon = spec.pop("horizon", None)
        horizon = math.inf if horizon is None else float(horizon)
        if kind == "uniform":
            return UniformField(tuple(float(v) for v in spec["velocity"]))
        if kind == "vortex":
            return make_vortex(
                spec["center"], spec["strength"], spec["angular_rate"],
                orbit_radius=float(spec["orbit_radius"]), drift=tuple(float(v) for v in spec["drift"]),
                strength_rate=float(spec["strength_rate"]), horizon=horizon,
            )
        if kind == "spinning":
            return make_spinning(spec["magnitude"], spec["angular_rate"], spec["phase"], horizon)
        g = self.doc["grid"]
        try:
            return load_field_file(self.field_path(), origin=tuple(g["origin"]))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"field/path: {exc}") from None

    def noise(self) -> NoiseConfig:
        n = self.doc["noise"]
        try:
            return NoiseConfig(np.array(n["action_cov"], dtype=float), np.array(n["disturbance_cov"], dtype=float))
        except ValueError as exc:
            raise ConfigError(f"noise: {exc}") from None

    def reward(self) -> RewardModel:
        return RewardModel(**self.doc["reward"])

    def scenario(self) -> Scenario:
        grid = self.grid()
        s0 = self.doc["start"]["state"]
        if s0 in grid.obstacles:
            raise ConfigError(f"start/state: {s0} is an obstacle")
        return Scenario(
            grid, self.field(), self.noise(), self.reward(), s0,
            float(self.doc["start"]["time"]), float(self.doc["speed"]), self.doc["timeout"],
        )


def planner_params(spec: dict) -> dict:
    """Keyword arguments for :func:`tvmdp.sim.make_planner` from a solver entry."""
    params = {"tol": spec["tol"], "replan_interval": spec["replan_interval"], "warm_start": spec["warm_start"]}
    if "kolmogorov_model" in spec:
        params["tvmdp"] = {"kolmogorov_model": spec["kolmogorov_model"]}
    for key in ("horizon", "layers"):
        if key in spec:
            params[key] = spec[key]
    return params
