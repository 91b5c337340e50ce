"""Run configuration: one JSON file drives the whole pipeline.

The file is the reproducibility artifact: it carries the corpus
definition, every physics/feature/learning constant, the named seeds
(no entropy defaults anywhere), and the output directory.  Command-line
flags are overrides of these keys, nothing more.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

from . import learn, physics, scenes
from .features import FeatureConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def _spec_dicts(specs: dict) -> dict:
    return {k: {"params": dict(v.params), "density": v.density}
            if hasattr(v, "density") else {"params": dict(v.params)}
            for k, v in specs.items()}


@dataclass
class PipelineConfig:
    outdir: str = "runs/default"
    schema_version: int = SCHEMA_VERSION

    # corpus
    objects: dict = field(default_factory=lambda: _spec_dicts(scenes.default_objects()))
    environments: dict = field(default_factory=lambda: _spec_dicts(scenes.default_envs()))
    object_order: list = field(default_factory=lambda: list(scenes.DEFAULT_OBJECT_ORDER))
    env_order: list = field(default_factory=lambda: list(scenes.DEFAULT_ENV_ORDER))
    compat: list = field(default_factory=lambda: [list(p) for p in scenes.DEFAULT_COMPAT])

    # candidate sampling
    n_locations: int = 100
    n_orientations: int = 18
    headroom: float = 0.10

    # named seeds; every random draw in the pipeline flows from one of these
    seeds: dict = field(default_factory=lambda: {
        "geometry": 20_001,
        "train": 42,
        "test": 1_042,
        "baseline": 7,
    })

    # physics / features / learning (keys override dataclass defaults)
    sim: dict = field(default_factory=dict)
    features: dict = field(default_factory=dict)
    hyperparams: dict = field(default_factory=dict)

    scenarios: list = field(default_factory=lambda: ["SESO", "SENO", "NESO", "NENO"])
    metric_n: int = 5
    workers: int = 0          # 0 = number of available processors

    # ------------------------------------------------------------------
    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"config schema version {self.schema_version} not supported "
                f"(this build reads version {SCHEMA_VERSION})")
        for key in ("geometry", "train", "test", "baseline"):
            if key not in self.seeds:
                raise ConfigError(f"missing required seed {key!r}: seeds "
                                  "must be explicit")
            if not isinstance(self.seeds[key], int):
                raise ConfigError(f"seed {key!r} must be an integer")
        for env, obj in self.compat:
            if env not in self.environments:
                raise ConfigError(f"compat references unknown environment {env!r}")
            if obj not in self.objects:
                raise ConfigError(f"compat references unknown object {obj!r}")
        for name in self.object_order:
            if name not in self.objects:
                raise ConfigError(f"object_order references unknown object {name!r}")
        for name in self.env_order:
            if name not in self.environments:
                raise ConfigError(f"env_order references unknown environment {name!r}")
        if self.n_locations < 1 or self.n_orientations < 1:
            raise ConfigError("n_locations and n_orientations must be >= 1")
        if self.metric_n < 1:
            raise ConfigError("metric_n must be >= 1")
        if self.workers < 0:
            raise ConfigError("workers must be >= 0")
        # fail fast on typos in the override blocks
        self.sim_params()
        self.feature_config()
        self.hyper_params()

    # -- typed views ----------------------------------------------------

    def _build(self, cls, overrides: dict, label: str):
        known = {f.name for f in dataclasses.fields(cls)}
        bad = set(overrides) - known
        if bad:
            raise ConfigError(f"unknown {label} keys: {sorted(bad)}")
        clean = {k: (math.inf if v == "inf" else v) for k, v in overrides.items()}
        return cls(**clean)

    def sim_params(self) -> physics.SimParams:
        return self._build(physics.SimParams, self.sim, "sim")

    def feature_config(self) -> FeatureConfig:
        return self._build(FeatureConfig, self.features, "features")

    def hyper_params(self) -> learn.HyperParams:
        return self._build(learn.HyperParams, self.hyperparams, "hyperparams")

    def object_specs(self) -> dict:
        return {k: scenes.ObjectSpec(k, dict(v["params"]), v.get("density", 20_000))
                for k, v in self.objects.items()}

    def env_specs(self) -> dict:
        return {k: scenes.EnvSpec(k, dict(v["params"]), v.get("density", 150_000))
                for k, v in self.environments.items()}

    def n_workers(self) -> int:
        return self.workers if self.workers > 0 else (os.cpu_count() or 1)

    # -- (de)serialization ----------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown config keys: {sorted(bad)}")
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def load_config(path: str) -> PipelineConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return PipelineConfig.from_dict(raw)


def save_config(cfg: PipelineConfig, path: str):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(cfg.dumps())
    os.replace(tmp, path)


def apply_overrides(cfg: PipelineConfig, *, seed_override: int | None = None,
                    workers: int | None = None,
                    outdir: str | None = None) -> PipelineConfig:
    """CLI flags are config-key overrides; returns a rebuilt config."""
    d = cfg.to_dict()
    if seed_override is not None:
        d["seeds"] = dict(d["seeds"],
                          train=seed_override,
                          test=seed_override + 1_000,
                          baseline=seed_override + 2_000)
    if workers is not None:
        d["workers"] = workers
    if outdir is not None:
        d["outdir"] = outdir
    return PipelineConfig.from_dict(d)
