"""Run manifests: a TOML file describing model, sample, task and solver settings.

Schema (all tables optional except ``model`` and ``sample``)::

    task = "check"              # me | ml | minimaxent | check | sweep
    seed = 7

    [model]
    catalog = "dnorm_general"   # or the explicit keys below, not both
    grid = { lo = -5, hi = 5, m = 11 }
    # points = [0.0, 1.0, 2.0]  # explicit support instead of grid
    # weights = "unit"          # unit | trapezoid (grid only)
    # potentials = ["x", "x^2"]
    # num_params = 0

    [sample]                    # exactly one of generate / freq / file
    generate = { true_lambda = [0.7], true_alpha = [0.3], n = 0 }
    # freq = [0.25, 0.75]
    # file = "sample.csv"       # relative to the manifest

    [config]                    # any SolverConfig field
    tol = 1e-10

    [sweep]
    grid = "-3:3:101"           # alpha grid for task = "sweep" (T = 1)
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, EntropicError, ExpressionError
from .model import CATALOG, PotentialSet, SupportGrid, discretize_continuous
from .solvers import SolverConfig

TASKS = ("me", "ml", "minimaxent", "check", "sweep")


@dataclass
class ModelSpec:
    catalog: Optional[str] = None
    grid: Optional[dict] = None
    points: Optional[list] = None
    weights: str = "unit"
    potentials: Optional[list] = None
    num_params: int = 0

    @classmethod
    def from_dict(cls, d: dict, path: str = "") -> "ModelSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"unknown key {key!r}", path, f"model.{key}")
        spec = cls(**d)
        spec.validate(path)
        return spec

    def validate(self, path=""):
        explicit = self.potentials is not None
        if (self.catalog is None) == (not explicit):
            raise ConfigError("give exactly one of 'catalog' or 'potentials'", path, "model")
        if self.catalog is not None:
            if self.catalog not in CATALOG:
                raise ConfigError(f"unknown catalog {self.catalog!r}; choose from {sorted(CATALOG)}", path,
                                  "model.catalog")
            if self.grid is None:
                raise ConfigError("catalog models need a grid", path, "model.grid")
        if (self.grid is None) == (self.points is None):
            raise ConfigError("give exactly one of 'grid' or 'points'", path, "model")
        if self.grid is not None:
            missing = {"lo", "hi", "m"} - set(self.grid)
            if missing:
                raise ConfigError(f"grid is missing {sorted(missing)}", path, "model.grid")
        if self.weights not in ("unit", "trapezoid"):
            raise ConfigError("weights must be 'unit' or 'trapezoid'", path, "model.weights")
        if explicit:
            if not isinstance(self.potentials, list) or not self.potentials:
                raise ConfigError("potentials must be a non-empty list of strings", path, "model.potentials")
            try:
                PotentialSet.parse(self.potentials, int(self.num_params))
            except ExpressionError as exc:
                raise ConfigError(str(exc), path, "model.potentials") from exc

    def build(self) -> tuple:
        if self.catalog is not None:
            return discretize_continuous(self.catalog, self.grid)
        if self.grid is not None:
            support = SupportGrid.uniform(float(self.grid["lo"]), float(self.grid["hi"]), self.grid["m"],
                                          trapezoid=self.weights == "trapezoid")
        else:
            support = SupportGrid(self.points)
        return support, PotentialSet.parse(self.potentials, int(self.num_params))

    def to_dict(self) -> dict:
        return {k: v for k, v in dataclasses.asdict(self).items() if v is not None}

    @classmethod
    def from_types(cls, support: SupportGrid, potentials: PotentialSet) -> "ModelSpec":
        """Explicit spec for already-built types (used for round-trip checks)."""
        if not support.unit_weights:
            raise ConfigError("explicit point lists carry unit weights only; use a grid spec")
        return cls(points=[float(x) for x in support.points], potentials=potentials.sources(),
                   num_params=potentials.num_params)


@dataclass
class SampleSpec:
    freq: Optional[list] = None
    file: Optional[str] = None
    generate: Optional[dict] = None

    @classmethod
    def from_dict(cls, d: dict, path="") -> "SampleSpec":
        for key in d:
            if key not in ("freq", "file", "generate"):
                raise ConfigError(f"unknown key {key!r}", path, f"sample.{key}")
        spec = cls(**d)
        if sum(v is not None for v in (spec.freq, spec.file, spec.generate)) != 1:
            raise ConfigError("give exactly one of 'freq', 'file' or 'generate'", path, "sample")
        if spec.generate is not None:
            g = spec.generate
            for key in g:
                if key not in ("true_lambda", "true_alpha", "n"):
                    raise ConfigError(f"unknown key {key!r}", path, f"sample.generate.{key}")
            if "true_lambda" not in g:
                raise ConfigError("generate needs true_lambda", path, "sample.generate.true_lambda")
            if int(g.get("n", 0)) < 0:
                raise ConfigError("n must be >= 0", path, "sample.generate.n")
        return spec


@dataclass
class RunManifest:
    model: ModelSpec
    sample: SampleSpec
    task: str = "check"
    config: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0
    sweep_grid: Optional[str] = None
    source: str = ""
    base_dir: Path = Path(".")

    def to_dict(self) -> dict:
        out = {
            "task": self.task,
            "seed": self.seed,
            "model": self.model.to_dict(),
            "sample": {k: v for k, v in dataclasses.asdict(self.sample).items() if v is not None},
            "config": {k: v for k, v in dataclasses.asdict(self.config).items() if v is not None},
        }
        if self.sweep_grid is not None:
            out["sweep"] = {"grid": self.sweep_grid}
        return out


def parse_grid(text: str, path="", fld="sweep.grid") -> np.ndarray:
    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise ConfigError(f"grid must look like lo:hi:n, got {text!r}", path, fld) from None
    if n < 2 or not hi > lo:
        raise ConfigError(f"grid needs lo < hi and n >= 2, got {text!r}", path, fld)
    return np.linspace(lo, hi, n)


def manifest_from_dict(d: dict, path: str = "", base_dir: Path = Path(".")) -> RunManifest:
    for key in d:
        if key not in ("task", "seed", "model", "sample", "config", "sweep"):
            raise ConfigError(f"unknown key {key!r}", path, key)
    for key in ("model", "sample"):
        if key not in d:
            raise ConfigError("missing table", path, key)
    task = d.get("task", "check")
    if task not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}", path, "task")
    seed = d.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer", path, "seed")
    model = ModelSpec.from_dict(d["model"], path)
    sample = SampleSpec.from_dict(d["sample"], path)
    cfg_dict = dict(d.get("config", {}))
    known = {f.name for f in dataclasses.fields(SolverConfig)}
    for key in cfg_dict:
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", path, f"config.{key}")
    cfg_dict.setdefault("seed", seed)
    try:
        config = SolverConfig(**cfg_dict)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path, "config") from exc
    sweep = d.get("sweep", {})
    grid = sweep.get("grid")
    if grid is not None:
        parse_grid(grid, path)
    manifest = RunManifest(model, sample, task, config, seed, grid, path, base_dir)
    _check_dimensions(manifest)
    return manifest


def _check_dimensions(manifest: RunManifest):
    try:
        support, pots = manifest.model.build()
    except EntropicError as exc:
        raise ConfigError(str(exc), manifest.source, "model") from exc
    g = manifest.sample.generate
    if g is not None:
        if len(g["true_lambda"]) != pots.J:
            raise ConfigError(f"true_lambda needs {pots.J} entries", manifest.source, "sample.generate.true_lambda")
        if len(g.get("true_alpha", [])) != pots.T:
            raise ConfigError(f"true_alpha needs {pots.T} entries", manifest.source, "sample.generate.true_alpha")
    if manifest.sample.freq is not None and len(manifest.sample.freq) != support.m:
        raise ConfigError(f"freq needs {support.m} entries", manifest.source, "sample.freq")


def load_manifest(path) -> RunManifest:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            d = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError("file not found", str(path)) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}", str(path)) from None
    return manifest_from_dict(d, str(path), path.parent)
