"""Experiment configuration files (YAML or JSON) with strict key checking."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .analysis import Ablation
from .data_io import GeneratorSpec
from .errors import ConfigError, UsageError
from .model import Hyperparams
from .prequential import SweepConfig
from .sampler import ChainConfig


@dataclass(frozen=True)
class DemoConfig:
    kind: str = "star"
    M: int = 50
    sizes: tuple = (5, 5)
    alpha: float = 20.0
    seeds: tuple = (0, 1, 2)
    n_starts: int = 20
    max_iter: int = 2000

    def __post_init__(self):
        if self.kind not in ("star", "bipartite"):
            raise ConfigError(f"demo.kind must be 'star' or 'bipartite', got {self.kind!r}")
        object.__setattr__(self, "sizes", tuple(self.sizes))
        object.__setattr__(self, "seeds", tuple(self.seeds))


@dataclass(frozen=True)
class ExperimentConfig:
    """``dataset`` is a bundled name, an edge-list path or a GeneratorSpec."""

    dataset: object = None
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: str = "results"
    ablation: Ablation | None = None
    demo: DemoConfig = field(default_factory=DemoConfig)

    def dataset_label(self):
        if isinstance(self.dataset, GeneratorSpec):
            return f"{self.dataset.kind}-n{self.dataset.n_nodes}-s{self.dataset.seed}"
        return Path(str(self.dataset)).stem if self.dataset is not None else ""


def _build(cls, mapping, where, convert=None):
    """Instantiate a dataclass from a mapping, rejecting unknown keys."""
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(mapping).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(names)}")
    kwargs = dict(mapping)
    for key, fn in (convert or {}).items():
        if key in kwargs:
            kwargs[key] = fn(kwargs[key])
    try:
        return cls(**kwargs)
    except UsageError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _dataset(value):
    if value is None or isinstance(value, str):
        return value
    if isinstance(value, dict):
        return _build(GeneratorSpec, value, "dataset", {"params": lambda p: dict(p or {})})
    raise ConfigError("dataset must be a bundled name, a path or a generator mapping")


def sweep_from_mapping(mapping, where="sweep"):
    return _build(
        SweepConfig,
        mapping,
        where,
        {
            "geometries": tuple,
            "eta_grid": tuple,
            "chain_cfg": lambda m: _build(ChainConfig, m, f"{where}.chain_cfg"),
            "hyper": lambda m: _build(Hyperparams, m, f"{where}.hyper"),
        },
    )


def config_from_mapping(mapping):
    return _build(
        ExperimentConfig,
        mapping,
        "config",
        {
            "dataset": _dataset,
            "sweep": sweep_from_mapping,
            "output": str,
            "ablation": lambda m: None if m is None else _build(Ablation, m, "ablation"),
            "demo": lambda m: _build(DemoConfig, m, "demo"),
        },
    )


def load_config(path):
    """Parse a YAML or JSON experiment file; OSError propagates."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        mapping = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_mapping(mapping or {})


def config_to_mapping(cfg):
    """Plain-data form of an ExperimentConfig, loadable by config_from_mapping."""
    ds = cfg.dataset
    if isinstance(ds, GeneratorSpec):
        ds = dataclasses.asdict(ds)
    sweep = dataclasses.asdict(cfg.sweep)
    sweep["geometries"] = [g.value for g in cfg.sweep.geometries]
    sweep["eta_grid"] = list(cfg.sweep.eta_grid)
    out = {
        "dataset": ds,
        "sweep": sweep,
        "output": cfg.output,
        "demo": {**dataclasses.asdict(cfg.demo), "sizes": list(cfg.demo.sizes), "seeds": list(cfg.demo.seeds)},
    }
    if cfg.ablation is not None:
        out["ablation"] = {"vary": cfg.ablation.vary, "values": list(cfg.ablation.values)}
    return out
