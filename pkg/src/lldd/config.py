"""Run configuration: one JSON document drives every command.

Sections (all optional, all fields defaulted): ``cohort``, ``degradation``,
``spg``, ``distill``, ``coreset``, ``eval``, ``seeds``.  Unknown keys anywhere
are rejected.  After :func:`resolve`, every derived seed the pipeline will use
is recorded explicitly in ``seeds`` so reports are self-describing; the
``LLDD_SEED`` environment variable overrides the root seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from . import nets
from ._rng import derive_seed
from .degrade import DegradationSpec
from .phantom import CohortSpec

ENV_SEED = "LLDD_SEED"


class ConfigError(ValueError):
    """Schema violation in a run configuration."""


@dataclass(frozen=True)
class SPGSection:
    prior_size: int = 5
    code_dim: int = 2
    images_per_patient: int = 1
    random_noise_init: bool = False
    fidelity_enabled: bool = True
    source_patient: int = 0


@dataclass(frozen=True)
class DistillSection:
    steps: int = 2000
    lr: float = 1e-3
    real_batch: int = 4
    net: dict = field(default_factory=lambda: {"arch": "srcnn_lite"})
    reinit_period: int = 1
    chunk_size: int = 5
    matching: str = "global"
    inner_train_steps: int = 0
    learn_prior: bool = False


@dataclass(frozen=True)
class CoresetSection:
    method: str = "random"
    budget: int = 5
    feature_downsample: int = 16


@dataclass(frozen=True)
class EvalSection:
    held_out: int = 2
    budgets: tuple[int, ...] = (5, 10)
    methods: tuple[str, ...] = ("random", "random_star", "uniform",
                                "herding", "kcenter", "ours")
    ipp_values: tuple[int, ...] = (1, 5)
    ablations: tuple[str, ...] = ()
    include_full_data: bool = True
    n_distill_seeds: int = 3
    n_train_seeds: int = 5
    distill_steps: int = 300
    train_epochs: int = 60
    train_batch: int = 4
    train_lr: float = 1e-3
    test_slices_per_patient: int = 0
    downstream_archs: tuple[str, ...] = ()
    samples_per_patient: int = 8           # gradient export


@dataclass
class RunConfig:
    cohort: CohortSpec = field(default_factory=CohortSpec)
    degradation: DegradationSpec = field(
        default_factory=lambda: DegradationSpec(kind="sr", sr_factor=4))
    spg: SPGSection = field(default_factory=SPGSection)
    distill: DistillSection = field(default_factory=DistillSection)
    coreset: CoresetSection = field(default_factory=CoresetSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seeds: dict = field(default_factory=dict)

    def network_spec(self) -> nets.NetworkSpec:
        return parse_net(self.distill.net)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {}
        for name in ("cohort", "degradation", "spg", "distill", "coreset",
                     "eval"):
            section = getattr(self, name)
            out[name] = {f.name: _plain(getattr(section, f.name))
                         for f in fields(section)}
        out["seeds"] = dict(self.seeds)
        return out


def _plain(v):
    if isinstance(v, tuple):
        return list(v)
    return v


def parse_net(spec: dict) -> nets.NetworkSpec:
    if not isinstance(spec, dict) or "arch" not in spec:
        raise ConfigError("distill.net must be an object with an 'arch' key")
    allowed = {"arch", "channels", "kernels", "depth"}
    unknown = set(spec) - allowed
    if unknown:
        raise ConfigError(f"unknown net keys: {sorted(unknown)}")
    arch = spec["arch"]
    try:
        base = nets.spec_from_name(arch)
    except KeyError:
        raise ConfigError(f"unknown arch {arch!r}") from None
    return nets.NetworkSpec(
        arch=arch,
        channels=tuple(spec.get("channels", base.channels)),
        kernels=tuple(spec.get("kernels", base.kernels)),
        depth=int(spec.get("depth", base.depth)))


_SECTIONS = {
    "cohort": CohortSpec,
    "degradation": DegradationSpec,
    "spg": SPGSection,
    "distill": DistillSection,
    "coreset": CoresetSection,
    "eval": EvalSection,
}

_TUPLE_FIELDS = {"budgets", "methods", "ipp_values", "ablations",
                 "downstream_archs", "channels", "kernels"}


def _build_section(cls, name: str, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: "
                          f"{sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from None


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a JSON object")
    unknown = set(data) - set(_SECTIONS) - {"seeds"}
    if unknown:
        raise ConfigError(f"unknown top-level sections: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            kwargs[name] = _build_section(cls, name, data[name])
    seeds = data.get("seeds", {})
    if not isinstance(seeds, dict):
        raise ConfigError("seeds must be an object")
    unknown = set(seeds) - {"root", "cohort", "distill", "train", "select",
                            "export", "test"}
    if unknown:
        raise ConfigError(f"unknown seed names: {sorted(unknown)}")
    cfg = RunConfig(seeds=dict(seeds), **kwargs)
    if cfg.distill.net:
        parse_net(cfg.distill.net)   # validate eagerly
    return cfg


def resolve(cfg: RunConfig) -> RunConfig:
    """Fill in every derived seed; honors the LLDD_SEED env override."""
    seeds = dict(cfg.seeds)
    env = os.environ.get(ENV_SEED)
    if env is not None:
        try:
            seeds["root"] = int(env)
        except ValueError:
            raise ConfigError(f"{ENV_SEED} must be an integer, got {env!r}")
    root = int(seeds.get("root", 0))
    seeds["root"] = root
    for name in ("cohort", "distill", "train", "select", "export", "test"):
        seeds.setdefault(name, derive_seed(root, "seed", name))
    cfg.seeds = seeds
    return cfg


def load(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"no such config file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    return resolve(from_dict(data))


def default() -> RunConfig:
    return resolve(RunConfig())
