"""TOML run configuration with ``[world]``, ``[rl]`` and ``[repair]`` sections."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from tarl.mend import RepairParams
from tarl.sarsa import LearnParams
from tarl.world import EnvConfig

SEED_ENV = "TARL_SEED"


@dataclass(frozen=True)
class RunConfig:
    world: EnvConfig = field(default_factory=EnvConfig)
    rl: LearnParams = field(default_factory=LearnParams)
    repair: RepairParams = field(default_factory=RepairParams)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = set(data) - {"world", "rl", "repair"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        return cls(
            EnvConfig.from_dict(data.get("world", {})),
            LearnParams.from_dict(data.get("rl", {})),
            RepairParams.from_dict(data.get("repair", {})),
        )


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, "rb") as fh:
        return RunConfig.from_dict(tomllib.load(fh))


def resolve_seed(explicit: int | None, default: int = 0) -> int:
    """Command-line seed, else ``TARL_SEED``, else ``default``."""
    if explicit is not None:
        return explicit
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return default
