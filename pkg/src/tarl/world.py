"""1D shuttle world, synchronous message bus and performance monitor.

The world plays the part of the MDP transition function (a robot moving on a
line, slowed down inside a mud patch) and the monitor plays the reward: an
episode succeeds when the robot gets within ``epsilon_spec`` of the goal no
later than ``t_max`` seconds after the monitored leg started.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from types import SimpleNamespace
from typing import Callable

import numpy as np

ODOMETRY = "Odometry"
VELOCITY = "Velocity"
TERRAIN = "Terrain"


@dataclass(frozen=True)
class EnvConfig:
    g1: float = 0.0
    g2: float = 10.0
    epsilon_spec: float = 0.05
    dt: float = 0.01
    t_max: float = 1.2
    mud_enabled: bool = True
    mud_prob: float = 0.5
    mud_region: tuple[float, float] = (4.0, 6.0)
    mud_factor: float = 0.2
    odometry_bins: int = 20
    odometry_range: tuple[float, float] = (0.0, 10.0)
    reward_success: float = 100.0
    reward_failure: float = -100.0
    step_penalty: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mud_region", tuple(float(x) for x in self.mud_region))
        object.__setattr__(self, "odometry_range", tuple(float(x) for x in self.odometry_range))
        lo, hi = self.odometry_range
        mlo, mhi = self.mud_region
        if not 0 < self.mud_factor <= 1:
            raise ValueError("mud_factor must be in (0, 1]")
        if self.epsilon_spec <= 0:
            raise ValueError("epsilon_spec must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not lo < hi:
            raise ValueError("odometry_range must be increasing")
        if not (lo <= mlo <= mhi <= hi):
            raise ValueError("mud_region must lie inside odometry_range")
        if self.odometry_bins < 2:
            raise ValueError("odometry_bins must be >= 2")
        if not 0 <= self.mud_prob <= 1:
            raise ValueError("mud_prob must be a probability")

    @classmethod
    def from_dict(cls, data: dict) -> "EnvConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown [world] keys: {sorted(unknown)}")
        return cls(**data)

    def offline(self) -> "EnvConfig":
        """The designers' environment: terrain still sensed, but mud has no effect."""
        return replace(self, mud_factor=1.0)

    @property
    def reward_max(self) -> float:
        return max(abs(self.reward_success), abs(self.reward_failure))

    def bin_bounds(self, p_lo: int, p_hi: int) -> tuple[float, float]:
        """Position interval [lo, hi) covered by bins p_lo..p_hi inclusive."""
        lo, hi = self.odometry_range
        width = (hi - lo) / self.odometry_bins
        return lo + p_lo * width, lo + (p_hi + 1) * width


@dataclass(frozen=True)
class WorldState:
    position: float
    sim_time: float
    terrain: bool
    episode_mud: tuple[float, float] | None


@dataclass(frozen=True)
class MonitorVerdict:
    success: bool
    reward_total: float
    reason: str  # "reached_within_bounds" | "timeout"


def in_mud(position: float, episode_mud) -> bool:
    return episode_mud is not None and episode_mud[0] <= position <= episode_mud[1]


def reset(config: EnvConfig, rng: np.random.Generator) -> WorldState:
    mud = None
    if config.mud_enabled and rng.random() < config.mud_prob:
        mud = config.mud_region
    return WorldState(config.g1, 0.0, in_mud(config.g1, mud), mud)


def apply_velocity(state: WorldState, v: float, config: EnvConfig) -> WorldState:
    factor = config.mud_factor if state.terrain else 1.0
    position = state.position + v * factor * config.dt
    return WorldState(position, state.sim_time + config.dt, in_mud(position, state.episode_mud),
                      state.episode_mud)


def odometry_bin(position: float, config: EnvConfig) -> int:
    lo, hi = config.odometry_range
    p = math.floor((position - lo) / (hi - lo) * config.odometry_bins)
    return min(max(p, 0), config.odometry_bins - 1)


def read_sensors(state: WorldState, config: EnvConfig) -> tuple[float, bool, int]:
    return state.position, state.terrain, odometry_bin(state.position, config)


def judge(state: WorldState, goal: float, config: EnvConfig) -> MonitorVerdict | None:
    if state.sim_time > config.t_max:
        return MonitorVerdict(False, config.reward_failure, "timeout")
    if abs(state.position - goal) <= config.epsilon_spec:
        return MonitorVerdict(True, config.reward_success, "reached_within_bounds")
    return None


def odometry_message(position: float) -> SimpleNamespace:
    """Odometry message reduced to the field the controller reads."""
    return SimpleNamespace(pose=SimpleNamespace(pose=SimpleNamespace(position=position)))


class Bus:
    """Synchronous topic bus: publishing runs every subscriber before returning."""

    def __init__(self):
        self.subscribers: dict[str, list[Callable]] = {}

    def subscribe(self, topic: str, handler: Callable) -> None:
        self.subscribers.setdefault(topic, []).append(handler)

    def deliver(self, topic: str, message) -> None:
        for handler in list(self.subscribers.get(topic, ())):
            handler(message)


class ShuttleWorld:
    """World state bound to a bus.

    Sensor topics are re-delivered after every velocity command, and once to a
    new subscriber at registration so the controller never reads a stale
    initial value.
    """

    def __init__(self, config: EnvConfig, state: WorldState):
        self.config = config
        self.state = state
        self.bus = Bus()

    def sensor_message(self, topic: str):
        if topic == ODOMETRY:
            return odometry_message(self.state.position)
        if topic == TERRAIN:
            return 1 if self.state.terrain else 0
        return None

    def subscribe(self, topic: str, handler: Callable) -> None:
        self.bus.subscribe(topic, handler)
        message = self.sensor_message(topic)
        if message is not None:
            handler(message)

    def command(self, v: float) -> None:
        self.state = apply_velocity(self.state, v, self.config)

    def deliver_sensors(self) -> None:
        for topic in (ODOMETRY, TERRAIN):
            if topic in self.bus.subscribers:
                self.bus.deliver(topic, self.sensor_message(topic))
