"""Parameter sets and the flat key-per-parameter configuration file.

Precedence when loading: built-in defaults < config file < ``SIGREPAIR_*``
environment variables < explicit overrides (CLI flags).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Any, Mapping

ENV_PREFIX = "SIGREPAIR_"


@dataclass(frozen=True)
class EstimationParams:
    delta_t: int = 10  # ticks either side of t
    a_green: float = 0.5  # m/s^2
    a_red: float = -2.0
    v_green: float = 3.5  # m/s
    v_red: float = 0.5
    d_min: float = -8.0  # m, samples further past the stop line are dropped
    d_cutoff: float = 30.0  # m, outer edge of the acceleration confidence

    def __post_init__(self):
        if not self.a_red < 0 < self.a_green:
            raise ValueError(f"need a_red < 0 < a_green, got {self.a_red}, {self.a_green}")
        if not 0 <= self.v_red < self.v_green:
            raise ValueError(f"need 0 <= v_red < v_green, got {self.v_red}, {self.v_green}")
        if self.delta_t < 1:
            raise ValueError(f"delta_t must be >= 1, got {self.delta_t}")


@dataclass(frozen=True)
class FusionParams:
    theta: float = 1.0
    w_big: float = 100.0
    w_small: float = 0.1

    def __post_init__(self):
        if not self.w_big > self.w_small > 0:
            raise ValueError("need w_big > w_small > 0")

    @property
    def confidence_cap(self) -> float:
        return self.w_big / 10.0


@dataclass(frozen=True)
class PostParams:
    t_min: int = 30  # ticks
    t_yellow: int = 20
    smoothing_order: str = "leftmost"  # or "shortest": which short run is rewritten first

    def __post_init__(self):
        if self.t_min < 1 or self.t_yellow < 1:
            raise ValueError("t_min and t_yellow must be >= 1")
        if self.smoothing_order not in ("leftmost", "shortest"):
            raise ValueError(f"smoothing_order must be leftmost or shortest, got {self.smoothing_order!r}")


@dataclass(frozen=True)
class TopologyParams:
    eps_start: float = 2.0  # m
    eps_end: float = 10.0  # m
    pair_angle_deg: float = 15.0
    turn_deg: float = 30.0  # |heading change| below this is a through lane
    turn_vote_deg: float = 60.0  # between turn_deg and this, exit lanes vote
    opposing_tol_deg: float = 30.0
    approach_cluster_deg: float = 45.0
    approach_cluster_dist: float = 40.0  # m between start points of one approach
    lateral_tol: float = 2.5  # m, trajectory-to-centreline matching
    heading_tol_deg: float = 60.0
    upstream_reach: float = 120.0  # m of approach chain traced before the stop line
    bicycle_radius: float = 10.0
    max_approaches: int = 4


@dataclass(frozen=True)
class Config:
    tick_count: int = 91
    estimation: EstimationParams = field(default_factory=EstimationParams)
    fusion: FusionParams = field(default_factory=FusionParams)
    post: PostParams = field(default_factory=PostParams)
    topology: TopologyParams = field(default_factory=TopologyParams)

    def to_flat(self) -> dict[str, Any]:
        flat: dict[str, Any] = {"tick_count": self.tick_count}
        for group in _GROUPS:
            flat.update(dataclasses.asdict(getattr(self, group)))
        return flat

    def replace(self, **flat: Any) -> "Config":
        """Return a copy with flat parameter names overridden."""
        return config_from_flat({**self.to_flat(), **flat})


_GROUPS = ("estimation", "fusion", "post", "topology")
_GROUP_TYPES = {
    "estimation": EstimationParams,
    "fusion": FusionParams,
    "post": PostParams,
    "topology": TopologyParams,
}


def _key_index() -> dict[str, tuple[str | None, type]]:
    index: dict[str, tuple[str | None, type]] = {"tick_count": (None, int)}
    for group, cls in _GROUP_TYPES.items():
        for f in dataclasses.fields(cls):
            index[f.name] = (group, type(f.default))
    return index


CONFIG_KEYS = _key_index()


def config_from_flat(flat: Mapping[str, Any]) -> Config:
    unknown = sorted(set(flat) - set(CONFIG_KEYS))
    if unknown:
        raise ValueError(f"unknown configuration keys: {', '.join(unknown)}")
    groups: dict[str, dict[str, Any]] = {g: {} for g in _GROUPS}
    tick_count = 91
    for key, value in flat.items():
        group, typ = CONFIG_KEYS[key]
        value = typ(value)
        if group is None:
            tick_count = value
        else:
            groups[group][key] = value
    return Config(tick_count, **{g: _GROUP_TYPES[g](**kw) for g, kw in groups.items()})


def load_config(
    path: str | os.PathLike | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> Config:
    flat: dict[str, Any] = Config().to_flat()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            flat.update(json.load(fh))
    env = os.environ if environ is None else environ
    for key in CONFIG_KEYS:
        raw = env.get(ENV_PREFIX + key.upper())
        if raw is not None:
            flat[key] = CONFIG_KEYS[key][1](float(raw)) if CONFIG_KEYS[key][1] is int else raw
    if overrides:
        flat.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_flat(flat)
