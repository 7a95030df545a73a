"""32-slot observation of the EV's surroundings.

Layout::

    0-17   leader, follower, left-leader, left-follower, right-leader,
           right-follower; each (presence, velocity, distance)
    18-26  leader-of-leader, leader-of-left-leader, leader-of-right-leader
    27     ego speed / ego max speed
    28     ego lane / (lane count - 1)
    29     ego position / road length
    30     second tier active
    31     avoiding-strategy feedback
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from evtactics.world import Neighbor, NeighborSet, RoadConfig, VehicleState, WorldState, neighbors

OBS_SIZE = 32
FIRST_TIER = NeighborSet.FIRST_TIER
SECOND_TIER = NeighborSet.SECOND_TIER
EGO_SLOTS = ("ego_speed", "ego_lane", "ego_position", "speed_adaptive_active", "as_feedback")
SLOT_NAMES = tuple(
    f"{role}.{feat}" for role in FIRST_TIER + SECOND_TIER for feat in ("presence", "velocity", "distance")
) + EGO_SLOTS


@dataclass(frozen=True)
class PerceptionConfig:
    sensing_range_m: float = 200.0

    def __post_init__(self):
        if not self.sensing_range_m > 0:
            raise ValueError(f"sensing_range_m must be > 0, got {self.sensing_range_m}")


def neighbor_feature(nb: Neighbor | None, sensing_range: float) -> tuple[float, float, float]:
    if nb is None or nb.gap_m > sensing_range:
        return 0.0, 0.0, 0.0
    v = nb.vehicle
    velocity = min(max(v.speed / v.params.max_speed, 0.0), 1.0)
    distance = min(max(nb.gap_m, 0.0), sensing_range) / sensing_range
    return 1.0, velocity, distance


def encode_compact(world: WorldState, ev_id: int, cfg: PerceptionConfig = PerceptionConfig(),
                   nbrs: NeighborSet | None = None) -> np.ndarray:
    nbrs = neighbors(world, ev_id) if nbrs is None else nbrs
    out = np.zeros(18)
    for k, role in enumerate(FIRST_TIER):
        out[3 * k:3 * k + 3] = neighbor_feature(getattr(nbrs, role), cfg.sensing_range_m)
    return out


def speed_adaptive_active(ego: VehicleState) -> bool:
    return ego.speed > ego.params.max_speed / 2


def speed_adaptive_extension(world: WorldState, ev_id: int, cfg: PerceptionConfig = PerceptionConfig(),
                             nbrs: NeighborSet | None = None) -> tuple[np.ndarray, bool]:
    out = np.zeros(9)
    if not speed_adaptive_active(world.get(ev_id)):
        return out, False
    nbrs = neighbors(world, ev_id) if nbrs is None else nbrs
    for k, role in enumerate(SECOND_TIER):
        out[3 * k:3 * k + 3] = neighbor_feature(getattr(nbrs, role), cfg.sensing_range_m)
    return out, True


def assemble_observation(first_tier: np.ndarray, second_tier: np.ndarray, ego: VehicleState,
                         road: RoadConfig, as_flag: float) -> np.ndarray:
    first_tier = np.asarray(first_tier, dtype=float)
    second_tier = np.asarray(second_tier, dtype=float)
    if first_tier.shape != (18,) or second_tier.shape != (9,):
        raise ValueError(f"expected tiers of width 18 and 9, got {first_tier.shape} and {second_tier.shape}")
    active = speed_adaptive_active(ego)
    if not active and np.any(second_tier):
        raise ValueError("second tier must be empty while the speed-adaptive tier is inactive")
    obs = np.empty(OBS_SIZE)
    obs[:18] = first_tier
    obs[18:27] = second_tier
    obs[27] = min(max(ego.speed / ego.params.max_speed, 0.0), 1.0)
    obs[28] = ego.lane / (road.lane_count - 1)
    obs[29] = min(max(ego.pos_m / road.length_m, 0.0), 1.0)
    obs[30] = 1.0 if active else 0.0
    obs[31] = float(as_flag)
    return obs


def observe(world: WorldState, ev_id: int, as_flag: float,
            cfg: PerceptionConfig = PerceptionConfig()) -> np.ndarray:
    """Full observation with a single neighbour search."""
    nbrs = neighbors(world, ev_id)
    first = encode_compact(world, ev_id, cfg, nbrs)
    second, _ = speed_adaptive_extension(world, ev_id, cfg, nbrs)
    return assemble_observation(first, second, world.get(ev_id), world.road, as_flag)


@dataclass
class DecodedObservation:
    """Labelled view of an observation vector, for debugging."""

    neighbors: dict[str, tuple[float, float, float]]
    ego_speed: float
    ego_lane: float
    ego_position: float
    speed_adaptive_active: float
    as_feedback: float

    def to_vector(self) -> np.ndarray:
        obs = np.empty(OBS_SIZE)
        for k, role in enumerate(FIRST_TIER + SECOND_TIER):
            obs[3 * k:3 * k + 3] = self.neighbors[role]
        obs[27:] = (self.ego_speed, self.ego_lane, self.ego_position,
                    self.speed_adaptive_active, self.as_feedback)
        return obs


def decode_observation(obs: np.ndarray) -> DecodedObservation:
    obs = np.asarray(obs, dtype=float)
    if obs.shape != (OBS_SIZE,):
        raise ValueError(f"observation must have {OBS_SIZE} slots, got shape {obs.shape}")
    roles = FIRST_TIER + SECOND_TIER
    nbrs = {role: tuple(float(x) for x in obs[3 * k:3 * k + 3]) for k, role in enumerate(roles)}
    return DecodedObservation(nbrs, *(float(x) for x in obs[27:]))


def format_observation(obs: np.ndarray) -> str:
    return "\n".join(f"{i:2d} {name:<36s} {value:.6f}" for i, (name, value) in enumerate(zip(SLOT_NAMES, obs)))
