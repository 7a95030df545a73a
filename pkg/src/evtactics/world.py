"""Discrete-time multi-lane highway model.

Vehicles follow a Krauss-style safe-speed rule, change lanes only through an
explicit safety predicate, and enter the road through a Bernoulli inflow.
Lane 0 is the rightmost lane; "left" means a higher lane index.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, NamedTuple

import numpy as np


class UnknownVehicleError(KeyError):
    """Raised when a vehicle id does not exist in the world (a caller bug)."""


class ContractViolation(RuntimeError):
    """Raised when an operation is invoked without its precondition holding."""


class VehicleKind(str, Enum):
    EV = "EV"
    CV = "CV"


@dataclass(frozen=True)
class RoadConfig:
    length_m: float = 2000.0
    lane_count: int = 3
    step_dt: float = 1.0

    def __post_init__(self):
        if not self.length_m > 0:
            raise ValueError(f"length_m must be > 0, got {self.length_m}")
        if self.lane_count < 2:
            raise ValueError(f"lane_count must be >= 2, got {self.lane_count}")
        if not self.step_dt > 0:
            raise ValueError(f"step_dt must be > 0, got {self.step_dt}")


@dataclass(frozen=True)
class VehicleParams:
    length_m: float
    width_m: float
    min_gap_m: float
    max_speed: float
    accel_limit: float
    decel_limit: float
    sigma: float = 0.0
    kind: VehicleKind = VehicleKind.CV

    def __post_init__(self):
        for name in ("length_m", "width_m", "min_gap_m", "max_speed", "accel_limit", "decel_limit"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if not 0.0 <= self.sigma <= 1.0:
            raise ValueError(f"sigma must lie in [0, 1], got {self.sigma}")
        object.__setattr__(self, "kind", VehicleKind(self.kind))


EV_PARAMS = VehicleParams(
    length_m=5.0, width_m=2.0, min_gap_m=1.0, max_speed=40.0,
    accel_limit=4.0, decel_limit=4.0, sigma=0.0, kind=VehicleKind.EV,
)
CV_PARAMS = VehicleParams(
    length_m=5.0, width_m=1.8, min_gap_m=2.0, max_speed=20.0,
    accel_limit=2.0, decel_limit=2.0, sigma=1.0, kind=VehicleKind.CV,
)


@dataclass(frozen=True)
class FlowConfig:
    arrival_rate: float = 0.5
    entry_speed: float = 16.0
    lane_assignment: str = "uniform-random"

    def __post_init__(self):
        if not self.arrival_rate >= 0:
            raise ValueError(f"arrival_rate must be >= 0, got {self.arrival_rate}")
        if not self.entry_speed >= 0:
            raise ValueError(f"entry_speed must be >= 0, got {self.entry_speed}")
        if self.lane_assignment != "uniform-random":
            raise ValueError(f"unsupported lane_assignment {self.lane_assignment!r}")


@dataclass(slots=True, eq=False)
class VehicleState:
    id: int
    lane: int
    pos_m: float
    speed: float
    params: VehicleParams
    entry_step: int = 0
    lane_changes: int = 0

    @property
    def rear_m(self) -> float:
        return self.pos_m - self.params.length_m

    @property
    def is_ev(self) -> bool:
        return self.params.kind is VehicleKind.EV


class Neighbor(NamedTuple):
    vehicle: VehicleState
    gap_m: float


@dataclass
class NeighborSet:
    """First-tier and second-tier neighbours of one vehicle.

    Gaps are net (bumper to bumper) and measured from the ego vehicle, so
    second-tier gaps are distances from the ego as well.  A gap may be
    negative for a vehicle alongside the ego in an adjacent lane.
    """

    leader: Neighbor | None = None
    follower: Neighbor | None = None
    left_leader: Neighbor | None = None
    left_follower: Neighbor | None = None
    right_leader: Neighbor | None = None
    right_follower: Neighbor | None = None
    leader_of_leader: Neighbor | None = None
    leader_of_left_leader: Neighbor | None = None
    leader_of_right_leader: Neighbor | None = None

    FIRST_TIER = ("leader", "follower", "left_leader", "left_follower", "right_leader", "right_follower")
    SECOND_TIER = ("leader_of_leader", "leader_of_left_leader", "leader_of_right_leader")

    def slots(self) -> dict[str, Neighbor | None]:
        return {name: getattr(self, name) for name in self.FIRST_TIER + self.SECOND_TIER}


@dataclass
class WorldState:
    road: RoadConfig
    rng: np.random.Generator
    flow_rng: np.random.Generator
    cv_params: VehicleParams = CV_PARAMS
    time_step: int = 0
    vehicles: dict[int, VehicleState] = field(default_factory=dict)
    collision_log: list[tuple[int, tuple[int, int]]] = field(default_factory=list)
    travel_times: dict[int, float] = field(default_factory=dict)
    spawned: int = 0
    exited: int = 0
    pending: int = 0
    _next_id: int = 0
    _lanes: list[list[VehicleState]] | None = field(default=None, repr=False)

    @classmethod
    def create(cls, road: RoadConfig, seed_or_rngs, cv_params: VehicleParams = CV_PARAMS) -> "WorldState":
        """Build an empty world; accepts an int seed or a ``(rng, flow_rng)`` pair."""
        if isinstance(seed_or_rngs, tuple):
            rng, flow_rng = seed_or_rngs
        else:
            rng, flow_rng = (np.random.Generator(np.random.PCG64(s))
                             for s in np.random.SeedSequence(seed_or_rngs).spawn(2))
        return cls(road=road, rng=rng, flow_rng=flow_rng, cv_params=cv_params)

    def get(self, vid: int) -> VehicleState:
        try:
            return self.vehicles[vid]
        except KeyError:
            raise UnknownVehicleError(vid) from None

    def invalidate(self) -> None:
        self._lanes = None

    def lanes(self) -> list[list[VehicleState]]:
        """Per-lane vehicle lists ordered front first (descending position, then id)."""
        if self._lanes is None:
            lanes: list[list[VehicleState]] = [[] for _ in range(self.road.lane_count)]
            for v in self.vehicles.values():
                lanes[v.lane].append(v)
            for lane in lanes:
                lane.sort(key=lambda u: (-u.pos_m, u.id))
            self._lanes = lanes
        return self._lanes

    def add_vehicle(self, params: VehicleParams, lane: int, pos_m: float, speed: float) -> VehicleState:
        if not 0 <= lane < self.road.lane_count:
            raise ValueError(f"lane {lane} outside [0, {self.road.lane_count})")
        v = VehicleState(self._next_id, lane, float(pos_m), float(speed), params, entry_step=self.time_step)
        self._next_id += 1
        self.vehicles[v.id] = v
        self.spawned += 1
        self.invalidate()
        return v

    def entry_clear(self, lane: int, params: VehicleParams) -> bool:
        """Whether a vehicle may be inserted at position 0 of ``lane``."""
        vehicles = self.lanes()[lane]
        if not vehicles:
            return True
        return vehicles[-1].pos_m > params.min_gap_m + params.length_m

    def insert_at_entry(self, params: VehicleParams, lane: int, speed: float) -> VehicleState | None:
        if not self.entry_clear(lane, params):
            return None
        return self.add_vehicle(params, lane, 0.0, speed)

    def digest(self) -> str:
        """Hash of the full kinematic state plus generator states."""
        h = hashlib.sha256()
        h.update(struct.pack("<qqqq", self.time_step, self.spawned, self.exited, self.pending))
        for vid in sorted(self.vehicles):
            v = self.vehicles[vid]
            h.update(struct.pack("<qqddq", v.id, v.lane, v.pos_m, v.speed, v.lane_changes))
        h.update(repr(self.rng.bit_generator.state).encode())
        h.update(repr(self.flow_rng.bit_generator.state).encode())
        return h.hexdigest()


def safe_speed(gap_m: float, leader_speed: float, follower: VehicleParams, dt: float,
               follower_speed: float | None = None) -> float:
    """Krauss safe speed behind a leader, clamped to ``[0, follower.max_speed]``.

    The reaction time equals ``dt``.  ``follower_speed`` enters the mean speed
    term; when unknown it defaults to the leader's speed.
    """
    if gap_m < 0:
        raise ValueError(f"gap_m must be >= 0, got {gap_m}")
    tau = dt
    v_follow = leader_speed if follower_speed is None else follower_speed
    v_avg = 0.5 * (leader_speed + v_follow)
    v = leader_speed + (gap_m - leader_speed * tau) / (v_avg / follower.decel_limit + tau)
    return min(max(v, 0.0), follower.max_speed)


def following_speed(follower: VehicleState, leader_speed: float, net_gap: float, dt: float) -> float:
    """Safe speed of ``follower`` keeping its minimum gap to a leader ``net_gap`` ahead."""
    return safe_speed(max(0.0, net_gap - follower.params.min_gap_m), leader_speed,
                      follower.params, dt, follower.speed)


def _nearest(lane: list[VehicleState], ego: VehicleState) -> tuple[VehicleState | None, VehicleState | None]:
    """Nearest vehicle ahead (dpos > 0) and behind (dpos <= 0) of ``ego``; ties go to the lowest id."""
    ahead = behind = None
    x = ego.pos_m
    for u in lane:  # front first, equal positions by ascending id
        if u is ego:
            continue
        if u.pos_m > x:
            if ahead is None or u.pos_m < ahead.pos_m:
                ahead = u
        else:
            behind = u
            break
    return ahead, behind


def _leader_gap(ego: VehicleState, leader: VehicleState | None) -> Neighbor | None:
    if leader is None:
        return None
    return Neighbor(leader, leader.rear_m - ego.pos_m)


def _follower_gap(ego: VehicleState, follower: VehicleState | None) -> Neighbor | None:
    if follower is None:
        return None
    return Neighbor(follower, ego.rear_m - follower.pos_m)


def neighbors(world: WorldState, vid: int) -> NeighborSet:
    ego = world.get(vid)
    lanes = world.lanes()
    out = NeighborSet()
    own = lanes[ego.lane]
    leader, follower = _nearest(own, ego)
    out.leader, out.follower = _leader_gap(ego, leader), _follower_gap(ego, follower)
    if leader is not None:
        out.leader_of_leader = _leader_gap(ego, _nearest(own, leader)[0])
    for side, lane_idx in (("left", ego.lane + 1), ("right", ego.lane - 1)):
        if not 0 <= lane_idx < world.road.lane_count:
            continue
        side_leader, side_follower = _nearest(lanes[lane_idx], ego)
        setattr(out, f"{side}_leader", _leader_gap(ego, side_leader))
        setattr(out, f"{side}_follower", _follower_gap(ego, side_follower))
        if side_leader is not None:
            second = _nearest(lanes[lane_idx], side_leader)[0]
            setattr(out, f"leader_of_{side}_leader", _leader_gap(ego, second))
    return out


def lane_change_ok(lanes: list[list[VehicleState]], v: VehicleState, target_lane: int, dt: float) -> bool:
    """Gap and speed conditions for moving ``v`` into ``target_lane`` of ``lanes``."""
    if not 0 <= target_lane < len(lanes):
        return False
    leader, follower = _nearest(lanes[target_lane], v)
    if leader is not None:
        gap = leader.rear_m - v.pos_m
        if gap < v.params.min_gap_m:
            return False
        if v.speed > following_speed(v, leader.speed, gap, dt):
            return False
    if follower is not None:
        gap = v.rear_m - follower.pos_m
        if gap < follower.params.min_gap_m:
            return False
        if follower.speed > following_speed(follower, v.speed, gap, dt):
            return False
    return True


def _target_lane(v: VehicleState, direction: str) -> int:
    if direction == "left":
        return v.lane + 1
    if direction == "right":
        return v.lane - 1
    raise ValueError(f"direction must be 'left' or 'right', got {direction!r}")


def check_lane_change_safety(world: WorldState, vid: int, direction: str) -> bool:
    v = world.get(vid)
    target = _target_lane(v, direction)
    if not 0 <= target < world.road.lane_count:
        raise ContractViolation(f"vehicle {vid} has no lane to the {direction} of lane {v.lane}")
    return lane_change_ok(world.lanes(), v, target, world.road.step_dt)


def apply_lane_change(world: WorldState, vid: int, direction: str) -> None:
    if not check_lane_change_safety(world, vid, direction):
        raise ContractViolation(f"unsafe {direction} lane change for vehicle {vid}")
    v = world.vehicles[vid]
    v.lane = _target_lane(v, direction)
    v.lane_changes += 1
    world.invalidate()


def step_longitudinal(world: WorldState, commanded_accel: Mapping[int, float] | None = None,
                      boosted: Iterable[int] = ()) -> list[VehicleState]:
    """Advance every vehicle by one step and return the vehicles that left the road.

    Vehicles absent from ``commanded_accel`` request their own acceleration
    limit.  CVs in ``boosted`` skip driver imperfection for this step.  Each
    lane is processed front to back so a follower's safe speed is computed
    against its leader's already-updated speed.
    """
    commanded_accel = commanded_accel or {}
    boosted = set(boosted)
    dt = world.road.step_dt
    rng = world.rng
    new_speed: dict[int, float] = {}
    for lane in world.lanes():
        leader: VehicleState | None = None
        for v in lane:
            p = v.params
            a = commanded_accel.get(v.id, p.accel_limit)
            if not -p.decel_limit - 1e-12 <= a <= p.accel_limit + 1e-12:
                raise ContractViolation(f"commanded accel {a} outside limits for vehicle {v.id}")
            target = min(v.speed + a * dt, p.max_speed)
            if leader is not None:
                target = min(target, following_speed(v, new_speed[leader.id], leader.rear_m - v.pos_m, dt))
            target = max(target, 0.0)
            if p.sigma > 0 and v.id not in boosted:
                target = max(target - p.sigma * p.accel_limit * dt * rng.random(), 0.0)
            new_speed[v.id] = target
            leader = v
    exited = []
    length = world.road.length_m
    world.time_step += 1
    for v in list(world.vehicles.values()):
        v.speed = new_speed[v.id]
        v.pos_m += v.speed * dt
        if v.pos_m > length:
            exited.append(v)
            del world.vehicles[v.id]
            world.travel_times[v.id] = (world.time_step - v.entry_step) * dt
            world.exited += 1
    world.invalidate()
    return exited


def spawn_traffic(world: WorldState, flow: FlowConfig) -> int:
    """Bernoulli arrivals at the road entry; blocked insertions stay queued."""
    p = min(1.0, flow.arrival_rate * world.road.step_dt)
    rng = world.flow_rng
    if p > 0 and rng.random() < p:
        world.pending += 1
    if world.pending == 0:
        return 0
    lane = int(rng.integers(world.road.lane_count))
    if world.insert_at_entry(world.cv_params, lane, flow.entry_speed) is None:
        return 0
    world.pending -= 1
    return 1


def detect_collisions(world: WorldState) -> list[tuple[int, int]]:
    """Same-lane (follower, leader) pairs whose bodies overlap; appended to the log."""
    pairs = []
    for lane in world.lanes():
        for i, leader in enumerate(lane):
            for follower in lane[i + 1:]:
                if follower.pos_m <= leader.rear_m:
                    break
                pairs.append((follower.id, leader.id))
    world.collision_log.extend((world.time_step, pair) for pair in pairs)
    return pairs
