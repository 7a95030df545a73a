"""Avoiding strategy: CVs ahead of the EV clear its lane when they safely can."""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from enum import Enum

from evtactics.world import (
    VehicleState,
    WorldState,
    apply_lane_change,
    following_speed,
    lane_change_ok,
)


class Decision(str, Enum):
    ACCELERATE_AWAY = "AccelerateAway"
    LANE_CHANGED_LEFT = "LaneChangedLeft"
    LANE_CHANGED_RIGHT = "LaneChangedRight"
    BLOCKED = "Blocked"


_DIRECTION_DECISION = {"left": Decision.LANE_CHANGED_LEFT, "right": Decision.LANE_CHANGED_RIGHT}


@dataclass(frozen=True)
class AvoidanceConfig:
    priority_distance_m: float = 100.0
    preference: tuple[str, ...] = ("right", "left")

    def __post_init__(self):
        if not self.priority_distance_m > 0:
            raise ValueError(f"priority_distance_m must be > 0, got {self.priority_distance_m}")
        pref = tuple(self.preference)
        if sorted(pref) != ["left", "right"]:
            raise ValueError(f"preference must order 'left' and 'right', got {list(pref)}")
        object.__setattr__(self, "preference", pref)


@dataclass(frozen=True)
class PriorityZone:
    ev_id: int
    distance_m: float = 100.0
    lanes_covered: str = "ev_lane_only"

    def __post_init__(self):
        if not self.distance_m > 0:
            raise ValueError(f"distance_m must be > 0, got {self.distance_m}")


@dataclass
class AvoidanceOutcome:
    decisions: dict[int, Decision] = field(default_factory=dict)  # nearest CV first
    leader_executed_as: bool = True

    @property
    def boosted(self) -> set[int]:
        return {vid for vid, d in self.decisions.items() if d is Decision.ACCELERATE_AWAY}

    @property
    def lane_changes(self) -> list[tuple[int, str]]:
        out = []
        for vid, d in self.decisions.items():
            if d is Decision.LANE_CHANGED_LEFT:
                out.append((vid, "left"))
            elif d is Decision.LANE_CHANGED_RIGHT:
                out.append((vid, "right"))
        return out


def zone_members(world: WorldState, zone: PriorityZone) -> list[VehicleState]:
    """CVs in the EV's lane whose net gap ahead of the EV is below the priority distance."""
    ev = world.get(zone.ev_id)
    members = []
    for v in reversed(world.lanes()[ev.lane]):  # rear first
        if v.pos_m <= ev.pos_m or v.is_ev:
            continue
        if v.rear_m - ev.pos_m >= zone.distance_m:
            break
        members.append(v)
    return members


def _sort_key(u: VehicleState):
    return (-u.pos_m, u.id)


def cv_avoidance_policy(world: WorldState, zone: PriorityZone,
                        preference: tuple[str, ...] = ("right", "left")) -> AvoidanceOutcome:
    """Decide, nearest CV first, how each zone CV gives way.

    Lane changes are checked against a private copy of the lane lists that
    already reflects earlier decisions of this step, so applying them in order
    with :func:`apply_avoidance` passes the same safety checks.  The world is
    not modified.
    """
    members = zone_members(world, zone)
    outcome = AvoidanceOutcome()
    if not members:
        return outcome
    dt = world.road.step_dt
    view = [list(lane) for lane in world.lanes()]
    lane_of = {}
    for cv in members:
        own = lane_of.get(cv.id, cv.lane)
        decision = Decision.BLOCKED
        for direction in preference:
            target = own + 1 if direction == "left" else own - 1
            if lane_change_ok(view, cv, target, dt):
                view[own].remove(cv)
                bisect.insort(view[target], cv, key=_sort_key)
                lane_of[cv.id] = target
                decision = _DIRECTION_DECISION[direction]
                break
        else:
            p = cv.params
            wanted = cv.speed + p.accel_limit * dt
            if cv.speed < p.max_speed:
                leader = None
                for u in view[own]:
                    if u.pos_m > cv.pos_m:
                        leader = u
                    else:
                        break
                if leader is None or wanted <= following_speed(cv, leader.speed, leader.rear_m - cv.pos_m, dt):
                    decision = Decision.ACCELERATE_AWAY
        outcome.decisions[cv.id] = decision
    # the EV's leader is the nearest zone member whenever the zone is occupied
    outcome.leader_executed_as = outcome.decisions[members[0].id] is not Decision.BLOCKED
    return outcome


def apply_avoidance(world: WorldState, outcome: AvoidanceOutcome) -> set[int]:
    """Execute the outcome's lane changes; returns the CVs accelerating away."""
    for vid, direction in outcome.lane_changes:
        apply_lane_change(world, vid, direction)
    return outcome.boosted


def as_feedback(outcome: AvoidanceOutcome | None) -> float:
    if outcome is None:
        return 0.0
    return 1.0 if outcome.leader_executed_as else 0.0
