"""Action masks, epsilon-greedy selection and the safety gate for the EV."""
from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal

import numpy as np

from evtactics.agent.actions import ACCEL_STEP, N_ACTIONS, Action
from evtactics.world import WorldState, check_lane_change_safety, following_speed, neighbors


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 0.9
    decrement: float = 4e-6
    floor: float = 0.1


def epsilon_update(step: int, cfg: EpsilonSchedule = EpsilonSchedule()) -> float:
    """Linear annealing, computed in decimal so the floor is hit exactly."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    eps = Decimal(repr(cfg.start)) - Decimal(repr(cfg.decrement)) * step
    return max(float(eps), cfg.floor)


def rule_mask(world: WorldState, ev_id: int) -> np.ndarray:
    """Boolean mask over actions; False marks actions breaking road or speed rules."""
    ev = world.get(ev_id)
    dt = world.road.step_dt
    mask = np.ones(N_ACTIONS, dtype=bool)
    if ev.lane >= world.road.lane_count - 1:
        mask[Action.L] = False
    if ev.lane <= 0:
        mask[Action.R] = False
    if ev.speed + ACCEL_STEP * dt > ev.params.max_speed:
        mask[Action.A] = False
    if ev.speed - ACCEL_STEP * dt < 0:
        mask[Action.D] = False
    return mask


def select_action(qvalues: np.ndarray, mask: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> tuple[Action, bool]:
    """Epsilon-greedy choice restricted to permitted actions.

    Returns the action and whether the mask overrode the greedy choice
    (the best unmasked-Q action was forbidden).  Ties go to the lowest index.
    """
    allowed = np.flatnonzero(mask)
    if allowed.size == 0:
        raise ValueError("mask forbids every action")
    if epsilon > 0 and rng.random() < epsilon:
        return Action(int(allowed[rng.integers(allowed.size)])), False
    q = np.asarray(qvalues, dtype=float)
    best = int(allowed[np.argmax(q[allowed])])
    return Action(best), not mask[int(np.argmax(q))]


def safety_gate(world: WorldState, ev_id: int, action: Action) -> bool:
    """Whether the simulator accepts ``action``; a rejected action is replaced by N."""
    if action is Action.N:
        return True
    if action in (Action.L, Action.R):
        ev = world.get(ev_id)
        target = ev.lane + (1 if action is Action.L else -1)
        if not 0 <= target < world.road.lane_count:
            return False
        return check_lane_change_safety(world, ev_id, "left" if action is Action.L else "right")
    if action is Action.A:
        ev = world.get(ev_id)
        leader = neighbors(world, ev_id).leader
        if leader is None:
            return True
        wanted = ev.speed + ACCEL_STEP * world.road.step_dt
        return wanted <= following_speed(ev, leader.vehicle.speed, leader.gap_m, world.road.step_dt)
    return True  # braking never violates the safe speed
