"""Per-step reward terms for the EV agent."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from evtactics.agent.actions import LANE_CHANGES, Action

SPEED_TOLERANCE = 1e-9


@dataclass(frozen=True)
class RewardConfig:
    d_total: float = 2000.0
    v_max: float = 40.0
    v_min: float = 0.0
    lane_change_penalty: float = -1.0
    cooperative_enabled: bool = False
    denominator_epsilon: float = 1e-6
    velocity_reward_form: str = "printed"  # or "span": divide by (v_max - v_min)
    velocity_reward_clip: float = 1.0

    def __post_init__(self):
        if not self.d_total > 0:
            raise ValueError(f"d_total must be > 0, got {self.d_total}")
        if not self.v_max > self.v_min >= 0:
            raise ValueError(f"need v_max > v_min >= 0, got v_max={self.v_max}, v_min={self.v_min}")
        if not self.denominator_epsilon > 0:
            raise ValueError(f"denominator_epsilon must be > 0, got {self.denominator_epsilon}")
        if self.velocity_reward_form not in ("printed", "span"):
            raise ValueError(f"velocity_reward_form must be 'printed' or 'span', got {self.velocity_reward_form!r}")
        if not self.velocity_reward_clip > 0:
            raise ValueError(f"velocity_reward_clip must be > 0, got {self.velocity_reward_clip}")


@dataclass(frozen=True)
class RewardTerms:
    r_col: float
    r_v: float
    r_lc: float
    r_cor: float

    @property
    def total(self) -> float:
        return reward_total(self)


def reward_collision(d_survive: float, cfg: RewardConfig) -> float:
    if not 0.0 <= d_survive <= cfg.d_total:
        raise ValueError(f"d_survive={d_survive} outside [0, {cfg.d_total}]")
    return (d_survive - cfg.d_total / 2) / cfg.d_total


def reward_velocity(v_current: float, cfg: RewardConfig) -> float:
    if cfg.velocity_reward_form == "printed":
        denom = max(v_current - cfg.v_min, cfg.denominator_epsilon)
    else:
        denom = cfg.v_max - cfg.v_min
    r = (v_current - cfg.v_max / 2) / denom
    return min(max(r, -cfg.velocity_reward_clip), cfg.velocity_reward_clip)


def reward_lane_change(action: Action, v_current: float, cfg: RewardConfig) -> float:
    if action in LANE_CHANGES and abs(v_current - cfg.v_max) <= SPEED_TOLERANCE:
        return cfg.lane_change_penalty
    return 0.0


def reward_cooperative(zone_cvs: Sequence[tuple[float, float]], cfg: RewardConfig) -> float:
    """Average of speed ratios of zone CVs (nearest first) with weights e^-1, e^-2, ..."""
    if not cfg.cooperative_enabled or not zone_cvs:
        return 0.0
    total = sum((v / v_max) * math.exp(-i) for i, (v, v_max) in enumerate(zone_cvs, start=1))
    return total / len(zone_cvs)


def reward_total(terms: RewardTerms) -> float:
    return terms.r_col + terms.r_v + terms.r_lc + terms.r_cor
