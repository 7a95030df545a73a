"""Episodes, training, evaluation and metric export for the five method variants."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from evtactics import seeding
from evtactics.agent.actions import LANE_CHANGES, Action, commanded_accel
from evtactics.agent.dqn import DQNAgent
from evtactics.agent.network import QNetworkParams, forward
from evtactics.agent.policy import rule_mask, safety_gate, select_action
from evtactics.agent.replay import Transition
from evtactics.avoidance import (
    AvoidanceOutcome,
    PriorityZone,
    apply_avoidance,
    as_feedback,
    cv_avoidance_policy,
    zone_members,
)
from evtactics.config import RunConfig
from evtactics.perception import OBS_SIZE, observe
from evtactics.rewards import (
    RewardTerms,
    reward_collision,
    reward_cooperative,
    reward_lane_change,
    reward_velocity,
)
from evtactics.world import (
    FlowConfig,
    WorldState,
    apply_lane_change,
    detect_collisions,
    spawn_traffic,
    step_longitudinal,
)

REFERENCE_DISTANCE_M = 2000.0  # lane changes are reported per 2 km


class MethodVariant(str, Enum):
    BASELINE = "Baseline"
    SCDQN = "SCDQN"
    AVOIDING_STRATEGY = "AvoidingStrategy"
    SCDQN_AS = "SCDQN_AS"
    SCDQN_AS_COOP = "SCDQN_AS_Coop"

    @property
    def uses_learner(self) -> bool:
        return self in (MethodVariant.SCDQN, MethodVariant.SCDQN_AS, MethodVariant.SCDQN_AS_COOP)

    @property
    def avoidance_enabled(self) -> bool:
        return self in (MethodVariant.AVOIDING_STRATEGY, MethodVariant.SCDQN_AS, MethodVariant.SCDQN_AS_COOP)

    @property
    def cooperative(self) -> bool:
        return self is MethodVariant.SCDQN_AS_COOP

    @classmethod
    def parse(cls, name: str) -> "MethodVariant":
        for v in cls:
            if v.value.lower() == name.lower() or v.name.lower() == name.lower():
                return v
        raise ValueError(f"unknown variant {name!r} (choose from {', '.join(v.value for v in cls)})")


LEARNER_VARIANTS = tuple(v for v in MethodVariant if v.uses_learner)


@dataclass(frozen=True)
class TraceRow:
    time_s: float
    vehicle_id: int
    kind: str
    lane: int
    pos_m: float
    speed: float


@dataclass
class StepResult:
    terms: RewardTerms
    action: Action
    executed: Action
    accepted: bool
    exited: bool
    collided: bool
    timed_out: bool

    @property
    def done(self) -> bool:
        return self.exited or self.collided or self.timed_out

    @property
    def terminal(self) -> bool:
        return self.exited or self.collided


class EpisodeEnv:
    """One EV traversal: warm-up inflow, EV insertion, then agent-paced steps."""

    def __init__(self, cfg: RunConfig, variant: MethodVariant, seed: int, flow_rate: float | None = None,
                 record_trace: bool = False):
        self.cfg = cfg
        self.variant = variant
        rate = cfg.flow.arrival_rate if flow_rate is None else flow_rate
        self.flow = FlowConfig(rate, cfg.flow.entry_speed, cfg.flow.lane_assignment)
        self.reward_cfg = cfg.reward_for(variant.cooperative)
        road = cfg.road
        self.world = WorldState.create(road, (seeding.generator(seed, "world"), seeding.generator(seed, "flow")),
                                       cv_params=cfg.cv)
        dt = road.step_dt
        for _ in range(int(round(cfg.experiment.warmup_s / dt))):
            self._tick_background()
        lane_rng = seeding.generator(seed, "ev-lane")
        ev = None
        while ev is None:
            free = [lane for lane in range(road.lane_count) if self.world.entry_clear(lane, cfg.ev)]
            if free:
                ev = self.world.add_vehicle(cfg.ev, free[int(lane_rng.integers(len(free)))], 0.0,
                                            min(self.flow.entry_speed, cfg.ev.max_speed))
            else:
                self._tick_background()
        self.ev = ev
        self.ev_id = ev.id
        self.zone = PriorityZone(ev.id, cfg.avoidance.priority_distance_m)
        self.step_cap = int(math.ceil(cfg.experiment.step_cap_factor * road.length_m / cfg.ev.max_speed / dt))
        self.steps = 0
        self.done = False
        self._outcome: AvoidanceOutcome | None = None
        self._outcome_ready = False
        self.trace: list[TraceRow] | None = [] if record_trace else None
        self._record()

    def _tick_background(self) -> None:
        step_longitudinal(self.world)
        spawn_traffic(self.world, self.flow)
        detect_collisions(self.world)

    def _record(self) -> None:
        if self.trace is None:
            return
        t = self.world.time_step * self.cfg.road.step_dt
        vehicles = sorted(self.world.vehicles.values(), key=lambda v: v.id)
        if self.ev_id not in self.world.vehicles:
            vehicles.append(self.ev)
        for v in vehicles:
            self.trace.append(TraceRow(t, v.id, v.params.kind.value, v.lane, v.pos_m, v.speed))

    def avoidance_outcome(self) -> AvoidanceOutcome | None:
        if not self._outcome_ready:
            self._outcome = None
            if self.variant.avoidance_enabled:
                self._outcome = cv_avoidance_policy(self.world, self.zone, self.cfg.avoidance.preference)
            self._outcome_ready = True
        return self._outcome

    def observe(self) -> np.ndarray:
        flag = as_feedback(self.avoidance_outcome()) if self.variant.avoidance_enabled else 0.0
        return observe(self.world, self.ev_id, flag, self.cfg.perception)

    def mask(self) -> np.ndarray:
        return rule_mask(self.world, self.ev_id)

    def step(self, action: Action) -> StepResult:
        if self.done:
            raise RuntimeError("episode already finished")
        world = self.world
        action = Action(action)
        outcome = self.avoidance_outcome()
        boosted = apply_avoidance(world, outcome) if outcome is not None else set()
        ev = self.ev
        speed_before = ev.speed
        accepted = safety_gate(world, self.ev_id, action)
        executed = action if accepted else Action.N
        if executed in LANE_CHANGES:
            apply_lane_change(world, self.ev_id, "left" if executed is Action.L else "right")
        exited = step_longitudinal(world, {self.ev_id: commanded_accel(executed)}, boosted)
        spawn_traffic(world, self.flow)
        collisions = detect_collisions(world)
        self._outcome_ready = False
        self.steps += 1

        ev_exited = any(v is ev for v in exited)
        collided = any(self.ev_id in pair for pair in collisions)
        rc = self.reward_cfg
        d_survive = rc.d_total if ev_exited else min(max(ev.pos_m, 0.0), rc.d_total)
        zone = [] if ev_exited or not rc.cooperative_enabled else [
            (v.speed, v.params.max_speed) for v in zone_members(world, self.zone)]
        terms = RewardTerms(
            reward_collision(d_survive, rc),
            reward_velocity(ev.speed, rc),
            reward_lane_change(executed, speed_before, rc),
            reward_cooperative(zone, rc),
        )
        timed_out = not (ev_exited or collided) and self.steps >= self.step_cap
        self.done = ev_exited or collided or timed_out
        self._record()
        return StepResult(terms, action, executed, accepted, ev_exited, collided, timed_out)


@dataclass
class EpisodeMetrics:
    seed: int
    flow_rate: float
    travel_time_s: float | None
    collided: bool
    timed_out: bool
    ev_lane_changes: int
    steps: int
    total_reward: float
    trace: list[TraceRow] = field(default_factory=list)

    @property
    def completed(self) -> bool:
        return self.travel_time_s is not None


def _rule_action(mask: np.ndarray) -> Action:
    """Lane-keeping driver: accelerate whenever the rules allow it."""
    return Action.A if mask[Action.A] else Action.N


def run_episode(cfg: RunConfig, variant: MethodVariant, seed: int, flow_rate: float | None = None,
                params: QNetworkParams | None = None, record_trace: bool = False) -> EpisodeMetrics:
    """Greedy evaluation episode; learner variants need ``params``."""
    variant = MethodVariant(variant)
    if variant.uses_learner and params is None:
        raise ValueError(f"variant {variant.value} needs network parameters (a checkpoint)")
    env = EpisodeEnv(cfg, variant, seed, flow_rate, record_trace)
    total = 0.0
    while not env.done:
        mask = env.mask()
        if variant.uses_learner:
            action, _ = select_action(forward(params, env.observe()), mask, 0.0, None)
        else:
            action = _rule_action(mask)
        result = env.step(action)
        total += result.terms.total
    ev = env.ev
    travel = env.world.travel_times.get(env.ev_id)
    return EpisodeMetrics(seed, env.flow.arrival_rate, travel, result.collided, result.timed_out,
                          ev.lane_changes, env.steps, total, env.trace or [])


@dataclass(frozen=True)
class AggregateMetrics:
    variant: str
    flow_rate: float
    episodes: int
    completed: int
    mean_travel_time_s: float
    std_travel_time_s: float
    collision_rate_pct: float
    timeout_rate_pct: float
    lane_changes_per_2km: float
    seed_first: int
    seed_last: int

    @property
    def failure_rate_pct(self) -> float:
        return self.collision_rate_pct + self.timeout_rate_pct


def aggregate(episodes: Sequence[EpisodeMetrics], variant: MethodVariant | str, road_length_m: float) -> AggregateMetrics:
    if not episodes:
        raise ValueError("no episodes to aggregate")
    n = len(episodes)
    times = np.array([e.travel_time_s for e in episodes if e.completed], dtype=float)
    lcs = np.array([e.ev_lane_changes for e in episodes if e.completed], dtype=float)
    lcs = lcs * (REFERENCE_DISTANCE_M / road_length_m)
    seeds = [e.seed for e in episodes]
    return AggregateMetrics(
        variant=MethodVariant(variant).value,
        flow_rate=episodes[0].flow_rate,
        episodes=n,
        completed=len(times),
        mean_travel_time_s=float(times.mean()) if len(times) else math.nan,
        std_travel_time_s=float(times.std(ddof=1)) if len(times) > 1 else 0.0,
        collision_rate_pct=100.0 * sum(e.collided for e in episodes) / n,
        timeout_rate_pct=100.0 * sum(e.timed_out for e in episodes) / n,
        lane_changes_per_2km=float(lcs.mean()) if len(lcs) else math.nan,
        seed_first=min(seeds),
        seed_last=max(seeds),
    )


def _episode_job(args):
    cfg, variant, seed, flow_rate, params = args
    return run_episode(cfg, variant, seed, flow_rate, params)


def evaluate(cfg: RunConfig, variant: MethodVariant, n_episodes: int, seed_base: int,
             flow_rate: float | None = None, params: QNetworkParams | None = None,
             workers: int | None = None) -> tuple[AggregateMetrics, list[EpisodeMetrics]]:
    """Greedy, non-learning evaluation over seeds ``seed_base .. seed_base + n - 1``."""
    variant = MethodVariant(variant)
    if n_episodes < 1:
        raise ValueError(f"n_episodes must be >= 1, got {n_episodes}")
    if variant.uses_learner and params is None:
        raise ValueError(f"variant {variant.value} needs a checkpoint for evaluation")
    jobs = [(cfg, variant, seed_base + i, flow_rate, params) for i in range(n_episodes)]
    workers = cfg.experiment.workers if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            episodes = list(pool.map(_episode_job, jobs, chunksize=max(1, n_episodes // (4 * workers))))
    else:
        episodes = [_episode_job(job) for job in jobs]
    return aggregate(episodes, variant, cfg.road.length_m), episodes


@dataclass(frozen=True)
class StepRecord:
    step: int
    episode: int
    epsilon: float
    loss: float | None
    terms: RewardTerms
    action: Action
    executed: Action
    mask: str
    overridden: bool
    stored: bool


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    end_step: int
    flow_rate: float
    steps: int
    travel_time_s: float | None
    collided: bool
    timed_out: bool
    total_reward: float
    lane_changes: int
    rolling_travel_time_s: float


@dataclass
class TrainingResult:
    agent: DQNAgent
    losses: np.ndarray
    loss_steps: np.ndarray
    episodes: list[EpisodeRecord]


def train(cfg: RunConfig, variant: MethodVariant, seed: int | None = None, max_steps: int | None = None,
          on_step: Callable[[StepRecord], None] | None = None,
          on_checkpoint: Callable[[DQNAgent, int], None] | None = None) -> TrainingResult:
    """Run the learning loop over consecutive episodes until the step budget is spent."""
    variant = MethodVariant(variant)
    if not variant.uses_learner:
        raise ValueError(f"variant {variant.value} has no learner to train")
    seed = cfg.seed if seed is None else seed
    budget = cfg.training.max_training_steps if max_steps is None else max_steps
    agent = DQNAgent(cfg.training, seeding.generator(seed, "agent", variant.value))
    flow_rng = seeding.generator(seed, "train-flow", variant.value)
    losses: list[float] = []
    loss_steps: list[int] = []
    episodes: list[EpisodeRecord] = []
    recent: list[float] = []
    window = cfg.experiment.rolling_window
    episode = 0
    while agent.env_steps < budget:
        flows = cfg.experiment.train_flows
        rate = flows[int(flow_rng.integers(len(flows)))]
        env = EpisodeEnv(cfg, variant, seeding.derive_int(seed, "train-episode", variant.value, episode), rate)
        obs = env.observe()
        total = 0.0
        while True:
            mask = env.mask()
            action, overridden = agent.act(obs, mask)
            result = env.step(action)
            next_obs = env.observe() if not result.done else _final_obs(env, obs)
            reward = result.terms.total
            total += reward
            stored = result.accepted and not overridden
            if stored:
                agent.store(Transition(obs, int(action), reward, next_obs, result.terminal))
            loss = agent.learn()
            if loss is not None:
                losses.append(loss)
                loss_steps.append(agent.env_steps)
            if on_step is not None:
                on_step(StepRecord(agent.env_steps, episode, agent.epsilon, loss, result.terms, action,
                                   result.executed, "".join("1" if m else "0" for m in mask), overridden, stored))
            agent.end_step()
            if on_checkpoint is not None and agent.env_steps % cfg.training.checkpoint_period == 0:
                on_checkpoint(agent, agent.env_steps)
            obs = next_obs
            if result.done or agent.env_steps >= budget:
                break
        travel = env.world.travel_times.get(env.ev_id)
        if travel is not None:
            recent.append(travel)
            del recent[:-window]
        episodes.append(EpisodeRecord(
            episode, agent.env_steps, rate, env.steps, travel, result.collided, result.timed_out, total,
            env.ev.lane_changes, float(np.mean(recent)) if recent else math.nan))
        episode += 1
    return TrainingResult(agent, np.array(losses), np.array(loss_steps, dtype=np.int64), episodes)


def _final_obs(env: EpisodeEnv, fallback: np.ndarray) -> np.ndarray:
    """Observation after a terminal step; the EV may already have left the road."""
    if env.ev_id in env.world.vehicles:
        return env.observe()
    return np.zeros(OBS_SIZE) if fallback is None else fallback.copy()


TRACE_COLUMNS = ("time_s", "vehicle_id", "kind", "lane", "pos_m", "speed")


def export_traces(rows: Iterable[TraceRow], path) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRACE_COLUMNS)
            for r in rows:
                writer.writerow((repr(r.time_s), r.vehicle_id, r.kind, r.lane, repr(r.pos_m), repr(r.speed)))
    except OSError as exc:
        raise OSError(f"cannot write trace file {path}: {exc.strerror}") from exc
    return path


def read_traces(path) -> list[TraceRow]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        return [TraceRow(float(r["time_s"]), int(r["vehicle_id"]), r["kind"], int(r["lane"]),
                         float(r["pos_m"]), float(r["speed"])) for r in reader]


METRIC_COLUMNS = ("variant", "flow_rate", "episodes", "completed", "mean_travel_time_s", "std_travel_time_s",
                  "collision_rate_pct", "timeout_rate_pct", "lane_changes_per_2km", "seed_first", "seed_last")


def write_metrics(rows: Sequence[AggregateMetrics], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for m in rows:
            writer.writerow([getattr(m, c) if not isinstance(getattr(m, c), float) else repr(getattr(m, c))
                             for c in METRIC_COLUMNS])
    return path


def format_table(rows: Sequence[AggregateMetrics]) -> str:
    head = f"{'Method':<18s}{'Flow (veh/s)':>13s}{'Avg Travel Time/s':>19s}{'Collision Rate/%':>18s}" \
           f"{'Timeout/%':>11s}{'Lane Changes/2km':>18s}{'Episodes':>10s}"
    lines = [head, "-" * len(head)]
    for m in rows:
        lines.append(f"{m.variant:<18s}{m.flow_rate:>13.2f}{m.mean_travel_time_s:>19.1f}"
                     f"{m.collision_rate_pct:>18.1f}{m.timeout_rate_pct:>11.1f}"
                     f"{m.lane_changes_per_2km:>18.2f}{m.episodes:>10d}")
    return "\n".join(lines)


def compare(cfg: RunConfig, params_by_variant: dict[MethodVariant, QNetworkParams] | None = None,
            n_episodes: int | None = None) -> list[AggregateMetrics]:
    """All five variants at every configured flow; learners are trained first when no parameters are given."""
    params_by_variant = dict(params_by_variant or {})
    for variant in LEARNER_VARIANTS:
        if variant not in params_by_variant:
            params_by_variant[variant] = train(cfg, variant).agent.evaluate
    n = cfg.experiment.eval_episodes if n_episodes is None else n_episodes
    seed_base = seeding.derive_int(cfg.seed, "evaluation") % 1_000_000_000
    rows = []
    for variant in MethodVariant:
        for rate in cfg.experiment.flows:
            agg, _ = evaluate(cfg, variant, n, seed_base, rate, params_by_variant.get(variant))
            rows.append(agg)
    return rows
