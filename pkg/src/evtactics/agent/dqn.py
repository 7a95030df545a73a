"""Deep Q-learning agent: evaluate/target networks, replay, Adam, target sync."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from evtactics.agent.actions import Action
from evtactics.agent.network import (
    LAYER_SIZES,
    Adam,
    NonFiniteError,
    QNetworkParams,
    backward,
    forward,
    huber_loss,
)
from evtactics.agent.policy import EpsilonSchedule, epsilon_update, select_action
from evtactics.agent.replay import ReplayBuffer, Transition


@dataclass(frozen=True)
class TrainingConfig:
    gamma: float = 0.9
    epsilon_start: float = 0.9
    epsilon_decrement: float = 4e-6
    epsilon_floor: float = 0.1
    target_sync_period: int = 5000
    batch_size: int = 32
    replay_capacity: int = 2000
    learning_rate_initial: float = 1e-3
    learning_rate_decay_factor: float = 0.99
    learning_rate_decay_period: int = 1000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    max_training_steps: int = 200_000
    checkpoint_period: int = 50_000
    paper_literal_sync: bool = False

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0 <= self.epsilon_floor <= self.epsilon_start <= 1:
            raise ValueError(
                f"need 0 <= epsilon_floor ({self.epsilon_floor}) <= epsilon_start ({self.epsilon_start}) <= 1")
        if self.epsilon_decrement < 0:
            raise ValueError(f"epsilon_decrement must be >= 0, got {self.epsilon_decrement}")
        for name in ("target_sync_period", "batch_size", "replay_capacity", "learning_rate_decay_period",
                     "checkpoint_period"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.batch_size > self.replay_capacity:
            raise ValueError(f"batch_size ({self.batch_size}) exceeds replay_capacity ({self.replay_capacity})")
        if not self.learning_rate_initial > 0:
            raise ValueError(f"learning_rate_initial must be > 0, got {self.learning_rate_initial}")
        if not 0 < self.learning_rate_decay_factor <= 1:
            raise ValueError(f"learning_rate_decay_factor must lie in (0, 1], got {self.learning_rate_decay_factor}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_epsilon > 0):
            raise ValueError("adam betas must lie in [0, 1) and adam_epsilon must be > 0")
        if self.max_training_steps < 0:
            raise ValueError(f"max_training_steps must be >= 0, got {self.max_training_steps}")

    @property
    def epsilon_schedule(self) -> EpsilonSchedule:
        return EpsilonSchedule(self.epsilon_start, self.epsilon_decrement, self.epsilon_floor)


def td_target(t: Transition, target_params: QNetworkParams, gamma: float) -> float:
    if t.terminal:
        return float(t.r_t)
    return float(t.r_t + gamma * np.max(forward(target_params, t.o_next)))


def td_targets(rewards, next_obs, terminal, target_params: QNetworkParams, gamma: float) -> np.ndarray:
    """Batched version of :func:`td_target`."""
    next_q = forward(target_params, next_obs).max(axis=1)
    return rewards + gamma * np.where(terminal, 0.0, next_q)


def sync_target(evaluate_params: QNetworkParams) -> QNetworkParams:
    return evaluate_params.copy()


class DQNAgent:
    """Learner state: both networks, optimizer, replay buffer, counters and RNG."""

    def __init__(self, cfg: TrainingConfig, rng: np.random.Generator, sizes=LAYER_SIZES,
                 params: QNetworkParams | None = None):
        self.cfg = cfg
        self.rng = rng
        self.evaluate = QNetworkParams.initialize(rng, sizes) if params is None else params
        self.target = sync_target(self.evaluate)
        self.optimizer = Adam(cfg.learning_rate_initial, cfg.learning_rate_decay_factor,
                              cfg.learning_rate_decay_period, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon)
        self.buffer = ReplayBuffer(cfg.replay_capacity, sizes[0])
        self.env_steps = 0
        self.learn_steps = 0
        self.epsilon = epsilon_update(0, cfg.epsilon_schedule)

    @property
    def acting_params(self) -> QNetworkParams:
        return self.target if self.cfg.paper_literal_sync else self.evaluate

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        return forward(self.acting_params, obs)

    def act(self, obs: np.ndarray, mask: np.ndarray, greedy: bool = False) -> tuple[Action, bool]:
        eps = 0.0 if greedy else self.epsilon
        return select_action(self.q_values(obs), mask, eps, self.rng)

    def end_step(self) -> None:
        """Advance the environment-step counter and anneal epsilon."""
        self.env_steps += 1
        self.epsilon = epsilon_update(self.env_steps, self.cfg.epsilon_schedule)

    def store(self, t: Transition) -> None:
        self.buffer.store(t)

    def learn(self) -> float | None:
        """One gradient step on a replay mini-batch; returns the batch loss, or None if skipped."""
        batch = self.buffer.sample_batch(self.rng, self.cfg.batch_size)
        if batch is None:
            return None
        obs, actions, rewards, next_obs, terminal = batch
        targets = td_targets(rewards, next_obs, terminal, self.target, self.cfg.gamma)
        cache: list = []
        q = forward(self.evaluate, obs, cache)
        loss = float(np.mean(huber_loss(targets, q[np.arange(len(actions)), actions])))
        if not np.isfinite(loss):
            raise NonFiniteError(f"non-finite loss at learning step {self.learn_steps}")
        grads = backward(self.evaluate, cache, q, actions, targets)
        self.optimizer.step(self.evaluate, grads)
        self.learn_steps += 1
        if self.learn_steps % self.cfg.target_sync_period == 0:
            self.sync()
        return loss

    def sync(self) -> None:
        if self.cfg.paper_literal_sync:
            self.evaluate = sync_target(self.target)
        else:
            self.target = sync_target(self.evaluate)
