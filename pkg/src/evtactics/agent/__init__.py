from evtactics.agent.actions import ACCEL_STEP, N_ACTIONS, Action, commanded_accel
from evtactics.agent.dqn import DQNAgent, TrainingConfig, sync_target, td_target, td_targets
from evtactics.agent.network import (
    LAYER_SIZES,
    Adam,
    NonFiniteError,
    QNetworkParams,
    backward,
    batch_loss,
    forward,
    huber_grad,
    huber_loss,
)
from evtactics.agent.policy import EpsilonSchedule, epsilon_update, rule_mask, safety_gate, select_action
from evtactics.agent.replay import ReplayBuffer, Transition

__all__ = [
    "ACCEL_STEP", "N_ACTIONS", "Action", "commanded_accel",
    "DQNAgent", "TrainingConfig", "sync_target", "td_target", "td_targets",
    "LAYER_SIZES", "Adam", "NonFiniteError", "QNetworkParams", "backward", "batch_loss", "forward",
    "huber_grad", "huber_loss",
    "EpsilonSchedule", "epsilon_update", "rule_mask", "safety_gate", "select_action",
    "ReplayBuffer", "Transition",
]
