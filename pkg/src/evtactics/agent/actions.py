from enum import IntEnum


class Action(IntEnum):
    """Discrete EV actions, in Q-network output order."""

    N = 0  # keep lane and speed
    A = 1  # accelerate
    D = 2  # decelerate
    L = 3  # change lane left
    R = 4  # change lane right


N_ACTIONS = len(Action)
ACCEL_STEP = 3.0  # m/s^2 commanded by A and D
LANE_CHANGES = (Action.L, Action.R)


def commanded_accel(action: Action) -> float:
    if action is Action.A:
        return ACCEL_STEP
    if action is Action.D:
        return -ACCEL_STEP
    return 0.0
