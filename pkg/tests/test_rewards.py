import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from evtactics.agent.actions import Action
from evtactics.rewards import (
    RewardConfig,
    RewardTerms,
    reward_collision,
    reward_cooperative,
    reward_lane_change,
    reward_total,
    reward_velocity,
)

CFG = RewardConfig()
COOP = RewardConfig(cooperative_enabled=True)
SPAN = RewardConfig(velocity_reward_form="span")


@pytest.mark.parametrize("bad", [
    dict(d_total=0), dict(v_max=0), dict(v_min=-1), dict(v_min=40), dict(denominator_epsilon=0),
    dict(velocity_reward_form="linear"), dict(velocity_reward_clip=0),
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        RewardConfig(**bad)


@pytest.mark.parametrize("d,want", [(1000.0, 0.0), (2000.0, 0.5), (0.0, -0.5), (1500.0, 0.25)])
def test_reward_collision(d, want):
    assert reward_collision(d, CFG) == want


@pytest.mark.parametrize("d", [-0.1, 2000.1])
def test_reward_collision_out_of_range(d):
    with pytest.raises(ValueError):
        reward_collision(d, CFG)


@pytest.mark.parametrize("v,want", [(20.0, 0.0), (40.0, 0.5), (0.0, -1.0), (10.0, -1.0), (30.0, 1 / 3)])
def test_reward_velocity_printed(v, want):
    assert reward_velocity(v, CFG) == pytest.approx(want, abs=1e-15)


@pytest.mark.parametrize("v,want", [(20.0, 0.0), (40.0, 0.5), (0.0, -0.5), (30.0, 0.25)])
def test_reward_velocity_span(v, want):
    assert reward_velocity(v, SPAN) == want


@pytest.mark.parametrize("action,v,want", [
    (Action.L, 40.0, -1.0), (Action.R, 40.0, -1.0), (Action.L, 40.0 - 1e-10, -1.0),
    (Action.L, 39.0, 0.0), (Action.A, 40.0, 0.0), (Action.N, 40.0, 0.0),
])
def test_reward_lane_change(action, v, want):
    assert reward_lane_change(action, v, CFG) == want


def test_reward_cooperative_examples():
    assert reward_cooperative([], COOP) == 0.0
    assert reward_cooperative([(20.0, 20.0)], COOP) == pytest.approx(math.exp(-1), abs=1e-12)
    assert reward_cooperative([(20.0, 20.0), (20.0, 20.0)], COOP) == pytest.approx(
        (math.exp(-1) + math.exp(-2)) / 2, abs=1e-12)
    assert reward_cooperative([(20.0, 20.0)] * 2, COOP) == pytest.approx(0.25160, abs=1e-5)
    assert reward_cooperative([(20.0, 20.0)], CFG) == 0.0  # disabled


@pytest.mark.parametrize("terms,want", [
    ((0, 0, 0, 0), 0.0), ((0.5, 0.5, 0, 0), 1.0), ((0.5, 0.5, -1, math.exp(-1)), math.exp(-1)),
])
def test_reward_total(terms, want):
    assert reward_total(RewardTerms(*terms)) == pytest.approx(want, abs=1e-15)
    assert RewardTerms(*terms).total == reward_total(RewardTerms(*terms))


@given(a=st.floats(0, 2000), b=st.floats(0, 2000))
def test_collision_monotone_and_antisymmetric(a, b):
    lo, hi = sorted((a, b))
    assert reward_collision(lo, CFG) <= reward_collision(hi, CFG)
    assert reward_collision(a, CFG) == pytest.approx(-reward_collision(2000 - a, CFG), abs=1e-12)


@given(v=st.floats(0, 40), form=st.sampled_from(["printed", "span"]))
def test_velocity_bounded(v, form):
    r = reward_velocity(v, RewardConfig(velocity_reward_form=form))
    assert -1.0 <= r <= 1.0 and math.isfinite(r)


@given(action=st.sampled_from(list(Action)), v=st.floats(0, 40))
def test_lane_change_values(action, v):
    assert reward_lane_change(action, v, CFG) in (-1.0, 0.0)


@given(zone=st.lists(st.tuples(st.floats(0, 20), st.floats(1, 40)).map(lambda t: (min(t), max(t))), max_size=12))
def test_cooperative_range(zone):
    r = reward_cooperative(zone, COOP)
    assert 0.0 <= r <= math.exp(-1) + 1e-15


@given(c=st.floats(-0.5, 0.5), v=st.floats(-1, 1), lc=st.sampled_from([-1.0, 0.0]))
def test_total_without_cooperation_is_three_term_sum(c, v, lc):
    assert reward_total(RewardTerms(c, v, lc, reward_cooperative([(5.0, 20.0)], CFG))) == c + v + lc
