import numpy as np
import pytest

from evtactics.world import CV_PARAMS, EV_PARAMS, RoadConfig, WorldState


@pytest.fixture
def road():
    return RoadConfig()


@pytest.fixture
def world(road):
    return WorldState.create(road, 1234)


def place(world, params, lane, pos, speed):
    """Put a vehicle on the road at an arbitrary position."""
    return world.add_vehicle(params, lane, pos, speed)


def make_world(specs, seed=0, road=None):
    """World from ``(kind, lane, pos, speed)`` tuples; kind is 'EV' or 'CV'."""
    w = WorldState.create(road or RoadConfig(), seed)
    out = []
    for kind, lane, pos, speed in specs:
        out.append(w.add_vehicle(EV_PARAMS if kind == "EV" else CV_PARAMS, lane, pos, speed))
    return w, out


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results, key=lambda k: (int(k.rstrip("abcd")), k)):
            terminalreporter.write_line(results[key])
