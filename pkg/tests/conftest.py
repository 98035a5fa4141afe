import pytest

from sim.detector import Cam, DetectorParams, EntityClass
from sim.kinematics import ZERO, KinematicState, Vec2
from sim.mobility import World
from sim.netmodel import latency_profile, reaction_profile
from sim.scenario import default_scenario


def make_state(x, y, vx=0.0, vy=0.0, ax=0.0, ay=0.0):
    return KinematicState(Vec2(x, y), Vec2(vx, vy), Vec2(ax, ay) if (ax or ay) else ZERO)


def make_cam(sender_id, t, x, y, vx=0.0, vy=0.0, entity_class=EntityClass.VEHICLE):
    return Cam(sender_id=sender_id, entity_class=entity_class, generated_at=t, state=make_state(x, y, vx, vy))


@pytest.fixture(scope="session")
def scenario():
    return default_scenario()


@pytest.fixture
def params():
    return DetectorParams()


@pytest.fixture
def metro():
    return latency_profile("metro")


@pytest.fixture
def cloud():
    return latency_profile("cloud")


@pytest.fixture
def hd():
    return reaction_profile("hd")


@pytest.fixture
def av():
    return reaction_profile("av")


@pytest.fixture
def stalled_intersection(scenario):
    """A violator from the west heading at a vehicle stopped in the middle of the western intersection"""
    world = World(scenario, dt=0.01)
    world.add_agent("v3", s=247.0, max_speed=0.0, violator=True, agent_id="stalled")
    world.add_agent("v1", s=0.0, violator=True, agent_id="runner")
    return world
