import pytest

from fedagent.data import Episode, Step, categorize_app
from fedagent.synth import PRESETS, generate_synthetic_dataset


def make_episode(eid, app="Gmail", n=3, instruction=None, actions=None, category=None):
    actions = actions or ["click"] * n
    steps = tuple(
        Step(i, actions[i % len(actions)], f"arg {i}", f"subgoal {i}") for i in range(n)
    )
    return Episode(
        eid,
        instruction or f"do something in {app}",
        app,
        category or categorize_app(app),
        steps,
    )


@pytest.fixture(scope="session")
def app_level():
    p = PRESETS["app-level"]
    return generate_synthetic_dataset(p.train_spec(0)), generate_synthetic_dataset(p.test_spec(0), stream=1)


@pytest.fixture(scope="session")
def category_level():
    return generate_synthetic_dataset(PRESETS["category-level"].train_spec(0))


@pytest.fixture(scope="session")
def step_episode():
    return generate_synthetic_dataset(PRESETS["step-episode"].train_spec(0))


@pytest.fixture(scope="session")
def scaleapp():
    return generate_synthetic_dataset(PRESETS["scaleapp"].train_spec(0))
