import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedagent.data import dataset_stats, dumps_episode
from fedagent.errors import InvalidSpec
from fedagent.synth import (
    MAX_STEPS,
    PRESETS,
    SyntheticSpec,
    apportion,
    generate_synthetic_dataset,
    truncated_geometric_pmf,
)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n_episodes": 0},
        {"app_profile": {}},
        {"app_profile": {"Gmail": 0.0}},
        {"app_profile": {"Gmail": -1.0, "Clock": 2.0}},
        {"mean_steps": 0.5},
        {"total_steps": 1},
    ],
)
def test_invalid_spec(kwargs):
    base = {"n_episodes": 5, "app_profile": {"Gmail": 1.0}}
    base.update(kwargs)
    with pytest.raises(InvalidSpec):
        generate_synthetic_dataset(SyntheticSpec(**base))


def test_deterministic_and_seed_sensitive():
    spec = SyntheticSpec(50, {"Gmail": 1.0, "Amazon": 2.0}, seed=3)
    a = [dumps_episode(e) for e in generate_synthetic_dataset(spec)]
    b = [dumps_episode(e) for e in generate_synthetic_dataset(spec)]
    c = [dumps_episode(e) for e in generate_synthetic_dataset(SyntheticSpec(50, {"Gmail": 1.0, "Amazon": 2.0}, seed=4))]
    assert a == b
    assert a != c


def test_category_level_shape(category_level):
    s = dataset_stats(category_level)
    assert (s.n_episodes, s.n_apps, s.n_steps) == (1000, 52, 7127)
    assert s.n_categories == 5
    assert all(e == 200 for e, _ in s.per_category.values())


@pytest.mark.parametrize(
    "name,episodes,steps,apps",
    [
        ("app-level", 750, 4456, 5),
        ("step-episode", 1000, 6685, None),
        ("scaleapp", 2500, 15700, 30),
    ],
)
def test_preset_shapes(name, episodes, steps, apps):
    s = dataset_stats(generate_synthetic_dataset(PRESETS[name].train_spec(0)))
    assert (s.n_episodes, s.n_steps) == (episodes, steps)
    if apps is not None:
        assert s.n_apps == apps


def test_app_level_has_150_per_app(app_level):
    train, test = app_level
    assert {e for e, _ in dataset_stats(train).per_app.values()} == {150}
    assert len(test) == 100
    assert not {e.episode_id for e in train} & {e.episode_id for e in test}


@pytest.mark.parametrize("mean", [2.0, 4.5, 6.7, 10.0])
def test_empirical_mean_within_ten_percent(mean):
    data = generate_synthetic_dataset(SyntheticSpec(1000, {"Gmail": 1.0}, mean_steps=mean, seed=0))
    lengths = [e.n_steps for e in data]
    assert abs(np.mean(lengths) - mean) <= 0.1 * mean
    assert 1 <= min(lengths) and max(lengths) <= MAX_STEPS


@given(st.floats(1.0, 15.0))
def test_truncated_geometric_pmf_mean(mean):
    pmf = truncated_geometric_pmf(mean)
    assert pmf.shape == (MAX_STEPS,)
    assert abs(pmf.sum() - 1.0) < 1e-12
    assert abs(pmf @ np.arange(1, MAX_STEPS + 1) - mean) < 1e-6


@given(st.integers(0, 500), st.lists(st.floats(0.0, 10.0), min_size=1, max_size=8).filter(lambda w: sum(w) > 0))
def test_apportion_sums_and_stays_within_one(total, weights):
    counts = apportion(total, weights)
    assert sum(counts) == total
    exact = np.array(weights) * total / sum(weights)
    assert np.all(np.abs(np.array(counts) - exact) < 1.0)


def test_steps_are_valid_episodes():
    for ep in generate_synthetic_dataset(SyntheticSpec(40, {"Amazon": 1.0}, seed=1)):
        assert [s.index for s in ep.steps] == list(range(ep.n_steps))
        assert ep.steps[-1].action_type == "complete"
        assert "Amazon" in ep.instruction
