from dataclasses import replace

import numpy as np
import pytest

from fedagent.errors import ConfigError, EmptyClient, NoEligibleClients
from fedagent.fedalgo import init_state
from fedagent.localmodel import LocalTrainConfig, local_train, zeros
from fedagent.orchestrator import (
    ALL_ALGORITHMS,
    ExperimentConfig,
    client_seed,
    run_experiment,
    run_round,
    sample_clients,
)
from fedagent.partition import PartitionAssignment, PartitionScheme, partition

from conftest import make_episode

DIM = 32
FAST = LocalTrainConfig(learning_rate=0.5, epochs=2, batch_size=8, subsample_fraction=0.5, dim=DIM)


def small_world(n_clients=4, per_client=6):
    data = [
        make_episode(f"e{i:03d}", app=["Gmail", "Amazon", "Clock", "eBay"][i % 4], n=1 + i % 5,
                     actions=["open_app", "click", "type", "complete"])
        for i in range(n_clients * per_client)
    ]
    a = partition(data, PartitionScheme("basic-iid", "iid", n_clients, seed=1))
    return data, a


def cfg(**kw):
    kw.setdefault("local", FAST)
    kw.setdefault("rounds", 3)
    return ExperimentConfig(**kw)


# -- sampling -------------------------------------------------------------------


def test_sampling_deterministic_without_replacement():
    seqs = [[sample_clients(5, r, list(range(10)), 3) for r in range(20)] for _ in range(2)]
    assert seqs[0] == seqs[1]
    assert all(len(set(s)) == 3 for s in seqs[0])


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_every_client_sampled_in_100_rounds(seed):
    seen = set()
    for r in range(100):
        seen.update(sample_clients(seed, r, list(range(10)), 3))
    assert seen == set(range(10))


def test_zero_clients_per_round():
    data, a = small_world()
    state = init_state("fedavg", zeros(DIM))
    with pytest.raises(NoEligibleClients):
        run_round(state, a.client_episodes(data), cfg(clients_per_round=0), 0)


def test_client_seeds_distinct():
    assert len({client_seed(0, r, k) for r in range(5) for k in range(5)}) == 25


# -- rounds ---------------------------------------------------------------------


def test_identical_clients_aggregate_to_single_update():
    eps = [make_episode(f"e{i}", n=2, actions=["click", "type"]) for i in range(3)]
    local = replace(FAST, subsample_fraction=1.0, batch_size=64, epochs=3)
    clients = [eps, eps, eps]
    state = init_state("fedavg", zeros(DIM))
    new, m = run_round(state, clients, cfg(clients_per_round=3, local=local), 0)
    single = local_train(zeros(DIM), eps, replace(local, seed=7))
    assert np.allclose(new.global_params, single.new_params, rtol=0, atol=1e-12)
    assert m.train_steps == 3 * 6


def test_conservation_of_steps():
    data, a = small_world()
    clients = a.client_episodes(data)
    c = cfg(clients_per_round=2)
    _, m = run_round(init_state("fedavg", zeros(DIM)), clients, c, 1)
    expect = 0
    for k in m.sampled_clients:
        expect += local_train(zeros(DIM), clients[k], replace(c.local, seed=client_seed(c.seed, 1, k))).n_steps_trained
    assert m.train_steps == expect
    assert len(m.sampled_clients) == 2


# -- experiments ------------------------------------------------------------------


def test_zero_shot_keeps_initial_params():
    data, a = small_world()
    init = np.random.default_rng(0).normal(size=zeros(DIM).size)
    res = run_experiment(cfg(algorithm="zero_shot"), data, a, data[:4], initial_params=init)
    assert np.array_equal(res.state.global_params, init)
    assert res.rounds == [] and res.final is not None
    assert len(res.metrics_lines()) == 1


def test_local_k_on_one_client_equals_central():
    data, _ = small_world()
    one = PartitionAssignment({e.episode_id: 0 for e in data}, PartitionScheme("basic-iid", "iid", 1))
    a = run_experiment(cfg(algorithm="local_k", local_k_index=0), data, one)
    b = run_experiment(cfg(algorithm="central"), data, one)
    assert a.state.global_params.tobytes() == b.state.global_params.tobytes()


def test_fedprox_mu_zero_equals_fedavg():
    data, a = small_world()
    x = run_experiment(cfg(algorithm="fedavg", eval_every_round=True), data, a, data[:5])
    y = run_experiment(cfg(algorithm="fedprox", mu=0.0, eval_every_round=True), data, a, data[:5])
    assert x.metrics_lines() == y.metrics_lines()
    assert x.state.global_params.tobytes() == y.state.global_params.tobytes()


def test_scaffold_round_one_equals_fedavg():
    eps = [make_episode(f"e{i}", n=2, actions=["click", "type"]) for i in range(9)]
    a = PartitionAssignment({e.episode_id: i // 3 for i, e in enumerate(eps)}, PartitionScheme("custom", "any", 3))
    local = replace(FAST, subsample_fraction=1.0, batch_size=64, epochs=1)
    x = run_experiment(cfg(algorithm="fedavg", rounds=1, local=local), eps, a)
    y = run_experiment(cfg(algorithm="scaffold", rounds=1, local=local), eps, a)
    assert np.abs(x.state.global_params - y.state.global_params).max() <= 1e-12


@pytest.mark.parametrize("algo", ALL_ALGORITHMS)
def test_every_algorithm_runs_and_is_deterministic(algo):
    data, a = small_world()
    c = cfg(algorithm=algo, clients_per_round=2, local_k_index=1 if algo == "local_k" else None)
    r1 = run_experiment(c, data, a, data[:6])
    r2 = run_experiment(replace(c, threads=4), data, a, data[:6])
    assert r1.metrics_lines() == r2.metrics_lines()
    assert np.isfinite(r1.state.global_params).all()
    assert r1.state.round == (0 if algo == "zero_shot" else 3)


def test_per_round_sampling_repeats():
    data, a = small_world()
    r1 = run_experiment(cfg(), data, a)
    r2 = run_experiment(cfg(), data, a)
    assert [m.sampled_clients for m in r1.rounds] == [m.sampled_clients for m in r2.rounds]


@pytest.mark.parametrize(
    "kw",
    [
        {"algorithm": "fedsgd"},
        {"rounds": 0},
        {"algorithm": "local_k"},
        {"threads": 0},
        {"clients_per_round": -1},
    ],
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        ExperimentConfig(**kw)


def test_low_level_flag_propagates():
    assert ExperimentConfig(low_level=True).local.low_level


def test_local_k_errors():
    data, a = small_world()
    with pytest.raises(ConfigError):
        run_experiment(cfg(algorithm="local_k", local_k_index=9), data, a)
    empty = PartitionAssignment({e.episode_id: 0 for e in data}, PartitionScheme("custom", "any", 2))
    with pytest.raises(EmptyClient):
        run_experiment(cfg(algorithm="local_k", local_k_index=1), data, empty)
