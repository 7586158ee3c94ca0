import math

import numpy as np
import pytest

from fedagent.data import Episode, Step
from fedagent.errors import DimensionMismatch, EmptyClient
from fedagent.localmodel import (
    N_ACTIONS,
    N_ARGS,
    Batch,
    LocalTrainConfig,
    arg_slot,
    episode_batch,
    featurize_step,
    featurize_tokens,
    gold_response,
    local_train,
    loss_and_grad,
    n_params,
    predict_response,
    zeros,
)

from conftest import make_episode


def random_instance(rng, dim=16, n=5):
    params = rng.normal(scale=0.3, size=n_params(dim))
    x = rng.normal(size=(n, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    batch = Batch(x, rng.integers(0, N_ACTIONS, n), rng.integers(0, N_ARGS, n))
    return params, batch


def finite_difference(f, w, h=1e-6):
    g = np.empty_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def rel_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-30)


# -- features -----------------------------------------------------------------


def test_features_deterministic_unit_norm():
    ep = make_episode("e", n=2)
    a = featurize_step(ep, ep.steps[1], 64)
    b = featurize_step(ep, ep.steps[1], 64)
    assert np.array_equal(a, b)
    assert abs(np.linalg.norm(a) - 1) < 1e-12


def test_low_level_changes_features():
    ep = make_episode("e", n=2)
    assert not np.array_equal(featurize_step(ep, ep.steps[0], 64, False), featurize_step(ep, ep.steps[0], 64, True))


def test_empty_tokens_map_to_e0():
    x = featurize_tokens([], 32)
    assert x[0] == 1.0 and x[1:].sum() == 0.0


def test_dim_below_minimum():
    with pytest.raises(ValueError):
        featurize_tokens(["a"], 8)


# -- objective ----------------------------------------------------------------


def test_zero_params_loss_is_ln9_plus_ln64():
    rng = np.random.default_rng(0)
    _, batch = random_instance(rng)
    loss, _ = loss_and_grad(zeros(16), batch)
    assert abs(loss - (math.log(9) + math.log(64))) < 1e-12


def test_prox_term_zero_at_global():
    rng = np.random.default_rng(1)
    w, batch = random_instance(rng)
    l0, g0 = loss_and_grad(w, batch)
    l1, g1 = loss_and_grad(w, batch, global_params=w.copy(), mu=0.2)
    assert l0 == l1 and np.array_equal(g0, g1)


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    w, batch = random_instance(rng, n=int(rng.integers(1, 6)))
    wg = rng.normal(size=w.size)
    mu = float(rng.choice([0.0, 0.2, 1.5]))
    _, g = loss_and_grad(w, batch, wg, mu)
    fd = finite_difference(lambda p: loss_and_grad(p, batch, wg, mu)[0], w)
    assert rel_error(g, fd) <= 1e-5


def test_control_correction_shifts_gradient_only():
    rng = np.random.default_rng(2)
    w, batch = random_instance(rng)
    c = rng.normal(size=w.size)
    l0, g0 = loss_and_grad(w, batch)
    l1, g1 = loss_and_grad(w, batch, control_correction=c)
    assert l0 == l1
    assert np.allclose(g1 - g0, c, atol=1e-15)


def test_dimension_mismatch():
    rng = np.random.default_rng(3)
    w, batch = random_instance(rng)
    with pytest.raises(DimensionMismatch):
        loss_and_grad(w[:-1], batch)
    with pytest.raises(DimensionMismatch):
        loss_and_grad(w, batch, global_params=w[:-1], mu=0.1)


def test_batch_permutation_invariance():
    rng = np.random.default_rng(4)
    w, batch = random_instance(rng, n=7)
    perm = rng.permutation(7)
    assert abs(loss_and_grad(w, batch)[0] - loss_and_grad(w, batch.take(perm))[0]) <= 1e-12


def test_proximal_monotonicity():
    rng = np.random.default_rng(5)
    wg, batch = random_instance(rng)
    w = wg + rng.normal(scale=0.1, size=wg.size)
    dist = []
    for mu in (0.0, 0.2, 2.0, 20.0):
        _, g = loss_and_grad(w, batch, wg, mu)
        dist.append(np.linalg.norm(w - 0.04 * g - wg))
    assert all(a >= b for a, b in zip(dist, dist[1:]))


# -- local training -----------------------------------------------------------


def test_epochs_zero_is_noop_with_counts():
    eps = [make_episode(f"e{i}", n=3) for i in range(20)]
    w = zeros(32)
    upd = local_train(w, eps, LocalTrainConfig(epochs=0, dim=32, subsample_fraction=0.5))
    assert np.array_equal(upd.new_params, w)
    assert (upd.n_episodes_trained, upd.n_steps_trained) == (10, 30)


def test_subsample_ten_percent_of_100():
    eps = [make_episode(f"e{i}", n=2) for i in range(100)]
    upd = local_train(zeros(32), eps, LocalTrainConfig(epochs=1, dim=32))
    assert upd.n_episodes_trained == 10 and upd.n_steps_trained == 20


def test_single_sgd_step_decreases_loss():
    ep = make_episode("e", n=1)
    cfg = LocalTrainConfig(learning_rate=0.1, epochs=1, batch_size=1, subsample_fraction=1.0, dim=32)
    w0 = zeros(32)
    batch = episode_batch([ep], 32, False)
    upd = local_train(w0, [ep], cfg)
    assert upd.n_updates == 1
    assert loss_and_grad(upd.new_params, batch)[0] < loss_and_grad(w0, batch)[0]


def test_local_train_pure():
    eps = [make_episode(f"e{i}", n=4) for i in range(30)]
    cfg = LocalTrainConfig(dim=32, seed=11)
    a = local_train(zeros(32), eps, cfg)
    b = local_train(zeros(32), eps, cfg)
    assert a.new_params.tobytes() == b.new_params.tobytes()
    assert a.mean_loss == b.mean_loss


def test_empty_client():
    with pytest.raises(EmptyClient):
        local_train(zeros(32), [], LocalTrainConfig(dim=32))


@pytest.mark.parametrize(
    "kwargs", [{"batch_size": 0}, {"subsample_fraction": 0.0}, {"subsample_fraction": 1.5}, {"learning_rate": 0}]
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        LocalTrainConfig(**kwargs)


def test_scaffold_control_delta_formula():
    eps = [make_episode(f"e{i}", n=3) for i in range(4)]
    cfg = LocalTrainConfig(learning_rate=0.5, epochs=2, batch_size=4, subsample_fraction=1.0, dim=32)
    rng = np.random.default_rng(0)
    c, ck = rng.normal(size=(2, n_params(32))) * 0.01
    w0 = zeros(32)
    upd = local_train(w0, eps, cfg, client_control=ck, server_control=c)
    expect = -c + (w0 - upd.new_params) / (upd.n_updates * cfg.learning_rate)
    assert np.allclose(upd.control_delta, expect, atol=1e-15)


# -- prediction ---------------------------------------------------------------


def test_zero_params_predict_first_action_and_slot():
    ep = make_episode("e", n=1)
    assert predict_response(zeros(32), ep, ep.steps[0], dim=32) == "click arg00"


def test_overfit_single_step_reproduces_gold():
    step = Step(0, "type", "hello world", "enter text")
    ep = Episode("e", "search something", "Gmail", "Office", (step,))
    cfg = LocalTrainConfig(learning_rate=1.0, epochs=200, batch_size=1, subsample_fraction=1.0, dim=32)
    upd = local_train(zeros(32), [ep], cfg)
    assert predict_response(upd.new_params, ep, step, dim=32) == gold_response(step)


def test_arg_slot_reserves_zero_for_empty():
    assert arg_slot("") == 0 and arg_slot("  ,, ") == 0
    assert 1 <= arg_slot("search bar") < N_ARGS
    assert arg_slot("Search  Bar") == arg_slot("search bar")
