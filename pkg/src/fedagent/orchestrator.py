"""Round loop, baselines and metric records.

Randomness is keyed, never shared: client sampling for round ``r`` uses a
Philox stream keyed on ``(seed, r)`` and client ``k``'s local training in
round ``r`` uses the seed ``(seed, r, k)``. Results therefore do not depend
on how many worker threads run the local-training map.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .data import Episode
from .errors import ConfigError, EmptyClient, NoEligibleClients
from .evaluation import DEFAULT_THRESHOLD, EvalReport, evaluate
from .fedalgo import (
    ADAPTIVE_KIND,
    ALGORITHMS,
    AdaptiveServerConfig,
    ServerState,
    adaptive_update,
    aggregate_weighted,
    fedavg_weights,
    fedavgm_update,
    fedmobileagent_weights,
    init_state,
    scaffold_round,
)
from .localmodel import LocalTrainConfig, LocalUpdate, local_train, zeros
from .partition import PartitionAssignment

log = logging.getLogger(__name__)

BASELINES = ("zero_shot", "central", "local_k")
ALL_ALGORITHMS = BASELINES + ALGORITHMS


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str = "fedavg"
    rounds: int = 10
    clients_per_round: int = 3
    local: LocalTrainConfig = field(default_factory=LocalTrainConfig)
    seed: int = 0
    low_level: bool = False
    local_k_index: int | None = None
    mu: float = 0.2
    fedavgm_h: float = 0.9
    adaptive: AdaptiveServerConfig = field(default_factory=AdaptiveServerConfig)
    eta_s: float = 1.0
    lam: float = 7.0
    threshold: float = DEFAULT_THRESHOLD
    eval_every_round: bool = False
    threads: int = 1

    def __post_init__(self) -> None:
        if self.algorithm not in ALL_ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm != "zero_shot" and self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.clients_per_round < 0:
            raise ConfigError("clients_per_round must be >= 0")
        if self.algorithm == "local_k" and self.local_k_index is None:
            raise ConfigError("local_k needs local_k_index")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.local.low_level != self.low_level:
            object.__setattr__(self, "local", replace(self.local, low_level=self.low_level))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class RoundMetrics:
    round: int
    sampled_clients: list[int]
    mean_local_loss: float
    train_steps: int
    train_episodes: int
    eval: EvalReport | None = None

    def to_record(self) -> dict[str, Any]:
        return {
            "round": self.round,
            "sampled_clients": self.sampled_clients,
            "mean_local_loss": self.mean_local_loss,
            "train_steps": self.train_steps,
            "train_episodes": self.train_episodes,
            "eval": None if self.eval is None else self.eval.to_dict(),
        }


@dataclass
class ExperimentResult:
    state: ServerState
    rounds: list[RoundMetrics]
    final: EvalReport | None

    def metrics_lines(self) -> list[str]:
        lines = [json.dumps(r.to_record(), sort_keys=True) for r in self.rounds]
        final = None if self.final is None else self.final.to_dict()
        lines.append(json.dumps({"final": final}, sort_keys=True))
        return lines


def client_seed(seed: int, round_index: int, client: int) -> int:
    ss = np.random.SeedSequence([seed, round_index, client])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_clients(seed: int, round_index: int, eligible: Sequence[int], k: int) -> list[int]:
    if k <= 0 or len(eligible) < k:
        raise NoEligibleClients(f"need {k} clients with data, have {len(eligible)}")
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, round_index, 0xC1])))
    picked = gen.choice(len(eligible), size=k, replace=False)
    return sorted(int(eligible[i]) for i in picked)


def _train_one(args) -> LocalUpdate:
    client, params, episodes, local_cfg, global_params, c_k, c = args
    upd = local_train(params, episodes, local_cfg, global_params, client_control=c_k, server_control=c)
    return replace(upd, client=client)


def _map(fn, jobs: list, threads: int) -> list:
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


def run_round(
    state: ServerState,
    clients: Sequence[Sequence[Episode]],
    cfg: ExperimentConfig,
    round_index: int,
) -> tuple[ServerState, RoundMetrics]:
    """One broadcast / local-train / upload / aggregate cycle."""
    eligible = [k for k, eps in enumerate(clients) if eps]
    sampled = sample_clients(cfg.seed, round_index, eligible, cfg.clients_per_round)
    algo = cfg.algorithm
    mu = cfg.mu if algo == "fedprox" else 0.0
    g = state.global_params
    sc = state.scaffold
    jobs = []
    for k in sampled:
        local_cfg = replace(cfg.local, seed=client_seed(cfg.seed, round_index, k), prox_mu=mu)
        c_k = sc.c_clients[k] if sc is not None else None
        c = sc.c if sc is not None else None
        jobs.append((k, g, clients[k], local_cfg, g, c_k, c))
    updates = sorted(_map(_train_one, jobs, cfg.threads), key=lambda u: u.client)

    if algo == "scaffold":
        new = scaffold_round(state, [(u.client, u.new_params, u.control_delta) for u in updates], len(clients))
    else:
        weights = fedmobileagent_weights(updates, cfg.lam) if algo == "fedmobileagent" else fedavg_weights(updates)
        aggregated = aggregate_weighted([(u.new_params, w) for u, w in zip(updates, weights)])
        if algo == "fedavgm":
            new = fedavgm_update(state, aggregated, cfg.fedavgm_h)
        elif algo in ADAPTIVE_KIND:
            new = adaptive_update(state, ADAPTIVE_KIND[algo], aggregated, cfg.adaptive)
        else:
            new = state.copy()
            new.global_params = aggregated
    new.round = state.round + 1
    metrics = RoundMetrics(
        round=round_index,
        sampled_clients=sampled,
        mean_local_loss=float(np.mean([u.mean_loss for u in updates])),
        train_steps=sum(u.n_steps_trained for u in updates),
        train_episodes=sum(u.n_episodes_trained for u in updates),
    )
    return new, metrics


def _solo(
    params: np.ndarray, episodes: Sequence[Episode], cfg: ExperimentConfig, key: int, test_set, dim: int
) -> tuple[np.ndarray, list[RoundMetrics]]:
    if not episodes:
        raise EmptyClient(f"client {key} holds no episodes")
    rounds = []
    for r in range(cfg.rounds):
        local_cfg = replace(cfg.local, seed=client_seed(cfg.seed, r, key), prox_mu=0.0)
        upd = local_train(params, episodes, local_cfg)
        params = upd.new_params
        m = RoundMetrics(r, [key], upd.mean_loss, upd.n_steps_trained, upd.n_episodes_trained)
        if cfg.eval_every_round and test_set:
            m.eval = evaluate(params, test_set, cfg.low_level, cfg.threshold, dim)
        rounds.append(m)
    return params, rounds


def run_experiment(
    cfg: ExperimentConfig,
    dataset: Sequence[Episode],
    assignment: PartitionAssignment,
    test_set: Sequence[Episode] | None = None,
    initial_params: np.ndarray | None = None,
) -> ExperimentResult:
    dim = cfg.local.dim
    params = zeros(dim) if initial_params is None else initial_params.copy()
    clients = assignment.client_episodes(dataset)
    algo = cfg.algorithm

    def final_eval(p):
        return evaluate(p, test_set, cfg.low_level, cfg.threshold, dim) if test_set else None

    if algo in BASELINES:
        state = ServerState(algo, params)
        rounds: list[RoundMetrics] = []
        if algo == "central":
            state.global_params, rounds = _solo(params, list(dataset), cfg, 0, test_set, dim)
        elif algo == "local_k":
            k = cfg.local_k_index
            if not 0 <= k < len(clients):
                raise ConfigError(f"local_k_index {k} outside 0..{len(clients) - 1}")
            state.global_params, rounds = _solo(params, clients[k], cfg, k, test_set, dim)
        state.round = len(rounds)
        return ExperimentResult(state, rounds, final_eval(state.global_params))

    state = init_state(algo, params, range(len(clients)), cfg.adaptive, cfg.eta_s)
    history = []
    for r in range(cfg.rounds):
        state, metrics = run_round(state, clients, cfg, r)
        if cfg.eval_every_round and test_set:
            metrics.eval = evaluate(state.global_params, test_set, cfg.low_level, cfg.threshold, dim)
        log.info("round %d clients=%s loss=%.4f", r, metrics.sampled_clients, metrics.mean_local_loss)
        history.append(metrics)
    return ExperimentResult(state, history, final_eval(state.global_params))
