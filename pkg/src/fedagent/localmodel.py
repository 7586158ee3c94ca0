"""Linear softmax stand-in for the fine-tuned agent.

Each step is hashed into a d-dimensional unit vector. Two linear heads read
it: one over the 9 action types, one over V hashed argument slots. The
flat parameter vector is laid out as ``W`` ((K+V) x d, row-major, action
rows first) followed by the (K+V) biases.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from .data import ACTION_INDEX, ACTION_TYPES, Episode, Step, app_key
from .errors import DimensionMismatch, EmptyClient
from .synth import stable_hash

N_ACTIONS = len(ACTION_TYPES)
N_ARGS = 64
DEFAULT_DIM = 256
MIN_DIM = 16

_TOKEN = re.compile(r"[^0-9a-z]+")
_POS_BUCKETS = (0, 1, 2, 3, 4, 5, 6, 8, 11, 15, 20)


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN.split(text.lower()) if t]


def n_params(dim: int, n_args: int = N_ARGS) -> int:
    return dim * (N_ACTIONS + n_args) + N_ACTIONS + n_args


def zeros(dim: int = DEFAULT_DIM, n_args: int = N_ARGS) -> np.ndarray:
    return np.zeros(n_params(dim, n_args))


def _unpack(params: np.ndarray, dim: int) -> tuple[np.ndarray, np.ndarray]:
    out = params.size // (dim + 1)
    if out * (dim + 1) != params.size or out <= N_ACTIONS:
        raise DimensionMismatch(f"parameter vector of size {params.size} does not fit d={dim}")
    return params[: out * dim].reshape(out, dim), params[out * dim :]


# ---------------------------------------------------------------------------
# targets


def arg_slot(action_args: str, n_args: int = N_ARGS) -> int:
    """Hashed argument slot; slot 0 is reserved for empty arguments."""
    toks = tokenize(action_args)
    if not toks:
        return 0
    return 1 + stable_hash("arg:" + " ".join(toks)) % (n_args - 1)


def arg_token(slot: int) -> str:
    return f"arg{slot:02d}"


def gold_response(step: Step, n_args: int = N_ARGS) -> str:
    return f"{step.action_type} {arg_token(arg_slot(step.action_args, n_args))}"


# ---------------------------------------------------------------------------
# features


def _pos_bucket(index: int) -> int:
    b = 0
    for i, lo in enumerate(_POS_BUCKETS):
        if index >= lo:
            b = i
    return b


def step_tokens(episode: Episode, step: Step, low_level: bool) -> list[str]:
    app = app_key(episode.app)
    pos = _pos_bucket(step.index)
    toks = ["app:" + app, "cat:" + episode.category.lower()]
    toks += ["ins:" + t for t in tokenize(episode.instruction)]
    # conjunctions let a linear head learn app- and category-specific step patterns
    toks += [f"pos:{pos}", f"app-pos:{app}:{pos}", f"cat-pos:{episode.category.lower()}:{pos}"]
    if low_level:
        toks += ["sub:" + t for t in tokenize(step.subgoal)]
    return toks


@lru_cache(maxsize=1 << 16)
def _token_hash(tok: str) -> int:
    return stable_hash("feat:" + tok)


def featurize_tokens(tokens: Sequence[str], dim: int) -> np.ndarray:
    """Signed feature hashing followed by L2 normalisation (e0 if empty)."""
    if dim < MIN_DIM:
        raise ValueError(f"feature dimension must be >= {MIN_DIM}, got {dim}")
    x = np.zeros(dim)
    for tok in tokens:
        h = _token_hash(tok)
        x[h % dim] += 1.0 if (h >> 63) & 1 else -1.0
    norm = math.sqrt(float(x @ x))
    if norm == 0.0:
        x[0] = 1.0
        return x
    return x / norm


def featurize_step(episode: Episode, step: Step, dim: int = DEFAULT_DIM, low_level: bool = False) -> np.ndarray:
    return featurize_tokens(step_tokens(episode, step, low_level), dim)


@dataclass(frozen=True)
class Batch:
    x: np.ndarray  # (n, d)
    actions: np.ndarray  # (n,) int
    args: np.ndarray  # (n,) int

    def __len__(self) -> int:
        return len(self.actions)

    def take(self, idx: np.ndarray) -> "Batch":
        return Batch(self.x[idx], self.actions[idx], self.args[idx])

    @classmethod
    def from_examples(cls, examples: Sequence[tuple[np.ndarray, str | int, int]]) -> "Batch":
        if not examples:
            raise ValueError("empty batch")
        x = np.stack([np.asarray(f, dtype=float) for f, _, _ in examples])
        acts = np.array([ACTION_INDEX[a] if isinstance(a, str) else int(a) for _, a, _ in examples])
        args = np.array([int(v) for _, _, v in examples])
        return cls(x, acts, args)


def episode_batch(episodes: Sequence[Episode], dim: int, low_level: bool, n_args: int = N_ARGS) -> Batch:
    feats, acts, args = [], [], []
    for ep in episodes:
        for st in ep.steps:
            feats.append(featurize_step(ep, st, dim, low_level))
            acts.append(ACTION_INDEX[st.action_type])
            args.append(arg_slot(st.action_args, n_args))
    if not feats:
        return Batch(np.zeros((0, dim)), np.zeros(0, dtype=int), np.zeros(0, dtype=int))
    return Batch(np.stack(feats), np.array(acts), np.array(args))


# ---------------------------------------------------------------------------
# objective


def _xent(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    n = len(labels)
    loss = float((logsum - z[np.arange(n), labels]).sum() / n)
    p = np.exp(z - logsum[:, None])
    p[np.arange(n), labels] -= 1.0
    return loss, p / n


def loss_and_grad(
    params: np.ndarray,
    batch: Batch,
    global_params: np.ndarray | None = None,
    mu: float = 0.0,
    control_correction: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Mean action + argument cross-entropy plus (mu/2)*||w - w_global||^2.

    ``control_correction`` is added to the gradient only (it shifts the
    update direction, not the objective).
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    dim = batch.x.shape[1]
    W, b = _unpack(params, dim)
    logits = batch.x @ W.T + b
    la, ga = _xent(logits[:, :N_ACTIONS], batch.actions)
    lv, gv = _xent(logits[:, N_ACTIONS:], batch.args)
    g_logits = np.concatenate([ga, gv], axis=1)
    grad = np.concatenate([(g_logits.T @ batch.x).ravel(), g_logits.sum(axis=0)])
    loss = la + lv
    if global_params is not None and global_params.shape != params.shape:
        raise DimensionMismatch(f"global params {global_params.shape} vs {params.shape}")
    if mu:
        if global_params is None:
            raise ValueError("mu > 0 needs global_params")
        diff = params - global_params
        loss += 0.5 * mu * float(diff @ diff)
        grad += mu * diff
    if control_correction is not None:
        if control_correction.shape != params.shape:
            raise DimensionMismatch(f"correction {control_correction.shape} vs {params.shape}")
        grad += control_correction
    return loss, grad


# ---------------------------------------------------------------------------
# local training


@dataclass(frozen=True)
class LocalTrainConfig:
    learning_rate: float = 1.0
    epochs: int = 10
    batch_size: int = 8
    prox_mu: float = 0.0
    subsample_fraction: float = 0.1
    seed: int = 0
    dim: int = DEFAULT_DIM
    low_level: bool = False

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.prox_mu < 0:
            raise ValueError("prox_mu must be >= 0")
        if not 0 < self.subsample_fraction <= 1:
            raise ValueError("subsample_fraction must lie in (0, 1]")

    def with_seed(self, seed: int) -> "LocalTrainConfig":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class LocalUpdate:
    new_params: np.ndarray
    n_steps_trained: int
    n_episodes_trained: int
    mean_loss: float
    n_updates: int = 0
    control_delta: np.ndarray | None = None
    client: int = 0


def subsample_episodes(episodes: Sequence[Episode], fraction: float, rng: np.random.Generator) -> list[Episode]:
    k = math.ceil(fraction * len(episodes) - 1e-9)
    k = min(max(k, 1), len(episodes))
    picked = np.sort(rng.choice(len(episodes), size=k, replace=False))
    return [episodes[int(i)] for i in picked]


def local_train(
    params: np.ndarray,
    client_episodes: Sequence[Episode],
    cfg: LocalTrainConfig,
    global_params: np.ndarray | None = None,
    control_correction: np.ndarray | None = None,
    client_control: np.ndarray | None = None,
    server_control: np.ndarray | None = None,
) -> LocalUpdate:
    """Mini-batch SGD over a seeded subsample of one client's episodes.

    With ``client_control``/``server_control`` given, the SCAFFOLD correction
    ``c - c_k`` is applied to every step and the control-variate delta
    ``-c + (w_start - w_end) / (n_updates * lr)`` is returned as well.
    """
    if not client_episodes:
        raise EmptyClient("client holds no episodes")
    rng = np.random.default_rng(cfg.seed)
    chosen = subsample_episodes(client_episodes, cfg.subsample_fraction, rng)
    batch = episode_batch(chosen, cfg.dim, cfg.low_level, _n_args(params, cfg.dim))
    n = len(batch)
    if global_params is None:
        global_params = params
    if client_control is not None and server_control is not None:
        control_correction = server_control - client_control

    w = params.copy()
    losses: list[float] = []
    updates = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            mb = batch.take(order[start : start + cfg.batch_size])
            loss, grad = loss_and_grad(w, mb, global_params, cfg.prox_mu, control_correction)
            w -= cfg.learning_rate * grad
            losses.append(loss)
            updates += 1
    if not losses:
        losses.append(loss_and_grad(w, batch, global_params, cfg.prox_mu)[0])

    delta = None
    if client_control is not None and server_control is not None:
        if updates:
            delta = -server_control + (params - w) / (updates * cfg.learning_rate)
        else:
            delta = np.zeros_like(params)
    return LocalUpdate(
        new_params=w,
        n_steps_trained=n,
        n_episodes_trained=len(chosen),
        mean_loss=float(np.mean(losses)),
        n_updates=updates,
        control_delta=delta,
    )


def _n_args(params: np.ndarray, dim: int) -> int:
    return params.size // (dim + 1) - N_ACTIONS


# ---------------------------------------------------------------------------
# prediction


def predict_slots(params: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    W, b = _unpack(params, x.shape[1])
    logits = x @ W.T + b
    return np.argmax(logits[:, :N_ACTIONS], axis=1), np.argmax(logits[:, N_ACTIONS:], axis=1)


def format_response(action: int, slot: int) -> str:
    return f"{ACTION_TYPES[action]} {arg_token(slot)}"


def predict_response(
    params: np.ndarray, episode: Episode, step: Step, low_level: bool = False, dim: int = DEFAULT_DIM
) -> str:
    x = featurize_step(episode, step, dim, low_level)[None, :]
    a, v = predict_slots(params, x)
    return format_response(int(a[0]), int(v[0]))
