"""Server state and aggregation rules for the eight federated algorithms.

Adaptive server optimisers (Adagrad/Adam/Yogi) treat ``aggregated - global``
as a pseudo-gradient::

    m <- b1*m + (1-b1)*delta
    v <- v + delta^2                                  (adagrad)
         b2*v + (1-b2)*delta^2                        (adam)
         v - (1-b2)*delta^2*sign(v - delta^2)         (yogi)
    global <- global + eta * m / (sqrt(v) + tau)

FedAvgM interpolates models: ``global <- h*global + (1-h)*aggregated``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, NoUpdates, UnknownClient, ZeroTotalWeight
from .localmodel import LocalUpdate

ALGORITHMS = (
    "fedavg",
    "fedprox",
    "fedavgm",
    "fedadagrad",
    "fedadam",
    "fedyogi",
    "scaffold",
    "fedmobileagent",
)
ADAPTIVE_KIND = {"fedadagrad": "adagrad", "fedadam": "adam", "fedyogi": "yogi"}


@dataclass(frozen=True)
class AdaptiveServerConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eta: float = 1e-3
    tau: float = 1e-6

    def __post_init__(self) -> None:
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if not (self.eta > 0 and self.tau > 0):
            raise ValueError("eta and tau must be positive")


@dataclass
class ScaffoldState:
    eta_s: float
    c: np.ndarray
    c_clients: dict[int, np.ndarray]

    @classmethod
    def zeros(cls, dim: int, clients: Iterable[int], eta_s: float = 1.0) -> "ScaffoldState":
        return cls(eta_s, np.zeros(dim), {int(k): np.zeros(dim) for k in clients})


@dataclass
class ServerState:
    algorithm: str
    global_params: np.ndarray
    round: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    momentum_model: np.ndarray | None = None
    scaffold: ScaffoldState | None = None
    extra: dict[str, float] = field(default_factory=dict)

    def buffers(self) -> dict[str, np.ndarray]:
        """Named dense buffers, in a fixed order (checkpoint layout)."""
        out = {"global_params": self.global_params}
        for name in ("m", "v", "momentum_model"):
            val = getattr(self, name)
            if val is not None:
                out[name] = val
        if self.scaffold is not None:
            out["scaffold.c"] = self.scaffold.c
            for k in sorted(self.scaffold.c_clients):
                out[f"scaffold.c_clients.{k}"] = self.scaffold.c_clients[k]
        return out

    def copy(self) -> "ServerState":
        sc = None
        if self.scaffold is not None:
            sc = ScaffoldState(
                self.scaffold.eta_s,
                self.scaffold.c.copy(),
                {k: v.copy() for k, v in self.scaffold.c_clients.items()},
            )
        return ServerState(
            self.algorithm,
            self.global_params.copy(),
            self.round,
            None if self.m is None else self.m.copy(),
            None if self.v is None else self.v.copy(),
            None if self.momentum_model is None else self.momentum_model.copy(),
            sc,
            dict(self.extra),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ServerState):
            return NotImplemented
        a, b = self.buffers(), other.buffers()
        return (
            self.algorithm == other.algorithm
            and self.round == other.round
            and self.extra == other.extra
            and (self.scaffold is None) == (other.scaffold is None)
            and (self.scaffold is None or self.scaffold.eta_s == other.scaffold.eta_s)
            and a.keys() == b.keys()
            and all(np.array_equal(a[k], b[k]) for k in a)
        )


def init_state(
    algorithm: str,
    params: np.ndarray,
    clients: Iterable[int] = (),
    adaptive: AdaptiveServerConfig | None = None,
    eta_s: float = 1.0,
) -> ServerState:
    state = ServerState(algorithm, params.copy())
    if algorithm in ADAPTIVE_KIND:
        tau = (adaptive or AdaptiveServerConfig()).tau
        state.m = np.zeros_like(params)
        state.v = np.full_like(params, tau * tau)
    elif algorithm == "fedavgm":
        state.momentum_model = params.copy()
    elif algorithm == "scaffold":
        state.scaffold = ScaffoldState.zeros(params.size, clients, eta_s)
    return state


# ---------------------------------------------------------------------------
# weighting / averaging


def aggregate_weighted(updates: Sequence[tuple[np.ndarray, float]]) -> np.ndarray:
    """Elementwise sum(w_k * p_k) / sum(w_k)."""
    if not updates:
        raise NoUpdates("no client updates to aggregate")
    dim = updates[0][0].shape
    weights = np.array([float(w) for _, w in updates])
    if (weights < 0).any() or not np.isfinite(weights).all():
        raise ValueError("weights must be finite and nonnegative")
    total = weights.sum()
    if total <= 0:
        raise ZeroTotalWeight("aggregation weights sum to zero")
    acc = np.zeros(dim)
    for (p, _), w in zip(updates, weights):
        if p.shape != dim:
            raise DimensionMismatch(f"update of shape {p.shape} vs {dim}")
        if w:
            acc += (w / total) * p
    return acc


def _normalized(raw: np.ndarray) -> np.ndarray:
    total = raw.sum()
    return raw / total if total > 0 else raw


def fedavg_weights(updates: Sequence[LocalUpdate]) -> np.ndarray:
    """Normalized step-count weights (all zeros if nobody trained)."""
    return _normalized(np.array([float(u.n_steps_trained) for u in updates]))


def fedmobileagent_weights(updates: Sequence[LocalUpdate], lam: float = 7.0) -> np.ndarray:
    """Normalized S_k + lam * E_k."""
    if not updates:
        raise NoUpdates("no client updates")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    raw = np.array([float(u.n_steps_trained) + lam * float(u.n_episodes_trained) for u in updates])
    if raw.sum() <= 0:
        raise ZeroTotalWeight("FedMobileAgent weights sum to zero")
    return raw / raw.sum()


# ---------------------------------------------------------------------------
# server updates


def _check(state: ServerState, vec: np.ndarray) -> None:
    if vec.shape != state.global_params.shape:
        raise DimensionMismatch(f"{vec.shape} vs global {state.global_params.shape}")


def fedavgm_update(state: ServerState, aggregated: np.ndarray, h: float = 0.9) -> ServerState:
    _check(state, aggregated)
    new = state.copy()
    new.global_params = h * state.global_params + (1.0 - h) * aggregated
    new.momentum_model = new.global_params.copy()
    return new


def adaptive_update(
    state: ServerState, kind: str, aggregated: np.ndarray, cfg: AdaptiveServerConfig
) -> ServerState:
    _check(state, aggregated)
    new = state.copy()
    m = state.m if state.m is not None else np.zeros_like(aggregated)
    v = state.v if state.v is not None else np.full_like(aggregated, cfg.tau**2)
    if not np.isfinite(v).all():
        raise ValueError("second-moment buffer is not finite")
    delta = aggregated - state.global_params
    d2 = delta * delta
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * delta
    if kind == "adagrad":
        v = v + d2
    elif kind == "adam":
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * d2
    elif kind == "yogi":
        v = v - (1.0 - cfg.beta2) * d2 * np.sign(v - d2)
    else:
        raise ValueError(f"unknown adaptive optimizer {kind!r}")
    new.m, new.v = m, v
    new.global_params = state.global_params + cfg.eta * m / (np.sqrt(v) + cfg.tau)
    return new


def scaffold_round(
    state: ServerState,
    client_updates: Sequence[tuple[int, np.ndarray, np.ndarray]],
    n_clients: int | None = None,
) -> ServerState:
    """Apply one SCAFFOLD server step.

    ``client_updates`` holds ``(client_index, params_k, delta_c_k)``.
    """
    if state.scaffold is None:
        raise ValueError("state has no SCAFFOLD buffers")
    if not client_updates:
        raise NoUpdates("no client updates")
    sc = state.scaffold
    for k, p, d in client_updates:
        if k not in sc.c_clients:
            raise UnknownClient(k)
        _check(state, p)
        _check(state, d)
    N = n_clients if n_clients is not None else len(sc.c_clients)
    new = state.copy()
    nsc = new.scaffold
    S = len(client_updates)
    dx = sum(p - state.global_params for _, p, _ in client_updates) / S
    new.global_params = state.global_params + sc.eta_s * dx
    dc = sum(d for _, _, d in client_updates) / S
    for k, _, d in client_updates:
        nsc.c_clients[k] = sc.c_clients[k] + d
    nsc.c = sc.c + (S / N) * dc
    return new
