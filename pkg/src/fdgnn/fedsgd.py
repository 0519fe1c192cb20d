"""Round-based FedSGD plumbing shared by both training protocols.

Each sampled train client performs exactly one forward/backward pass per
round and keeps momentum state of its own between rounds; the server
averages the locally updated models. Averaging models that all start from
the shared parameters theta equals

    theta <- theta - lr * mean_over_sampled(velocity_v)

which is the canonical update used here. When every train client is
sampled in every round (the common case at these scales: the 1024-client
budget exceeds the train set), the mean of per-client velocities follows
the same recurrence as a single pooled velocity, so only the pooled vector
is tracked. Otherwise velocities are materialized per client.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .rng import CLIENTS, keyed_rng


@dataclass(frozen=True)
class RunSettings:
    """Protocol-level knobs; the harness resolves these from experiment config."""

    arch: str
    k: int = 2
    rounds: int = 400
    lr: float = 0.01
    hidden: int = 256
    heads: int = 8
    pool_dim: int = 512
    batch_cap: int = 1024
    neighbor_cap: int = 25
    momentum: float = 0.9
    weight_decay: float = 0.0005
    patience: int | None = None
    edge_keep: float = 1.0
    seed: int = 0
    residual: bool = False
    log_events: bool = False


def sample_round_clients(train_ids: np.ndarray, val_ids: np.ndarray, cap: int,
                         seed: int, stage: int, round_no: int):
    """Per-round train/val subsets, proportional within the total budget."""
    n_tr, n_val = len(train_ids), len(val_ids)
    if n_tr == 0:
        raise ConfigError("no train clients available for sampling")
    total = n_tr + n_val
    share_tr = min(n_tr, max(1, int(round(cap * n_tr / total))))
    share_val = min(n_val, cap - share_tr)
    tr = train_ids
    if share_tr < n_tr:
        rng = keyed_rng(seed, CLIENTS, stage, round_no, 0)
        tr = np.sort(train_ids[rng.permutation(n_tr)[:share_tr]])
    va = val_ids
    if share_val < n_val:
        rng = keyed_rng(seed, CLIENTS, stage, round_no, 1)
        va = np.sort(val_ids[rng.permutation(n_val)[:share_val]])
    return tr, va


def full_participation(train_ids: np.ndarray, val_ids: np.ndarray, cap: int) -> bool:
    """True when the budget admits every train client in every round."""
    n_tr, n_val = len(train_ids), len(val_ids)
    if n_tr == 0:
        raise ConfigError("empty train set")
    return min(n_tr, max(1, int(round(cap * n_tr / (n_tr + n_val))))) >= n_tr


class PooledVelocity:
    """Mean-velocity state, valid under full train-client participation."""

    def __init__(self, n_params: int, dtype):
        self.v = np.zeros(n_params, dtype)

    def step(self, mean_grad: np.ndarray, theta: np.ndarray,
             momentum: float, weight_decay: float, sampled=None) -> np.ndarray:
        self.v = momentum * self.v + (mean_grad + weight_decay * theta)
        return self.v


class PerClientVelocity:
    """One velocity row per train client; returns the sampled-set mean."""

    def __init__(self, train_ids: np.ndarray, n_params: int, dtype):
        self.row_of = {int(c): i for i, c in enumerate(train_ids)}
        self.v = np.zeros((len(train_ids), n_params), dtype)

    def step_rows(self, sampled: np.ndarray, per_client_grads: np.ndarray,
                  theta: np.ndarray, momentum: float, weight_decay: float) -> np.ndarray:
        rows = np.fromiter((self.row_of[int(c)] for c in sampled), np.int64,
                           count=len(sampled))
        self.v[rows] = momentum * self.v[rows] + (per_client_grads + weight_decay * theta)
        return self.v[rows].mean(axis=0)


class EarlyStopTracker:
    """Stop after ``patience`` consecutive rounds without a new best loss."""

    def __init__(self, patience: int | None):
        self.patience = patience
        self.best_loss = np.inf
        self.best_round = -1
        self.round = -1

    def update(self, val_loss: float) -> bool:
        """Record one round's validation loss; True means stop now."""
        self.round += 1
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_round = self.round
            return False
        if self.patience is None:
            return False
        return self.round - self.best_round >= self.patience


def early_stop_check(tracker: EarlyStopTracker, val_loss: float,
                     patience: int | None = 30) -> str:
    """Functional wrapper over the tracker; returns 'continue' or 'stop'."""
    tracker.patience = patience
    return "stop" if tracker.update(val_loss) else "continue"
