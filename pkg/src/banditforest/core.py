"""Shared primitives: running-mean tables, round-robin cursor, plurality vote."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np


class ContractViolation(ValueError):
    """Raised when an operation is called outside its precondition."""


def check_context(x, n_variables: Optional[int] = None) -> np.ndarray:
    """Validate a binary context vector and return it as a uint8 array."""
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise ContractViolation(f"context must be 1-d, got shape {arr.shape}")
    if n_variables is not None and arr.shape[0] != n_variables:
        raise ContractViolation(
            f"context has {arr.shape[0]} variables, expected {n_variables}"
        )
    if arr.dtype != np.uint8:
        if not np.all((arr == 0) | (arr == 1)):
            raise ContractViolation("context entries must be 0 or 1")
        arr = arr.astype(np.uint8)
    elif arr.size and arr.max() > 1:
        raise ContractViolation("context entries must be 0 or 1")
    return arr


@dataclass(frozen=True)
class RewardObservation:
    """Reward revealed for the played action.

    ``support`` lists the actions that were eligible when the action was
    drawn uniformly (IPS mode). Under round-robin play the support is just
    the played action and ``propensity`` is 1.
    """

    action: int
    reward: float
    propensity: float = 1.0
    support: Optional[tuple] = None

    def __post_init__(self):
        if not 0.0 <= self.reward <= 1.0:
            raise ContractViolation(f"reward {self.reward} outside [0, 1]")
        if not 0.0 < self.propensity <= 1.0:
            raise ContractViolation("propensity must be in (0, 1]")
        if self.support is not None and self.action not in self.support:
            raise ContractViolation("played action must belong to the support")

    def credits(self, ips: bool = False):
        """Return ``(actions, credited_rewards)`` for the stat tables.

        Without IPS only the played action is credited with the raw reward.
        With IPS every support action is credited, the played one with
        ``reward / propensity`` and the others with 0, which makes the
        per-round credit an unbiased estimate of each action's mean.
        """
        if not ips or self.support is None:
            return np.array([self.action]), np.array([float(self.reward)])
        actions = np.asarray(self.support, dtype=np.intp)
        credit = np.where(actions == self.action, self.reward / self.propensity, 0.0)
        return actions, credit


class PairStatTable:
    """Running estimates of E[y_k 1{x_i = v}] for a set of variables.

    Arrays are stored compactly over ``variables`` (row ``r`` holds the
    variable ``variables[r]``); eliminated variables are dropped with
    :meth:`keep`.
    """

    def __init__(self, variables: Sequence[int], n_actions: int):
        self.variables = np.asarray(variables, dtype=np.intp)
        self.n_actions = int(n_actions)
        self.mu_hat = np.zeros((len(self.variables), self.n_actions, 2))
        self.t_k = np.zeros(self.n_actions, dtype=np.int64)

    @property
    def mu_hat_var(self) -> np.ndarray:
        """Per-variable score sum_v max_k mu_hat[i, k, v]."""
        return self.mu_hat.max(axis=1).sum(axis=1)

    def row_of(self, variable: int) -> int:
        rows = np.flatnonzero(self.variables == variable)
        if rows.size == 0:
            raise ContractViolation(f"variable {variable} not tracked")
        return int(rows[0])

    def keep(self, rows) -> None:
        rows = np.asarray(rows, dtype=np.intp)
        self.variables = self.variables[rows]
        self.mu_hat = self.mu_hat[rows]


class ActionStatTable:
    """Running means of action rewards."""

    def __init__(self, n_actions: int):
        self.mu_hat = np.zeros(int(n_actions))
        self.t_k = np.zeros(int(n_actions), dtype=np.int64)


def _check_action(table, action: int) -> None:
    if not 0 <= action < table.t_k.shape[0]:
        raise ContractViolation(f"unknown action {action}")
    if table.t_k[action] < 1:
        raise ContractViolation(
            "play count must be incremented before the mean update"
        )


def credit_pairs(table: PairStatTable, xs: np.ndarray, actions: np.ndarray, credits: np.ndarray) -> None:
    """Running-mean update of all tracked rows for several actions at once.

    ``xs`` holds the context values of ``table.variables``; counts of
    ``actions`` must already be incremented.
    """
    t = table.t_k[actions]
    if np.any(t < 1):
        raise ContractViolation("play count must be incremented before the mean update")
    if actions.shape[0] == 1:
        k = actions[0]
        t = t[0]
        block = table.mu_hat[:, k, :]
        block *= (t - 1) / t
        block[np.arange(block.shape[0]), xs] += credits[0] / t
        return
    block = table.mu_hat[:, actions, :] * ((t - 1) / t)[None, :, None]
    block[np.arange(xs.shape[0])[:, None], np.arange(actions.shape[0])[None, :], xs[:, None]] += (
        credits / t
    )[None, :]
    table.mu_hat[:, actions, :] = block


def incremental_pair_update(
    table: PairStatTable,
    x: np.ndarray,
    obs: RewardObservation,
    active_vars: Optional[Iterable[int]] = None,
) -> PairStatTable:
    """Credit one reward to every tracked (or every ``active_vars``) variable.

    The caller increments ``table.t_k[obs.action]`` first; the update uses
    the post-increment count.
    """
    k = obs.action
    _check_action(table, k)
    if active_vars is None:
        credit_pairs(table, x[table.variables], np.array([k]), np.array([float(obs.reward)]))
        return table
    rows = np.array([table.row_of(i) for i in active_vars], dtype=np.intp)
    t = table.t_k[k]
    xs = x[table.variables[rows]]
    block = table.mu_hat[rows, k, :] * ((t - 1) / t)
    block[np.arange(block.shape[0]), xs] += obs.reward / t
    table.mu_hat[rows, k, :] = block
    return table


def incremental_action_update(table: ActionStatTable, obs: RewardObservation):
    k = obs.action
    _check_action(table, k)
    t = table.t_k[k]
    table.mu_hat[k] = obs.reward / t + (t - 1) / t * table.mu_hat[k]
    return table


class RoundRobinCursor:
    """Cyclic pass over a shrinking set of action ids (kept in id order)."""

    def __init__(self, actions: Iterable[int]):
        self.order = sorted(int(a) for a in actions)
        self.next = 0
        self.is_last_action = False

    def __len__(self):
        return len(self.order)

    def remove(self, actions: Iterable[int]) -> None:
        """Drop actions; the cursor keeps pointing at the next survivor."""
        drop = set(int(a) for a in actions)
        if not drop:
            return
        upcoming = self.order[self.next:] if self.next < len(self.order) else []
        self.order = [a for a in self.order if a not in drop]
        survivors = [a for a in upcoming if a not in drop]
        if survivors:
            self.next = self.order.index(survivors[0])
        else:
            self.next = 0

    def restart(self) -> None:
        self.next = 0


def round_robin_next(cursor: RoundRobinCursor) -> int:
    """Return the next action and set ``cursor.is_last_action``."""
    if not cursor.order:
        raise ContractViolation("round-robin over an empty action set")
    if cursor.next >= len(cursor.order):
        cursor.next = 0
    action = cursor.order[cursor.next]
    cursor.next += 1
    cursor.is_last_action = cursor.next == len(cursor.order)
    if cursor.is_last_action:
        cursor.next = 0
    return action


def plurality_vote(votes: Sequence[int]) -> int:
    """Most voted action; ties go to the lowest action id."""
    if len(votes) == 0:
        raise ContractViolation("cannot vote with no voters")
    counts = Counter(int(v) for v in votes)
    best = max(counts.values())
    return min(a for a, c in counts.items() if c == best)


def argmax_lowest(values: np.ndarray) -> int:
    """np.argmax already returns the first maximum; named for readability."""
    return int(np.argmax(values))
