"""Variable Selection, Action Selection and the Decision Stump learner."""

from __future__ import annotations

from functools import partial
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    ActionStatTable,
    ContractViolation,
    PairStatTable,
    RewardObservation,
    RoundRobinCursor,
    credit_pairs,
    check_context,
    incremental_action_update,
    incremental_pair_update,
    round_robin_next,
)
from .elimination import (
    EliminationConfig,
    action_radius,
    should_eliminate,
    variable_radius,
)

# reward_source(x, action) -> reward in [0, 1]
RewardSource = Callable[[Optional[np.ndarray], int], float]


class VariableSelection:
    """Successive elimination of contextual variables by their stump value."""

    def __init__(self, cfg: EliminationConfig, variables: Optional[Sequence[int]] = None):
        self.cfg = cfg
        variables = range(cfg.M) if variables is None else variables
        self.stats = PairStatTable(variables, cfg.K)
        self.cursor = RoundRobinCursor(range(cfg.K))
        self.t = 0

    @property
    def remaining_vars(self) -> list:
        return self.stats.variables.tolist()

    @property
    def finished(self) -> bool:
        return len(self.stats.variables) == 1

    def step(self, x, reward_source: RewardSource) -> int:
        if self.finished:
            raise ContractViolation("variable selection already finished")
        x = check_context(x, self.cfg.M)
        k = round_robin_next(self.cursor)
        reward = reward_source(x, k)
        self.stats.t_k[k] += 1
        incremental_pair_update(self.stats, x, RewardObservation(k, reward))
        if self.cursor.is_last_action:
            self._eliminate(int(self.stats.t_k[k]))
        self.t += 1
        return k

    def _eliminate(self, t_k: int) -> None:
        scores = self.stats.mu_hat_var
        best = int(np.argmax(scores))
        radius = variable_radius(self.cfg, t_k)
        keep = [
            r
            for r in range(len(scores))
            if r == best or not should_eliminate(scores[best], scores[r], self.cfg.epsilon, radius)
        ]
        if len(keep) < len(scores):
            self.stats.keep(keep)


class ActionSelection:
    """Successive elimination over actions (context-free)."""

    def __init__(self, cfg: EliminationConfig, actions: Optional[Sequence[int]] = None):
        self.cfg = cfg
        self.stats = ActionStatTable(cfg.K)
        self.cursor = RoundRobinCursor(range(cfg.K) if actions is None else actions)
        self.t = 0

    @property
    def remaining_actions(self) -> list:
        return list(self.cursor.order)

    @property
    def finished(self) -> bool:
        return len(self.cursor) == 1

    def best_action(self) -> int:
        remaining = self.cursor.order
        return remaining[int(np.argmax(self.stats.mu_hat[remaining]))]

    def step(self, reward_source: RewardSource, x=None) -> int:
        if self.finished:
            raise ContractViolation("action selection already finished")
        k = round_robin_next(self.cursor)
        self.credit(k, reward_source(x, k))
        return k

    def credit(self, k: int, reward: float, sweep_done: Optional[bool] = None) -> None:
        self.stats.t_k[k] += 1
        incremental_action_update(self.stats, RewardObservation(k, reward))
        if sweep_done is None:
            sweep_done = self.cursor.is_last_action
        if sweep_done:
            self._eliminate(int(self.stats.t_k[k]))
        self.t += 1

    def _eliminate(self, t_k: int) -> None:
        remaining = self.cursor.order
        mu = self.stats.mu_hat
        best = self.best_action()
        radius = action_radius(self.cfg, t_k)
        dead = [
            k
            for k in remaining
            if k != best and should_eliminate(mu[best], mu[k], self.cfg.epsilon, radius)
        ]
        self.cursor.remove(dead)


def vs_step(state: VariableSelection, x, cfg: EliminationConfig, reward_source: RewardSource):
    state.cfg = cfg
    return state.step(x, reward_source), state


def as_step(state: ActionSelection, cfg: EliminationConfig, reward_source: RewardSource):
    state.cfg = cfg
    return state.step(reward_source), state


class StumpNode:
    """Joint variable and per-(variable, value) action elimination.

    This is the unit both :class:`DecisionStump` and every node of a bandit
    tree are made of. Per-(i, v) action statistics are stored as arrays of
    shape ``(n_remaining_vars, 2, K)``.
    """

    def __init__(self, variables: Sequence[int], n_actions: int):
        self.pairs = PairStatTable(variables, n_actions)
        n = len(self.pairs.variables)
        if n == 0:
            raise ContractViolation("a stump needs at least one candidate variable")
        self.n_actions = int(n_actions)
        self.act_mu = np.zeros((n, 2, n_actions))
        self.act_t = np.zeros((n, 2, n_actions), dtype=np.int64)
        self.act_alive = np.ones((n, 2, n_actions), dtype=bool)

    @property
    def variables(self) -> np.ndarray:
        return self.pairs.variables

    @property
    def finished(self) -> bool:
        return self.pairs.variables.shape[0] == 1

    @property
    def chosen_var(self) -> Optional[int]:
        return int(self.pairs.variables[0]) if self.finished else None

    def value_actions(self, value: int, row: int = 0) -> np.ndarray:
        """Remaining actions of the (variable in ``row``, value) task."""
        return np.flatnonzero(self.act_alive[row, value])

    def leaf_best(self, value: int, row: int = 0) -> int:
        alive = self.act_alive[row, value]
        mu = np.where(alive, self.act_mu[row, value], -np.inf)
        return int(np.argmax(mu))

    def settled(self, value: int) -> bool:
        return self.finished and np.count_nonzero(self.act_alive[0, value]) == 1

    def update(
        self,
        x: np.ndarray,
        actions: np.ndarray,
        credits: np.ndarray,
        var_radius: Callable,
        act_radius: Callable,
        epsilon: float,
        check_all: bool = False,
    ) -> None:
        """Credit rewards and run the elimination checks that are due.

        Without ``check_all`` a check fires only when the single credited
        action is the last one of the relevant set (end of a round-robin
        sweep). With ``check_all`` (all support actions credited together)
        every update ends a sweep.
        """
        pairs = self.pairs
        xs = x[pairs.variables]
        pairs.t_k[actions] += 1
        credit_pairs(pairs, xs, actions, credits)

        K = self.n_actions
        rows = np.arange(xs.shape[0])
        # flat offsets of the (row, x value) action blocks
        base = rows * (2 * K) + xs * K
        flat_t = self.act_t.reshape(-1)
        flat_mu = self.act_mu.reshape(-1)
        if actions.shape[0] == 1:
            idx = base + actions[0]
            c = flat_t[idx] + 1
            flat_t[idx] = c
            flat_mu[idx] += (credits[0] - flat_mu[idx]) / c
        else:
            idx = base[:, None] + actions[None, :]
            c = flat_t[idx] + 1
            flat_t[idx] = c
            flat_mu[idx] += (credits[None, :] - flat_mu[idx]) / c

        if check_all:
            fire = rows
        else:
            k = actions[0]
            alive = self.act_alive[rows, xs]
            fire = np.flatnonzero(alive[:, k] & ~alive[:, k + 1:].any(axis=1))
        if fire.size:
            self._eliminate_actions(fire, xs[fire], act_radius, epsilon)

        if not self.finished and (check_all or actions[0] == K - 1):
            self._eliminate_variables(var_radius, epsilon)

    def _eliminate_actions(self, rows, xs, act_radius, epsilon) -> None:
        alive = self.act_alive[rows, xs]
        multi = alive.sum(axis=1) > 1
        if not multi.any():
            return
        rows, xs, alive = rows[multi], xs[multi], alive[multi]
        counts = np.where(alive, self.act_t[rows, xs], np.iinfo(np.int64).max).min(axis=1)
        ready = counts >= 1
        if not ready.any():
            return
        rows, xs, alive, counts = rows[ready], xs[ready], alive[ready], counts[ready]
        mu = np.where(alive, self.act_mu[rows, xs], -np.inf)
        best = np.argmax(mu, axis=1)
        top = mu[np.arange(rows.shape[0]), best]
        radius = act_radius(counts)
        dead = alive & (top[:, None] - mu + epsilon >= radius[:, None])
        dead[np.arange(rows.shape[0]), best] = False
        if dead.any():
            self.act_alive[rows, xs] = alive & ~dead

    def _eliminate_variables(self, var_radius, epsilon) -> None:
        t = int(self.pairs.t_k.min())
        if t < 1:
            return
        scores = self.pairs.mu_hat_var
        best = int(np.argmax(scores))
        dead = scores[best] - scores + epsilon >= var_radius(t)
        dead[best] = False
        if dead.any():
            keep = np.flatnonzero(~dead)
            self.pairs.keep(keep)
            self.act_mu = self.act_mu[keep]
            self.act_t = self.act_t[keep]
            self.act_alive = self.act_alive[keep]


class DecisionStump:
    """Round-robin decision stump: explore all actions until one variable is
    left, then round-robin inside the surviving actions of the observed value.
    """

    def __init__(self, cfg: EliminationConfig):
        self.cfg = cfg
        self.node = StumpNode(range(cfg.M), cfg.K)
        self.cursor = RoundRobinCursor(range(cfg.K))
        self._leaf_cursors: dict = {}
        self.t = 0
        self._var_radius = partial(variable_radius, cfg)
        self._act_radius = partial(action_radius, cfg)

    @property
    def finished(self) -> bool:
        """Variable chosen and a single action left for both values."""
        return self.node.settled(0) and self.node.settled(1)

    @property
    def chosen_var(self) -> Optional[int]:
        return self.node.chosen_var

    def leaf_actions(self) -> dict:
        if not self.node.finished:
            return {}
        return {v: self.node.value_actions(v).tolist() for v in (0, 1)}

    def decide(self, x) -> int:
        x = check_context(x, self.cfg.M)
        if not self.node.finished:
            return round_robin_next(self.cursor)
        v = int(x[self.node.chosen_var])
        cursor = self._leaf_cursors.get(v)
        alive = self.node.value_actions(v).tolist()
        if cursor is None:
            cursor = self._leaf_cursors[v] = RoundRobinCursor(alive)
        else:
            cursor.remove(set(cursor.order) - set(alive))
        return round_robin_next(cursor)

    def update(self, x, action: int, reward: float) -> None:
        x = check_context(x, self.cfg.M)
        self.node.update(
            x,
            np.array([action]),
            np.array([float(reward)]),
            self._var_radius,
            self._act_radius,
            self.cfg.epsilon,
        )
        self.t += 1

    def step(self, x, reward_source: RewardSource) -> int:
        k = self.decide(x)
        self.update(x, k, reward_source(x, k))
        return k

    def predict_one(self, x) -> int:
        x = check_context(x, self.cfg.M)
        if not self.node.finished:
            scores = self.node.pairs.mu_hat_var
            row = int(np.argmax(scores))
        else:
            row = 0
        v = int(x[self.node.variables[row]])
        return self.node.leaf_best(v, row)


def stump_step(state: DecisionStump, x, cfg: EliminationConfig, reward_source: RewardSource):
    return state.step(x, reward_source), state
