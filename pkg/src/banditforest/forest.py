"""Bandit Forest: a vote of randomized greedy trees grown online from stumps."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from functools import partial
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_array, check_random_state

from .core import (
    ContractViolation,
    RewardObservation,
    RoundRobinCursor,
    check_context,
    plurality_vote,
    round_robin_next,
)
from .elimination import EliminationConfig, forest_action_radius, forest_variable_radius
from .stump import StumpNode

SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class TreeRandomization:
    """Per-tree draw of the randomization variable.

    ``keeps`` plays the role of the membership function f(theta, path, i): a
    Bernoulli(keep_fraction) draw derived from a hash of the seed, the path
    and the variable id, so it is stable under replay.
    """

    theta_seed: int
    depth_cap: int = 1
    epsilon_theta: float = 0.0
    keep_fraction: float = 1.0

    def __post_init__(self):
        if self.depth_cap < 1:
            raise ContractViolation("depth_cap must be >= 1")
        if not 0 < self.keep_fraction <= 1:
            raise ContractViolation("keep_fraction must be in (0, 1]")

    def uniform(self, path: tuple, variable: int) -> float:
        h = hashlib.blake2b(digest_size=8)
        h.update(struct.pack("<Q", self.theta_seed & 0xFFFFFFFFFFFFFFFF))
        for i, v in path:
            h.update(struct.pack("<qB", i, v))
        h.update(b"|")
        h.update(struct.pack("<q", variable))
        return int.from_bytes(h.digest(), "little") / 2.0**64

    def keeps(self, path: tuple, variable: int) -> bool:
        if self.keep_fraction >= 1.0:
            return True
        return self.uniform(path, variable) < self.keep_fraction

    def candidates(self, path: tuple, available) -> list:
        """f-filtered subset of ``available``; never empty if ``available`` is not."""
        available = sorted(int(i) for i in available)
        kept = [i for i in available if self.keeps(path, i)]
        if not kept and available:
            kept = [available[0]]
        return kept


@dataclass
class Decision:
    action: int
    propensity: float = 1.0
    support: tuple = ()
    keys: list = field(default_factory=list)
    explored: bool = True


class TreeNode:
    """A stump hanging at the end of a context path."""

    __slots__ = ("key", "depth", "available", "stump", "terminal", "children", "_votes")

    def __init__(self, key: tuple, depth: int, available: list, stump: StumpNode, terminal: bool):
        self.key = key
        self.depth = depth
        # variables still usable below this node (path variables excluded)
        self.available = available
        self.stump = stump
        self.terminal = terminal
        self.children: Optional[tuple] = None
        # (variable, action for x=0, action for x=1) once frozen; sets only shrink
        self._votes: Optional[tuple] = None

    @property
    def frozen(self) -> bool:
        """Terminal, variable chosen and one action left for both values."""
        if self._votes is not None:
            return True
        if self.terminal and self.stump.settled(0) and self.stump.settled(1):
            s = self.stump
            self._votes = (s.chosen_var, s.leaf_best(0), s.leaf_best(1))
            return True
        return False

    def votes_for(self, x) -> Optional[int]:
        if self._votes is not None:
            i, a0, a1 = self._votes
            return a1 if x[i] else a0
        if not self.terminal or not self.stump.finished:
            return None
        v = int(x[self.stump.chosen_var])
        alive = self.stump.act_alive[0, v]
        if np.count_nonzero(alive) != 1:
            return None
        return int(np.argmax(alive))

    def remaining_actions(self, x) -> np.ndarray:
        """Actions this node still wants explored for context ``x``."""
        if not self.stump.finished:
            return np.arange(self.stump.n_actions)
        return self.stump.value_actions(int(x[self.stump.chosen_var]))

    def guess(self, x) -> int:
        stump = self.stump
        row = 0 if stump.finished else int(np.argmax(stump.pairs.mu_hat_var))
        v = int(x[stump.variables[row]])
        return stump.leaf_best(v, row)


class BanditTree:
    """One greedy tree of a Bandit Forest."""

    def __init__(self, rand: TreeRandomization, n_variables: int, n_actions: int):
        self.rand = rand
        self.n_actions = n_actions
        self.nodes: dict = {}
        self.root = new_path(self, (), list(range(n_variables)), depth=1)

    def select_path(self, x) -> TreeNode:
        node = self.root
        while node.children is not None:
            node = node.children[x[node.stump.chosen_var]]
        return node

    def expand(self, node: TreeNode) -> None:
        chosen = node.stump.chosen_var
        available = [i for i in node.available if i != chosen]
        node.available = available
        node.children = tuple(
            new_path(self, node.key + ((chosen, v),), available, node.depth + 1) for v in (0, 1)
        )


def new_path(tree: BanditTree, key: tuple, available: list, depth: int) -> TreeNode:
    """Allocate a zeroed stump on ``key`` over the f-filtered available variables."""
    if key in tree.nodes:
        raise ContractViolation(f"path {key} already exists")
    used = {i for i, _ in key}
    available = [i for i in available if i not in used]
    if not available:
        raise ContractViolation(f"no variable left to split path {key}")
    candidates = tree.rand.candidates(key, available)
    terminal = depth >= tree.rand.depth_cap or len(available) == 1
    node = TreeNode(key, depth, available, StumpNode(candidates, tree.n_actions), terminal)
    tree.nodes[key] = node
    return node


def select_path(tree: BanditTree, x) -> tuple:
    return tree.select_path(x).key


def _as_range(value, name):
    if isinstance(value, (tuple, list)):
        lo, hi = value
    else:
        lo = hi = value
    if lo > hi:
        raise ValueError(f"{name} range is empty: {value}")
    return lo, hi


class BanditForest(BaseEstimator):
    """Online random forest for the contextual bandit problem.

    Parameters
    ----------
    n_actions : int
        Number of actions K.
    n_trees : int
        Number of trees L.
    max_depth : int or (int, int)
        Depth cap of every tree, or a range from which each tree draws its
        own cap. The radius always uses the upper end.
    delta : float
        Failure probability.
    epsilon : float or (float, float)
        Elimination slack, fixed or drawn per tree from a range.
    keep_fraction : float
        Probability that a variable is offered to a node (1.0 disables
        variable subsampling).
    exploration : {"round_robin", "ips"}
        Round-robin over all actions, or uniform draws over the union of the
        selected paths' remaining actions with inverse-propensity credits.
    vote_gate : {"local", "global"}
        Vote when the paths selected by the current context are all settled
        ("local"), or only once every path of every tree is ("global").
    random_state : int, Generator or None
    """

    def __init__(
        self,
        n_actions=2,
        n_trees=10,
        max_depth=3,
        delta=0.05,
        epsilon=0.0,
        keep_fraction=1.0,
        exploration="round_robin",
        vote_gate="local",
        random_state=None,
    ):
        self.n_actions = n_actions
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.delta = delta
        self.epsilon = epsilon
        self.keep_fraction = keep_fraction
        self.exploration = exploration
        self.vote_gate = vote_gate
        self.random_state = random_state

    def _initialize(self, n_variables: int) -> None:
        if self.exploration not in ("round_robin", "ips"):
            raise ValueError(f"unknown exploration mode {self.exploration!r}")
        if self.vote_gate not in ("local", "global"):
            raise ValueError(f"unknown vote gate {self.vote_gate!r}")
        d_lo, d_hi = _as_range(self.max_depth, "max_depth")
        e_lo, e_hi = _as_range(self.epsilon, "epsilon")
        self.n_features_in_ = int(n_variables)
        self.cfg_ = EliminationConfig(
            K=int(self.n_actions), M=int(n_variables), delta=self.delta,
            epsilon=0.0, L=int(self.n_trees), D=int(d_hi),
        )
        rng = check_random_state(self.random_state)
        rands = []
        for _ in range(self.n_trees):
            rands.append(TreeRandomization(
                theta_seed=int(rng.randint(0, 2**62)),
                depth_cap=int(rng.randint(d_lo, d_hi + 1)),
                epsilon_theta=float(rng.uniform(e_lo, e_hi)) if e_hi > e_lo else float(e_lo),
                keep_fraction=float(self.keep_fraction),
            ))
        self.trees_ = [BanditTree(r, self.n_features_in_, self.cfg_.K) for r in rands]
        self.cursor_ = RoundRobinCursor(range(self.cfg_.K))
        self.rng_ = np.random.default_rng(int(rng.randint(0, 2**62)))
        self.t_ = 0
        self._bind_radii()

    def _bind_radii(self) -> None:
        self._var_radius = partial(forest_variable_radius, self.cfg_)
        self._act_radius = partial(forest_action_radius, self.cfg_)

    def _check_x(self, x) -> np.ndarray:
        if not hasattr(self, "trees_"):
            self._initialize(np.asarray(x).shape[0])
        return check_context(x, self.n_features_in_)

    def decide(self, x) -> Decision:
        x = self._check_x(x)
        nodes = [tree.select_path(x) for tree in self.trees_]
        votes = [node.votes_for(x) for node in nodes]
        if self.vote_gate == "global":
            gate = all(self._complete(tree) for tree in self.trees_)
        else:
            gate = all(v is not None for v in votes)
        keys = [node.key for node in nodes]
        if gate:
            k = plurality_vote(votes)
            return Decision(k, 1.0, (k,), keys, explored=False)
        if self.exploration == "round_robin":
            k = round_robin_next(self.cursor_)
            return Decision(k, 1.0, (k,), keys)
        union = np.unique(np.concatenate([node.remaining_actions(x) for node in nodes]))
        k = int(union[self.rng_.integers(union.shape[0])])
        return Decision(k, 1.0 / union.shape[0], tuple(int(a) for a in union), keys)

    def _complete(self, tree: BanditTree) -> bool:
        return all(n.frozen for n in tree.nodes.values() if n.children is None)

    def update(self, x, decision: Decision, reward: float) -> None:
        x = self._check_x(x)
        if len(decision.keys) != len(self.trees_):
            raise ContractViolation("decision keys do not match the forest")
        ips = self.exploration == "ips"
        obs = RewardObservation(decision.action, float(reward), decision.propensity,
                                decision.support or None)
        actions, credits = obs.credits(ips=ips)
        for tree, key in zip(self.trees_, decision.keys):
            node = tree.nodes.get(key)
            if node is None:
                raise ContractViolation(f"path {key} not in tree")
            if node.frozen:
                continue
            node.stump.update(
                x, actions, credits, self._var_radius, self._act_radius,
                tree.rand.epsilon_theta, check_all=ips,
            )
            if node.stump.finished and not node.terminal and node.children is None:
                tree.expand(node)
        self.t_ += 1

    def step(self, x, reward_source) -> Decision:
        decision = self.decide(x)
        self.update(x, decision, reward_source(x, decision.action))
        return decision

    def predict(self, X) -> np.ndarray:
        """Current greedy vote of the trees (exploring paths use their best guess)."""
        X = check_array(X, dtype=np.uint8)
        if not hasattr(self, "trees_"):
            raise ContractViolation("forest has not seen any context yet")
        out = np.empty(X.shape[0], dtype=np.intp)
        for r, x in enumerate(X):
            out[r] = plurality_vote([tree.select_path(x).guess(x) for tree in self.trees_])
        return out

    def fit(self, X, y):
        """Replay labelled rows as a bandit stream (reward 1 iff action == label)."""
        X = check_array(X, dtype=np.uint8)
        y = np.asarray(y, dtype=np.intp)
        for x, label in zip(X, y):
            d = self.decide(x)
            self.update(x, d, float(d.action == label))
        return self

    # snapshot

    def to_snapshot(self) -> str:
        if not hasattr(self, "trees_"):
            raise ContractViolation("nothing to snapshot before the first context")
        params = self.get_params()
        if not isinstance(params["random_state"], (int, type(None))):
            params["random_state"] = None
        state = {
            "version": SNAPSHOT_VERSION,
            "params": params,
            "n_features_in": self.n_features_in_,
            "t": self.t_,
            "cursor": [self.cursor_.order, self.cursor_.next],
            "rng": self.rng_.bit_generator.state,
            "trees": [_tree_state(tree) for tree in self.trees_],
        }
        return json.dumps(state, sort_keys=True)

    @classmethod
    def from_snapshot(cls, text: str) -> "BanditForest":
        state = json.loads(text)
        if state.get("version") != SNAPSHOT_VERSION:
            raise ContractViolation(f"unsupported snapshot version {state.get('version')}")
        params = state["params"]
        for key in ("max_depth", "epsilon"):
            if isinstance(params[key], list):
                params[key] = tuple(params[key])
        forest = cls(**params)
        forest._initialize(state["n_features_in"])
        forest.t_ = state["t"]
        forest.cursor_.order, forest.cursor_.next = state["cursor"]
        forest.rng_.bit_generator.state = state["rng"]
        forest.trees_ = [_tree_from_state(s, forest.n_features_in_, forest.cfg_.K)
                         for s in state["trees"]]
        return forest


def _tree_state(tree: BanditTree) -> dict:
    nodes = []
    for key, node in tree.nodes.items():
        s = node.stump
        nodes.append({
            "key": [list(p) for p in key],
            "depth": node.depth,
            "available": node.available,
            "terminal": node.terminal,
            "expanded": node.children is not None,
            "variables": s.variables.tolist(),
            "t_k": s.pairs.t_k.tolist(),
            "mu_pair": s.pairs.mu_hat.tolist(),
            "act_mu": s.act_mu.tolist(),
            "act_t": s.act_t.tolist(),
            "act_alive": s.act_alive.tolist(),
        })
    r = tree.rand
    return {
        "rand": [r.theta_seed, r.depth_cap, r.epsilon_theta, r.keep_fraction],
        "nodes": nodes,
    }


def _tree_from_state(state: dict, n_variables: int, n_actions: int) -> BanditTree:
    seed, cap, eps, keep = state["rand"]
    tree = BanditTree.__new__(BanditTree)
    tree.rand = TreeRandomization(seed, cap, eps, keep)
    tree.n_actions = n_actions
    tree.nodes = {}
    for n in state["nodes"]:
        key = tuple((int(i), int(v)) for i, v in n["key"])
        stump = StumpNode(n["variables"], n_actions)
        stump.pairs.t_k = np.array(n["t_k"], dtype=np.int64)
        stump.pairs.mu_hat = np.array(n["mu_pair"], dtype=float).reshape(len(n["variables"]), n_actions, 2)
        stump.act_mu = np.array(n["act_mu"], dtype=float).reshape(len(n["variables"]), 2, n_actions)
        stump.act_t = np.array(n["act_t"], dtype=np.int64).reshape(stump.act_mu.shape)
        stump.act_alive = np.array(n["act_alive"], dtype=bool).reshape(stump.act_mu.shape)
        node = TreeNode(key, n["depth"], list(n["available"]), stump, n["terminal"])
        node.children = () if n["expanded"] else None
        tree.nodes[key] = node
    for node in tree.nodes.values():
        if node.children is not None:
            chosen = node.stump.chosen_var
            node.children = tuple(tree.nodes[node.key + ((chosen, v),)] for v in (0, 1))
    tree.root = tree.nodes[()]
    return tree
