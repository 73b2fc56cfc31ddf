"""Greedy trees and forests built with full knowledge of the distribution."""

from __future__ import annotations

import json
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_array, check_random_state

from .core import ContractViolation, plurality_vote
from .forest import TreeRandomization


class KnownDistribution:
    """A finite distribution over (context, mean reward vector) pairs.

    ``contexts`` is ``(n, M)`` binary, ``weights`` the probability of each
    row and ``rewards`` the ``(n, K)`` conditional mean rewards. An
    empirical dataset is the special case of uniform weights over its rows.
    """

    def __init__(self, contexts, weights, rewards, empirical: bool = False):
        self.contexts = check_array(contexts, dtype=np.uint8)
        self.weights = np.asarray(weights, dtype=float)
        self.rewards = check_array(rewards, dtype=float)
        self.empirical = empirical
        n = self.contexts.shape[0]
        if self.weights.shape != (n,) or self.rewards.shape[0] != n:
            raise ContractViolation("contexts, weights and rewards disagree in length")
        if np.any(self.contexts > 1):
            raise ContractViolation("contexts must be binary")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ContractViolation("weights must be nonnegative and sum to 1")
        if np.any(self.rewards < 0) or np.any(self.rewards > 1):
            raise ContractViolation("rewards must lie in [0, 1]")
        self._index = None

    @classmethod
    def from_labels(cls, X, labels, n_actions: int) -> "KnownDistribution":
        """Empirical distribution of a labelled dataset (reward = 1{action == label})."""
        X = check_array(X, dtype=np.uint8)
        labels = np.asarray(labels, dtype=np.intp)
        rewards = np.zeros((X.shape[0], n_actions))
        rewards[np.arange(X.shape[0]), labels] = 1.0
        return cls(X, np.full(X.shape[0], 1.0 / X.shape[0]), rewards, empirical=True)

    @property
    def n_variables(self) -> int:
        return self.contexts.shape[1]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]

    def path_mask(self, path) -> np.ndarray:
        mask = np.ones(self.contexts.shape[0], dtype=bool)
        for i, v in path:
            mask &= self.contexts[:, i] == v
        return mask

    def action_means(self, path=()) -> np.ndarray:
        """E[y_k | path] for every action."""
        mask = self.path_mask(path)
        p = self.weights[mask].sum()
        if p <= 0:
            raise ContractViolation(f"path {path} has zero probability")
        return self.weights[mask] @ self.rewards[mask] / p

    def conditional_means(self, x) -> np.ndarray:
        """E[y | x]; weighted average over duplicate rows in empirical mode."""
        if self._index is None:
            index: dict = {}
            for r, row in enumerate(self.contexts):
                index.setdefault(row.tobytes(), []).append(r)
            self._index = {k: np.array(v) for k, v in index.items()}
        rows = self._index.get(np.asarray(x, dtype=np.uint8).tobytes())
        if rows is None:
            raise ContractViolation("context has zero probability")
        w = self.weights[rows]
        return w @ self.rewards[rows] / w.sum()

    def sample(self, rng, size: Optional[int] = None):
        """Draw context row indices."""
        return rng.choice(self.contexts.shape[0], size=size, p=self.weights)

    # plain-text table: header "# variables=M actions=K", then rows of
    # M bits, P(x), K conditional means

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# variables={self.n_variables} actions={self.n_actions}\n")
            for x, w, r in zip(self.contexts, self.weights, self.rewards):
                fields = [str(int(b)) for b in x] + [repr(float(w))] + [repr(float(v)) for v in r]
                fh.write(" ".join(fields) + "\n")

    @classmethod
    def load(cls, path) -> "KnownDistribution":
        M = K = None
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    for token in line[1:].split():
                        if "=" in token:
                            key, value = token.split("=", 1)
                            if key == "variables":
                                M = int(value)
                            elif key == "actions":
                                K = int(value)
                    continue
                rows.append([float(v) for v in line.split()])
        if M is None or K is None:
            raise ContractViolation("missing '# variables=M actions=K' header")
        table = np.array(rows)
        if table.shape[1] != M + 1 + K:
            raise ContractViolation(f"expected {M + 1 + K} columns, got {table.shape[1]}")
        return cls(table[:, :M], table[:, M], table[:, M + 1:])


def conditional_scores(dist: KnownDistribution, path=(), candidates=None) -> dict:
    """Map each candidate variable i to sum_v max_k E[y_k 1{x_i=v} | path]."""
    mask = dist.path_mask(path)
    p = dist.weights[mask].sum()
    if p <= 0:
        raise ContractViolation(f"path {path} has zero probability")
    X = dist.contexts[mask]
    wr = dist.weights[mask, None] * dist.rewards[mask]
    if candidates is None:
        candidates = range(dist.n_variables)
    candidates = sorted(int(i) for i in candidates)
    cols = X[:, candidates].astype(float)
    ones = cols.T @ wr
    zeros = wr.sum(axis=0)[None, :] - ones
    scores = (ones.max(axis=1) + zeros.max(axis=1)) / p
    return dict(zip(candidates, scores.tolist()))


class GreedyTreePolicy:
    """A tree given by split variables per path and one action per leaf."""

    def __init__(self, splits: dict, leaves: dict):
        self.splits = splits
        self.leaves = leaves

    @property
    def depth(self) -> int:
        return max((len(k) for k in self.leaves), default=0)

    def predict_one(self, x) -> int:
        path = ()
        while path in self.splits:
            i = self.splits[path]
            path = path + ((i, int(x[i])),)
        return self.leaves[path]

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.uint8))
        out = np.empty(X.shape[0], dtype=np.intp)
        stack = [((), np.arange(X.shape[0]))]
        while stack:
            path, rows = stack.pop()
            if path not in self.splits:
                out[rows] = self.leaves[path]
                continue
            i = self.splits[path]
            bit = X[rows, i]
            for v in (0, 1):
                sub = rows[bit == v]
                if sub.size:
                    stack.append((path + ((i, v),), sub))
        return out

    def to_dict(self) -> dict:
        return {
            "splits": [[list(map(list, k)), i] for k, i in self.splits.items()],
            "leaves": [[list(map(list, k)), a] for k, a in self.leaves.items()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GreedyTreePolicy":
        def key(k):
            return tuple((int(i), int(v)) for i, v in k)
        return cls({key(k): int(i) for k, i in d["splits"]},
                   {key(k): int(a) for k, a in d["leaves"]})


def build_theta_optimal_greedy(
    dist: KnownDistribution, rand: TreeRandomization, depth_cap: Optional[int] = None
) -> GreedyTreePolicy:
    """Greedy tree on exact conditional scores under the randomization ``rand``.

    ``depth_cap`` overrides ``rand.depth_cap``; pass ``float('inf')`` to grow
    until variables run out or no split can change a leaf's value.
    """
    cap = rand.depth_cap if depth_cap is None else depth_cap
    splits: dict = {}
    leaves: dict = {}
    best_row_value = dist.rewards.max(axis=1)

    def grow(path, available, parent_action):
        mask = dist.path_mask(path)
        p = dist.weights[mask].sum()
        if p <= 0:
            leaves[path] = parent_action
            return
        means = dist.weights[mask] @ dist.rewards[mask] / p
        action = int(np.argmax(means))
        # no split can improve on a leaf whose action is already best everywhere below it
        ceiling = dist.weights[mask] @ best_row_value[mask] / p
        if len(path) >= cap or not available or means[action] >= ceiling - 1e-12:
            leaves[path] = action
            return
        candidates = rand.candidates(path, available)
        scores = conditional_scores(dist, path, candidates)
        best = max(candidates, key=lambda i: (scores[i], -i))
        splits[path] = best
        rest = [i for i in available if i != best]
        for v in (0, 1):
            grow(path + ((best, v),), rest, action)

    grow((), list(range(dist.n_variables)), int(np.argmax(dist.weights @ dist.rewards)))
    return GreedyTreePolicy(splits, leaves)


class ForestPolicy:
    """Plurality vote of greedy trees."""

    def __init__(self, trees: Sequence[GreedyTreePolicy]):
        if not trees:
            raise ContractViolation("a forest needs at least one tree")
        self.trees = list(trees)
        self._cache: dict = {}

    def predict_one(self, x) -> int:
        key = np.asarray(x, dtype=np.uint8).tobytes()
        action = self._cache.get(key)
        if action is None:
            action = plurality_vote([t.predict_one(x) for t in self.trees])
            if len(self._cache) < 1_000_000:
                self._cache[key] = action
        return action

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.uint8))
        if len(self.trees) == 1:
            return self.trees[0].predict(X)
        votes = np.stack([t.predict(X) for t in self.trees], axis=1)
        return np.array([plurality_vote(row) for row in votes], dtype=np.intp)

    def to_json(self) -> str:
        return json.dumps({"trees": [t.to_dict() for t in self.trees]}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ForestPolicy":
        return cls([GreedyTreePolicy.from_dict(t) for t in json.loads(text)["trees"]])


def optimal_forest_policy(dist: KnownDistribution, rands: Sequence[TreeRandomization],
                          depth_cap: Optional[int] = None) -> ForestPolicy:
    return ForestPolicy([build_theta_optimal_greedy(dist, r, depth_cap) for r in rands])


def policy_value(dist: KnownDistribution, policy) -> float:
    """Exact expected per-round reward of a deterministic policy."""
    if hasattr(policy, "predict"):
        actions = np.asarray(policy.predict(dist.contexts), dtype=np.intp)
    else:
        actions = np.array([policy(x) for x in dist.contexts], dtype=np.intp)
    return float(dist.weights @ dist.rewards[np.arange(len(actions)), actions])


class OptimalGreedyForest(BaseEstimator):
    """Full-information reference forest with a fit/predict interface.

    ``fit(X, rewards)`` treats the rows as the distribution (uniform weights
    unless ``sample_weight`` is given); ``rewards`` is ``(n, K)`` or a label
    vector.
    """

    def __init__(self, n_trees=1, max_depth=None, keep_fraction=1.0, random_state=None):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.keep_fraction = keep_fraction
        self.random_state = random_state

    def fit(self, X, rewards, sample_weight=None, n_actions=None):
        X = check_array(X, dtype=np.uint8)
        rewards = np.asarray(rewards)
        if rewards.ndim == 1:
            K = int(n_actions or rewards.max() + 1)
            dist = KnownDistribution.from_labels(X, rewards, K)
        else:
            w = np.full(X.shape[0], 1.0 / X.shape[0]) if sample_weight is None else (
                np.asarray(sample_weight, float) / np.sum(sample_weight))
            dist = KnownDistribution(X, w, rewards)
        self.fit_distribution(dist)
        return self

    def fit_distribution(self, dist: KnownDistribution):
        rng = check_random_state(self.random_state)
        cap = float("inf") if self.max_depth is None else int(self.max_depth)
        rands = [
            TreeRandomization(int(rng.randint(0, 2**62)), 1, 0.0, float(self.keep_fraction))
            for _ in range(self.n_trees)
        ]
        self.n_features_in_ = dist.n_variables
        self.policy_ = optimal_forest_policy(dist, rands, depth_cap=cap)
        return self

    def predict(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.uint8)
        return self.policy_.predict(X)
