"""Bandit environments: dataset ingestion, binarization, noise and synthetic problems."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import ContractViolation
from .oracle import KnownDistribution

KINDS = ("continuous", "categorical", "binary")
N_BINS = 5


# ---------------------------------------------------------------- datasets


@dataclass
class LabeledDataset:
    """Raw rows (strings) with per-column kinds and integer-coded labels."""

    names: List[str]
    kinds: List[str]
    rows: np.ndarray  # (n, n_columns) of str
    labels: np.ndarray  # (n,) int
    label_names: List[str]

    def __post_init__(self):
        if self.rows.ndim != 2 or self.rows.shape[1] != len(self.kinds):
            raise ContractViolation("row width does not match the schema")
        if self.labels.shape[0] != self.rows.shape[0]:
            raise ContractViolation("one label per row is required")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.label_names)):
            raise ContractViolation("label outside the vocabulary")

    @property
    def n_actions(self) -> int:
        return len(self.label_names)

    def __len__(self):
        return self.rows.shape[0]


def read_dataset(path, delimiter: str = ",") -> LabeledDataset:
    """Read a schema-headed delimited file.

    The first line is ``# name:kind,name:kind,...`` with kind one of
    continuous, categorical, binary or label (exactly one label column).
    """
    with open(path, newline="") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ContractViolation("missing '# name:kind,...' schema line")
        schema = [f.strip() for f in header[1:].strip().split(delimiter)]
        names, kinds = [], []
        for field in schema:
            name, _, kind = field.rpartition(":")
            if kind not in KINDS + ("label",):
                raise ContractViolation(f"unknown column kind {kind!r}")
            names.append(name)
            kinds.append(kind)
        if kinds.count("label") != 1:
            raise ContractViolation("the schema needs exactly one label column")
        table = [row for row in csv.reader(fh, delimiter=delimiter) if row]
    if not table:
        raise ContractViolation("dataset has no rows")
    table = np.array(table, dtype=str)
    if table.shape[1] != len(kinds):
        raise ContractViolation("row width does not match the schema")
    li = kinds.index("label")
    label_names = sorted(set(table[:, li].tolist()))
    lookup = {name: k for k, name in enumerate(label_names)}
    labels = np.array([lookup[v] for v in table[:, li]], dtype=np.intp)
    keep = [c for c in range(len(kinds)) if c != li]
    return LabeledDataset(
        [names[c] for c in keep], [kinds[c] for c in keep], table[:, keep], labels, label_names
    )


def write_dataset(path, rows, labels, kinds: Sequence[str], names: Optional[Sequence[str]] = None,
                  delimiter: str = ",") -> None:
    rows = np.asarray(rows)
    names = list(names) if names is not None else [f"c{j}" for j in range(rows.shape[1])]
    with open(path, "w", newline="") as fh:
        fh.write("# " + delimiter.join(f"{n}:{k}" for n, k in zip(names, kinds)) + f"{delimiter}label:label\n")
        writer = csv.writer(fh, delimiter=delimiter)
        for row, label in zip(rows, labels):
            writer.writerow([_fmt(v) for v in row] + [label])


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


# ------------------------------------------------------------ binarization


class QuantileBinarizer(TransformerMixin, BaseEstimator):
    """Equal-frequency binning of continuous columns into 5 indicator bits,
    one-hot encoding of categorical columns, pass-through of binary ones.

    Quantiles use linear interpolation between order statistics.
    """

    def __init__(self, kinds=None, n_bins=N_BINS):
        self.kinds = kinds
        self.n_bins = n_bins

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=object)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ContractViolation("cannot fit a binarization on an empty dataset")
        kinds = list(self.kinds) if self.kinds is not None else ["continuous"] * X.shape[1]
        if len(kinds) != X.shape[1]:
            raise ContractViolation("one kind per column is required")
        if X.shape[0] < self.n_bins and "continuous" in kinds:
            raise ContractViolation(f"equal-frequency binning needs >= {self.n_bins} rows")
        levels = np.linspace(0, 1, self.n_bins + 1)[1:]
        self.kinds_ = kinds
        self.columns_ = []
        for j, kind in enumerate(kinds):
            col = X[:, j]
            if kind == "continuous":
                try:
                    values = col.astype(float)
                except ValueError as exc:
                    raise ContractViolation(f"column {j} is not numeric") from exc
                self.columns_.append(np.quantile(values, levels))
            elif kind == "categorical":
                self.columns_.append(sorted(dict.fromkeys(str(v) for v in col)))
            elif kind == "binary":
                self.columns_.append(None)
            else:
                raise ContractViolation(f"unknown column kind {kind!r}")
        self.widths_ = [self._width(j) for j in range(len(kinds))]
        self.n_features_out_ = int(sum(self.widths_))
        self.unseen_counts_ = np.zeros(len(kinds), dtype=np.int64)
        return self

    def _width(self, j):
        kind = self.kinds_[j]
        if kind == "continuous":
            return self.n_bins
        if kind == "categorical":
            return len(self.columns_[j])
        return 1

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "columns_")
        X = np.asarray(X, dtype=object)
        if X.ndim == 1:
            X = X[None, :]
        out = np.zeros((X.shape[0], self.n_features_out_), dtype=np.uint8)
        offset = 0
        for j, kind in enumerate(self.kinds_):
            col = X[:, j]
            if kind == "continuous":
                inner = self.columns_[j][:-1]
                bins = np.searchsorted(inner, col.astype(float), side="left")
                out[np.arange(X.shape[0]), offset + bins] = 1
            elif kind == "categorical":
                lookup = {c: b for b, c in enumerate(self.columns_[j])}
                for r, v in enumerate(col):
                    b = lookup.get(str(v))
                    if b is None:
                        self.unseen_counts_[j] += 1
                    else:
                        out[r, offset + b] = 1
            else:
                values = col.astype(float)
                if np.any((values != 0) & (values != 1)):
                    raise ContractViolation(f"binary column {j} holds values other than 0/1")
                out[:, offset] = values.astype(np.uint8)
            offset += self.widths_[j]
        return out

    def save(self, path, names: Optional[Sequence[str]] = None) -> None:
        """Tab-separated: column name, kind, thresholds or categories."""
        check_is_fitted(self, "columns_")
        names = list(names) if names is not None else [f"c{j}" for j in range(len(self.kinds_))]
        with open(path, "w") as fh:
            fh.write(f"# n_bins={self.n_bins}\n")
            for name, kind, col in zip(names, self.kinds_, self.columns_):
                values = [] if col is None else [repr(float(v)) if kind == "continuous" else v for v in col]
                fh.write("\t".join([name, kind] + values) + "\n")

    @classmethod
    def load(cls, path) -> "QuantileBinarizer":
        kinds, columns, n_bins = [], [], N_BINS
        with open(path) as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("#"):
                    if "n_bins=" in line:
                        n_bins = int(line.split("n_bins=")[1])
                    continue
                if not line:
                    continue
                _, kind, *values = line.split("\t")
                kinds.append(kind)
                if kind == "continuous":
                    columns.append(np.array([float(v) for v in values]))
                elif kind == "categorical":
                    columns.append(values)
                else:
                    columns.append(None)
        enc = cls(kinds=kinds, n_bins=n_bins)
        enc.kinds_ = kinds
        enc.columns_ = columns
        enc.widths_ = [enc._width(j) for j in range(len(kinds))]
        enc.n_features_out_ = int(sum(enc.widths_))
        enc.unseen_counts_ = np.zeros(len(kinds), dtype=np.int64)
        return enc


def fit_binarization(dataset: LabeledDataset) -> QuantileBinarizer:
    return QuantileBinarizer(kinds=dataset.kinds).fit(dataset.rows)


def encode(spec: QuantileBinarizer, row) -> np.ndarray:
    return spec.transform(np.asarray(row, dtype=object)[None, :])[0]


def apply_noise(x, p: float, rng) -> np.ndarray:
    """Flip every bit independently with probability ``p``."""
    if not 0 <= p <= 1:
        raise ContractViolation("noise probability must be in [0, 1]")
    x = np.asarray(x, dtype=np.uint8)
    if p == 0:
        return x.copy()
    return x ^ (rng.random(x.shape) < p).astype(np.uint8)


# ------------------------------------------------------------------ streams


class HiddenRewards:
    """Reward vector of one round; only one entry may be revealed."""

    __slots__ = ("_values", "revealed")

    def __init__(self, values):
        self._values = values
        self.revealed: Optional[int] = None

    def reveal(self, action: int) -> float:
        if self.revealed is not None and self.revealed != action:
            raise ContractViolation("bandit feedback: one reward per round")
        self.revealed = action
        return float(self._values[action])


@dataclass
class StreamConfig:
    horizon: int = 100_000
    noise_flip_prob: float = 0.05
    loop: bool = True
    shuffle_seed: int = 0

    def __post_init__(self):
        if not 0 <= self.noise_flip_prob <= 1:
            raise ContractViolation("noise_flip_prob must be in [0, 1]")
        if self.horizon < 1:
            raise ContractViolation("horizon must be >= 1")


class DatasetStream:
    """Shuffled (and optionally looped) pass over encoded dataset rows.

    Rows are reshuffled at every epoch and noise is drawn afresh for each
    round. ``batch`` returns whole chunks for the harness; iteration yields
    ``(x, HiddenRewards)`` one round at a time.
    """

    def __init__(self, X, labels, n_actions: int, cfg: StreamConfig):
        self.X = np.asarray(X, dtype=np.uint8)
        self.labels = np.asarray(labels, dtype=np.intp)
        self.n_actions = int(n_actions)
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.shuffle_seed)
        self.t = 0
        self._order = np.empty(0, dtype=np.intp)
        self._pos = 0

    @property
    def n_variables(self) -> int:
        return self.X.shape[1]

    def _next_rows(self, n: int) -> np.ndarray:
        out = []
        while n > 0:
            if self._pos >= self._order.shape[0]:
                if self._order.shape[0] and not self.cfg.loop:
                    raise StopIteration
                self._order = self.rng.permutation(self.X.shape[0])
                self._pos = 0
            take = min(n, self._order.shape[0] - self._pos)
            out.append(self._order[self._pos:self._pos + take])
            self._pos += take
            n -= take
        return np.concatenate(out)

    def batch(self, n: int):
        """Return ``(X, Y, means, rows)`` for the next ``n`` rounds."""
        n = min(n, self.cfg.horizon - self.t)
        if n <= 0:
            raise StopIteration
        rows = self._next_rows(n)
        X = self.X[rows]
        if self.cfg.noise_flip_prob > 0:
            X = X ^ (self.rng.random(X.shape) < self.cfg.noise_flip_prob).astype(np.uint8)
        Y = np.zeros((n, self.n_actions))
        Y[np.arange(n), self.labels[rows]] = 1.0
        self.t += n
        return X, Y, Y, rows

    def __iter__(self):
        return self

    def __next__(self):
        X, Y, _, _ = self.batch(1)
        return X[0], HiddenRewards(Y[0])


def stream_next(stream: DatasetStream):
    return next(stream)


class SyntheticProblem:
    """An explicit distribution plus an iid sampler with Bernoulli rewards."""

    def __init__(self, dist: KnownDistribution, name: str = "synthetic", horizon: Optional[int] = None,
                 seed: Optional[int] = None, noise_flip_prob: float = 0.0):
        self.dist = dist
        self.name = name
        self.cfg = StreamConfig(horizon=horizon or 2**62, noise_flip_prob=noise_flip_prob)
        self.rng = np.random.default_rng(seed)
        self._cdf = np.cumsum(dist.weights)
        self._cdf[-1] = 1.0
        self.t = 0

    @property
    def n_variables(self) -> int:
        return self.dist.n_variables

    @property
    def n_actions(self) -> int:
        return self.dist.n_actions

    def sample_rows(self, n: int) -> np.ndarray:
        return np.searchsorted(self._cdf, self.rng.random(n), side="right")

    def batch(self, n: int):
        n = min(n, self.cfg.horizon - self.t)
        if n <= 0:
            raise StopIteration
        rows = self.sample_rows(n)
        means = self.dist.rewards[rows]
        Y = (self.rng.random(means.shape) < means).astype(float)
        X = self.dist.contexts[rows]
        if self.cfg.noise_flip_prob > 0:
            X = X ^ (self.rng.random(X.shape) < self.cfg.noise_flip_prob).astype(np.uint8)
        self.t += n
        return X, Y, means, rows

    def __iter__(self):
        return self

    def __next__(self):
        X, Y, _, _ = self.batch(1)
        return X[0], HiddenRewards(Y[0])


def _independent_contexts(p_one: Sequence[float]):
    """All 2^M contexts of independent bits with P(x_i = 1) = p_one[i]."""
    M = len(p_one)
    contexts = np.array(list(itertools.product((0, 1), repeat=M)), dtype=np.uint8)
    p = np.asarray(p_one, dtype=float)
    weights = np.prod(np.where(contexts == 1, p, 1 - p), axis=1)
    return contexts, weights


def synth_table1(seed: Optional[int] = None) -> SyntheticProblem:
    """Two independent variables and two actions reproducing the toy example.

    Variable 0 carries the informative block (P(x=0)=5/8, action 0 has
    conditional means (0, 1), action 1 has (3/5, 1/6)); variable 1 has
    P(x=0)=3/4. Action 0's reward equals x_0 in mean, and action 1's joint
    means are 8/15, 4/5, 0, 2/3 for (x_0, x_1) = 00, 01, 10, 11. This gives
    scores 3/4 and 15/32 and a best context-free value of 7/16.
    """
    contexts, weights = _independent_contexts([3 / 8, 1 / 4])
    a2 = {(0, 0): 8 / 15, (0, 1): 4 / 5, (1, 0): 0.0, (1, 1): 2 / 3}
    rewards = np.array([[float(x0), a2[(x0, x1)]] for x0, x1 in contexts])
    return SyntheticProblem(KnownDistribution(contexts, weights, rewards), "table1", seed=seed)


def synth_xor(n_distractors: int = 0, p_relevant: float = 0.5, seed: Optional[int] = None) -> SyntheticProblem:
    """Two actions; action ``a XOR b`` pays 1, the other 0.

    The two relevant bits are the last two variables and have
    P(x = 1) = ``p_relevant``; distractors are fair coins placed first.
    """
    p = [0.5] * n_distractors + [p_relevant, p_relevant]
    contexts, weights = _independent_contexts(p)
    target = contexts[:, -1] ^ contexts[:, -2]
    rewards = np.zeros((contexts.shape[0], 2))
    rewards[np.arange(contexts.shape[0]), target] = 1.0
    return SyntheticProblem(KnownDistribution(contexts, weights, rewards), "xor", seed=seed)


def synth_gap(K: int, M: int, delta1: float, delta2: float, top: float = 0.9,
              seed: Optional[int] = None) -> SyntheticProblem:
    """One informative variable (the last one) with known gaps.

    With q = P(x_inf = 1): for x_inf = 0 action 0 pays ``top`` and action 1
    pays ``top - delta2``; for x_inf = 1 action 1 pays ``top`` and action 0
    pays 0; other actions pay 0. Choosing q = 1 - delta1 / delta2 makes the
    variable gap delta1 and the smallest conditional action gap delta2.
    """
    if not (0 < delta1 <= 1 and 0 < delta2 <= 1):
        raise ContractViolation("gaps must lie in (0, 1]")
    if delta2 > top or delta1 >= delta2 or top < delta1 * delta2 / (delta2 - delta1):
        raise ContractViolation(f"infeasible gaps delta1={delta1}, delta2={delta2} for top={top}")
    if K < 2 or M < 2:
        raise ContractViolation("need K >= 2 and M >= 2")
    q = 1.0 - delta1 / delta2
    contexts, weights = _independent_contexts([0.5] * (M - 1) + [q])
    rewards = np.zeros((contexts.shape[0], K))
    inf = contexts[:, -1] == 1
    rewards[~inf, 0] = top
    rewards[~inf, 1] = top - delta2
    rewards[inf, 1] = top
    return SyntheticProblem(KnownDistribution(contexts, weights, rewards), "gap", seed=seed)
