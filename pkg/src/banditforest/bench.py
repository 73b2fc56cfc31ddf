"""Regret harness: learners, trials, aggregation and CSV/summary output."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional

import numpy as np
from joblib import Parallel, delayed

from .core import ContractViolation, RoundRobinCursor, round_robin_next
from .elimination import EliminationConfig
from .forest import BanditForest, Decision
from .oracle import ForestPolicy, KnownDistribution, OptimalGreedyForest
from .stream import DatasetStream, StreamConfig, fit_binarization, read_dataset, synth_gap, synth_table1, synth_xor
from .stump import ActionSelection

log = logging.getLogger(__name__)

LEARNERS = ("bandit-forest", "bandit-tree", "context-free-se", "uniform-random")
CHUNK = 4096


def _parse_range(text):
    text = str(text).strip()
    if ":" in text:
        lo, hi = text.split(":")
        return (type_of(lo)(lo), type_of(hi)(hi))
    return type_of(text)(text)


def type_of(text):
    return int if text.lstrip("-").isdigit() else float


@dataclass
class RunConfig:
    """Flat experiment description; every field can be set from a config file.

    ``max_depth`` and ``epsilon`` accept ``lo:hi`` ranges. ``source`` is one
    of table1, xor, gap or a path to a schema-headed dataset file.
    """

    learners: str = "bandit-forest,context-free-se"
    n_trees: int = 10
    max_depth: str = "3"
    delta: float = 0.05
    epsilon: str = "0.4:0.8"
    tree_epsilon: float = 0.6
    keep_fraction: float = 0.8
    exploration: str = "round_robin"
    vote_gate: str = "local"
    baseline_epsilon: float = 0.0
    source: str = "table1"
    xor_distractors: int = 2
    xor_p: float = 0.5
    gap_K: int = 2
    gap_M: int = 4
    gap_delta1: float = 0.1
    gap_delta2: float = 0.3
    horizon: int = 100_000
    noise: float = 0.0
    loop: bool = True
    trials: int = 10
    seed: int = 0
    reference: str = "oracle"
    reference_trees: int = 1
    window: int = 0
    output: str = ""
    n_jobs: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ContractViolation("trials must be >= 1")
        for name in self.learner_list:
            if name not in LEARNERS:
                raise ContractViolation(f"unknown learner {name!r}")

    @property
    def learner_list(self) -> List[str]:
        return [s.strip() for s in self.learners.split(",") if s.strip()]

    @property
    def final_window(self) -> int:
        return self.window or max(1, min(100_000, self.horizon // 10))

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        """Parse ``key = value`` lines (``#`` starts a comment)."""
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in types:
                raise ContractViolation(f"bad config line: {raw!r}")
            values[key] = _coerce(types[key], value)
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


def _coerce(typ, value: str):
    if typ in ("bool", bool):
        return value.lower() in ("1", "true", "yes", "on")
    if typ in ("int", int):
        return int(float(value))
    if typ in ("float", float):
        return float(value)
    return value


# ----------------------------------------------------------------- learners


class ContextFreeElimination:
    """Successive elimination that ignores the context."""

    def __init__(self, n_actions: int, delta: float = 0.05, epsilon: float = 0.0):
        self.selector = ActionSelection(EliminationConfig(K=n_actions, M=2, delta=delta, epsilon=epsilon))
        self._sweep_done = False

    def decide(self, x) -> Decision:
        sel = self.selector
        if sel.finished:
            return Decision(sel.remaining_actions[0], explored=False)
        k = round_robin_next(sel.cursor)
        self._sweep_done = sel.cursor.is_last_action
        return Decision(k)

    def update(self, x, decision: Decision, reward: float) -> None:
        if decision.explored:
            self.selector.credit(decision.action, reward, sweep_done=self._sweep_done)


def baseline_context_free(cfg: RunConfig, n_actions: int) -> ContextFreeElimination:
    return ContextFreeElimination(n_actions, cfg.delta, cfg.baseline_epsilon)


class UniformRandom:
    def __init__(self, n_actions: int, seed=None):
        self.n_actions = n_actions
        self.rng = np.random.default_rng(seed)

    def decide(self, x) -> Decision:
        return Decision(int(self.rng.integers(self.n_actions)), 1.0 / self.n_actions)

    def update(self, x, decision, reward) -> None:
        pass


class FixedPolicy:
    """Plays a known policy; used to check the harness against itself."""

    def __init__(self, policy):
        self.policy = policy

    def decide(self, x) -> Decision:
        return Decision(int(self.policy.predict_one(x)), explored=False)

    def update(self, x, decision, reward) -> None:
        pass


def make_learner(name: str, cfg: RunConfig, n_actions: int, seed: int):
    if name == "bandit-forest":
        return BanditForest(
            n_actions=n_actions, n_trees=cfg.n_trees, max_depth=_parse_range(cfg.max_depth),
            delta=cfg.delta, epsilon=_parse_range(cfg.epsilon), keep_fraction=cfg.keep_fraction,
            exploration=cfg.exploration, vote_gate=cfg.vote_gate, random_state=seed,
        )
    if name == "bandit-tree":
        depth = _parse_range(cfg.max_depth)
        return BanditForest(
            n_actions=n_actions, n_trees=1, max_depth=depth[1] if isinstance(depth, tuple) else depth,
            delta=cfg.delta, epsilon=cfg.tree_epsilon, keep_fraction=1.0,
            exploration=cfg.exploration, vote_gate=cfg.vote_gate, random_state=seed,
        )
    if name == "context-free-se":
        return baseline_context_free(cfg, n_actions)
    if name == "uniform-random":
        return UniformRandom(n_actions, seed)
    raise ContractViolation(f"unknown learner {name!r}")


# ------------------------------------------------------------- environments


class Environment:
    """Builds per-trial streams and the reference policy for a RunConfig."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dataset = None
        if cfg.source == "table1":
            self.problem = synth_table1()
        elif cfg.source == "xor":
            self.problem = synth_xor(cfg.xor_distractors, cfg.xor_p)
        elif cfg.source == "gap":
            self.problem = synth_gap(cfg.gap_K, cfg.gap_M, cfg.gap_delta1, cfg.gap_delta2)
        else:
            self.problem = None
            data = read_dataset(cfg.source)
            enc = fit_binarization(data)
            self.dataset = (enc.transform(data.rows), data.labels, data.n_actions)
        self.reference = self._reference()

    @property
    def distribution(self) -> KnownDistribution:
        if self.problem is not None:
            return self.problem.dist
        X, labels, K = self.dataset
        return KnownDistribution.from_labels(X, labels, K)

    @property
    def n_actions(self) -> int:
        return self.problem.n_actions if self.problem is not None else self.dataset[2]

    def _reference(self):
        ref = self.cfg.reference
        if ref == "best-fixed":
            dist = self.distribution
            return _ConstantPolicy(int(np.argmax(dist.weights @ dist.rewards)))
        if ref == "oracle":
            dist = self.distribution
            depth = dist.n_variables if self.problem is not None else None
            model = OptimalGreedyForest(n_trees=self.cfg.reference_trees, max_depth=depth,
                                        keep_fraction=1.0, random_state=self.cfg.seed)
            return model.fit_distribution(dist).policy_
        with open(ref) as fh:
            return ForestPolicy.from_json(fh.read())

    def stream(self, seed: int):
        if self.problem is not None:
            p = self.problem
            from .stream import SyntheticProblem
            return SyntheticProblem(p.dist, p.name, horizon=self.cfg.horizon, seed=seed,
                                    noise_flip_prob=self.cfg.noise)
        X, labels, K = self.dataset
        return DatasetStream(X, labels, K, StreamConfig(self.cfg.horizon, self.cfg.noise, self.cfg.loop, seed))


class _ConstantPolicy:
    def __init__(self, action):
        self.action = action

    def predict_one(self, x):
        return self.action

    def predict(self, X):
        return np.full(np.atleast_2d(X).shape[0], self.action, dtype=np.intp)


# ------------------------------------------------------------------ running


@dataclass
class RegretTrace:
    """Accumulated regret at checkpoints, mean and std across trials.

    ``regret`` is reference expected reward minus realized reward;
    ``pseudo_regret`` replaces the realized reward by the played action's
    expected reward. ``final_rate`` is the mean reward over the last window.
    """

    learner: str
    checkpoints: np.ndarray
    regret_mean: np.ndarray
    regret_std: np.ndarray
    pseudo_mean: np.ndarray
    pseudo_std: np.ndarray
    final_rate: np.ndarray  # one per trial
    final_regret: np.ndarray  # one per trial
    wall_time: float = 0.0
    trials: int = 1

    @property
    def final_regret_ci(self):
        m = float(self.final_regret.mean())
        half = 1.96 * float(self.final_regret.std()) / math.sqrt(self.trials)
        return m - half, m + half


def checkpoints(horizon: int) -> np.ndarray:
    pts = [1 << j for j in range(int(math.log2(horizon)) + 1) if (1 << j) < horizon]
    return np.array(pts + [horizon], dtype=np.int64)


def run_trial(cfg: RunConfig, seed: int, learner_name: Optional[str] = None, env: Optional[Environment] = None,
              learner=None) -> RegretTrace:
    env = env or Environment(cfg)
    name = learner_name or cfg.learner_list[0]
    ss = np.random.SeedSequence(seed)
    stream_seed, learner_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    stream = env.stream(stream_seed)
    if learner is None:
        learner = make_learner(name, cfg, env.n_actions, learner_seed)
    ref = env.reference
    T = cfg.horizon
    marks = checkpoints(T)
    regret = np.zeros(marks.shape[0])
    pseudo = np.zeros(marks.shape[0])
    window = cfg.final_window
    rewards_tail = 0.0
    R = P = 0.0
    t = 0
    m = 0
    start = time.perf_counter()
    while t < T:
        X, Y, means, _ = stream.batch(min(CHUNK, T - t))
        ref_actions = ref.predict(X)
        ref_values = means[np.arange(X.shape[0]), ref_actions]
        for j in range(X.shape[0]):
            x = X[j]
            d = learner.decide(x)
            r = Y[j, d.action]
            learner.update(x, d, r)
            R += ref_values[j] - r
            P += ref_values[j] - means[j, d.action]
            t += 1
            if t > T - window:
                rewards_tail += r
            if t == marks[m]:
                regret[m], pseudo[m] = R, P
                m += 1
    elapsed = time.perf_counter() - start
    return RegretTrace(
        name, marks, regret, np.zeros_like(regret), pseudo, np.zeros_like(pseudo),
        np.array([rewards_tail / window]), np.array([R]), elapsed, 1,
    )


def trial_seeds(master: int, trials: int) -> List[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master).spawn(trials)]


def _aggregate(traces: List[RegretTrace]) -> RegretTrace:
    reg = np.stack([t.regret_mean for t in traces])
    pse = np.stack([t.pseudo_mean for t in traces])
    return RegretTrace(
        traces[0].learner, traces[0].checkpoints, reg.mean(0), reg.std(0), pse.mean(0), pse.std(0),
        np.concatenate([t.final_rate for t in traces]), np.concatenate([t.final_regret for t in traces]),
        sum(t.wall_time for t in traces) / len(traces), len(traces),
    )


@dataclass
class Experiment:
    cfg: RunConfig
    traces: dict = field(default_factory=dict)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "learner", "regret_mean", "regret_std", "pseudo_regret_mean", "pseudo_regret_std"])
        for name, tr in self.traces.items():
            for j, t in enumerate(tr.checkpoints):
                w.writerow([int(t), name, repr(float(tr.regret_mean[j])), repr(float(tr.regret_std[j])),
                            repr(float(tr.pseudo_mean[j])), repr(float(tr.pseudo_std[j]))])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"{'learner':<16} {'regret':>26} {'classification rate':>22} {'time (s)':>9}"]
        for name, tr in self.traces.items():
            lo, hi = tr.final_regret_ci
            mean = tr.final_regret.mean()
            rate = tr.final_rate.mean()
            rate_half = 1.96 * tr.final_rate.std() / math.sqrt(tr.trials)
            lines.append(f"{name:<16} {mean:>14.1f} ± {(hi - lo) / 2:<9.1f} {rate:>12.4f} ± {rate_half:<7.4f} "
                         f"{tr.wall_time:>9.1f}")
        if self.cfg.reference == "best-fixed":
            lines.append("(regret measured against the best fixed action)")
        return "\n".join(lines)


def run_experiment(cfg: RunConfig) -> Experiment:
    env = Environment(cfg)
    seeds = trial_seeds(cfg.seed, cfg.trials)
    exp = Experiment(cfg)
    for name in cfg.learner_list:
        traces = Parallel(n_jobs=cfg.n_jobs)(
            delayed(run_trial)(cfg, s, name, env) for s in seeds
        )
        exp.traces[name] = _aggregate(traces)
        log.info("%s: final regret %.1f", name, exp.traces[name].final_regret.mean())
    if cfg.output:
        with open(cfg.output, "w", newline="") as fh:
            fh.write(exp.csv_text())
    return exp
