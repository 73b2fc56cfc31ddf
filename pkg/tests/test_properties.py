"""Randomized invariants over the stat tables, elimination and encoders."""

import itertools

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from banditforest.core import (
    ActionStatTable,
    PairStatTable,
    RewardObservation,
    RoundRobinCursor,
    credit_pairs,
    incremental_action_update,
    incremental_pair_update,
    plurality_vote,
    round_robin_next,
)
from banditforest.elimination import EliminationConfig, action_radius, should_eliminate, variable_radius
from banditforest.forest import BanditForest
from banditforest.oracle import KnownDistribution, conditional_scores
from banditforest.stream import QuantileBinarizer, apply_noise
from banditforest.stump import StumpNode

M, K = 4, 3

plays = st.lists(
    st.tuples(
        st.lists(st.integers(0, 1), min_size=M, max_size=M),
        st.integers(0, K - 1),
        st.floats(0, 1),
    ),
    min_size=1,
    max_size=60,
)


def play_pairs(seq):
    table = PairStatTable(range(M), K)
    for x, k, r in seq:
        table.t_k[k] += 1
        incremental_pair_update(table, np.array(x, np.uint8), RewardObservation(k, r))
    return table


@given(plays)
def test_pair_means_match_batch(seq):
    table = play_pairs(seq)
    for k in range(K):
        mine = [(x, r) for x, a, r in seq if a == k]
        assert table.t_k[k] == len(mine)
        for i, v in itertools.product(range(M), (0, 1)):
            batch = sum(r for x, r in mine if x[i] == v) / len(mine) if mine else 0.0
            assert abs(table.mu_hat[i, k, v] - batch) <= 1e-9


@given(plays)
def test_indicator_partition(seq):
    # summing over the value recovers the plain action mean, whatever the variable
    table = play_pairs(seq)
    actions = ActionStatTable(K)
    for _, k, r in seq:
        actions.t_k[k] += 1
        incremental_action_update(actions, RewardObservation(k, r))
    totals = table.mu_hat.sum(axis=2)
    np.testing.assert_allclose(totals, np.broadcast_to(actions.mu_hat, totals.shape), atol=1e-9)
    assert np.all(table.mu_hat >= 0) and np.all(table.mu_hat <= 1 + 1e-12)


@given(plays)
def test_joint_credit_matches_single_credits(seq):
    # crediting several actions at once equals crediting them one by one
    joint = PairStatTable(range(M), K)
    single = PairStatTable(range(M), K)
    for x, k, r in seq:
        x = np.array(x, np.uint8)
        acts = np.arange(K)
        credits = np.where(acts == k, r, r / 2)
        joint.t_k[acts] += 1
        credit_pairs(joint, x, acts, credits)
        for a in acts:
            single.t_k[a] += 1
            credit_pairs(single, x, np.array([a]), np.array([credits[a]]))
    np.testing.assert_allclose(joint.mu_hat, single.mu_hat, atol=1e-12)


@given(st.integers(1, 6), st.integers(0, 40), st.data())
def test_round_robin_fair(n, steps, data):
    cursor = RoundRobinCursor(range(n))
    counts = dict.fromkeys(range(n), 0)
    for _ in range(steps):
        counts[round_robin_next(cursor)] += 1
    assert max(counts.values()) - min(counts.values()) <= 1
    if n > 1 and steps:
        drop = data.draw(st.sets(st.integers(0, n - 1), max_size=n - 1))
        cursor.remove(drop)
        # finish the current sweep, then every survivor gets exactly one play per sweep
        while not cursor.is_last_action:
            round_robin_next(cursor)
        sweep = [round_robin_next(cursor) for _ in range(len(cursor))]
        assert sweep == sorted(set(range(n)) - drop)
        assert cursor.is_last_action


@given(st.lists(st.integers(0, 5), min_size=1, max_size=30), st.randoms())
def test_vote_permutation_invariant(votes, rnd):
    shuffled = list(votes)
    rnd.shuffle(shuffled)
    winner = plurality_vote(votes)
    assert plurality_vote(shuffled) == winner
    top = max(votes.count(a) for a in votes)
    assert winner == min(a for a in votes if votes.count(a) == top)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 2), st.floats(0, 2))
def test_should_eliminate_monotone(best, score, eps, r1, r2):
    lo, hi = sorted((r1, r2))
    if should_eliminate(best, score, eps, hi):
        assert should_eliminate(best, score, eps, lo)
        assert should_eliminate(best, score, eps + 0.1, hi)


@given(st.integers(1, 10**6), st.integers(1, 10**6), st.sampled_from([0.01, 0.05, 0.5, 1.0]))
def test_radii_decrease(t1, t2, delta):
    lo, hi = sorted((t1, t2))
    cfg = EliminationConfig(K=2, M=3, delta=delta)
    assert variable_radius(cfg, hi) <= variable_radius(cfg, lo)
    assert action_radius(cfg, hi) <= action_radius(cfg, lo)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 0.3))
def test_elimination_is_monotone(seed, eps):
    rng = np.random.default_rng(seed)
    node = StumpNode(range(M), 2)
    cfg = EliminationConfig(K=2, M=M, delta=0.5)
    means = rng.random((M, 2))
    prev_vars = node.variables.tolist()
    prev_alive = {v: node.act_alive[node.variables.tolist().index(v)].copy() for v in prev_vars}
    for t in range(600):
        x = rng.integers(0, 2, size=M).astype(np.uint8)
        k = t % 2
        r = float(rng.random() < means[0 if x[0] else 1, k])
        node.update(x, np.array([k]), np.array([r]), lambda n: variable_radius(cfg, n),
                    lambda n: action_radius(cfg, n), eps)
        now = node.variables.tolist()
        assert set(now) <= set(prev_vars) and now
        for row, v in enumerate(now):
            alive = node.act_alive[row]
            assert not np.any(alive & ~prev_alive[v])
            assert alive.any(axis=1).all()
            prev_alive[v] = alive.copy()
        prev_vars = now


distributions = st.integers(1, 3).flatmap(
    lambda m: st.tuples(
        st.just(m),
        st.lists(st.floats(0.01, 1), min_size=2**m, max_size=2**m),
        st.lists(st.lists(st.floats(0, 1), min_size=2, max_size=2), min_size=2**m, max_size=2**m),
    )
)


@given(distributions)
def test_score_at_least_best_action(spec):
    m, w, rewards = spec
    contexts = np.array(list(itertools.product((0, 1), repeat=m)))
    w = np.array(w) / np.sum(w)
    dist = KnownDistribution(contexts, w, rewards)
    best = dist.action_means().max()
    for s in conditional_scores(dist).values():
        assert s >= best - 1e-12
        assert s <= 1 + 1e-12


@settings(deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=5, max_size=80), st.data())
def test_continuous_encoding_total(values, data):
    col = np.array(values)[:, None]
    enc = QuantileBinarizer(kinds=["continuous"]).fit(col)
    assert np.all(np.diff(enc.columns_[0]) >= 0)
    probe = np.array(data.draw(st.lists(st.floats(-1e7, 1e7, allow_nan=False), min_size=1, max_size=10)))[:, None]
    bits = enc.transform(probe)
    assert bits.shape == (probe.shape[0], 5)
    assert np.all(bits.sum(axis=1) == 1)


@given(st.lists(st.integers(0, 1), max_size=50), st.floats(0, 1), st.integers(0, 1000))
def test_noise_keeps_length_and_bits(x, p, seed):
    x = np.array(x, np.uint8)
    out = apply_noise(x, p, np.random.default_rng(seed))
    assert out.shape == x.shape
    assert set(np.unique(out)) <= {0, 1}


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.sampled_from(["round_robin", "ips"]))
def test_forest_decisions_in_range(seed, mode):
    rng = np.random.default_rng(seed)
    forest = BanditForest(n_actions=3, n_trees=3, max_depth=(1, 2), exploration=mode, random_state=seed)
    for _ in range(200):
        x = rng.integers(0, 2, size=5).astype(np.uint8)
        d = forest.decide(x)
        assert 0 <= d.action < 3
        assert 0 < d.propensity <= 1
        forest.update(x, d, float(rng.random() < 0.5))
