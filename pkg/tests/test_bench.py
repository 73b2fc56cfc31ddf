import numpy as np
import pytest

from banditforest.bench import (
    ContextFreeElimination,
    Environment,
    FixedPolicy,
    RunConfig,
    UniformRandom,
    checkpoints,
    make_learner,
    run_experiment,
    run_trial,
    trial_seeds,
)
from banditforest.cli import main
from banditforest.core import ContractViolation
from banditforest.elimination import EliminationConfig
from banditforest.oracle import ForestPolicy, policy_value
from banditforest.stream import QuantileBinarizer, synth_table1, write_dataset
from banditforest.stump import ActionSelection


def small(**kw):
    base = dict(source="table1", horizon=4000, trials=2, seed=3, learners="uniform-random,context-free-se")
    return RunConfig(**{**base, **kw})


class Recording:
    """Wraps a learner and keeps the realized rewards."""

    def __init__(self, inner):
        self.inner = inner
        self.rewards = []

    def decide(self, x):
        return self.inner.decide(x)

    def update(self, x, decision, reward):
        self.rewards.append(reward)
        self.inner.update(x, decision, reward)


class TestRunConfig:
    def test_from_text(self):
        cfg = RunConfig.from_text(
            "# experiment\nlearners = bandit-tree\nn_trees = 5  # trees\nmax_depth = 2:4\n"
            "loop = false\nnoise = 0.05\nhorizon = 1e4\n"
        )
        assert cfg.learner_list == ["bandit-tree"]
        assert (cfg.n_trees, cfg.max_depth, cfg.loop, cfg.noise, cfg.horizon) == (5, "2:4", False, 0.05, 10_000)

    def test_text_round_trip(self):
        cfg = small(epsilon="0.1:0.3", output="x.csv")
        assert RunConfig.from_text(cfg.to_text()) == cfg

    @pytest.mark.parametrize("text", ["bogus = 1\n", "horizon 10\n", "trials = 0\n", "learners = linucb\n"])
    def test_errors(self, text):
        with pytest.raises(ContractViolation):
            RunConfig.from_text(text)

    def test_final_window(self):
        assert small(horizon=50).final_window == 5
        assert small(horizon=2_000_000).final_window == 100_000
        assert small(window=7).final_window == 7


class TestSeeds:
    def test_distinct_and_reproducible(self):
        seeds = trial_seeds(11, 10)
        assert len(set(seeds)) == 10
        assert seeds == trial_seeds(11, 10)
        assert seeds != trial_seeds(12, 10)

    def test_checkpoints(self):
        assert checkpoints(100).tolist() == [1, 2, 4, 8, 16, 32, 64, 100]
        assert checkpoints(64).tolist() == [1, 2, 4, 8, 16, 32, 64]


class TestRunTrial:
    def test_uniform_random_pseudo_regret(self):
        cfg = small(horizon=40_000, trials=1)
        env = Environment(cfg)
        dist = env.distribution
        ref_value = policy_value(dist, env.reference)
        uniform_value = float(np.mean(dist.action_means()))
        assert ref_value - uniform_value == pytest.approx(11 / 32, abs=1e-12)
        trace = run_trial(cfg, 0, "uniform-random", env)
        per_step = trace.pseudo_mean[-1] / cfg.horizon
        # each step's pseudo-regret lies in [0, 1]
        assert abs(per_step - 11 / 32) < 3 * 0.5 / np.sqrt(cfg.horizon)

    def test_reference_against_itself(self):
        cfg = small(horizon=20_000, trials=1)
        env = Environment(cfg)
        trace = run_trial(cfg, 1, env=env, learner=FixedPolicy(env.reference))
        assert np.all(trace.pseudo_mean == 0.0)
        assert abs(trace.regret_mean[-1]) < 3 * 0.5 * np.sqrt(cfg.horizon)

    def test_final_rate_is_tail_mean(self):
        cfg = small(horizon=3000, trials=1)
        env = Environment(cfg)
        rec = Recording(UniformRandom(2, seed=0))
        trace = run_trial(cfg, 2, env=env, learner=rec)
        assert len(rec.rewards) == 3000
        assert trace.final_rate[0] == pytest.approx(np.mean(rec.rewards[-300:]))
        assert trace.final_regret[0] == pytest.approx(trace.regret_mean[-1])

    @pytest.mark.parametrize("source", ["table1", "xor"])
    def test_pseudo_regret_nonnegative(self, source):
        cfg = small(source=source, horizon=5000, learners="bandit-forest,bandit-tree,context-free-se,uniform-random",
                    n_trees=3, max_depth="1:2")
        exp = run_experiment(cfg)
        for trace in exp.traces.values():
            assert np.all(trace.pseudo_mean >= 0.0)
            assert np.all(np.diff(trace.pseudo_mean) >= 0.0)

    def test_stream_exhaustion(self, tmp_path):
        path = tmp_path / "tiny.csv"
        write_dataset(path, np.arange(20, dtype=float)[:, None], [0, 1] * 10, ["continuous"])
        cfg = small(source=str(path), loop=False, horizon=50, trials=1)
        with pytest.raises(StopIteration):
            run_trial(cfg, 0, "uniform-random")


class TestBaseline:
    def test_table1_always_k2(self):
        cfg = small()
        learner = make_learner("context-free-se", cfg, 2, 0)
        problem = synth_table1(seed=4)
        X, Y, _, _ = problem.batch(200_000)
        for x, y in zip(X, Y):
            d = learner.decide(x)
            learner.update(x, d, y[d.action])
            if learner.selector.finished:
                break
        assert learner.selector.remaining_actions == [1]
        assert problem.dist.action_means()[1] == pytest.approx(7 / 16, abs=1e-12)

    def test_matches_action_selection(self):
        means = [0.3, 0.7, 0.5]
        cfg = EliminationConfig(K=3, M=2, delta=0.05)
        plain = ActionSelection(cfg)
        wrapped = ContextFreeElimination(3, delta=0.05)
        rng = np.random.default_rng(5)
        draws = (rng.random((60_000, 3)) < means).astype(float)
        played_plain, played_wrapped = [], []
        t = 0
        while not plain.finished:
            played_plain.append(plain.step(lambda x, k: draws[t, k]))
            t += 1
        for t in range(len(played_plain)):
            d = wrapped.decide(None)
            played_wrapped.append(d.action)
            wrapped.update(None, d, draws[t, d.action])
        assert played_wrapped == played_plain
        assert wrapped.selector.remaining_actions == plain.remaining_actions == [1]
        np.testing.assert_array_equal(wrapped.selector.stats.mu_hat, plain.stats.mu_hat)
        assert not wrapped.decide(None).explored

    def test_xor_no_better_than_half(self):
        cfg = small(source="xor", horizon=60_000, trials=1)
        env = Environment(cfg)
        learner = make_learner("context-free-se", cfg, 2, 0)
        run_trial(cfg, 0, env=env, learner=learner)
        best = learner.selector.best_action()
        assert env.distribution.action_means()[best] <= 0.5 + 1e-12


class TestExperiment:
    def test_csv_format_and_reproducibility(self, tmp_path):
        out = tmp_path / "trace.csv"
        cfg = small(output=str(out))
        first = run_experiment(cfg).csv_text()
        again = run_experiment(cfg).csv_text()
        assert first == again == out.read_text()
        lines = first.splitlines()
        assert lines[0] == "t,learner,regret_mean,regret_std,pseudo_regret_mean,pseudo_regret_std"
        marks = checkpoints(cfg.horizon)
        assert len(lines) == 1 + 2 * len(marks)
        assert {ln.split(",")[1] for ln in lines[1:]} == {"uniform-random", "context-free-se"}

    def test_trials_aggregate(self):
        cfg = small(trials=4, learners="uniform-random")
        exp = run_experiment(cfg)
        trace = exp.traces["uniform-random"]
        singles = [run_trial(cfg, s, "uniform-random").regret_mean[-1] for s in trial_seeds(cfg.seed, 4)]
        assert trace.trials == 4
        assert trace.regret_mean[-1] == pytest.approx(np.mean(singles))
        assert trace.regret_std[-1] == pytest.approx(np.std(singles))
        lo, hi = trace.final_regret_ci
        assert hi - lo == pytest.approx(2 * 1.96 * np.std(singles) / 2)
        assert "uniform-random" in exp.summary()

    def test_best_fixed_reference_flagged(self):
        exp = run_experiment(small(reference="best-fixed", learners="uniform-random"))
        assert "best fixed action" in exp.summary()

    def test_policy_file_reference(self, tmp_path):
        env = Environment(small())
        path = tmp_path / "ref.json"
        path.write_text(env.reference.to_json())
        loaded = Environment(small(reference=str(path))).reference
        assert isinstance(loaded, ForestPolicy)
        X = env.distribution.contexts
        assert loaded.predict(X).tolist() == env.reference.predict(X).tolist()


def test_forest_dominance_and_monotone_in_trees():
    # 20 binary variables: an XOR pair plus 18 distractors
    finals = {}
    for L in (1, 10, 30):
        cfg = RunConfig(learners="bandit-forest", source="xor", xor_distractors=18, xor_p=0.58, n_trees=L,
                        max_depth="2:3", epsilon="0.4:0.8", keep_fraction=0.5, horizon=50_000, trials=10, seed=1)
        finals[L] = run_experiment(cfg).traces["bandit-forest"].final_regret.mean()
    assert finals[30] <= finals[1]
    assert finals[10] <= 1.05 * finals[1]
    assert finals[30] <= 1.05 * finals[10]


class TestCli:
    def dataset(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = np.column_stack([rng.normal(size=200), rng.choice(["a", "b", "c"], size=200)]).astype(object)
        labels = ["yes" if float(r[0]) > 0 else "no" for r in rows]
        path = tmp_path / "data.csv"
        write_dataset(path, rows, labels, ["continuous", "categorical"], ["score", "group"])
        return path

    def test_run(self, tmp_path, capsys):
        config = tmp_path / "run.cfg"
        config.write_text(small().to_text())
        out = tmp_path / "out.csv"
        assert main(["run", "--config", str(config), "--output", str(out)]) == 0
        assert "context-free-se" in capsys.readouterr().out
        assert out.read_text().startswith("t,learner")

    def test_run_prints_csv_without_output(self, tmp_path, capsys):
        config = tmp_path / "run.cfg"
        config.write_text("source = table1\nhorizon = 100\ntrials = 1\nlearners = uniform-random\n")
        assert main(["run", "--config", str(config)]) == 0
        assert "t,learner,regret_mean" in capsys.readouterr().out

    def test_oracle(self, tmp_path, capsys):
        data = self.dataset(tmp_path)
        out = tmp_path / "policy.json"
        assert main(["oracle", "--dataset", str(data), "--out", str(out), "--max-depth", "2"]) == 0
        policy = ForestPolicy.from_json(out.read_text())
        assert "classification rate" in capsys.readouterr().out
        cfg = small(source=str(data), reference=str(out), horizon=500, trials=1, learners="uniform-random")
        assert run_experiment(cfg).traces["uniform-random"].trials == 1
        assert len(policy.trees) == 1

    def test_binarize(self, tmp_path, capsys):
        data = self.dataset(tmp_path)
        out = tmp_path / "spec.tsv"
        assert main(["binarize", "--dataset", str(data), "--out", str(out)]) == 0
        enc = QuantileBinarizer.load(out)
        assert enc.n_features_out_ == 8
        assert "8 binary variables" in capsys.readouterr().out

    def test_errors_exit_2(self, tmp_path, capsys):
        assert main(["binarize", "--dataset", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o")]) == 2
        bad = tmp_path / "bad.cfg"
        bad.write_text("nonsense = 1\n")
        assert main(["run", "--config", str(bad)]) == 2
        assert "error" in capsys.readouterr().err
