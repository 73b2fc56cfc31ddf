"""Online random forests of elimination-based decision trees for contextual bandits."""

from .bench import RegretTrace, RunConfig, baseline_context_free, run_experiment, run_trial
from .core import (
    ActionStatTable,
    ContractViolation,
    PairStatTable,
    RewardObservation,
    RoundRobinCursor,
    incremental_action_update,
    incremental_pair_update,
    plurality_vote,
    round_robin_next,
)
from .elimination import (
    EliminationConfig,
    GapBudget,
    action_radius,
    forest_action_radius,
    forest_variable_radius,
    lemma1_budget,
    lemma3_budget,
    should_eliminate,
    theorem1_budget,
    theorem3_budget,
    variable_radius,
)
from .forest import BanditForest, Decision, TreeRandomization, new_path, select_path
from .oracle import (
    ForestPolicy,
    GreedyTreePolicy,
    KnownDistribution,
    OptimalGreedyForest,
    build_theta_optimal_greedy,
    conditional_scores,
    optimal_forest_policy,
    policy_value,
)
from .stream import (
    DatasetStream,
    QuantileBinarizer,
    StreamConfig,
    apply_noise,
    encode,
    fit_binarization,
    read_dataset,
    stream_next,
    synth_gap,
    synth_table1,
    synth_xor,
    write_dataset,
)
from .stump import ActionSelection, DecisionStump, StumpNode, VariableSelection, as_step, stump_step, vs_step

__version__ = "0.1.0"
