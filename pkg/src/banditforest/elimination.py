"""Confidence radii, the elimination test and sample-complexity budgets.

All logarithms are natural.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ContractViolation


@dataclass(frozen=True)
class EliminationConfig:
    K: int
    M: int
    delta: float = 0.05
    epsilon: float = 0.0
    L: int = 1
    D: int = 1

    def __post_init__(self):
        if self.K < 2:
            raise ContractViolation("K must be >= 2")
        if self.M < 2:
            raise ContractViolation("M must be >= 2")
        if not 0 < self.delta <= 1:
            raise ContractViolation("delta must be in (0, 1]")
        if self.epsilon < 0:
            raise ContractViolation("epsilon must be >= 0")
        if self.L < 1 or self.D < 1:
            raise ContractViolation("L and D must be >= 1")


@dataclass(frozen=True)
class GapBudget:
    delta1: float
    delta2: float
    t_star: int


def _radius(scale: float, log_constant: float, t, delta: float):
    if isinstance(t, np.ndarray):
        if np.any(t < 1):
            raise ContractViolation("radius needs counts t >= 1")
        t = t.astype(float)
        return scale * np.sqrt(np.log(log_constant * t * t / delta) / (2.0 * t))
    if t < 1:
        raise ContractViolation("radius needs a count t >= 1")
    return scale * math.sqrt(math.log(log_constant * t * t / delta) / (2.0 * t))


def variable_radius(cfg: EliminationConfig, t_k: int) -> float:
    """4 sqrt(log(4 K M t^2 / delta) / (2 t))."""
    return _radius(4.0, 4.0 * cfg.K * cfg.M, t_k, cfg.delta)


def action_radius(cfg: EliminationConfig, t_k: int) -> float:
    """2 sqrt(log(4 K t^2 / delta) / (2 t))."""
    return _radius(2.0, 4.0 * cfg.K, t_k, cfg.delta)


def forest_variable_radius(cfg: EliminationConfig, t: int) -> float:
    """Variable radius with the union bound over L trees of depth D."""
    return _radius(4.0, 4.0 * cfg.K * cfg.M * cfg.D * cfg.L, t, cfg.delta)


def forest_action_radius(cfg: EliminationConfig, t: int) -> float:
    return _radius(2.0, 4.0 * cfg.K * cfg.L, t, cfg.delta)


def should_eliminate(best_score: float, score: float, epsilon: float, radius: float) -> bool:
    return best_score - score + epsilon >= radius


def _check_gap(gap: float) -> None:
    if not 0 < gap <= 1:
        raise ContractViolation(f"gap must be in (0, 1], got {gap}")


def _variable_term(K, M, delta, gap):
    return 64.0 * K / gap**2 * math.log(4.0 * K * M / (delta * gap))


def _action_term(K, delta, gap):
    return 64.0 * K / gap**2 * math.log(4.0 * K / (delta * gap))


def lemma1_budget(cfg: EliminationConfig, delta1: float) -> GapBudget:
    _check_gap(delta1)
    t = _variable_term(cfg.K, cfg.M, cfg.delta, delta1)
    return GapBudget(delta1, float("nan"), math.ceil(t))


def lemma3_budget(cfg: EliminationConfig, delta2: float) -> GapBudget:
    _check_gap(delta2)
    t = _action_term(cfg.K, cfg.delta, delta2)
    return GapBudget(float("nan"), delta2, math.ceil(t))


def theorem1_budget(cfg: EliminationConfig, delta1: float, delta2: float) -> GapBudget:
    _check_gap(delta1)
    _check_gap(delta2)
    t = _variable_term(cfg.K, cfg.M, cfg.delta, delta1) + _action_term(
        cfg.K, cfg.delta, delta2
    )
    return GapBudget(delta1, delta2, math.ceil(t))


def theorem3_budget(cfg: EliminationConfig, delta1: float, delta2: float) -> GapBudget:
    """2^D times the stump budget with the L, D union-bound factors in the logs."""
    _check_gap(delta1)
    _check_gap(delta2)
    K, L, D = cfg.K, cfg.L, cfg.D
    variables = 64.0 * K / delta1**2 * math.log(4.0 * K * cfg.M * D * L / (cfg.delta * delta1))
    actions = 64.0 * K / delta2**2 * math.log(4.0 * L * K / (cfg.delta * delta2))
    return GapBudget(delta1, delta2, math.ceil(2**D * (variables + actions)))
