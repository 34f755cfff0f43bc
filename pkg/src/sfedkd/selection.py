"""Complementary teacher selection.

Picks K candidates whose summed class distribution, renormalized, is
closest to uniform, so the chosen teachers jointly cover the class space.
The exact problem is a maximum-coverage variant (NP-hard), so the main
solver is greedy; a brute-force oracle and a random baseline exist for
comparison.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .data import ClassDistribution
from .distill import METRICS, discrepancy

BRUTE_FORCE_MAX_CANDIDATES = 20


@dataclass
class SelectionInstance:
    candidate_dists: list[ClassDistribution]
    K: int
    metric: str = "L1"

    def __post_init__(self):
        if not 1 <= self.K <= len(self.candidate_dists):
            raise ValueError(f"K={self.K} must lie in [1, {len(self.candidate_dists)}]")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if any(d.empty for d in self.candidate_dists):
            raise ValueError("candidates must have non-empty class distributions")


def _uniform(c: int) -> ClassDistribution:
    return ClassDistribution(np.full(c, 1.0 / c))


def aggregate_objective(dists: list[ClassDistribution], indices, metric: str) -> float:
    """Distance of the normalized summed distribution of `indices` to uniform."""
    total = sum(dists[i].proportions for i in indices)
    agg = ClassDistribution(total / total.sum())
    return discrepancy(agg, _uniform(len(agg)), metric)


def greedy_select(inst: SelectionInstance) -> list[int]:
    """Greedily grow the teacher set, each step adding the candidate whose
    inclusion leaves the normalized aggregate closest to uniform.

    Ties break toward the lower candidate index. Returns K distinct indices
    in selection order.
    """
    uniform = _uniform(len(inst.candidate_dists[0]))
    agg = np.zeros(len(uniform))
    chosen: list[int] = []
    remaining = set(range(len(inst.candidate_dists)))
    while len(chosen) < inst.K:
        best_idx = -1
        best_obj = np.inf
        for i in sorted(remaining):
            trial = agg + inst.candidate_dists[i].proportions
            obj = discrepancy(ClassDistribution(trial / trial.sum()), uniform, inst.metric)
            if obj < best_obj:
                best_obj, best_idx = obj, i
        chosen.append(best_idx)
        remaining.remove(best_idx)
        agg = agg + inst.candidate_dists[best_idx].proportions
    return chosen


def brute_force_select(inst: SelectionInstance) -> list[int]:
    """Exhaustive optimum over all K-subsets; exponential, capped at 20
    candidates. Ties resolve to the lexicographically smallest index set.
    Returns the winning indices in ascending order."""
    m = len(inst.candidate_dists)
    if m > BRUTE_FORCE_MAX_CANDIDATES:
        raise ValueError(
            f"brute force refuses {m} candidates (max {BRUTE_FORCE_MAX_CANDIDATES})"
        )
    best_set = None
    best_obj = np.inf
    # combinations() yields lexicographic order, so strict improvement
    # keeps the lexicographically smallest optimum
    for combo in itertools.combinations(range(m), inst.K):
        obj = aggregate_objective(inst.candidate_dists, combo, inst.metric)
        if obj < best_obj:
            best_obj, best_set = obj, combo
    return list(best_set)


def random_select(m: int, k: int, seed: int) -> list[int]:
    """Uniform K-subset without replacement; sorted, deterministic per seed."""
    if k > m:
        raise ValueError(f"K={k} exceeds candidate count {m}")
    rng = np.random.default_rng(seed)
    return sorted(int(i) for i in rng.choice(m, size=k, replace=False))
