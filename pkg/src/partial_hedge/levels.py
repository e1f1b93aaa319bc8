"""Level grouping for the greedy algorithm.

States that share a gain/weight ratio for structural reasons (in a
homogeneous binomial tree: same number of up-moves and same payoff) can be
ordered as one block.  Greedy then runs over at most ``N + 1`` levels and
only the critical level is opened up element by element.

Two forms are provided: ``group_levels``/``grouped_greedy`` work on an
explicit knapsack instance and reproduce ``solve_greedy`` exactly, while
``binomial_levels``/``level_greedy`` work on per-level counts and never
enumerate the ``2**N`` paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from math import comb
from typing import Callable, Hashable, Optional, Sequence

import numpy as np

from . import knapsack as ks
from .market import ScenarioTree

__all__ = [
    "group_levels",
    "grouped_greedy",
    "structural_keys",
    "Level",
    "LevelGreedyResult",
    "binomial_levels",
    "level_greedy",
]


def group_levels(
    instance: ks.KnapsackInstance, level_key: Sequence[Hashable]
) -> tuple[ks.KnapsackInstance, list[np.ndarray]]:
    """Merge items with equal key; returns the merged instance and member lists.

    Groups appear in order of their first member; members keep input order.
    """
    if len(level_key) != instance.n:
        raise ValueError("one level key per item is required")
    groups: dict[Hashable, list[int]] = {}
    for i, key in enumerate(level_key):
        groups.setdefault(key, []).append(i)
    members = [np.array(ix, dtype=np.int64) for ix in groups.values()]
    g = [math.fsum(instance.gains[ix]) for ix in members]
    w = [math.fsum(instance.weights[ix]) for ix in members]
    grouped = ks.KnapsackInstance(g, w, instance.capacity, instance.variant)
    return grouped, members


def grouped_greedy(
    instance: ks.KnapsackInstance, level_key: Sequence[Hashable]
) -> ks.KnapsackSolution:
    """Greedy over levels, then element-wise inside the critical level."""
    active = ~((instance.gains == 0) & (instance.weights == 0))
    keys = [k if a else ("__dropped__", i) for i, (k, a) in enumerate(zip(level_key, active))]
    grouped, members = group_levels(instance, keys)
    cap = instance.capacity
    limit = cap + ks.capacity_tol(cap)

    x = np.zeros(instance.n)
    used = 0.0
    crit = None
    for lv in ks.order_by_ratio(grouped):
        ix = members[lv]
        if not active[ix[0]]:
            continue
        if used + grouped.weights[lv] <= limit:
            x[ix] = 1.0
            used += grouped.weights[lv]
            continue
        sub = ks.KnapsackInstance(instance.gains[ix], instance.weights[ix], 0.0)
        for j in ix[ks.order_by_ratio(sub)]:
            if used + instance.weights[j] > limit:
                crit = int(j)
                break
            x[j] = 1.0
            used += instance.weights[j]
        break
    if crit is None:
        raise ks.KnapsackError("capacity covers every item; no critical level")
    taken = instance.gains[x == 1.0]
    resid = cap - math.fsum(instance.weights[x == 1.0])
    frac = min(max(resid / float(instance.weights[crit]), 0.0), 1.0)
    gs = float(instance.gains[crit])
    return ks.KnapsackSolution(
        x=x,
        z=math.fsum(taken),
        critical=crit,
        z_upper=math.fsum([*taken.tolist(), frac * gs]),
        error_bound=gs,
    )


def structural_keys(tree: ScenarioTree, payoff: np.ndarray) -> list[tuple]:
    """Level keys ``(branch counts..., payoff)`` for a homogeneous tree."""
    counts = tree.branch_counts()
    return [tuple(int(c) for c in row) + (float(h),) for row, h in zip(counts, payoff)]


@dataclass(frozen=True)
class Level:
    """``count`` interchangeable states, each with the same gain and weight."""

    key: Hashable
    count: int
    unit_gain: float
    unit_weight: float

    @property
    def ratio(self) -> float:
        return math.inf if self.unit_weight == 0 else self.unit_gain / self.unit_weight


@dataclass(frozen=True)
class LevelGreedyResult:
    z: float
    z_upper: float
    error_bound: float
    critical_level: Hashable
    taken_in_critical: int
    max_unit_gain: float


def binomial_levels(
    p_up: float,
    q_up: float,
    periods: int,
    payoff: Callable[[int], float],
) -> tuple[list[Level], float]:
    """Problem-A levels of a path-independent claim in an N-step binomial model.

    ``payoff(k)`` is the discounted payoff after ``k`` up-moves.  Returns the
    levels (gain = path probability, weight = cost share ``q``) and the
    perfect-hedge price.
    """
    ks_ = range(periods + 1)
    counts = [comb(periods, k) for k in ks_]
    p = [p_up**k * (1.0 - p_up) ** (periods - k) for k in ks_]
    ps = [q_up**k * (1.0 - q_up) ** (periods - k) for k in ks_]
    h = [float(payoff(k)) for k in ks_]
    pi = math.fsum(c * a * b for c, a, b in zip(counts, ps, h))
    if pi <= 0:
        raise ks.KnapsackError("the claim has zero price")
    levels = [
        Level(key=k, count=c, unit_gain=pk, unit_weight=psk * hk / pi)
        for k, c, pk, psk, hk in zip(ks_, counts, p, ps, h)
    ]
    return levels, pi


def level_greedy(levels: Sequence[Level], capacity: float) -> LevelGreedyResult:
    """Greedy on levels of interchangeable states, counting inside the critical one."""
    limit = capacity + ks.capacity_tol(capacity)
    order = sorted(range(len(levels)), key=lambda i: -levels[i].ratio)
    used = 0.0
    parts: list[float] = []
    crit: Optional[Level] = None
    taken = 0
    for i in order:
        lv = levels[i]
        if used + lv.count * lv.unit_weight <= limit:
            used += lv.count * lv.unit_weight
            parts.append(lv.count * lv.unit_gain)
            continue
        k = int(min(max((limit - used) // lv.unit_weight, 0), lv.count - 1))
        # float division is off by at most a step; beyond 2**53 a step is below resolution
        for _ in range(2):
            if k > 0 and used + k * lv.unit_weight > limit:
                k -= 1
        for _ in range(2):
            if k + 1 < lv.count and used + (k + 1) * lv.unit_weight <= limit:
                k += 1
        used += k * lv.unit_weight
        parts.append(k * lv.unit_gain)
        crit, taken = lv, k
        break
    if crit is None:
        raise ks.KnapsackError("capacity covers every level; no critical state")
    z = math.fsum(parts)
    frac = min(max((capacity - used) / crit.unit_weight, 0.0), 1.0)
    return LevelGreedyResult(
        z=z,
        z_upper=z + frac * crit.unit_gain,
        error_bound=crit.unit_gain,
        critical_level=crit.key,
        taken_in_critical=taken,
        max_unit_gain=max(lv.unit_gain for lv in levels),
    )
