"""Partial hedging under a cost constraint, solved through knapsack problems.

Four problems are covered, all with initial capital at most ``v`` where
``v`` is strictly below the perfect-hedge price ``E*[H]``:

* A: maximise ``P(V_T >= H)`` over admissible strategies (0-1 knapsack with
  gains ``p``, weights ``q = p* H / E*[H]`` and capacity ``alpha = v / E*[H]``),
  plus its randomized relaxation (continuous knapsack);
* B: the same without admissibility (quasi-replication, one sacrificed state);
* C: maximise ``E[V_T]`` subject to ``0 <= V_T <= H`` (continuous knapsack
  with gains ``m = p H / E[H]``);
* D: as C but ``V_T`` may be negative (upper-bounded knapsack, closed form).

Each solver builds the modified claim, replicates it on the tree when one is
given, and reports success probability and expected shortfall measured on
the resulting terminal values.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Hashable, Optional, Sequence, Union

import numpy as np

from . import knapsack as ks
from .errors import BudgetError, DegenerateClaimError
from .levels import grouped_greedy
from .market import (
    Claim,
    MeasurePair,
    ScenarioTree,
    Strategy,
    ValueProcess,
    expected_shortfall,
    money_tol,
    price,
    replicate,
    success_probability,
)

__all__ = [
    "Problem",
    "HedgeBudget",
    "QWeights",
    "RandomizedTest",
    "HedgeSolution",
    "cost_weights",
    "reduce_problem_a",
    "solve_problem_a",
    "solve_problem_a_randomized",
    "neyman_pearson_test",
    "solve_problem_b",
    "reduce_problem_c",
    "solve_problem_c",
    "solve_problem_d",
]


class Problem(enum.Enum):
    A_EXACT = "a-exact"
    A_GREEDY = "a-greedy"
    A_RANDOMIZED = "a-rand"
    B = "b"
    C = "c"
    D = "d"


def _perfect_hedge_price(claim: Claim, measures: MeasurePair) -> float:
    pi = price(claim, measures)
    if pi <= 0:
        raise DegenerateClaimError(
            "the claim has zero price (H = 0 in every state); there is nothing to hedge"
        )
    return pi


@dataclass(frozen=True)
class HedgeBudget:
    """Initial capital ``v`` and its fraction ``alpha`` of the perfect-hedge price."""

    v: float
    alpha: float
    price: float

    @classmethod
    def for_claim(
        cls,
        claim: Claim,
        measures: MeasurePair,
        *,
        v: Optional[float] = None,
        alpha: Optional[float] = None,
    ) -> HedgeBudget:
        if (v is None) == (alpha is None):
            raise BudgetError("give exactly one of v and alpha")
        pi = _perfect_hedge_price(claim, measures)
        if alpha is not None:
            if not 0.0 <= alpha < 1.0:
                raise BudgetError(f"alpha must satisfy 0 <= alpha < 1 (got {alpha})")
            v = alpha * pi
        assert v is not None
        if v < 0:
            raise BudgetError(f"budget must be non-negative (got {v})")
        if v >= pi:
            raise BudgetError(
                f"budget must be strictly below the perfect-hedge price "
                f"(v < E*[H] is required; got v={v!r}, E*[H]={pi!r})"
            )
        return cls(v=float(v), alpha=float(v / pi) if alpha is None else float(alpha), price=pi)


@dataclass(frozen=True, eq=False)
class QWeights:
    """Cost shares ``q`` and (when defined) shortfall shares ``m`` per state."""

    q: np.ndarray
    m: Optional[np.ndarray]


def cost_weights(claim: Claim, measures: MeasurePair) -> QWeights:
    h = claim.payoff
    pi = _perfect_hedge_price(claim, measures)
    q = measures.p_star * h / pi
    mean = math.fsum(measures.p * h)
    m = measures.p * h / mean if mean > 0 else None
    return QWeights(q=q, m=m)


@dataclass(frozen=True, eq=False)
class RandomizedTest:
    psi: np.ndarray

    def __post_init__(self) -> None:
        psi = np.asarray(self.psi, dtype=float)
        if (psi < 0).any() or (psi > 1).any():
            raise ValueError("a randomized test takes values in [0, 1]")
        object.__setattr__(self, "psi", psi)


@dataclass(frozen=True, eq=False)
class HedgeSolution:
    """Outcome of one partial-hedging solver.

    ``decision`` is the knapsack decision vector (indicator of the success
    set, randomized test, or for B/D the modified claim itself).  Without a
    tree, ``strategy`` and ``value_process`` are None and the terminal values
    are the modified claim.
    """

    problem: Problem
    claim: Claim
    modified_claim: np.ndarray
    decision: np.ndarray
    terminal_values: np.ndarray
    initial_cost: float
    budget: float
    success_probability: float
    expected_shortfall: float
    bounds: dict = field(default_factory=dict)
    critical_state: Optional[int] = None
    sacrificed_state: Optional[int] = None
    optimal: bool = True
    strategy: Optional[Strategy] = None
    value_process: Optional[ValueProcess] = None

    @property
    def success_set(self) -> np.ndarray:
        """Indices of states where ``V_T >= H`` (tolerant comparison)."""
        h = self.claim.payoff
        vt = self.terminal_values
        return np.flatnonzero(vt >= h - money_tol(h, vt))


def _finish(
    problem: Problem,
    claim: Claim,
    measures: MeasurePair,
    tree: Optional[ScenarioTree],
    modified: np.ndarray,
    decision: np.ndarray,
    v: float,
    **extra,
) -> HedgeSolution:
    strategy = vp = None
    if tree is not None:
        strategy, vp = replicate(modified, tree, measures)
        terminal = vp.terminal.copy()
        cost = vp.initial
    else:
        terminal = modified.copy()
        cost = price(modified, measures)
    return HedgeSolution(
        problem=problem,
        claim=claim,
        modified_claim=modified,
        decision=decision,
        terminal_values=terminal,
        initial_cost=cost,
        budget=v,
        success_probability=success_probability(terminal, claim, measures),
        expected_shortfall=expected_shortfall(terminal, claim, measures),
        strategy=strategy,
        value_process=vp,
        **extra,
    )


def _as_claim(claim) -> Claim:
    return claim if isinstance(claim, Claim) else Claim(claim)


def _check_dims(claim: Claim, measures: MeasurePair, tree: Optional[ScenarioTree]) -> None:
    if claim.n != measures.n:
        raise ValueError(f"claim has {claim.n} states, the measures have {measures.n}")
    if tree is not None and tree.n_states != measures.n:
        raise ValueError(f"tree has {tree.n_states} states, the measures have {measures.n}")


def _budget(claim: Claim, measures: MeasurePair, budget: Union[HedgeBudget, float]) -> HedgeBudget:
    if isinstance(budget, HedgeBudget):
        return budget
    return HedgeBudget.for_claim(claim, measures, v=float(budget))


def reduce_problem_a(
    claim: Claim, measures: MeasurePair, budget: Union[HedgeBudget, float]
) -> ks.KnapsackInstance:
    """0-1 knapsack: gains ``p``, weights ``q``, capacity ``alpha``."""
    claim = _as_claim(claim)
    b = _budget(claim, measures, budget)
    q = cost_weights(claim, measures).q
    return ks.KnapsackInstance(measures.p, q, b.alpha, ks.Variant.BINARY)


def solve_problem_a(
    claim: Claim,
    measures: MeasurePair,
    tree: Optional[ScenarioTree],
    budget: Union[HedgeBudget, float],
    mode: str = "exact",
    node_budget: int = ks.DEFAULT_NODE_BUDGET,
    level_keys: Optional[Sequence[Hashable]] = None,
) -> HedgeSolution:
    """Maximise the success probability with an admissible strategy.

    The success set is the knapsack selection; the hedge replicates
    ``H * 1_Gamma``.  ``mode`` is ``"exact"`` (branch-and-bound) or
    ``"greedy"`` (certified to within the critical state's probability).
    With ``level_keys`` the greedy pass orders whole levels of states first.
    """
    claim = _as_claim(claim)
    _check_dims(claim, measures, tree)
    b = _budget(claim, measures, budget)
    inst = reduce_problem_a(claim, measures, b)
    if level_keys is not None:
        greedy = grouped_greedy(inst, level_keys)
    else:
        greedy = ks.solve_greedy(inst)
    bounds = {
        "z_greedy": greedy.z,
        "z_dantzig": greedy.z_upper,
        "error_bound": greedy.error_bound,
    }
    if mode == "greedy":
        sol, problem = greedy, Problem.A_GREEDY
    elif mode == "exact":
        sol, problem = ks.solve_exact_01(inst, node_budget=node_budget), Problem.A_EXACT
        bounds["z_exact"] = sol.z
    else:
        raise ValueError(f"mode must be 'exact' or 'greedy' (got {mode!r})")
    x = sol.x
    return _finish(
        problem, claim, measures, tree, claim.payoff * x, x, b.v,
        bounds=bounds, critical_state=greedy.critical, optimal=sol.optimal,
    )


def solve_problem_a_randomized(
    claim: Claim,
    measures: MeasurePair,
    tree: Optional[ScenarioTree],
    budget: Union[HedgeBudget, float],
) -> HedgeSolution:
    """Hedge ``H * psi`` where ``psi`` is the continuous-knapsack optimum."""
    claim = _as_claim(claim)
    _check_dims(claim, measures, tree)
    b = _budget(claim, measures, budget)
    sol = ks.solve_continuous(reduce_problem_a(claim, measures, b).relaxed())
    psi = RandomizedTest(sol.x).psi
    z_star = math.fsum(measures.p * psi)
    return _finish(
        Problem.A_RANDOMIZED, claim, measures, tree, claim.payoff * psi, psi, b.v,
        bounds={"z_dantzig": z_star, "expected_success_ratio": z_star},
        critical_state=sol.critical,
    )


def neyman_pearson_test(
    claim: Claim, measures: MeasurePair, budget: Union[HedgeBudget, float]
) -> tuple[float, float, RandomizedTest]:
    """Optimal randomized test from the density ``dP/dQ`` and its critical level.

    Returns ``(c_star, gamma, test)``: the test is 1 where the density exceeds
    ``c_star * E*[H]``, ``gamma`` on the level set, 0 elsewhere.
    """
    claim = _as_claim(claim)
    b = _budget(claim, measures, budget)
    q = cost_weights(claim, measures).q
    p = measures.p
    with np.errstate(divide="ignore"):
        density = np.where(q > 0, p / np.where(q > 0, q, 1.0), np.inf)

    def mass_above(t: float) -> float:
        return math.fsum(q[density > t])

    # Q(density > t) is a right-continuous step function falling at the finite
    # density values, so the infimum is attained at 0 or at one of them
    candidates = np.unique(np.concatenate([[0.0], density[np.isfinite(density)]]))
    level = next(t for t in candidates if mass_above(float(t)) <= b.alpha)
    level = float(level)
    on_level = density == level
    gamma = (b.alpha - mass_above(level)) / math.fsum(q[on_level])
    psi = np.where(density > level, 1.0, 0.0)
    psi[on_level] = gamma
    return level / b.price, gamma, RandomizedTest(psi)


def solve_problem_b(
    claim: Claim,
    measures: MeasurePair,
    tree: Optional[ScenarioTree],
    v0: Union[HedgeBudget, float],
) -> HedgeSolution:
    """Quasi-replicate ``H``: hedge every state but the least likely one.

    The sacrificed state (smallest ``p``, lowest index on ties) absorbs the
    budget deficit; its terminal value may be negative.
    """
    claim = _as_claim(claim)
    _check_dims(claim, measures, tree)
    b = _budget(claim, measures, v0)
    h = claim.payoff
    i = int(np.argmin(measures.p))
    others = math.fsum(np.delete(measures.p_star * h, i))
    lam = float((b.v - others) / measures.p_star[i])
    modified = h.copy()
    modified[i] = lam
    return _finish(
        Problem.B, claim, measures, tree, modified, modified.copy(), b.v,
        bounds={"lambda": lam}, sacrificed_state=i,
    )


def reduce_problem_c(
    claim: Claim, measures: MeasurePair, budget: Union[HedgeBudget, float]
) -> ks.KnapsackInstance:
    """Continuous knapsack: gains ``m``, weights ``q``, capacity ``alpha``."""
    claim = _as_claim(claim)
    b = _budget(claim, measures, budget)
    w = cost_weights(claim, measures)
    if w.m is None:
        raise DegenerateClaimError("E[H] = 0: shortfall weights are undefined")
    return ks.KnapsackInstance(w.m, w.q, b.alpha, ks.Variant.CONTINUOUS_01)


def solve_problem_c(
    claim: Claim,
    measures: MeasurePair,
    tree: Optional[ScenarioTree],
    budget: Union[HedgeBudget, float],
) -> HedgeSolution:
    """Minimise expected shortfall with an admissible strategy.

    Hedges ``H * psi`` with ``psi`` from the continuous knapsack; states with
    zero payoff get ``psi = 0``.
    """
    claim = _as_claim(claim)
    _check_dims(claim, measures, tree)
    b = _budget(claim, measures, budget)
    sol = ks.solve_continuous(reduce_problem_c(claim, measures, b))
    psi = RandomizedTest(sol.x).psi
    modified = claim.payoff * psi
    out = _finish(
        Problem.C, claim, measures, tree, modified, psi, b.v,
        critical_state=sol.critical,
    )
    out.bounds["expected_terminal_value"] = math.fsum(measures.p * out.terminal_values)
    return out


def solve_problem_d(
    claim: Claim,
    measures: MeasurePair,
    tree: Optional[ScenarioTree],
    budget: Union[HedgeBudget, float],
) -> HedgeSolution:
    """Minimise expected shortfall with any self-financing strategy.

    Hedges ``H`` perfectly except on the state with the smallest ``p / p*``
    (last in stable ratio order), which takes whatever value spends exactly
    ``v``.
    """
    claim = _as_claim(claim)
    _check_dims(claim, measures, tree)
    b = _budget(claim, measures, budget)
    inst = ks.KnapsackInstance(
        measures.p, measures.p_star, b.v, ks.Variant.VARIABLE_BOUND, upper=claim.payoff
    )
    sol = ks.solve_variable_bound(inst)
    modified = sol.x.copy()
    i = sol.critical
    out = _finish(
        Problem.D, claim, measures, tree, modified, sol.x, b.v,
        bounds={"phi": float(modified[i])}, sacrificed_state=i,
    )
    out.bounds["expected_terminal_value"] = math.fsum(measures.p * out.terminal_values)
    return out
