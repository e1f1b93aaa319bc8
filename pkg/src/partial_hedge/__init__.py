"""Partial hedging of contingent claims in finite complete markets via knapsack problems."""

from .errors import (
    ArbitrageError,
    BudgetError,
    ConfigError,
    DegenerateClaimError,
    HedgeError,
    IncompleteMarketError,
    KnapsackError,
    ModelError,
)
from .hedging import (
    HedgeBudget,
    HedgeSolution,
    Problem,
    QWeights,
    RandomizedTest,
    cost_weights,
    neyman_pearson_test,
    reduce_problem_a,
    reduce_problem_c,
    solve_problem_a,
    solve_problem_a_randomized,
    solve_problem_b,
    solve_problem_c,
    solve_problem_d,
)
from .knapsack import (
    KnapsackInstance,
    KnapsackSolution,
    Variant,
    brute_force_01,
    order_by_ratio,
    solve_continuous,
    solve_exact_01,
    solve_greedy,
    solve_variable_bound,
)
from .levels import binomial_levels, group_levels, grouped_greedy, level_greedy, structural_keys
from .market import (
    Claim,
    MeasurePair,
    ScenarioTree,
    Strategy,
    ValueProcess,
    build_binomial,
    expected_shortfall,
    is_admissible,
    is_martingale,
    is_self_financing,
    price,
    replicate,
    risk_neutral_measure,
    success_probability,
)

__version__ = "0.1.0"
