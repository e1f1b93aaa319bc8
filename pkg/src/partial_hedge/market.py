"""Finite, complete discrete-time markets on path-explicit scenario trees.

All prices live in numéraire units: asset 0 is the numéraire and its
discounted price is identically 1 at every node.  Terminal states are the
leaves of the tree, numbered in depth-first order (children visited in the
order they are listed), so a binomial tree built with ``build_binomial`` has
the all-up path as state 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np

from .errors import ArbitrageError, IncompleteMarketError, ModelError

MONEY_RTOL = 1e-9
PROB_ATOL = 1e-12

__all__ = [
    "ScenarioTree",
    "MeasurePair",
    "Claim",
    "Strategy",
    "ValueProcess",
    "build_binomial",
    "risk_neutral_measure",
    "price",
    "replicate",
    "is_admissible",
    "success_probability",
    "expected_shortfall",
    "is_self_financing",
    "is_martingale",
    "money_tol",
]


def money_tol(*arrays: np.ndarray | float) -> float:
    """Absolute tolerance for monetary comparisons at the scale of ``arrays``."""
    scale = 0.0
    for a in arrays:
        if isinstance(a, np.ndarray):
            if a.size:
                scale = max(scale, float(np.abs(a).max()))
        else:
            scale = max(scale, abs(float(a)))
    return MONEY_RTOL * (1.0 + scale)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScenarioTree:
    """A finite filtered market given as an explicit tree of price nodes.

    ``children[v]`` lists the child node ids of node ``v`` (empty for leaves),
    ``probabilities[v]`` the real-world conditional branch probabilities and
    ``prices[v]`` the discounted price vector ``(1, X1, ..., Xd)``.  Node 0 is
    the root and every child id must be larger than its parent's id.
    """

    children: tuple[tuple[int, ...], ...]
    probabilities: tuple[tuple[float, ...], ...]
    prices: np.ndarray
    time: np.ndarray = field(init=False, repr=False)
    parent: np.ndarray = field(init=False, repr=False)
    leaves: np.ndarray = field(init=False, repr=False)
    leaf_range: np.ndarray = field(init=False, repr=False)

    def __init__(
        self,
        children: Sequence[Sequence[int]],
        probabilities: Sequence[Sequence[float]],
        prices: np.ndarray | Sequence[Sequence[float]],
    ) -> None:
        kids = tuple(tuple(int(c) for c in cs) for cs in children)
        probs = tuple(tuple(float(p) for p in ps) for ps in probabilities)
        px = np.array(prices, dtype=float)
        if px.ndim == 1:
            px = px[:, None]
        m = len(kids)
        if m == 0:
            raise ModelError("tree has no nodes")
        if len(probs) != m or px.shape[0] != m:
            raise ModelError(
                f"inconsistent node counts: {m} children lists, {len(probs)} "
                f"probability lists, {px.shape[0]} price rows"
            )
        if not np.isfinite(px).all():
            raise ModelError("prices must be finite")
        if (np.abs(px[:, 0] - 1.0) > PROB_ATOL).any():
            raise ModelError("asset 0 is the numéraire; its discounted price must be 1")
        if (px < 0).any():
            raise ModelError("asset prices must be non-negative")

        parent = np.full(m, -1, dtype=np.int64)
        time = np.zeros(m, dtype=np.int64)
        for v, cs in enumerate(kids):
            ps = probs[v]
            if len(ps) != len(cs):
                raise ModelError(f"node {v}: {len(cs)} children but {len(ps)} probabilities")
            if not cs:
                continue
            if len(cs) < 2:
                raise ModelError(f"node {v}: a non-terminal node needs at least 2 children")
            if min(ps) <= 0.0 or abs(math.fsum(ps) - 1.0) > PROB_ATOL:
                raise ModelError(f"node {v}: branch probabilities must be positive and sum to 1")
            for c in cs:
                if not v < c < m:
                    raise ModelError(f"node {v}: child id {c} must lie in ({v}, {m})")
                if parent[c] != -1:
                    raise ModelError(f"node {c} has more than one parent")
                parent[c] = v
                time[c] = time[v] + 1
        if (parent[1:] == -1).any():
            raise ModelError("every node other than the root needs a parent")

        # depth-first leaf order, and the contiguous leaf range of each subtree
        leaves: list[int] = []
        lo = np.zeros(m, dtype=np.int64)
        hi = np.zeros(m, dtype=np.int64)
        stack: list[tuple[int, bool]] = [(0, False)]
        while stack:
            v, done = stack.pop()
            if done:
                hi[v] = len(leaves)
                continue
            lo[v] = len(leaves)
            if not kids[v]:
                leaves.append(v)
                hi[v] = len(leaves)
                continue
            stack.append((v, True))
            stack.extend((c, False) for c in reversed(kids[v]))
        leaf_arr = np.array(leaves, dtype=np.int64)
        horizon = int(time[leaf_arr[0]])
        if (time[leaf_arr] != horizon).any():
            raise ModelError("every root-to-leaf path must have the same length")

        object.__setattr__(self, "children", kids)
        object.__setattr__(self, "probabilities", probs)
        object.__setattr__(self, "prices", _frozen(px))
        object.__setattr__(self, "time", _frozen(time))
        object.__setattr__(self, "parent", _frozen(parent))
        object.__setattr__(self, "leaves", _frozen(leaf_arr))
        object.__setattr__(self, "leaf_range", _frozen(np.stack([lo, hi], axis=1)))

    @property
    def n_nodes(self) -> int:
        return len(self.children)

    @property
    def n_states(self) -> int:
        return len(self.leaves)

    @property
    def n_assets(self) -> int:
        """Number of assets including the numéraire (``d + 1``)."""
        return self.prices.shape[1]

    @property
    def horizon(self) -> int:
        return int(self.time[self.leaves[0]])

    def is_leaf(self, v: int) -> bool:
        return not self.children[v]

    def path(self, state: int) -> list[int]:
        """Node ids from the root to the leaf of terminal state ``state``."""
        v = int(self.leaves[state])
        out = [v]
        while self.parent[v] >= 0:
            v = int(self.parent[v])
            out.append(v)
        return out[::-1]

    @cached_property
    def _replication_plan(self) -> list[tuple[int, list[int], np.ndarray, bool]]:
        # per internal node, deepest first: (node, children, left inverse, exact)
        plan = []
        for v in range(self.n_nodes - 1, -1, -1):
            kids = list(self.children[v])
            if not kids:
                continue
            a = self.prices[kids]  # (k, d+1)
            if a.shape[0] == a.shape[1]:
                try:
                    plan.append((v, kids, np.linalg.inv(a), True))
                except np.linalg.LinAlgError:
                    raise IncompleteMarketError(f"node {v}: singular one-period system") from None
            else:
                plan.append((v, kids, np.linalg.pinv(a), False))
        return plan

    def branch_counts(self) -> np.ndarray:
        """Per terminal state, how often each branch position was taken.

        For a binomial tree column 0 counts up-moves.  This is a structural
        label: two paths with equal counts in a homogeneous tree carry the
        same real-world and risk-neutral probabilities.
        """
        width = max(len(cs) for cs in self.children)
        counts = np.zeros((self.n_states, width), dtype=np.int64)
        for i in range(self.n_states):
            p = self.path(i)
            for a, b in zip(p[:-1], p[1:]):
                counts[i, self.children[a].index(b)] += 1
        return counts


@dataclass(frozen=True, eq=False)
class MeasurePair:
    """Real-world probabilities ``p`` and risk-neutral ``p_star`` per state."""

    p: np.ndarray
    p_star: np.ndarray

    def __post_init__(self) -> None:
        p = np.array(self.p, dtype=float)
        ps = np.array(self.p_star, dtype=float)
        if p.ndim != 1 or p.shape != ps.shape:
            raise ModelError("p and p_star must be vectors of equal length")
        if p.size == 0:
            raise ModelError("the state space must be non-empty")
        for name, v in (("p", p), ("p_star", ps)):
            if not np.isfinite(v).all() or (v <= 0).any():
                raise ModelError(f"{name} must be strictly positive in every state")
            if abs(math.fsum(v) - 1.0) > PROB_ATOL:
                raise ModelError(f"{name} must sum to 1 (got {math.fsum(v)!r})")
        object.__setattr__(self, "p", _frozen(p))
        object.__setattr__(self, "p_star", _frozen(ps))

    @property
    def n(self) -> int:
        return self.p.size


@dataclass(frozen=True, eq=False)
class Claim:
    """Discounted, non-negative terminal payoff of a European claim."""

    payoff: np.ndarray

    def __post_init__(self) -> None:
        h = np.array(self.payoff, dtype=float)
        if h.ndim != 1:
            raise ValueError("payoff must be a vector")
        if not np.isfinite(h).all() or (h < 0).any():
            raise ValueError("claim payoffs must be finite and non-negative")
        object.__setattr__(self, "payoff", _frozen(h))

    @classmethod
    def call(cls, terminal_prices: np.ndarray, strike: float) -> Claim:
        return cls(np.maximum(np.asarray(terminal_prices, dtype=float) - strike, 0.0))

    @classmethod
    def put(cls, terminal_prices: np.ndarray, strike: float) -> Claim:
        return cls(np.maximum(strike - np.asarray(terminal_prices, dtype=float), 0.0))

    @property
    def n(self) -> int:
        return self.payoff.size


@dataclass(frozen=True, eq=False)
class Strategy:
    """Holdings per non-terminal node; row ``v`` is held over the period after ``v``.

    Rows of terminal nodes are NaN.
    """

    holdings: np.ndarray


@dataclass(frozen=True, eq=False)
class ValueProcess:
    values: np.ndarray
    leaves: np.ndarray

    @property
    def initial(self) -> float:
        return float(self.values[0])

    @property
    def terminal(self) -> np.ndarray:
        return self.values[self.leaves]


def build_binomial(
    s0: float,
    up_factor: float,
    down_factor: float,
    period_rate: float,
    p_up: float,
    periods: int,
) -> ScenarioTree:
    """Path-explicit binomial tree with ``2**periods`` terminal states.

    Nodes are stored level by level; node ``j`` of level ``t`` has the up
    child first.  Prices are discounted by ``(1 + period_rate) ** t``.
    """
    if s0 <= 0:
        raise ModelError("s0 must be positive")
    if int(periods) != periods or periods < 1:
        raise ModelError("periods must be a positive integer")
    if not 0.0 < p_up < 1.0:
        raise ModelError("p_up must lie strictly between 0 and 1")
    growth = 1.0 + period_rate
    if not 0.0 < down_factor < growth < up_factor:
        raise ArbitrageError(
            "no-arbitrage requires 0 < down_factor < 1 + period_rate < up_factor "
            f"(got d={down_factor}, 1+r={growth}, u={up_factor})"
        )
    periods = int(periods)
    children: list[tuple[int, ...]] = []
    probs: list[tuple[float, ...]] = []
    risky: list[np.ndarray] = []
    branch = (float(p_up), 1.0 - float(p_up))
    for t in range(periods + 1):
        width = 1 << t
        j = np.arange(width, dtype=np.int64)
        downs = np.array([int(x).bit_count() for x in j], dtype=np.int64)
        ups = t - downs
        risky.append(s0 * up_factor**ups * down_factor**downs / growth**t)
        if t < periods:
            nxt = (1 << (t + 1)) - 1
            for jj in range(width):
                children.append((nxt + 2 * jj, nxt + 2 * jj + 1))
                probs.append(branch)
        else:
            children.extend(() for _ in range(width))
            probs.extend(() for _ in range(width))
    x = np.concatenate(risky)
    prices = np.column_stack([np.ones_like(x), x])
    return ScenarioTree(children, probs, prices)


def _one_period_measure(tree: ScenarioTree, v: int) -> np.ndarray:
    kids = tree.children[v]
    a = tree.prices[list(kids)].T  # (d+1, k)
    b = tree.prices[v]
    k = len(kids)
    rank = np.linalg.matrix_rank(a)
    if rank == k:
        if a.shape[0] == k:
            q = np.linalg.solve(a, b)
        else:
            q, *_ = np.linalg.lstsq(a, b, rcond=None)
        if np.max(np.abs(a @ q - b)) > money_tol(b):
            raise ArbitrageError(f"node {v}: no martingale measure for the one-period market")
        if (q <= 0).any():
            raise ArbitrageError(
                f"node {v}: the unique one-period martingale measure is not strictly positive"
            )
        return q
    # rank deficient: a positive solution means incompleteness, none means arbitrage
    from scipy.optimize import linprog

    # maximise t subject to a q = b, q_j >= t
    c = np.zeros(k + 1)
    c[-1] = -1.0
    a_eq = np.hstack([a, np.zeros((a.shape[0], 1))])
    a_ub = np.hstack([-np.eye(k), np.ones((k, 1))])
    res = linprog(
        c, A_ub=a_ub, b_ub=np.zeros(k), A_eq=a_eq, b_eq=b,
        bounds=[(None, None)] * k + [(None, 1.0)], method="highs",
    )
    if res.status == 0 and -res.fun > PROB_ATOL:
        raise IncompleteMarketError(
            f"node {v}: {k} branches but only {rank} linearly independent price "
            "vectors; the martingale measure is not unique"
        )
    raise ArbitrageError(f"node {v}: no strictly positive one-period martingale measure")


def _path_products(tree: ScenarioTree, branch: list[np.ndarray | tuple[float, ...]]) -> np.ndarray:
    # factors are multiplied in sorted order so paths with the same multiset
    # of branch probabilities get bit-identical products
    out = np.empty(tree.n_states)
    for i in range(tree.n_states):
        path = tree.path(i)
        factors = sorted(
            float(branch[a][tree.children[a].index(b)]) for a, b in zip(path[:-1], path[1:])
        )
        out[i] = math.prod(factors)
    return out


def risk_neutral_measure(tree: ScenarioTree) -> MeasurePair:
    """Path probabilities under the real-world and the unique martingale measure."""
    branch_star: list[np.ndarray | tuple[float, ...]] = [()] * tree.n_nodes
    # one-period measures equal up to solver rounding are shared, so a
    # homogeneous tree gets bit-identical branch probabilities everywhere
    seen: dict[tuple, np.ndarray] = {}
    for v in range(tree.n_nodes):
        if tree.children[v]:
            q = _one_period_measure(tree, v)
            branch_star[v] = seen.setdefault(tuple(np.round(q, 12)), q)
    p = _path_products(tree, list(tree.probabilities))
    p_star = _path_products(tree, branch_star)
    return MeasurePair(p, p_star)


PayoffLike = Union[Claim, np.ndarray, Sequence[float]]


def _payoff(x: PayoffLike) -> np.ndarray:
    if isinstance(x, Claim):
        return x.payoff
    return np.asarray(x, dtype=float)


def price(claim: PayoffLike, measures: MeasurePair) -> float:
    """Arbitrage-free price ``E*[H]`` in numéraire units."""
    h = _payoff(claim)
    if h.shape != measures.p_star.shape:
        raise ValueError(f"claim has {h.size} states, the model has {measures.n}")
    return math.fsum(measures.p_star * h)


def replicate(
    payoff: PayoffLike, tree: ScenarioTree, measures: MeasurePair | None = None
) -> tuple[Strategy, ValueProcess]:
    """Self-financing strategy whose terminal value equals ``payoff``.

    Works for any real payoff, negative values included.  Holdings at each
    node solve the one-period system over its children (the inverses are
    cached on the tree); when there are more assets than children the
    minimum-norm holding is used.
    """
    h = _payoff(payoff)
    if h.shape != (tree.n_states,):
        raise ValueError(f"payoff has {h.size} states, the tree has {tree.n_states}")
    if measures is not None and measures.n != tree.n_states:
        raise ValueError("measures do not match the tree")
    values = np.empty(tree.n_nodes)
    values[tree.leaves] = h
    holdings = np.full((tree.n_nodes, tree.n_assets), np.nan)
    prices = tree.prices
    for v, kids, inverse, exact in tree._replication_plan:
        target = values[kids]
        xi = inverse @ target
        if not exact and np.max(np.abs(prices[kids] @ xi - target)) > money_tol(target):
            raise IncompleteMarketError(f"node {v}: payoff is not attainable over one period")
        holdings[v] = xi
        values[v] = float(prices[v] @ xi)
    # terminal values are read off the final holdings, not copied from the payoff
    leaves = tree.leaves
    values[leaves] = np.einsum("ij,ij->i", tree.prices[leaves], holdings[tree.parent[leaves]])
    return Strategy(_frozen(holdings)), ValueProcess(_frozen(values), tree.leaves)


def _terminal(vp: ValueProcess | np.ndarray | Sequence[float]) -> np.ndarray:
    if isinstance(vp, ValueProcess):
        return vp.terminal
    return np.asarray(vp, dtype=float)


def is_admissible(vp: ValueProcess | np.ndarray, tol: float | None = None) -> bool:
    values = vp.values if isinstance(vp, ValueProcess) else np.asarray(vp, dtype=float)
    if tol is None:
        tol = money_tol(values)
    return bool((values >= -tol).all())


def success_probability(
    vp: ValueProcess | np.ndarray, claim: PayoffLike, measures: MeasurePair
) -> float:
    """``P(V_T >= H)`` with a tolerant comparison so exact hedges count."""
    vt = _terminal(vp)
    h = _payoff(claim)
    ok = vt >= h - money_tol(h, vt)
    return math.fsum(measures.p[ok])


def expected_shortfall(
    vp: ValueProcess | np.ndarray, claim: PayoffLike, measures: MeasurePair
) -> float:
    vt = _terminal(vp)
    h = _payoff(claim)
    return math.fsum(measures.p * np.maximum(h - vt, 0.0))


def is_self_financing(strategy: Strategy, tree: ScenarioTree, tol: float | None = None) -> bool:
    """Check ``xi_parent . X_v == xi_v . X_v`` at every interior rebalancing node."""
    xi = strategy.holdings
    worst = 0.0
    scale = 0.0
    for v in range(1, tree.n_nodes):
        if not tree.children[v]:
            continue
        before = float(tree.prices[v] @ xi[tree.parent[v]])
        after = float(tree.prices[v] @ xi[v])
        worst = max(worst, abs(before - after))
        scale = max(scale, abs(before))
    if tol is None:
        tol = MONEY_RTOL * (1.0 + scale)
    return worst <= tol


def is_martingale(
    vp: ValueProcess, tree: ScenarioTree, measures: MeasurePair, tol: float | None = None
) -> bool:
    """One-step check of ``V_v == E*[V_child | v]`` using subtree masses of ``p_star``."""
    mass = np.zeros(tree.n_nodes)
    mass[tree.leaves] = measures.p_star
    for v in range(tree.n_nodes - 1, 0, -1):
        mass[tree.parent[v]] += mass[v]
    values = vp.values
    if tol is None:
        tol = money_tol(values)
    for v, kids in enumerate(tree.children):
        if not kids:
            continue
        ks = list(kids)
        expect = float(np.dot(mass[ks], values[ks]) / mass[v])
        if abs(expect - values[v]) > tol:
            return False
    return True
