"""Real-valued knapsack solvers.

Gains, weights and capacity are arbitrary non-negative reals, so the usual
integer dynamic programmes do not apply.  Items are always considered in
non-increasing gain/weight order (zero weight counts as +inf, ties keep the
input order).  Items with zero gain and zero weight are dropped before
solving and come back with ``x = 0``.
"""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import KnapsackError

__all__ = [
    "Variant",
    "KnapsackInstance",
    "KnapsackSolution",
    "order_by_ratio",
    "solve_continuous",
    "solve_greedy",
    "solve_exact_01",
    "brute_force_01",
    "solve_variable_bound",
    "capacity_tol",
    "DEFAULT_NODE_BUDGET",
    "BRUTE_FORCE_MAX_ITEMS",
]

DEFAULT_NODE_BUDGET = 10**7
BRUTE_FORCE_MAX_ITEMS = 25
CAPACITY_RTOL = 1e-12
# items whose gains and weights agree to this relative precision are treated
# as interchangeable by the branch-and-bound symmetry rule
_TWIN_RTOL = 1e-12


class Variant(enum.Enum):
    BINARY = "binary"
    CONTINUOUS_01 = "continuous"
    VARIABLE_BOUND = "variable_bound"


def capacity_tol(capacity: float) -> float:
    return CAPACITY_RTOL * (1.0 + abs(capacity))


@dataclass(frozen=True, eq=False)
class KnapsackInstance:
    gains: np.ndarray
    weights: np.ndarray
    capacity: float
    variant: Variant = Variant.BINARY
    upper: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        g = np.array(self.gains, dtype=float).reshape(-1)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if g.shape != w.shape:
            raise KnapsackError("gains and weights must have the same length")
        if not (np.isfinite(g).all() and np.isfinite(w).all() and math.isfinite(self.capacity)):
            raise KnapsackError("instance data must be finite")
        if self.capacity < 0:
            raise KnapsackError("capacity must be non-negative")
        variant = Variant(self.variant)
        upper = None
        if variant is Variant.VARIABLE_BOUND:
            if self.upper is None:
                raise KnapsackError("the variable-bound variant needs per-item upper bounds")
            upper = np.array(self.upper, dtype=float).reshape(-1)
            if upper.shape != g.shape or (upper < 0).any() or not np.isfinite(upper).all():
                raise KnapsackError("upper bounds must be finite, non-negative, one per item")
            if (w <= 0).any():
                raise KnapsackError("the variable-bound variant needs strictly positive weights")
        else:
            if (g < 0).any() or (w < 0).any():
                raise KnapsackError("gains and weights must be non-negative")
        for a in (g, w) + ((upper,) if upper is not None else ()):
            a.setflags(write=False)
        object.__setattr__(self, "gains", g)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "capacity", float(self.capacity))
        object.__setattr__(self, "variant", variant)
        object.__setattr__(self, "upper", upper)

    @property
    def n(self) -> int:
        return self.gains.size

    def relaxed(self) -> KnapsackInstance:
        """The continuous (0 <= x <= 1) relaxation of a binary instance."""
        return KnapsackInstance(self.gains, self.weights, self.capacity, Variant.CONTINUOUS_01)

    def permuted(self, perm: np.ndarray) -> KnapsackInstance:
        perm = np.asarray(perm)
        upper = None if self.upper is None else self.upper[perm]
        return KnapsackInstance(
            self.gains[perm], self.weights[perm], self.capacity, self.variant, upper
        )


@dataclass(frozen=True, eq=False)
class KnapsackSolution:
    """Decision vector in the caller's item order plus certificates.

    ``critical`` is the index of the critical item (first item in ratio order
    whose cumulative weight exceeds the capacity), ``z_upper`` the Dantzig
    bound and ``error_bound`` the greedy certificate ``gain[critical]``.
    """

    x: np.ndarray
    z: float
    critical: Optional[int] = None
    z_upper: Optional[float] = None
    error_bound: Optional[float] = None
    optimal: bool = True
    nodes: int = 0

    def weight(self, instance: KnapsackInstance) -> float:
        return math.fsum(instance.weights * self.x)


def _ratios(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        r = g / w
    r[w == 0] = np.inf
    return r


def order_by_ratio(instance: KnapsackInstance) -> np.ndarray:
    """Permutation putting items in non-increasing gain/weight order (stable)."""
    r = _ratios(instance.gains, instance.weights)
    return np.argsort(-r, kind="stable")


def _active_order(instance: KnapsackInstance) -> np.ndarray:
    order = order_by_ratio(instance)
    g, w = instance.gains[order], instance.weights[order]
    return order[~((g == 0) & (w == 0))]


def _critical_position(w_sorted: np.ndarray, capacity: float) -> Optional[int]:
    limit = capacity + capacity_tol(capacity)
    cum = 0.0
    for j, wj in enumerate(w_sorted):
        cum += wj
        if cum > limit:
            return j
    return None


def _dantzig(g_sorted: np.ndarray, w_sorted: np.ndarray, capacity: float, s: int):
    """Fractional fill of the critical item; returns (x_sorted, z)."""
    x = np.zeros(g_sorted.size)
    x[:s] = 1.0
    resid = capacity - math.fsum(w_sorted[:s])
    x[s] = min(max(resid / w_sorted[s], 0.0), 1.0)
    return x, math.fsum(g_sorted * x)


def _require_variant(instance: KnapsackInstance, *allowed: Variant) -> None:
    if instance.variant not in allowed:
        names = ", ".join(v.name for v in allowed)
        raise KnapsackError(f"solver expects a {names} instance, got {instance.variant.name}")


def _require_critical(instance: KnapsackInstance, order: np.ndarray) -> int:
    s = _critical_position(instance.weights[order], instance.capacity)
    if s is None:
        raise KnapsackError(
            "capacity covers every item (need capacity < total weight); "
            "the full selection is the trivial solution"
        )
    return s


def solve_continuous(instance: KnapsackInstance) -> KnapsackSolution:
    """Optimal fractional solution: fill by ratio, split the critical item."""
    _require_variant(instance, Variant.CONTINUOUS_01)
    order = _active_order(instance)
    s = _require_critical(instance, order)
    xs, z = _dantzig(instance.gains[order], instance.weights[order], instance.capacity, s)
    x = np.zeros(instance.n)
    x[order] = xs
    crit = int(order[s])
    return KnapsackSolution(
        x=x, z=z, critical=crit, z_upper=z, error_bound=float(instance.gains[crit])
    )


def solve_greedy(instance: KnapsackInstance) -> KnapsackSolution:
    """Take every item before the critical one; error at most its gain."""
    _require_variant(instance, Variant.BINARY)
    order = _active_order(instance)
    s = _require_critical(instance, order)
    g, w = instance.gains[order], instance.weights[order]
    x = np.zeros(instance.n)
    x[order[:s]] = 1.0
    _, z_upper = _dantzig(g, w, instance.capacity, s)
    crit = int(order[s])
    return KnapsackSolution(
        x=x,
        z=math.fsum(g[:s]),
        critical=crit,
        z_upper=z_upper,
        error_bound=float(g[s]),
    )


def _twin_blocks(g: list[float], w: list[float]) -> list[tuple[int, int]]:
    """Maximal runs of interchangeable consecutive items (ratio order).

    Zero-weight items always form their own runs: with positive gain they
    belong to every optimum.
    """
    n = len(g)
    gtol = _TWIN_RTOL * max(g, default=0.0)
    wtol = _TWIN_RTOL * max(w, default=0.0)
    blocks = []
    start = 0
    for k in range(1, n + 1):
        if k < n:
            if w[k] == 0 and w[k - 1] == 0:
                continue
            if w[k] > 0 and w[k - 1] > 0 and abs(g[k] - g[k - 1]) <= gtol and abs(w[k] - w[k - 1]) <= wtol:
                continue
        blocks.append((start, k))
        start = k
    return blocks


def solve_exact_01(
    instance: KnapsackInstance, node_budget: int = DEFAULT_NODE_BUDGET
) -> KnapsackSolution:
    """Depth-first branch-and-bound over items in ratio order.

    Runs of interchangeable items (equal gain and weight up to rounding) are
    branched on as a count, taking a prefix of the run, largest count first.
    Among optima of equal value the decision vector that is lexicographically
    greatest in ratio order wins, i.e. better-ratio items are preferred.  If
    ``node_budget`` nodes are expanded before the search completes, the best
    solution found so far is returned with ``optimal=False``.
    """
    _require_variant(instance, Variant.BINARY)
    order = _active_order(instance)
    g = instance.gains[order]
    w = instance.weights[order]
    n = g.size
    cap = instance.capacity
    limit = cap + capacity_tol(cap)

    W = np.concatenate([[0.0], np.cumsum(w)]).tolist()
    G = np.concatenate([[0.0], np.cumsum(g)]).tolist()
    gl, wl = g.tolist(), w.tolist()
    eps = np.finfo(float).eps
    slack = 8.0 * (n + 1) * eps * (1.0 + G[-1])
    wslack = 8.0 * (n + 1) * eps * (1.0 + W[-1])
    blocks = _twin_blocks(gl, wl)
    nb = len(blocks)
    starts = [b[0] for b in blocks] + [n]

    def dantzig(k: int, used: float, gain: float) -> float:
        top = W[k] + (limit - used)
        j = bisect.bisect_right(W, top) - 1
        if j >= n:
            return gain + G[n] - G[k]
        return gain + G[j] - G[k] + min(max((top - W[j]) / wl[j], 0.0), 1.0) * gl[j]

    def bound(k: int, used: float, gain: float) -> float:
        # Martello-Toth bound on the free items k..n-1: the better of
        # "critical item out, next one fractional" and "critical item in,
        # weight taken back from the previous one"
        top = W[k] + (limit - used)
        j = bisect.bisect_right(W, top) - 1
        if j >= n:
            return gain + G[n] - G[k]
        base = gain + G[j] - G[k]
        resid = top - W[j]
        u0 = base
        if j + 1 < n and wl[j + 1] > 0:
            u0 += resid * gl[j + 1] / wl[j + 1]
        u1 = -math.inf
        if j > k and wl[j - 1] > 0:
            u1 = base + gl[j] - (wl[j] - resid) * gl[j - 1] / wl[j - 1]
        return max(u0, u1)

    best_z = -math.inf
    best_sel: list[int] = []
    nodes = 0
    complete = True
    # entries: (block, weight used, gain, chain of (block, count), next count);
    # next count None marks a node not yet expanded
    stack: list = [(0, 0.0, 0.0, None, None)]
    while stack:
        b, used, gain, chain, c = stack.pop()
        k = starts[b]
        if c is None:
            if nodes >= node_budget:
                complete = False
                break
            nodes += 1
            if b == nb or W[n] - W[k] + used <= limit - wslack:
                sel = list(range(k, n))
                link = chain
                while link is not None:
                    bb, cc, link = link
                    sel.extend(range(starts[bb], starts[bb] + cc))
                sel.sort()
                if math.fsum(wl[i] for i in sel) <= limit:
                    z = math.fsum(gl[i] for i in sel)
                    if z > best_z:
                        best_z, best_sel = z, sel
                continue
            if bound(k, used, gain) < best_z - slack:
                continue
            end = starts[b + 1]
            if wl[k] == 0:
                c = end - k
            else:
                c = min(bisect.bisect_right(W, W[k] + limit - used) - 1, end) - k
        end = starts[b + 1]
        child_used = used + W[k + c] - W[k]
        child_gain = gain + G[k + c] - G[k]
        # the relaxation bound can only fall as the count drops
        if dantzig(end, child_used, child_gain) < best_z - slack:
            continue
        if c > 0 and wl[k] > 0:
            stack.append((b, used, gain, chain, c - 1))
        stack.append((b + 1, child_used, child_gain, (b, c, chain) if c else chain, None))

    x = np.zeros(instance.n)
    x[order[best_sel]] = 1.0
    s = _critical_position(w, cap)
    crit = z_upper = err = None
    if s is not None:
        _, z_upper = _dantzig(g, w, cap, s)
        crit, err = int(order[s]), float(g[s])
    return KnapsackSolution(
        x=x,
        z=max(best_z, 0.0),
        critical=crit,
        z_upper=z_upper,
        error_bound=err,
        optimal=complete,
        nodes=nodes,
    )


def brute_force_01(instance: KnapsackInstance) -> KnapsackSolution:
    """Exhaustive enumeration, same tie rule as ``solve_exact_01``."""
    _require_variant(instance, Variant.BINARY)
    if instance.n > BRUTE_FORCE_MAX_ITEMS:
        raise KnapsackError(
            f"brute force is limited to {BRUTE_FORCE_MAX_ITEMS} items (got {instance.n})"
        )
    order = _active_order(instance)
    g = instance.gains[order]
    w = instance.weights[order]
    n = g.size
    limit = instance.capacity + capacity_tol(instance.capacity)
    eps = np.finfo(float).eps
    slack = 8.0 * (n + 1) * eps * (1.0 + float(g.sum()))
    wslack = 8.0 * (n + 1) * eps * (1.0 + float(w.sum()))

    # bit (n-1-i) of a mask selects position i, so mask order is lexicographic
    # order; the low positions are tabulated by subset-sum doubling and the
    # high positions are enumerated one block at a time.  Float sums only
    # shortlist candidates: masks within wslack of the capacity are kept as
    # borderline and every candidate is rechecked with exact sums below.
    low = min(n, 20)
    tw_low = np.zeros(1)
    tz_low = np.zeros(1)
    for i in range(n - 1, n - 1 - low, -1):
        tw_low = np.concatenate([tw_low, tw_low + w[i]])
        tz_low = np.concatenate([tz_low, tz_low + g[i]])
    high = n - low
    cands: list[tuple[float, int]] = []
    best_approx = -math.inf
    for top in range(1 << high):
        sel_top = [i for i in range(high) if (top >> (high - 1 - i)) & 1]
        tw = tw_low + float(w[sel_top].sum())
        tz = tz_low + float(g[sel_top].sum())
        maybe = tw <= limit + wslack
        if not maybe.any():
            continue
        sure = tw <= limit - wslack
        if sure.any():
            best_approx = max(best_approx, float(tz[sure].max()))
        keep = np.flatnonzero(maybe & (tz >= best_approx - slack))
        cands.extend((float(tz[m]), int((top << low) | m)) for m in keep)
    best_z, best_mask = -math.inf, 0
    for tz_m, m in cands:
        if tz_m < best_approx - slack:
            continue
        sel = [i for i in range(n) if (m >> (n - 1 - i)) & 1]
        if math.fsum(w[sel]) > limit:
            continue
        z = math.fsum(g[sel])
        if z > best_z or (z == best_z and m > best_mask):
            best_z, best_mask = z, m
    sel = [i for i in range(n) if (best_mask >> (n - 1 - i)) & 1]
    x = np.zeros(instance.n)
    x[order[sel]] = 1.0
    return KnapsackSolution(x=x, z=max(best_z, 0.0), nodes=1 << n)


def solve_variable_bound(instance: KnapsackInstance) -> KnapsackSolution:
    """Maximise sum g x subject to sum w x <= c and x <= upper, x unbounded below.

    Every item but the worst-ratio one sits at its upper bound; the last
    item absorbs the remaining budget and may go negative.  If the budget
    exceeds the cost of the all-upper vector, that vector is returned.
    """
    _require_variant(instance, Variant.VARIABLE_BOUND)
    n = instance.n
    if n == 0:
        return KnapsackSolution(x=np.zeros(0), z=0.0)
    order = order_by_ratio(instance)
    g, w, u = instance.gains[order], instance.weights[order], instance.upper[order]
    last = int(order[-1])
    if w[-1] == 0:
        raise KnapsackError("the last item in ratio order has zero weight")
    xs = u.copy()
    xs[-1] = (instance.capacity - math.fsum(u[:-1] * w[:-1])) / w[-1]
    xs[-1] = min(xs[-1], u[-1])
    x = np.zeros(n)
    x[order] = xs
    return KnapsackSolution(x=x, z=math.fsum(g * xs), critical=last)
