"""Command-line front end: ``hedge solve --problem ... --config cfg.json``.

The config is one JSON document::

    {
      "model":  {"binomial": {"s0": 100, "u": 1.2, "d": 0.8, "r": 0.0, "p": 0.6, "N": 1}}
                | {"table": {"p": [...], "p_star": [...], "prices": [...]}},
      "claim":  {"type": "call", "strike": 100} | {"type": "put", "strike": 100}
                | {"payoff": [...]},
      "budget": {"v": 5.0} | {"alpha": 0.5},
      "problem": "a", "mode": "greedy", "oracle": false, "levels": false
    }

Binomial strikes are undiscounted and paid at maturity; table prices,
strikes and payoffs are already in numéraire units.  Command-line flags
override the optional config keys.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import knapsack as ks
from .errors import (
    BudgetError,
    ConfigError,
    DegenerateClaimError,
    HedgeError,
    ModelError,
)
from .hedging import (
    HedgeBudget,
    HedgeSolution,
    cost_weights,
    reduce_problem_a,
    solve_problem_a,
    solve_problem_a_randomized,
    solve_problem_b,
    solve_problem_c,
    solve_problem_d,
)
from .levels import structural_keys
from .market import Claim, MeasurePair, ScenarioTree, build_binomial, risk_neutral_measure

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MODEL = 3
EXIT_DEGENERATE = 4
EXIT_NOT_PROVEN = 5

PROBLEMS = ("a", "a-rand", "b", "c", "d")
MODES = ("exact", "greedy")
STATE_COLUMNS = ("omega", "p", "p_star", "h", "q", "m", "x", "v_terminal", "success", "shortfall")
ORACLE_MAX_STATES = 20
RUNTIME_KEY = "runtime_seconds"


@dataclass
class RunConfig:
    model: dict
    claim: dict
    budget: dict
    problem: str = "a"
    mode: str = "greedy"
    oracle: bool = False
    levels: bool = False
    node_budget: int = ks.DEFAULT_NODE_BUDGET

    @classmethod
    def from_dict(cls, doc: Any, **overrides: Any) -> RunConfig:
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        for key in ("model", "claim", "budget"):
            if not isinstance(doc.get(key), dict):
                raise ConfigError(f"config needs a '{key}' object")
        kwargs = {k: doc[k] for k in ("problem", "mode", "oracle", "levels") if k in doc}
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(model=doc["model"], claim=doc["claim"], budget=doc["budget"], **kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if len(self.model) != 1 or next(iter(self.model)) not in ("binomial", "table"):
            raise ConfigError("model must hold exactly one of 'binomial' or 'table'")
        kinds = [k for k in ("type", "payoff") if k in self.claim]
        if len(kinds) != 1:
            raise ConfigError("claim must give exactly one of 'type' (call/put) or 'payoff'")
        if "type" in self.claim:
            if self.claim["type"] not in ("call", "put"):
                raise ConfigError("claim type must be 'call' or 'put'")
            if not isinstance(self.claim.get("strike"), (int, float)):
                raise ConfigError("a call/put claim needs a numeric 'strike'")
        keys = [k for k in ("v", "alpha") if k in self.budget]
        if len(keys) != 1:
            raise ConfigError("budget must give exactly one of 'v' or 'alpha'")
        val = self.budget[keys[0]]
        if not isinstance(val, (int, float)) or isinstance(val, bool) or not math.isfinite(val):
            raise ConfigError(f"budget '{keys[0]}' must be a finite number")
        if val < 0:
            raise ConfigError("budget must be non-negative")
        if keys[0] == "alpha" and not val < 1:
            raise ConfigError("budget fraction alpha must satisfy 0 <= alpha < 1")
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {', '.join(PROBLEMS)}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}")


@dataclass
class Report:
    problem: str
    price: float
    budget: float
    alpha: float
    objective: float
    objective_name: str
    bounds: dict
    initial_cost: float
    success_probability: float
    expected_shortfall: float
    critical_state: Optional[int]
    sacrificed_state: Optional[int]
    optimal: bool
    strategy_available: bool
    states: list[dict]
    mode: Optional[str] = None
    oracle_z: Optional[float] = None
    levels: Optional[int] = None
    runtime_seconds: float = 0.0
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "mode": self.mode,
            "price": self.price,
            "budget": self.budget,
            "alpha": self.alpha,
            "objective": self.objective,
            "objective_name": self.objective_name,
            "bounds": self.bounds,
            "initial_cost": self.initial_cost,
            "success_probability": self.success_probability,
            "expected_shortfall": self.expected_shortfall,
            "critical_state": self.critical_state,
            "sacrificed_state": self.sacrificed_state,
            "optimal": self.optimal,
            "oracle_z": self.oracle_z,
            "levels": self.levels,
            "strategy_available": self.strategy_available,
            "notes": self.notes,
            "states": self.states,
            RUNTIME_KEY: self.runtime_seconds,
        }


def _vector(doc: dict, key: str, where: str) -> np.ndarray:
    val = doc.get(key)
    if not isinstance(val, list) or not val:
        raise ConfigError(f"{where} needs a non-empty list '{key}'")
    try:
        return np.array(val, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key} must hold numbers") from None


def build_model(cfg: RunConfig) -> tuple[Optional[ScenarioTree], MeasurePair, np.ndarray, float]:
    """Tree (or None in table mode), measures, terminal prices and strike discount."""
    if "binomial" in cfg.model:
        b = cfg.model["binomial"]
        try:
            args = [float(b[k]) for k in ("s0", "u", "d", "r", "p")]
            n = b["N"]
        except (KeyError, TypeError, ValueError):
            raise ConfigError("binomial model needs numeric s0, u, d, r, p and N") from None
        if not isinstance(n, int) or isinstance(n, bool):
            raise ConfigError("binomial N must be an integer")
        tree = build_binomial(*args, n)
        measures = risk_neutral_measure(tree)
        disc = (1.0 + args[3]) ** n
        return tree, measures, tree.prices[tree.leaves, 1], disc
    t = cfg.model["table"]
    p = _vector(t, "p", "model.table")
    ps = _vector(t, "p_star", "model.table")
    prices = _vector(t, "prices", "model.table") if "prices" in t else None
    measures = MeasurePair(p, ps)
    if prices is not None and prices.shape != p.shape:
        raise ConfigError("model.table.prices must have one entry per state")
    return None, measures, prices, 1.0


def build_claim(cfg: RunConfig, terminal: Optional[np.ndarray], disc: float, n: int) -> Claim:
    if "payoff" in cfg.claim:
        h = _vector(cfg.claim, "payoff", "claim")
        if h.size != n:
            raise ConfigError(f"claim.payoff has {h.size} entries, the model has {n} states")
        try:
            return Claim(h)
        except ValueError as exc:
            raise ConfigError(f"claim.payoff: {exc}") from None
    if terminal is None:
        raise ConfigError("a call/put claim on a table model needs model.table.prices")
    strike = float(cfg.claim["strike"]) / disc
    if cfg.claim["type"] == "call":
        return Claim.call(terminal, strike)
    return Claim.put(terminal, strike)


def _level_keys(tree: Optional[ScenarioTree], measures: MeasurePair, claim: Claim) -> list:
    if tree is not None:
        return structural_keys(tree, claim.payoff)
    return [(float(a), float(b), float(h)) for a, b, h in zip(measures.p, measures.p_star, claim.payoff)]


def _index(i: Optional[int]) -> Optional[int]:
    return None if i is None else int(i) + 1


def _solve(cfg: RunConfig, tree, measures, claim, budget: HedgeBudget, report_notes: list[str]):
    extra: dict[str, Any] = {}
    if cfg.problem == "a":
        keys = None
        if cfg.levels:
            if cfg.mode == "greedy":
                keys = _level_keys(tree, measures, claim)
                extra["levels"] = len(set(keys))
            else:
                report_notes.append("level grouping applies to greedy mode only; ignored")
        sol = solve_problem_a(
            claim, measures, tree, budget, mode=cfg.mode,
            node_budget=cfg.node_budget, level_keys=keys,
        )
        if cfg.oracle:
            if claim.n <= ORACLE_MAX_STATES:
                extra["oracle_z"] = ks.brute_force_01(reduce_problem_a(claim, measures, budget)).z
            else:
                report_notes.append(
                    f"oracle skipped: brute force is limited to {ORACLE_MAX_STATES} states"
                )
        name = "z_exact" if cfg.mode == "exact" else "z_greedy"
        return sol, sol.bounds[name], name, extra
    if cfg.problem == "a-rand":
        sol = solve_problem_a_randomized(claim, measures, tree, budget)
        return sol, sol.bounds["z_dantzig"], "z_dantzig", extra
    if cfg.problem == "b":
        sol = solve_problem_b(claim, measures, tree, budget)
        return sol, sol.success_probability, "success_probability", extra
    solver = solve_problem_c if cfg.problem == "c" else solve_problem_d
    sol = solver(claim, measures, tree, budget)
    return sol, sol.expected_shortfall, "expected_shortfall", extra


def _state_rows(sol: HedgeSolution, measures: MeasurePair, claim: Claim) -> list[dict]:
    w = cost_weights(claim, measures)
    h = claim.payoff
    success = np.zeros(claim.n, dtype=bool)
    success[sol.success_set] = True
    rows = []
    for i in range(claim.n):
        rows.append({
            "omega": i + 1,
            "p": float(measures.p[i]),
            "p_star": float(measures.p_star[i]),
            "h": float(h[i]),
            "q": float(w.q[i]),
            "m": None if w.m is None else float(w.m[i]),
            "x": float(sol.decision[i]),
            "v_terminal": float(sol.terminal_values[i]),
            "success": bool(success[i]),
            "shortfall": float(measures.p[i] * max(h[i] - sol.terminal_values[i], 0.0)),
        })
    return rows


def run(cfg: RunConfig) -> Report:
    """Solve the configured problem and assemble a report."""
    started = time.perf_counter()
    tree, measures, terminal, disc = build_model(cfg)
    claim = build_claim(cfg, terminal, disc, measures.n)
    if "v" in cfg.budget:
        budget = HedgeBudget.for_claim(claim, measures, v=float(cfg.budget["v"]))
    else:
        budget = HedgeBudget.for_claim(claim, measures, alpha=float(cfg.budget["alpha"]))
    notes: list[str] = []
    if tree is None:
        notes.append("explicit table model: strategy reconstruction unavailable")
    sol, objective, name, extra = _solve(cfg, tree, measures, claim, budget, notes)
    bounds = {k: float(v) for k, v in sol.bounds.items()}
    return Report(
        problem=sol.problem.value,
        mode=cfg.mode if cfg.problem == "a" else None,
        price=budget.price,
        budget=budget.v,
        alpha=budget.alpha,
        objective=float(objective),
        objective_name=name,
        bounds=bounds,
        initial_cost=float(sol.initial_cost),
        success_probability=float(sol.success_probability),
        expected_shortfall=float(sol.expected_shortfall),
        critical_state=_index(sol.critical_state),
        sacrificed_state=_index(sol.sacrificed_state),
        optimal=sol.optimal,
        strategy_available=sol.strategy is not None,
        states=_state_rows(sol, measures, claim),
        notes=notes,
        runtime_seconds=time.perf_counter() - started,
        **extra,
    )


def render(report: Report, fmt: str = "json") -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, allow_nan=False) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(STATE_COLUMNS)
        for row in report.states:
            out = []
            for col in STATE_COLUMNS:
                v = row[col]
                if v is None:
                    out.append("")
                elif isinstance(v, bool):
                    out.append(int(v))
                elif isinstance(v, float):
                    out.append(repr(v))
                else:
                    out.append(v)
            writer.writerow(out)
        return buf.getvalue()
    raise ValueError(f"unknown format {fmt!r}")


def emit(report: Report, fmt: str = "json", out: Optional[Path] = None) -> None:
    text = render(report, fmt)
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hedge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    solve = sub.add_parser("solve", help="solve one partial-hedging problem")
    solve.add_argument("--problem", choices=PROBLEMS)
    solve.add_argument("--config", required=True, type=Path)
    solve.add_argument("--mode", choices=MODES)
    solve.add_argument("--oracle", action="store_true", default=None)
    solve.add_argument("--levels", action="store_true", default=None)
    solve.add_argument("--out", type=Path)
    solve.add_argument("--format", choices=("json", "csv"), default="json")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        try:
            doc = json.loads(args.config.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        overrides = dict(problem=args.problem, mode=args.mode, oracle=args.oracle, levels=args.levels)
        env_budget = os.environ.get("HEDGE_NODE_BUDGET")
        if env_budget is not None:
            try:
                overrides["node_budget"] = int(env_budget)
            except ValueError:
                raise ConfigError("HEDGE_NODE_BUDGET must be an integer") from None
        cfg = RunConfig.from_dict(doc, **overrides)
        report = run(cfg)
        emit(report, args.format, args.out)
    except (ConfigError, BudgetError, ks.KnapsackError) as exc:
        print(f"hedge: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelError as exc:
        print(f"hedge: model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except DegenerateClaimError as exc:
        print(f"hedge: degenerate claim: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except OSError as exc:
        print(f"hedge: cannot write report: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HedgeError as exc:
        print(f"hedge: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not report.optimal:
        print(
            "hedge: node budget exhausted before optimality was proven; "
            "best solution found was emitted",
            file=sys.stderr,
        )
        return EXIT_NOT_PROVEN
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
