import csv
import io
import json
import math
import subprocess
import sys

import pytest

from partial_hedge.cli import (
    EXIT_CONFIG,
    EXIT_DEGENERATE,
    EXIT_MODEL,
    EXIT_NOT_PROVEN,
    EXIT_OK,
    RunConfig,
    STATE_COLUMNS,
    main,
    render,
    run,
)
from partial_hedge.errors import ConfigError

ONE_PERIOD = {
    "model": {"binomial": {"s0": 100, "u": 1.2, "d": 0.8, "r": 0.0, "p": 0.6, "N": 1}},
    "claim": {"type": "call", "strike": 100},
    "budget": {"v": 5.0},
}


def write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def solve(tmp_path, doc, *flags, capsys):
    code = main(["solve", "--config", str(write(tmp_path, doc)), *flags])
    out = capsys.readouterr()
    return code, out.out, out.err


def with_(doc, **changes):
    new = json.loads(json.dumps(doc))
    for path, val in changes.items():
        *head, last = path.split("__")
        node = new
        for k in head:
            node = node[k]
        node[last] = val
    return new


# ---- worked example


def test_problem_a_greedy_report(tmp_path, capsys):
    code, out, _ = solve(tmp_path, ONE_PERIOD, "--problem", "a", capsys=capsys)
    assert code == EXIT_OK
    rep = json.loads(out)
    assert rep["problem"] == "a-greedy"
    assert rep["price"] == pytest.approx(10.0, abs=1e-12)
    assert rep["objective"] == pytest.approx(0.4, abs=1e-12)
    assert rep["bounds"]["error_bound"] == pytest.approx(0.6, abs=1e-12)
    assert rep["bounds"]["z_dantzig"] == pytest.approx(0.7, abs=1e-12)
    assert rep["critical_state"] == 1  # the up path
    assert {"problem", "price", "budget", "alpha", "objective", "bounds", "initial_cost", "states"} <= rep.keys()


def test_problem_d_report(tmp_path, capsys):
    code, out, _ = solve(tmp_path, ONE_PERIOD, "--problem", "d", capsys=capsys)
    assert code == EXIT_OK
    rep = json.loads(out)
    assert rep["objective"] == pytest.approx(4.0, abs=1e-9)
    assert rep["sacrificed_state"] == 2  # the down path
    assert rep["initial_cost"] == pytest.approx(5.0, abs=1e-9)


def test_budget_at_the_price_is_rejected(tmp_path, capsys):
    code, out, err = solve(tmp_path, with_(ONE_PERIOD, budget__v=10.0), capsys=capsys)
    assert code == EXIT_CONFIG
    assert out == ""
    assert "budget must be strictly below the perfect-hedge price" in err


def test_alpha_budget(tmp_path, capsys):
    doc = with_(ONE_PERIOD)
    doc["budget"] = {"alpha": 0.5}
    code, out, _ = solve(tmp_path, doc, "--problem", "c", capsys=capsys)
    assert code == EXIT_OK
    rep = json.loads(out)
    assert rep["budget"] == pytest.approx(5.0, abs=1e-12)
    assert rep["objective"] == pytest.approx(6.0, abs=1e-9)


@pytest.mark.parametrize("problem", ["a", "a-rand", "b", "c", "d"])
@pytest.mark.parametrize("mode", ["greedy", "exact"])
def test_state_table_reproduces_scalar_metrics(tmp_path, capsys, problem, mode):
    doc = {
        "model": {"binomial": {"s0": 100, "u": 1.1, "d": 0.9, "r": 0.01, "p": 0.55, "N": 4}},
        "claim": {"type": "put", "strike": 105},
        "budget": {"alpha": 0.35},
    }
    code, out, _ = solve(tmp_path, doc, "--problem", problem, "--mode", mode, capsys=capsys)
    assert code == EXIT_OK
    rep = json.loads(out)
    rows = rep["states"]
    assert len(rows) == 16
    assert math.fsum(r["p"] for r in rows) == pytest.approx(1.0, abs=1e-12)
    assert math.fsum(r["p_star"] * r["h"] for r in rows) == pytest.approx(rep["price"], rel=1e-12)
    assert math.fsum(r["p"] for r in rows if r["success"]) == pytest.approx(
        rep["success_probability"], abs=1e-12
    )
    assert math.fsum(r["shortfall"] for r in rows) == pytest.approx(
        rep["expected_shortfall"], rel=1e-9, abs=1e-12
    )
    assert math.fsum(r["p_star"] * r["v_terminal"] for r in rows) == pytest.approx(
        rep["initial_cost"], rel=1e-9, abs=1e-9
    )


# ---- oracle and levels


def test_oracle_matches_exact(tmp_path, capsys):
    doc = with_(ONE_PERIOD, model__binomial__N=4)
    doc["budget"] = {"alpha": 0.4}
    code, out, _ = solve(tmp_path, doc, "--problem", "a", "--mode", "exact", "--oracle", capsys=capsys)
    assert code == EXIT_OK
    rep = json.loads(out)
    assert rep["oracle_z"] == rep["objective"] == rep["bounds"]["z_exact"]


def test_oracle_skipped_for_large_trees(tmp_path, capsys):
    doc = with_(ONE_PERIOD, model__binomial__N=6)
    code, out, _ = solve(tmp_path, doc, "--problem", "a", "--oracle", capsys=capsys)
    rep = json.loads(out)
    assert code == EXIT_OK
    assert rep["oracle_z"] is None
    assert any("oracle skipped" in n for n in rep["notes"])


def test_levels_flag_keeps_the_greedy_answer(tmp_path, capsys):
    doc = with_(ONE_PERIOD, model__binomial__N=8, claim__strike=95)
    _, plain, _ = solve(tmp_path, doc, "--problem", "a", capsys=capsys)
    _, grouped, _ = solve(tmp_path, doc, "--problem", "a", "--levels", capsys=capsys)
    plain, grouped = json.loads(plain), json.loads(grouped)
    assert grouped["objective"] == plain["objective"]
    assert [r["x"] for r in grouped["states"]] == [r["x"] for r in plain["states"]]
    assert grouped["levels"] <= 9


def test_levels_in_exact_mode_is_noted(tmp_path, capsys):
    _, out, _ = solve(tmp_path, ONE_PERIOD, "--mode", "exact", "--levels", capsys=capsys)
    assert any("greedy mode only" in n for n in json.loads(out)["notes"])


# ---- table mode


def test_table_model_with_payoff(tmp_path, capsys):
    doc = {
        "model": {"table": {"p": [0.6, 0.4], "p_star": [0.5, 0.5]}},
        "claim": {"payoff": [20.0, 0.0]},
        "budget": {"v": 5.0},
        "problem": "b",
    }
    code, out, _ = solve(tmp_path, doc, capsys=capsys)
    assert code == EXIT_OK
    rep = json.loads(out)
    assert rep["objective"] == pytest.approx(0.6, abs=1e-12)
    assert rep["strategy_available"] is False
    assert rep["states"][1]["v_terminal"] == pytest.approx(-10.0, abs=1e-9)


def test_table_call_needs_prices(tmp_path, capsys):
    doc = {
        "model": {"table": {"p": [0.6, 0.4], "p_star": [0.5, 0.5]}},
        "claim": {"type": "call", "strike": 1.0},
        "budget": {"v": 0.1},
    }
    code, _, err = solve(tmp_path, doc, capsys=capsys)
    assert code == EXIT_CONFIG
    assert "prices" in err


# ---- exit codes


@pytest.mark.parametrize(
    "doc",
    [
        {"claim": ONE_PERIOD["claim"], "budget": ONE_PERIOD["budget"]},
        with_(ONE_PERIOD, budget__v=-1.0),
        {**ONE_PERIOD, "budget": {"alpha": 1.0}},
        {**ONE_PERIOD, "budget": {"v": 1.0, "alpha": 0.1}},
        {**ONE_PERIOD, "claim": {"type": "straddle", "strike": 1}},
        {**ONE_PERIOD, "model": {"binomial": {"s0": 100}}},
        {**ONE_PERIOD, "model": {"binomial": {}, "table": {}}},
        with_(ONE_PERIOD, model__binomial__N=1.5),
    ],
)
def test_config_errors_exit_2(tmp_path, capsys, doc):
    code, out, err = solve(tmp_path, doc, capsys=capsys)
    assert code == EXIT_CONFIG
    assert out == ""
    assert err.startswith("hedge:")


def test_unreadable_config_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["solve", "--config", str(path)]) == EXIT_CONFIG
    assert main(["solve", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG


def test_arbitrage_exits_3(tmp_path, capsys):
    doc = with_(ONE_PERIOD, model__binomial__r=0.25)
    code, _, err = solve(tmp_path, doc, capsys=capsys)
    assert code == EXIT_MODEL
    assert "model error" in err


def test_incomplete_table_exits_3(tmp_path, capsys):
    doc = {
        "model": {"table": {"p": [0.6, 0.4], "p_star": [0.0, 1.0]}},
        "claim": {"payoff": [1.0, 0.0]},
        "budget": {"v": 0.0},
    }
    code, _, _ = solve(tmp_path, doc, capsys=capsys)
    assert code == EXIT_MODEL


def test_zero_claim_exits_4(tmp_path, capsys):
    doc = with_(ONE_PERIOD, claim__strike=500)
    doc["budget"] = {"v": 0.0}
    code, _, err = solve(tmp_path, doc, capsys=capsys)
    assert code == EXIT_DEGENERATE
    assert "degenerate" in err


def test_exhausted_node_budget_exits_5_with_report(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("HEDGE_NODE_BUDGET", "1")
    doc = {
        "model": {"binomial": {"s0": 100, "u": 1.13, "d": 0.91, "r": 0.0, "p": 0.57, "N": 7}},
        "claim": {"payoff": [((i * 7919) % 613) / 17.0 for i in range(128)]},
        "budget": {"alpha": 0.37},
    }
    code, out, err = solve(tmp_path, doc, "--mode", "exact", capsys=capsys)
    assert code == EXIT_NOT_PROVEN
    assert json.loads(out)["optimal"] is False
    assert "node budget" in err


def test_bad_node_budget_env_exits_2(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("HEDGE_NODE_BUDGET", "many")
    code, _, _ = solve(tmp_path, ONE_PERIOD, capsys=capsys)
    assert code == EXIT_CONFIG


# ---- output formats


def test_csv_output_round_trips(tmp_path, capsys):
    doc = with_(ONE_PERIOD, model__binomial__N=3, model__binomial__r=0.03)
    out_path = tmp_path / "states.csv"
    code = main(["solve", "--config", str(write(tmp_path, doc)), "--problem", "c",
                 "--format", "csv", "--out", str(out_path)])
    assert code == EXIT_OK
    text = out_path.read_text()
    assert text.splitlines()[0] == "omega,p,p_star,h,q,m,x,v_terminal,success,shortfall"
    report = run(RunConfig.from_dict(doc, problem="c"))
    rows = list(csv.DictReader(io.StringIO(text)))
    for row, state in zip(rows, report.states):
        for col in STATE_COLUMNS:
            if col == "success":
                assert row[col] == str(int(state[col]))
            elif col == "omega":
                assert int(row[col]) == state[col]
            else:
                assert float(row[col]) == state[col]  # bit-exact round trip


def test_json_round_trips_at_full_precision():
    report = run(RunConfig.from_dict(with_(ONE_PERIOD, model__binomial__N=5, model__binomial__r=0.017)))
    back = json.loads(render(report, "json"))
    assert back["price"] == report.price
    assert [r["v_terminal"] for r in back["states"]] == [r["v_terminal"] for r in report.states]


def test_flags_override_config():
    cfg = RunConfig.from_dict({**ONE_PERIOD, "problem": "b", "mode": "exact"}, problem="c", mode=None)
    assert cfg.problem == "c"
    assert cfg.mode == "exact"
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**ONE_PERIOD, "problem": "z"})


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "partial_hedge", "solve", "--config", str(write(tmp_path, ONE_PERIOD)),
         "--problem", "a-rand"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == EXIT_OK
    assert json.loads(proc.stdout)["objective"] == pytest.approx(0.7, abs=1e-12)
