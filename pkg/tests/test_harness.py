import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fedplt.core import Bernoulli, CostModel, RoundRecord, RunConfig, cost_per_round, fedavg_baseline, run
from fedplt.harness import (NOT_REACHED, RunSpec, SweepSpec, TableRow, asymptotic_error, emit_table, monte_carlo,
                            parse_table, rounds_to_threshold, sweep, time_to_threshold)
from fedplt.solvers import Exact


def fixture_records(metrics, per_round):
    return [RoundRecord(k, list(range(3)), np.zeros(1), m, k * per_round) for k, m in enumerate(metrics)]


# --- cost --------------------------------------------------------------------------------

def test_cost_examples():
    assert cost_per_round(5, 100, CostModel(1.0, 10.0)) == 1500
    assert cost_per_round(5, 100, CostModel(0.0, 0.0)) == 0
    assert cost_per_round(1, 10, CostModel(1.0, 0.1)) == pytest.approx(11)


@given(st.integers(1, 50), st.integers(0, 200), st.floats(0, 100), st.floats(0, 100))
def test_cost_formula(Ne, N, tG, tC):
    assert cost_per_round(Ne, N, CostModel(tG, tC)) == pytest.approx((Ne * tG + tC) * N)


def test_cost_model_rejects_negative():
    with pytest.raises(ValueError):
        CostModel(-1.0, 1.0)


def test_full_participation_run_cost(desk):
    res = run(desk, RunConfig(epochs=5, rounds=3))
    assert [r.elapsed_cost for r in res.records] == [0.0, 150.0, 300.0, 450.0]


# --- thresholds -------------------------------------------------------------------------------

def test_time_to_threshold_examples():
    assert time_to_threshold(fixture_records([1e-6, 1.0], 15), 1e-5) == 0
    assert time_to_threshold(fixture_records([1.0, 0.1, 1e-3, 1e-6, 1e-8], 15), 1e-5) == 45
    assert time_to_threshold(fixture_records([1.0, 0.5, 0.4], 15), 1e-5) == NOT_REACHED
    assert rounds_to_threshold(fixture_records([1.0, 0.1, 1e-3, 1e-6], 15), 1e-5) == 3


def test_asymptotic_error_tail():
    recs = fixture_records([9.0] + [5.0] * 18 + [1.0, 3.0], 1)
    assert asymptotic_error(recs) == pytest.approx(2.0)


# --- Monte Carlo ---------------------------------------------------------------------------------

def test_monte_carlo_deterministic_config_has_zero_spread(desk):
    row = monte_carlo(RunSpec(desk, RunConfig(rounds=60), "final_metric"), 4)
    assert row.min == row.max == row.mean


def test_monte_carlo_single_seed_is_identity(desk):
    spec = RunSpec(desk, RunConfig(rounds=40, participation=Bernoulli(0.5)), "final_metric")
    row = monte_carlo(spec, 1, master_seed=7)
    direct = run(desk, replace(spec.config, seed=7)).records[-1].metric
    assert row.mean == row.min == row.max == direct


def test_monte_carlo_envelope(desk):
    spec = RunSpec(desk, RunConfig(rounds=40, participation=Bernoulli(0.5)), "final_metric")
    row = monte_carlo(spec, 20)
    assert row.min <= row.mean <= row.max and row.max > row.min
    assert row.note  # partial-participation cost convention is recorded
    assert monte_carlo(spec, 20).values == row.values


def test_monte_carlo_parallel_matches_serial(desk):
    spec = RunSpec(desk, RunConfig(rounds=20, participation=Bernoulli(0.5)), "final_metric")
    assert monte_carlo(spec, 4, workers=2).values == monte_carlo(spec, 4, workers=1).values


def test_monte_carlo_rejects_zero_seeds(desk):
    with pytest.raises(ValueError):
        monte_carlo(RunSpec(desk, RunConfig(rounds=1)), 0)


# --- sweeps ------------------------------------------------------------------------------------------

def test_rho_sweep_row_count(desk):
    rows = sweep(SweepSpec("rho", [0.1, 1.0, 10.0], RunSpec(desk, RunConfig(rounds=30), "final_metric")), 1)
    assert [r.value for r in rows] == [0.1, 1.0, 10.0]
    assert all(r.axis == "rho" for r in rows)


def test_short_runs_give_sentinel(desk):
    rows = sweep(SweepSpec("ne", [1, 5], RunSpec(desk, RunConfig(rounds=1), "time", threshold=1e-12)), 2)
    assert all(r.mean == NOT_REACHED for r in rows)
    assert "not_reached" in emit_table(rows)


def test_sweep_rejects_unknown_axis(desk):
    with pytest.raises(ValueError):
        SweepSpec("gamma", [1.0], RunSpec(desk, RunConfig()))


# --- tables --------------------------------------------------------------------------------------------

def test_emit_empty_is_header_only():
    out = emit_table([], "csv")
    assert out == "axis,value,measure,mean,min,max,n_seeds,note\n"


def test_emit_one_row_two_lines():
    row = TableRow("rho", 1.0, "time", 1050.0, 1000.123456789, 1100.0, 20)
    lines = emit_table([row]).splitlines()
    assert len(lines) == 2 and "1000.12" in lines[1] and "1000.123" not in lines[1]


def test_json_round_trip():
    rows = [TableRow("tau", 0.01, "asymptotic_error", 0.121, 0.1, 0.14, 20),
            TableRow("participation", 0.4, "rounds", math.inf, 20.0, math.inf, 20, "partial")]
    back = parse_table(emit_table(rows, "json"), "json")
    assert back == [{c: getattr(r, c) for c in back[0]} for r in rows]
    back_csv = parse_table(emit_table(rows, "csv"), "csv")
    assert back_csv[1]["mean"] == NOT_REACHED and back_csv[0]["mean"] == 0.121


def test_emit_rejects_unknown_format():
    with pytest.raises(ValueError):
        emit_table([], "xml")


# --- client drift ------------------------------------------------------------------------------------------

def test_fedplt_beats_fedavg_on_heterogeneous_pair(hetero_pair):
    cfg = RunConfig(rho=1.0, epochs=20, rounds=200)
    fedavg = asymptotic_error(fedavg_baseline(hetero_pair, cfg).records)
    fedplt = asymptotic_error(run(hetero_pair, cfg).records)
    assert fedavg >= 10 * max(fedplt, 1e-300)
    assert asymptotic_error(run(hetero_pair, replace(cfg, solver=Exact())).records) <= 1e-20
