import math
from dataclasses import replace

import pytest

from elastic_alloc.domain import ClusterConfig, ClusterSnapshot, SnapshotJob
from elastic_alloc.errors import BuildError, ConfigurationError, InfeasibleError, SolverSizeError
from elastic_alloc.milp import ASSIGNMENT, DELTA, admit, build, validate_plan
from elastic_alloc.solver import (
    SolverBudget,
    plan_epoch,
    relative_gap,
    solve_bnb,
    solve_oracle,
)
from elastic_alloc.speed import speed

from _instances import epoch_snapshot, small_instance, small_program

UNLIMITED = SolverBudget(time_limit=math.inf)


def _single(demand, N, legal, T, period=300, n_min=1, n_max=16):
    snap = ClusterSnapshot(0.0, (SnapshotJob("a", demand, n_min, n_max, False, 0),), N)
    cfg = ClusterConfig(N, epoch_period=period, horizon_steps=T, legal_set=legal)
    return build(snap, cfg)


def test_oracle_job_that_finishes_in_first_step():
    res = solve_oracle(_single(0.05, 1, (1,), 5))
    assert res.objective == pytest.approx(5.0, abs=1e-12)
    assert res.plan.served_profile["a"] == (0.05,) * 5


def test_oracle_large_demand_runs_on_the_top_count():
    res = solve_oracle(_single(1000.0, 16, (1, 2, 4, 8, 16), 5))
    expect = sum(t * (1 / 12) * 6.5536 / 1000 for t in range(1, 6))
    assert res.objective == pytest.approx(expect, abs=1e-12)
    assert res.plan.assignments["a"] == (16,) * 5


def test_oracle_two_jobs_share_two_nodes():
    jobs = (SnapshotJob("a", 0.5, 1, 16, False, 0), SnapshotJob("b", 0.5, 1, 16, False, 0))
    prog = build(ClusterSnapshot(0.0, jobs, 2), ClusterConfig(2, horizon_steps=1))
    res = solve_oracle(prog)
    assert res.plan.assignments == {"a": (1,), "b": (1,)}
    assert res.objective == pytest.approx(2 * min(1.0, (1 / 12) / 0.5), abs=1e-12)


def test_oracle_size_limit():
    prog = _single(1.0, 16, (1, 2, 4, 8, 16), 5)
    with pytest.raises(SolverSizeError):
        solve_oracle(prog, limit=100)


def test_single_job_picks_top_or_smallest_completing_count():
    p = 300 / 3600
    legal = (1, 2, 4, 8, 16)
    for demand in (0.05, 0.1, 0.2, 0.3, 0.5, 0.9, 3.0):
        prog = _single(demand, 16, legal, 2)
        oracle = solve_oracle(prog)
        completing = [k for k in legal if p * speed(k) >= demand]
        want = completing[0] if completing else 16
        assert oracle.plan.assignments["a"][0] == want
        assert solve_bnb(prog, UNLIMITED).objective == pytest.approx(oracle.objective, abs=1e-9)


def test_half_hour_step_large_job_gets_full_width():
    plan = plan_epoch(
        ClusterSnapshot(0.0, (SnapshotJob("a", 3.0, 1, 16, False, 0),), 16),
        ClusterConfig(16, epoch_period=1800, horizon_steps=5),
    )
    assert plan.implemented == {"a": 16}


@pytest.mark.parametrize("seed", range(120))
def test_bnb_matches_oracle(seed):
    prog = small_program(seed, max_jobs=3, max_steps=2, max_nodes=8)
    oracle = solve_oracle(prog)
    res = solve_bnb(prog, UNLIMITED)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(oracle.objective, abs=1e-6)
    assert res.bound >= oracle.objective - 1e-9
    assert validate_plan(prog, res.plan) == []


@pytest.mark.parametrize("seed", range(40))
def test_envelope_bound_is_admissible_under_any_budget(seed):
    prog = small_program(1000 + seed, max_jobs=3, max_steps=3, max_nodes=8)
    oracle = solve_oracle(prog)
    for nodes in (0, 1, 5):
        res = solve_bnb(prog, SolverBudget(time_limit=math.inf, node_limit=nodes))
        assert res.bound >= oracle.objective - 1e-9
        assert res.objective <= oracle.objective + 1e-9
        assert res.gap == pytest.approx(relative_gap(res.bound, res.objective))


def test_delta_input_is_translated():
    prog = small_program(7, DELTA)
    assert solve_bnb(prog, UNLIMITED).objective == pytest.approx(
        solve_bnb(prog.with_encoding(ASSIGNMENT), UNLIMITED).objective, abs=1e-12)


def test_infeasible_minimums():
    jobs = (SnapshotJob("a", 1.0, 4, 4, False, 0), SnapshotJob("b", 1.0, 8, 8, False, 0))
    with pytest.raises(BuildError):
        build(ClusterSnapshot(0.0, jobs, 8), ClusterConfig(8), ASSIGNMENT)
    # a program assembled by hand skips that check; the solver repeats it
    prog = replace(build(ClusterSnapshot(0.0, jobs, 16), ClusterConfig(16)), capacity=8)
    with pytest.raises(InfeasibleError):
        solve_bnb(prog)


def test_deterministic_results():
    snap = epoch_snapshot(3, jobs=40, nodes=48)
    prog = build(snap, ClusterConfig(48), ASSIGNMENT, admit(snap))
    budget = SolverBudget(time_limit=math.inf, node_limit=3000)
    a, b = solve_bnb(prog, budget), solve_bnb(prog, budget)
    assert a.plan.assignments == b.plan.assignments
    assert a.objective == b.objective and a.bound == b.bound
    assert a.explored_nodes == b.explored_nodes


def test_anytime_history_is_monotone():
    snap = epoch_snapshot(1, jobs=30, nodes=40)
    prog = build(snap, ClusterConfig(40, horizon_steps=3), ASSIGNMENT, admit(snap))
    res = solve_bnb(prog, SolverBudget(time_limit=math.inf, node_limit=50000, chunk=200))
    hist = res.history
    assert hist
    incumbents = [h[1] for h in hist]
    gaps = [relative_gap(h[2], h[1]) for h in hist]
    assert incumbents == sorted(incumbents)
    assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))
    times = [h[0] for h in hist]
    assert times == sorted(times)


def test_gap_target_stops_early_and_reports_gap():
    snap = epoch_snapshot(2, jobs=60, nodes=70)
    prog = build(snap, ClusterConfig(70), ASSIGNMENT, admit(snap))
    res = solve_bnb(prog, SolverBudget(time_limit=math.inf, gap_target=0.05, node_limit=20000))
    assert res.gap <= 0.05
    assert res.bound >= res.objective


def test_budget_validation():
    with pytest.raises(ConfigurationError):
        SolverBudget(time_limit=0)
    with pytest.raises(ConfigurationError):
        SolverBudget(gap_target=1.0)
    with pytest.raises(ConfigurationError):
        SolverBudget(node_limit=-1)


def test_relative_gap_guard():
    assert relative_gap(0.0, 0.0) == 0.0
    assert relative_gap(1e-9, 0.0) == pytest.approx(1.0)
    assert relative_gap(1.0, 2.0) == 0.0


def test_plan_epoch_empty_snapshot():
    plan = plan_epoch(ClusterSnapshot(0.0, (), 8), ClusterConfig(8))
    assert plan.assignments == {}
    assert plan.solve_time >= 0.0


def test_plan_epoch_defers_jobs_that_do_not_fit():
    jobs = (SnapshotJob("t", 1.0, 4, 8, True, 4), SnapshotJob("q", 1.0, 8, 8, False, 0),
            SnapshotJob("r", 1.0, 2, 8, False, 0))
    plan = plan_epoch(ClusterSnapshot(0.0, jobs, 8), ClusterConfig(8))
    assert plan.assignments["q"] == (0,) * 5
    assert plan.implemented["t"] >= 4 and plan.implemented["r"] >= 2
    assert sum(plan.implemented.values()) <= 8


def test_plan_epoch_hundred_jobs():
    snap = epoch_snapshot(0, jobs=100, nodes=70)
    cfg = ClusterConfig(70)
    plan = plan_epoch(snap, cfg, SolverBudget(time_limit=2.0, gap_target=0.05))
    program = build(snap, cfg, ASSIGNMENT, admit(snap))
    assert validate_plan(program, plan) == []
    assert 0.0 <= plan.gap <= 0.05
    assert plan.bound >= plan.objective
    for t in range(cfg.horizon_steps):
        assert sum(ns[t] for ns in plan.assignments.values()) <= 70


def test_fill_never_lowers_objective():
    for seed in range(40):
        snap, cfg = small_instance(seed, max_jobs=3, max_steps=3, max_nodes=16, pool=(2, 4, 8, 16))
        prog = build(snap, cfg, ASSIGNMENT, admit(snap))
        plain = solve_bnb(prog, UNLIMITED)
        filled = solve_bnb(prog, UNLIMITED, fill=True)
        assert filled.objective >= plain.objective - 1e-12
        assert validate_plan(prog, filled.plan) == []
