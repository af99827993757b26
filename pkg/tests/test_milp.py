from fractions import Fraction
from itertools import product

import numpy as np
import pytest

from elastic_alloc.domain import ClusterConfig, ClusterSnapshot, EpochPlan, SnapshotJob
from elastic_alloc.errors import BuildError, DecodeError, InvariantViolation
from elastic_alloc.milp import (
    ASSIGNMENT,
    DELTA,
    admit,
    build,
    decode,
    raw_from_assignment,
    selected_count,
    speed_coefficient,
    validate_plan,
)
from elastic_alloc.speed import SpeedCurve

from _instances import small_instance, small_program

K5 = (1, 2, 4, 8, 16)


def _one_job(encoding, N=16, T=5, demand=3.0):
    snap = ClusterSnapshot(0.0, (SnapshotJob("a", demand, 1, 16, False, 0),), N)
    cfg = ClusterConfig(N, horizon_steps=T)
    return build(snap, cfg, encoding)


def test_variable_counts_delta():
    c = _one_job(DELTA).count()
    assert (c["int"], c["cont"], c["bin"]) == (5, 5, 50)
    # per step: demand, max, min, 4 rows per level, cardinality, progress; plus capacity
    assert c["rows"] == 5 * (3 + 4 * 5 + 2) + 5


def test_variable_counts_assignment():
    c = _one_job(ASSIGNMENT).count()
    assert (c["int"], c["cont"], c["bin"]) == (5, 5, 25)
    assert c["rows"] == 5 * 6 + 5


def test_admission_skips_jobs_that_do_not_fit():
    jobs = (
        SnapshotJob("t1", 1.0, 2, 16, True, 2),
        SnapshotJob("t2", 1.0, 4, 16, True, 4),
        SnapshotJob("q1", 1.0, 1, 16, False, 0),
        SnapshotJob("q2", 1.0, 2, 16, False, 0),
        SnapshotJob("q3", 1.0, 1, 16, False, 0),
    )
    res = admit(ClusterSnapshot(0.0, jobs, 8))
    assert [j.job_id for j in res.admitted] == ["t1", "t2", "q1", "q3"]
    assert [j.job_id for j in res.deferred] == ["q2"]


def test_admission_rejects_overfull_training_set():
    jobs = (SnapshotJob("t1", 1.0, 8, 16, True, 8), SnapshotJob("t2", 1.0, 8, 16, True, 8))
    # the snapshot itself refuses more held nodes than the pool
    with pytest.raises(Exception):
        admit(ClusterSnapshot(0.0, jobs, 8))
    jobs = (SnapshotJob("t1", 1.0, 8, 16, True, 4),)
    with pytest.raises(InvariantViolation):
        admit(ClusterSnapshot(0.0, jobs, 4))


def test_build_errors():
    snap = ClusterSnapshot(0.0, (SnapshotJob("a", 1.0, 8, 16, False, 0),) * 1, 8)
    with pytest.raises(BuildError):
        build(snap, ClusterConfig(8), "bogus")
    two = ClusterSnapshot(0.0, (SnapshotJob("a", 1.0, 8, 16, False, 0),
                                SnapshotJob("b", 1.0, 8, 16, False, 0)), 8)
    with pytest.raises(BuildError):
        build(two, ClusterConfig(8))


def test_delta_pattern_for_four_nodes():
    prog = _one_job(DELTA)
    raw = raw_from_assignment(prog, [[4, 4, 4, 4, 4]])
    dms, dps = prog.bin_cols(0, 0)
    dm = [int(raw[c]) for c in dms]
    dp = [int(raw[c]) for c in dps]
    assert dp == [1, 1, 1, 0, 0]  # n >= 1, 2, 4
    assert dm == [0, 0, 1, 1, 1]  # n <= 4, 8, 16
    assert sum(dm) + sum(dp) == 6
    assert selected_count(prog, raw, 0, 0) == 4
    assert speed_coefficient(prog, raw, 0, 0) == pytest.approx(2.56, abs=1e-12)
    assert prog.violations(raw) == []


def test_delta_pattern_for_one_node():
    prog = _one_job(DELTA)
    raw = raw_from_assignment(prog, [[1] * 5])
    dms, dps = prog.bin_cols(0, 0)
    assert [int(raw[c]) for c in dms] == [1] * 5
    assert [int(raw[c]) for c in dps] == [1, 0, 0, 0, 0]
    assert speed_coefficient(prog, raw, 0, 0) == 1.0


def test_expansion_reproduces_speed_exactly():
    # exact rational arithmetic, every chosen count, several legal sets
    for ks in (K5, (1, 2, 4, 8, 16, 32), (1,), (1, 4, 16)):
        curve = SpeedCurve(0.8, ks)
        for chosen in ks:
            total = sum(curve.exact(k) * ((chosen <= k) + (chosen >= k) - 1) for k in ks)
            assert total == curve.exact(chosen)
            assert isinstance(total, Fraction)


def test_only_legal_patterns_satisfy_delta_rows():
    # enumerate every binary pattern for one step and every integer n
    snap = ClusterSnapshot(0.0, (SnapshotJob("a", 50.0, 1, 4, False, 0),), 4)
    prog = build(snap, ClusterConfig(4, horizon_steps=1))
    prog = prog.with_encoding(DELTA)
    ks = prog.legal_sets[0]
    dms, dps = prog.bin_cols(0, 0)
    feasible = []
    for n in range(0, 6):
        for bits in product((0, 1), repeat=2 * len(ks)):
            raw = np.zeros(prog.num_columns)
            raw[prog.n_col(0, 0)] = n
            raw[list(dms + dps)] = bits
            bad = [k for k in prog.violations(raw) if k[0] not in ("progress",)]
            if not bad:
                feasible.append((n, bits))
    assert sorted(n for n, _ in feasible) == list(ks)
    for n, bits in feasible:
        dm, dp = bits[:len(ks)], bits[len(ks):]
        assert sum(bits) == len(ks) + 1
        assert dm == tuple(int(n <= k) for k in ks)
        assert dp == tuple(int(n >= k) for k in ks)


def test_decode_rejects_broken_patterns():
    prog = _one_job(DELTA)
    raw = raw_from_assignment(prog, [[4] * 5])
    bad = raw.copy()
    bad[prog.bin_cols(0, 0)[0][0]] = 1.0  # an extra indicator
    with pytest.raises(DecodeError):
        decode(prog, bad)
    bad = raw.copy()
    bad[prog.n_col(0, 0)] = 8.0
    with pytest.raises(DecodeError):
        decode(prog, bad)
    bad = raw.copy()
    bad[prog.n_col(0, 0)] = 4.5
    with pytest.raises(DecodeError):
        decode(prog, bad)
    with pytest.raises(DecodeError):
        decode(prog, raw[:-1])
    asg = _one_job(ASSIGNMENT)
    raw = raw_from_assignment(asg, [[2] * 5])
    raw[asg.bin_cols(0, 0)[3]] = 1.0
    with pytest.raises(DecodeError):
        decode(asg, raw)


@pytest.mark.parametrize("encoding", [ASSIGNMENT, DELTA])
def test_round_trip_on_random_assignments(encoding):
    rng = np.random.default_rng(5)
    for seed in range(60):
        prog = small_program(seed, encoding)
        nodes = [[int(rng.choice(ks)) for _ in range(prog.horizon)] for ks in prog.legal_sets]
        raw = raw_from_assignment(prog, nodes)
        over = any(sum(nodes[i][t] for i in range(prog.num_jobs)) > prog.capacity
                   for t in range(prog.horizon))
        bad = prog.violations(raw)
        assert bool(bad) == over
        if over:
            assert all(k[0] == "capacity" for k in bad)
            continue
        plan = decode(prog, raw)
        for i, jid in enumerate(prog.job_ids):
            assert plan.assignments[jid] == tuple(nodes[i])
        assert validate_plan(prog, plan) == []
        # objective equals the served fractions summed over steps
        expect = float(prog.objective_vector() @ raw)
        assert plan.objective == pytest.approx(expect, abs=1e-12)


def test_objective_is_bounded_by_jobs_times_steps():
    for seed in range(30):
        prog = small_program(seed)
        top = [[ks[-1]] * prog.horizon for ks in prog.legal_sets]
        plan = decode(prog, raw_from_assignment(prog, top))
        assert 0.0 <= plan.objective <= prog.num_jobs * prog.horizon + 1e-12


def test_deferred_jobs_decode_to_zero():
    jobs = (SnapshotJob("a", 1.0, 4, 8, False, 0), SnapshotJob("b", 1.0, 8, 8, False, 0))
    snap = ClusterSnapshot(0.0, jobs, 8)
    cfg = ClusterConfig(8, horizon_steps=2)
    prog = build(snap, cfg, ASSIGNMENT, admit(snap))
    assert prog.deferred == ("b",)
    plan = decode(prog, raw_from_assignment(prog, [[8, 8]]))
    assert plan.assignments["b"] == (0, 0)
    assert plan.implemented == {"a": 8, "b": 0}
    assert validate_plan(prog, plan) == []


def test_validate_plan_flags_problems():
    snap, cfg = small_instance(3)
    prog = build(snap, cfg)
    nodes = [[ks[0]] * prog.horizon for ks in prog.legal_sets]
    plan = decode(prog, raw_from_assignment(prog, nodes))
    jid = prog.job_ids[0]
    broken = EpochPlan(
        assignments={**plan.assignments, jid: (3,) * prog.horizon},
        served_profile=plan.served_profile,
    )
    assert any("not in" in p for p in validate_plan(prog, broken))
    fast = EpochPlan(
        assignments=plan.assignments,
        served_profile={**plan.served_profile, jid: (prog.demands[0] + 1.0,) * prog.horizon},
    )
    assert validate_plan(prog, fast)


def test_empty_snapshot_builds_empty_program():
    prog = build(ClusterSnapshot(0.0, (), 8), ClusterConfig(8))
    assert prog.num_columns == 0
    assert prog.rows == ()
    plan = decode(prog, np.zeros(0))
    assert plan.assignments == {} and plan.objective == 0.0
