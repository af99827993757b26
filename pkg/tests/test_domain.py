import numpy as np
import pytest

from elastic_alloc.domain import (
    REMAINING_EPS,
    ClusterConfig,
    ClusterSnapshot,
    Failure,
    JobRuntimeState,
    JobSpec,
    Phase,
    SnapshotJob,
    fifo_key,
    legal_set_for,
    make_snapshot,
    sample_observed_demand,
)
from elastic_alloc.errors import ConfigurationError


def test_jobspec_invariants():
    JobSpec("a", 0.0, 1.0)
    with pytest.raises(ConfigurationError):
        JobSpec("a", 0.0, 0.0)
    with pytest.raises(ConfigurationError):
        JobSpec("a", -1.0, 1.0)
    with pytest.raises(ConfigurationError):
        JobSpec("a", 0.0, 1.0, n_min=3)
    with pytest.raises(ConfigurationError):
        JobSpec("a", 0.0, 1.0, n_min=4, n_max=2)


def test_failure_ranges_and_encoding():
    assert Failure.decode("none").kind == "none"
    assert Failure.decode("bug:12.5") == Failure("bug", 12.5)
    assert Failure("kill", 1800.0).encode() == "kill:1800"
    with pytest.raises(ConfigurationError):
        Failure("bug", 301.0)
    with pytest.raises(ConfigurationError):
        Failure("bug", 0.0)
    with pytest.raises(ConfigurationError):
        Failure("kill", 0.0)
    with pytest.raises(ConfigurationError):
        Failure("crash", 1.0)


def test_cluster_config_checks():
    cfg = ClusterConfig(70)
    assert cfg.step_hours == 300 / 3600
    assert cfg.legal_set == (1, 2, 4, 8, 16)
    for bad in ((2, 4), (1, 4, 2), (1, 3), ()):
        with pytest.raises(ConfigurationError):
            ClusterConfig(8, legal_set=bad)
    with pytest.raises(ConfigurationError):
        ClusterConfig(0)
    with pytest.raises(ConfigurationError):
        ClusterConfig(8, eta_disturbance=1.0)


def test_legal_set_for_examples():
    cfg = ClusterConfig(70)
    assert legal_set_for(JobSpec("a", 0, 1, 1, 16), cfg) == (1, 2, 4, 8, 16)
    assert legal_set_for(JobSpec("a", 0, 1, 2, 8), cfg) == (2, 4, 8)
    assert legal_set_for(JobSpec("a", 0, 1, 1, 16), ClusterConfig(3)) == (1, 2)
    with pytest.raises(ConfigurationError):
        legal_set_for(JobSpec("a", 0, 1, 4, 16), ClusterConfig(3))


def test_legal_set_matches_brute_force():
    # every count in K_i can actually be run alone on the pool, nothing else can
    for N in range(1, 20):
        cfg = ClusterConfig(N)
        for lo in (1, 2, 4):
            for hi in (lo, 8, 16):
                if lo > N or hi < lo:
                    continue
                ks = legal_set_for(JobSpec("a", 0, 1, lo, hi), cfg)
                assert ks == tuple(k for k in range(1, N + 1) if k in (1, 2, 4, 8, 16) and lo <= k <= hi)


def test_snapshot_remaining_and_order():
    states = [
        JobRuntimeState(JobSpec("b", 5.0, 10.0), phase=Phase.TRAINING, nodes_assigned=2,
                        nodes_reserved=2, served=4.0),
        JobRuntimeState(JobSpec("a", 5.0, 3.0)),
        JobRuntimeState(JobSpec("c", 1.0, 1.0), phase=Phase.DONE),
    ]
    snap = make_snapshot(states, ClusterConfig(8))
    assert [j.job_id for j in snap.jobs] == ["a", "b"]
    assert snap.jobs[1].remaining == pytest.approx(6.0)
    assert snap.jobs[1].training and snap.jobs[1].current_nodes == 2
    assert snap.idle_nodes == 6


def test_snapshot_clamps_overserved_job():
    st = JobRuntimeState(JobSpec("a", 0.0, 1.0), phase=Phase.TRAINING, nodes_assigned=1,
                         nodes_reserved=1, served=1.2)
    snap = make_snapshot([st], ClusterConfig(4))
    assert snap.jobs[0].remaining == REMAINING_EPS


def test_disturbance_sampled_once_within_band():
    rng = np.random.default_rng(0)
    cfg = ClusterConfig(8, eta_disturbance=0.1)
    st = JobRuntimeState(JobSpec("a", 0.0, 10.0))
    first = make_snapshot([st], cfg, noise=rng).jobs[0].remaining
    again = make_snapshot([st], cfg, noise=rng).jobs[0].remaining
    assert 9.0 <= first <= 11.0
    assert first == again
    draws = [sample_observed_demand(10.0, 0.1, rng) for _ in range(1000)]
    assert 9.0 <= min(draws) and max(draws) <= 11.0


def test_snapshot_capacity_checked():
    with pytest.raises(ConfigurationError):
        ClusterSnapshot(0.0, (SnapshotJob("a", 1.0, 1, 16, True, 16),), 8)
    with pytest.raises(ConfigurationError):
        ClusterSnapshot(0.0, (SnapshotJob("a", 0.0, 1, 16, False, 0),), 8)


def test_fifo_key_ties_by_id():
    a, b = JobSpec("b", 1.0, 1.0), JobSpec("a", 1.0, 1.0)
    assert sorted([a, b], key=fifo_key) == [b, a]
