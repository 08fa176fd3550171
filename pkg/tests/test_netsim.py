import numpy as np
import pytest

from instances import homogeneous_traces
from parablock.engine import FedConfig, fedbcd_run, fedcybgd_run, parablock_run
from parablock.errors import CohortError, ConfigError
from parablock.local_opt import SgdConfig
from parablock.netsim import (
    ComputeSpec, LinkSpec, attach_timing, homogeneous_totals, round_time_parallel,
    round_time_singlethread, simulate_timeline,
)
from parablock.objectives import quadratic_suite
from parablock.params import make_partition


def test_singlethread_examples():
    assert round_time_singlethread([10], [3], [3]) == 16
    assert round_time_singlethread([10, 10], [0, 0], [0, 0]) == 10
    assert round_time_singlethread([10, 12], [3, 1], [2, 2]) == 15
    assert round_time_singlethread([1], [1], [1], latency=0.5) == 4


def test_parallel_examples():
    assert round_time_parallel([10], [3], [3]) == 10
    assert round_time_parallel([4], [3], [3]) == 6
    assert round_time_parallel([4, 4]) == 4
    # the slowest upload gates every client's download
    assert round_time_parallel([1, 1], [5, 1], [1, 2], latency=1) == 5 + 1 + 2 + 1


def test_cohort_errors():
    with pytest.raises(CohortError):
        round_time_singlethread([], [], [])
    with pytest.raises(CohortError):
        round_time_parallel([1, 2], [1], [1])


def _totals(p, c, T, N=2, latency=0.0):
    traces = homogeneous_traces(T, N, 10, 10)
    link = LinkSpec(20.0 / c, 20.0 / c, latency)
    comp = ComputeSpec(p)
    return (simulate_timeline("parablock", traces, link, comp, n_clients=N, local_steps=1),
            simulate_timeline("fedbcd", traces, link, comp, n_clients=N, local_steps=1))


def test_closed_form_example():
    pb, fb = _totals(10, 6, 4)
    assert (pb.total, fb.total) == pytest.approx((46, 64), abs=1e-12)
    assert homogeneous_totals(10, 6, 4) == (46, 64)


@pytest.mark.parametrize("p", [0.5, 2.0, 7.0])
@pytest.mark.parametrize("c", [0.25, 2.0, 9.0])
@pytest.mark.parametrize("T", [1, 2, 9])
def test_gap_is_min_times_rounds_minus_one(p, c, T):
    pb, fb = homogeneous_totals(p, c, T)
    assert fb - pb == pytest.approx((T - 1) * min(p, c), rel=1e-12, abs=1e-12)
    spb, sfb = _totals(p, c, T)
    assert spb.total <= sfb.total
    assert (spb.total, sfb.total) == pytest.approx((pb, fb), rel=1e-12)


def test_savings_law():
    # savings fraction is exactly (T-1)/T * min(p,c)/(p+c)
    for p, c, T in [(1, 2, 10), (3, 3, 30), (5, 1, 7)]:
        pb, fb = homogeneous_totals(p, c, T)
        assert 1 - pb / fb == pytest.approx((T - 1) / T * min(p, c) / (p + c), rel=1e-12)


def test_no_communication_limit():
    pb, fb = _totals(3.0, 1e-9, 5)
    assert pb.total == pytest.approx(15.0, rel=1e-8) and pb.total / fb.total == pytest.approx(1, rel=1e-8)


def test_latency_adds_to_both_threads():
    pb, fb = _totals(1.0, 1.0, 3, latency=0.25)
    # single thread pays 2 latencies per round; overlapped rounds: max(1, 1 + 0.5)
    assert fb.total == pytest.approx(3 * (1 + 1 + 0.5))
    assert pb.total == pytest.approx(1 + 2 * 1.5 + 1.5)


def test_compute_scales_with_batch():
    assert ComputeSpec(0.1, batch_size=8, reference_batch=4).step_seconds(2).tolist() == [0.2, 0.2]


def _run_all(N=4, T=8, K=3):
    objs = quadratic_suite(N, 8, seed=0)
    cfg = FedConfig(n_clients=N, rounds=T, local_steps=K, eta=1.0, optimizer=SgdConfig(0.05),
                    partition=make_partition(8, equal=2), seed=0)
    return cfg, objs


def test_engine_traces_feed_the_simulator():
    cfg, objs = _run_all()
    link, comp = LinkSpec(8.0, 8.0), ComputeSpec(0.5)
    res = parablock_run(cfg, objs)
    tm = simulate_timeline("parablock", res.traces, link, comp, n_clients=4, local_steps=3)
    p, c = 3 * 0.5, 2 * 16 / 8.0
    assert tm.total == pytest.approx(homogeneous_totals(p, c, 8)[0])
    attach_timing(res.traces, tm)
    assert np.all(np.diff([tr.cum_wall for tr in res.traces]) >= 0)
    assert res.traces[-1].cum_wall + tm.flush_time == pytest.approx(tm.total)


def test_fedcybgd_slower_than_fedbcd_at_matched_work():
    """FedCyBGD needs N rounds to do the client work FedBCD does in one."""
    link, comp = LinkSpec(100.0, 100.0), ComputeSpec(1.0)
    for N in (2, 3, 5):
        cfg, objs = _run_all(N=N, T=2 * N)
        fb = simulate_timeline("fedbcd", fedbcd_run(cfg, objs).traces, link, comp,
                               n_clients=N, local_steps=3)
        cy_cfg = FedConfig(**{**cfg.__dict__, "rounds": N * cfg.rounds})
        cy = simulate_timeline("fedcybgd", fedcybgd_run(cy_cfg, objs).traces, link, comp,
                               n_clients=N, local_steps=3)
        assert cy.total > fb.total


def test_equal_round_compute_ties():
    cfg, objs = _run_all()
    link, comp = LinkSpec(100.0, 100.0), ComputeSpec(1.0)
    fb = simulate_timeline("fedbcd", fedbcd_run(cfg, objs).traces, link, comp, n_clients=4, local_steps=3)
    cy = simulate_timeline("fedcybgd", fedcybgd_run(cfg, objs).traces, link, comp, n_clients=4, local_steps=3)
    assert cy.total == pytest.approx(fb.total)


def test_staleness_pays_more_flush():
    traces = homogeneous_traces(6, 2, 10, 10)
    link, comp = LinkSpec(10.0, 10.0), ComputeSpec(1.0)
    one = simulate_timeline("parablock", traces, link, comp, n_clients=2, local_steps=1, staleness=1)
    two = simulate_timeline("parablock", traces, link, comp, n_clients=2, local_steps=1, staleness=2)
    assert two.flush_time == 2 * one.flush_time


def test_spec_validation():
    with pytest.raises(ConfigError):
        LinkSpec(0.0, 1.0)
    with pytest.raises(ConfigError):
        LinkSpec(1.0, 1.0, latency=-1)
    with pytest.raises(ConfigError):
        ComputeSpec(0.0)
    with pytest.raises(ConfigError):
        simulate_timeline("fedavg", homogeneous_traces(1, 1, 1, 1), LinkSpec(), ComputeSpec(),
                          n_clients=1, local_steps=1)
    with pytest.raises(ConfigError):
        simulate_timeline("fedbcd", homogeneous_traces(1, 2, 1, 1), LinkSpec(), ComputeSpec(),
                          n_clients=3, local_steps=1)
