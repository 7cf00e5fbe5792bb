from fractions import Fraction
import math

import numpy as np
import pytest

import powerdist.example_data.graphs
import powerdist.example_data.power_tables
from powerdist.ilp import solve
from powerdist.mode import BudgetMode, SimMode
from powerdist.model import DependencyGraph, JobId, random_graph
from powerdist.power import PowerBoundError
from powerdist.simkernel import (
    SimConfig,
    StddevRow,
    compare_modes,
    draw_work,
    rows_csv,
    run,
    run_equal_share,
    run_heuristic,
    run_with_assignment,
    speedup_trend,
    sweep_power_bound,
    sweep_stddev,
)


@pytest.fixture
def ring3():
    return powerdist.example_data.graphs.ring3()


@pytest.fixture
def power_table():
    return powerdist.example_data.power_tables.example_power_table()


@pytest.fixture
def two_nodes():
    return DependencyGraph.parse(
        'nodes 2\n'
        'job 1 1 500\n'
        'job 2 1 10000\n'
        'dep 1 1 <- 2 1\n'
    )


def test_equal_share_ring3(ring3, power_table):
    result = run_equal_share(ring3, power_table, 6000)
    assert result.mode == SimMode.equal_share
    assert result.makespan == 19
    assert result.jobs[JobId(1, 2)].finish == 7
    assert result.jobs[JobId(2, 3)].start == 7
    assert result.jobs[JobId(2, 5)].finish == 19
    assert result.violations == []
    assert result.peak_power <= 6000
    assert 0 < result.average_power <= result.peak_power


def test_equal_share_below_minimum(ring3, power_table):
    with pytest.raises(PowerBoundError):
        run_equal_share(ring3, power_table, 5999)


def test_ilp_assignment_ring3(ring3, power_table):
    assignment = solve(ring3, power_table, 6000)
    result = run_with_assignment(ring3, power_table, assignment, 6000)
    assert result.mode == SimMode.ilp
    assert result.makespan == 17
    record = result.jobs[JobId(2, 3)]
    assert record.freq == 1000
    assert record.finish - record.start == 1
    assert result.violations == []

    via_config = run(ring3, power_table, SimConfig(6000, SimMode.ilp))
    assert via_config.makespan == 17


def test_unassigned_job(ring3, power_table):
    with pytest.raises(KeyError):
        run_with_assignment(ring3, power_table, {JobId(1, 1): 2000})


def test_heuristic_two_nodes(two_nodes, power_table):
    baseline = run_equal_share(two_nodes, power_table, 4000)
    assert baseline.makespan == 21

    result = run_heuristic(
        two_nodes,
        power_table,
        SimConfig(4000, SimMode.heuristic),
    )
    # node 1 blocks at once, so node 2 runs its job at 1000 MHz; when it
    # finishes node 2's freed power moves to node 1
    assert result.jobs[JobId(2, 1)].freq == 1000
    assert result.jobs[JobId(2, 1)].finish == 10
    assert result.jobs[JobId(1, 1)].freq == 1000
    assert result.makespan == Fraction(21, 2)
    assert result.speedup(baseline) == 2
    assert result.peak_power == 4000
    assert result.violations == []

    kinds = [(e.node, e.event) for e in result.events]
    assert (1, 'block') in kinds
    assert (1, 'unblock') in kinds
    assert (2, 'done') in kinds


def test_heuristic_latency_delays_the_boost(two_nodes, power_table):
    config = SimConfig(4000, SimMode.heuristic, latency=2)
    result = run_heuristic(two_nodes, power_table, config)
    # 2 time units at 500 MHz, then the rest at 1000 MHz
    assert result.jobs[JobId(2, 1)].finish == 11
    bound_changes = [e for e in result.events if e.event == 'bound']
    assert bound_changes[0].time == 2
    assert bound_changes[0].freq == 1000

    slower = run_heuristic(
        two_nodes,
        power_table,
        config.replace(transition_delay=1),
    )
    assert slower.makespan > result.makespan


def test_heuristic_uniform_ring3(power_table):
    graph = powerdist.example_data.graphs.example_graph('ring3_uniform')
    baseline = run_equal_share(graph, power_table, 6000)
    assert baseline.makespan == 70

    result = run_heuristic(
        graph,
        power_table,
        SimConfig(6000, SimMode.heuristic),
    )
    assert result.makespan < baseline.makespan
    assert result.speedup(baseline) > 1
    assert result.violations == []


def test_compare_modes(ring3, power_table):
    results = compare_modes(ring3, power_table, SimConfig(6000))
    assert list(results) == list(SimMode)
    assert results[SimMode.equal_share].makespan == 19
    assert results[SimMode.ilp].makespan == 17
    assert results[SimMode.heuristic].makespan <= 19

    summary = results[SimMode.ilp].summary(results[SimMode.equal_share])
    assert summary.startswith('mode=ilp makespan=17 ')
    assert 'speedup=1.1176' in summary


def _random_instances(count, seed):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        nodes = int(rng.integers(2, 4))
        jobs = [int(rng.integers(2, 5)) for _ in range(nodes)]
        yield random_graph(nodes, jobs, 0.5, rng)


def test_ordering_on_random_instances(power_table):
    for graph in _random_instances(100, 11):
        bound = 2000 * graph.node_count
        results = compare_modes(graph, power_table, SimConfig(bound))
        baseline = results[SimMode.equal_share].makespan
        assert results[SimMode.ilp].makespan <= baseline
        assert results[SimMode.heuristic].makespan <= baseline


def test_ordering_with_three_frequencies_above_the_minimum():
    three_step = powerdist.example_data.power_tables.example_power_table(
        'three_step',
    )
    rng = np.random.default_rng(13)
    for graph in _random_instances(100, 14):
        nodes = graph.node_count
        bound = int(rng.integers(2000 * nodes, 3500 * nodes + 1))
        results = compare_modes(graph, three_step, SimConfig(bound))
        baseline = results[SimMode.equal_share].makespan
        assert results[SimMode.ilp].makespan <= baseline
        assert results[SimMode.heuristic].makespan <= baseline


def test_safe_mode_never_exceeds_the_bound(power_table):
    for graph in _random_instances(100, 12):
        bound = 2000 * graph.node_count
        result = run_heuristic(
            graph,
            power_table,
            SimConfig(bound, SimMode.heuristic),
        )
        assert result.violations == []
        assert max(power for _, power in result.power_trace) <= bound


def test_reported_mode_runs(ring3, power_table):
    config = SimConfig(
        6000,
        SimMode.heuristic,
        budget_mode=BudgetMode.reported,
    )
    result = run(ring3, power_table, config)
    assert result.makespan <= 19


def test_events_csv(two_nodes, power_table):
    result = run_equal_share(two_nodes, power_table, 4000)
    lines = result.events_csv().splitlines()
    assert lines[0] == 'time,node,job,event,bound_mw,freq_mhz'
    assert '0,2,1,start,2000,500' in lines
    assert '20,2,1,finish,2000,500' in lines
    assert '21,1,1,finish,2000,500' in lines


def test_sim_config():
    config = SimConfig(6000, latency='0.5')
    assert config.latency == Fraction(1, 2)
    assert config.mode == SimMode.equal_share
    assert config.replace(cluster_bound=9000).cluster_bound == 9000
    assert config.replace(mode=SimMode.ilp).latency == Fraction(1, 2)

    with pytest.raises(ValueError, match='cluster bound'):
        SimConfig(0)
    with pytest.raises(ValueError, match='latency'):
        SimConfig(6000, latency=-1)
    with pytest.raises(ValueError, match='transition delay'):
        SimConfig(6000, transition_delay=-1)


def test_draw_work(ring3, power_table):
    rng = np.random.default_rng(0)
    work = draw_work(ring3, power_table, 6000, 10, 0, rng)
    assert set(work.values()) == {5000}

    work = draw_work(ring3, power_table, 6000, 10, 3, rng)
    assert len(work) == 15
    # clamped at a tenth of the mean time, at 500 MHz
    assert min(work.values()) >= 500


def test_sweep_stddev(ring3, power_table):
    rows = sweep_stddev(
        ring3,
        power_table,
        SimConfig(6000, seed=5),
        10,
        [0, 2],
        trials=3,
    )
    assert len(rows) == 6
    assert [row.mode for row in rows[:3]] == list(SimMode)
    for row in rows:
        if row.mode == SimMode.equal_share:
            assert row.median_speedup == 1.0
        else:
            assert row.median_speedup >= 1.0

    again = sweep_stddev(
        ring3,
        power_table,
        SimConfig(6000, seed=5),
        10,
        [0, 2],
        trials=3,
    )
    assert again == rows

    lines = rows_csv(rows).splitlines()
    assert lines[0] == 'stddev,mode,median_speedup'
    assert lines[1] == '0,equal,1'


def test_sweep_power_bound(ring3, power_table):
    rows = sweep_power_bound(
        ring3,
        power_table,
        SimConfig(6000),
        [6000, 10500],
    )
    assert len(rows) == 6
    by_key = {(row.power_mw, row.mode): row.speedup for row in rows}
    assert by_key[6000, SimMode.equal_share] == 1.0
    assert by_key[6000, SimMode.ilp] == pytest.approx(19 / 17)
    # with room for every node at the top frequency nothing is left to gain
    assert by_key[10500, SimMode.ilp] == 1.0


def test_speedup_trend():
    rows = [
        StddevRow(0, SimMode.ilp, 1.0),
        StddevRow(1, SimMode.ilp, 1.1),
        StddevRow(2, SimMode.ilp, 1.3),
        StddevRow(0, SimMode.heuristic, 1.2),
        StddevRow(1, SimMode.heuristic, 1.2),
        StddevRow(2, SimMode.heuristic, 1.2),
    ]
    assert speedup_trend(rows) == pytest.approx(1.0)
    assert math.isnan(speedup_trend(rows, SimMode.heuristic))


def test_ilp_speedup_grows_with_variation(power_table):
    gather3 = powerdist.example_data.graphs.example_graph('gather3')
    stddevs = [0, 1, 2, 3, 4, 5, 6]
    rows = sweep_stddev(
        gather3,
        power_table,
        SimConfig(6000, seed=3),
        10,
        stddevs,
        trials=20,
    )
    by_key = {(row.stddev, row.mode): row.median_speedup for row in rows}
    # the coordinator always runs fast; one worker of each pair can
    assert by_key[0, SimMode.ilp] == pytest.approx(70 / 50)
    assert speedup_trend(rows) > 0
    assert by_key[6, SimMode.ilp] > by_key[0, SimMode.ilp]


def test_heuristic_gains_without_variation(ring3, power_table):
    rows = sweep_stddev(
        ring3,
        power_table,
        SimConfig(6000),
        10,
        [0],
        trials=2,
    )
    by_mode = {row.mode: row.median_speedup for row in rows}
    assert by_mode[SimMode.equal_share] == 1.0
    assert by_mode[SimMode.heuristic] > 1
    assert by_mode[SimMode.ilp] >= 1


def test_jobs_start_after_their_dependencies(power_table):
    for graph in _random_instances(50, 21):
        results = compare_modes(
            graph,
            power_table,
            SimConfig(2000 * graph.node_count + 700),
        )
        for result in results.values():
            for source, target in graph.edges:
                assert (
                    result.jobs[target].start >= result.jobs[source].finish
                )


def test_runs_are_reproducible(ring3, power_table):
    config = SimConfig(6000, latency=Fraction(1, 10))
    first = compare_modes(ring3, power_table, config)
    second = compare_modes(ring3, power_table, config)
    for mode in SimMode:
        assert first[mode].events_csv() == second[mode].events_csv()


def test_modes_agree_with_room_for_everything(power_table):
    for graph in _random_instances(30, 22):
        bound = 3500 * graph.node_count
        results = compare_modes(graph, power_table, SimConfig(bound))
        makespans = {result.makespan for result in results.values()}
        assert len(makespans) == 1
