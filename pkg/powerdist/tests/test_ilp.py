import itertools
import logging
import sys

import numpy as np
import pytest

import powerdist.example_data.graphs
import powerdist.example_data.power_tables
from powerdist.depth import depth_ranges
from powerdist.ilp import (
    BranchAndBound,
    InfeasibleError,
    InstanceTooLarge,
    MakespanSearch,
    build_instance,
    equal_share_seed,
    exhaustive_oracle,
    solve,
    solve_branch_and_bound,
    solve_makespan,
)
from powerdist.model import (
    JobId,
    constant_assignment,
    random_graph,
    total_execution_time,
)
from powerdist.power import PowerBoundSet, PowerTable


@pytest.fixture
def ring3():
    return powerdist.example_data.graphs.ring3()


@pytest.fixture
def power_table():
    return powerdist.example_data.power_tables.example_power_table()


def _table(*freqs):
    rows = ['node,cores,freq_mhz,power_mw', '*,idle,,500']
    for ix, freq in enumerate(freqs):
        rows.append(f'*,1,{freq},{2000 + 750 * ix}')
    return PowerTable.parse('\n'.join(rows) + '\n')


def _instance(graph, power_table, cluster_bound):
    return build_instance(
        graph,
        depth_ranges(graph),
        PowerBoundSet.from_table(power_table, graph.nodes),
        cluster_bound,
        power_table,
    )


def test_ring3_instance_shape(ring3, power_table):
    instance = _instance(ring3, power_table, 6000)
    assert instance.assignment_variable_count == 30
    assert len(instance.variables) == 31
    assert instance.variables[-1] == 't'
    assert instance.constraint_count == 25
    assert len(instance.rows('assign')) == 15
    assert len(instance.rows('power')) == 7
    assert len(instance.rows('makespan')) == 3
    assert instance.time_scale == 2

    # variables are ordered by max-depth, then node, then job index
    assert instance.jobs[:4] == (
        JobId(1, 1),
        JobId(2, 1),
        JobId(3, 1),
        JobId(1, 2),
    )
    assert instance.jobs[-3:] == (JobId(1, 5), JobId(2, 5), JobId(3, 5))


def test_ten_jobs_five_bounds():
    power_table = _table(500, 600, 700, 800, 1000)
    graph = random_graph(2, 5, 0.5, np.random.default_rng(0))
    instance = _instance(graph, power_table, 2 * 5000)
    assert len(instance.jobs) == 10
    assert instance.assignment_variable_count == 50


def test_makespan_rows_include_t(ring3, power_table):
    instance = _instance(ring3, power_table, 6000)
    row = instance.rows('makespan')[0]
    assert row.name == 'makespan_1'
    assert row.terms[-1] == ('t', -1)
    assert row.sense == '<='
    assert row.rhs == 0


def test_to_lp(ring3, power_table):
    lp = _instance(ring3, power_table, 6000).to_lp()
    lines = lp.splitlines()
    assert lines[1:4] == ['Minimize', ' obj: t', 'Subject To']
    assert ' assign_1_1: x_1_1_2000 + x_1_1_3500 = 1' in lines
    assert (
        ' power_0: 2000 x_1_1_2000 + 3500 x_1_1_3500 + 2000 x_2_1_2000'
        ' + 3500 x_2_1_3500 + 2000 x_3_1_2000 + 3500 x_3_1_3500 <= 6000'
    ) in lines
    assert ' t >= 0' in lines
    assert 'Binaries' in lines
    assert lines[-1] == 'End'


def test_solve_ring3(ring3, power_table):
    assignment = solve(ring3, power_table, 6000)
    assert assignment.optimal
    assert assignment.objective_time == 13
    boosted = {JobId(2, 3), JobId(3, 3)}
    for job_id in ring3.jobs:
        assert assignment[job_id] == (3500 if job_id in boosted else 2000)
    assert len(assignment) == 15
    assert total_execution_time(ring3, assignment, power_table) == 17


def test_assignment_to_csv(ring3, power_table):
    lines = solve(ring3, power_table, 6000).to_csv(
        ring3,
        power_table,
    ).splitlines()
    assert lines[0] == 'node,job,bound_mw,freq_mhz,time'
    assert len(lines) == 16
    assert '2,3,3500,1000,1' in lines
    assert '2,1,2000,500,3' in lines


def test_loose_bound_runs_everything_fast(ring3, power_table):
    assignment = solve(ring3, power_table, 3 * 3500)
    assert set(assignment.values()) == {3500}


def test_node_below_minimum(ring3, power_table):
    with pytest.raises(InfeasibleError, match='node 1 needs at least 2000'):
        _instance(ring3, power_table, 1500)


def test_level_infeasible(ring3, power_table):
    instance = _instance(ring3, power_table, 5000)
    with pytest.raises(InfeasibleError, match='depth level 0'):
        solve_branch_and_bound(instance)
    with pytest.raises(InfeasibleError):
        exhaustive_oracle(instance)


def test_oracle_refuses_large_instances(ring3):
    power_table = _table(500, 600, 700, 800, 1000)
    with pytest.raises(InstanceTooLarge):
        exhaustive_oracle(_instance(ring3, power_table, 3 * 5000))


def test_time_limit(ring3, power_table, caplog):
    solver = BranchAndBound(_instance(ring3, power_table, 6000), time_limit=0)
    solver.DEFAULT_CHECK_INTERVAL = 1
    with caplog.at_level(logging.INFO, logger='powerdist.ilp'):
        with pytest.raises(InfeasibleError, match='time limit'):
            solver.solve()
    assert 'time limit' in caplog.text


def test_branch_and_bound_matches_oracle():
    rng = np.random.default_rng(2024)
    power_table = _table(500, 750, 1000)
    solved = 0
    for _ in range(200):
        nodes = int(rng.integers(2, 4))
        jobs = [int(rng.integers(1, 4)) for _ in range(nodes)]
        graph = random_graph(nodes, jobs, 0.6, rng, work=(100, 2000))
        cluster_bound = int(rng.integers(nodes * 2000, nodes * 3500 + 1))
        instance = _instance(graph, power_table, cluster_bound)

        expected = exhaustive_oracle(instance)
        actual = solve_branch_and_bound(instance)
        assert actual.optimal
        assert actual.objective_time == expected.objective_time
        assert dict(actual) == dict(expected)
        solved += 1
    assert solved == 200


def _power_rows_hold(instance, assignment):
    return all(
        sum(assignment[job_id] for job_id in level_jobs)
        <= instance.cluster_bound
        for level_jobs in instance.levels.values()
    )


def test_makespan_search_ring3(ring3, power_table):
    assignment = solve_makespan(ring3, power_table, 6000)
    assert assignment.optimal
    assert assignment.objective_time == 17
    assert total_execution_time(ring3, assignment, power_table) == 17
    assert assignment[JobId(2, 3)] == assignment[JobId(3, 3)] == 3500


def test_makespan_search_with_room_for_everything(ring3, power_table):
    assignment = solve_makespan(ring3, power_table, 3 * 3500)
    assert set(assignment.values()) == {3500}
    assert assignment.objective_time == total_execution_time(
        ring3,
        constant_assignment(ring3, 3500),
        power_table,
    )


def test_equal_share_seed(ring3, power_table):
    seed = equal_share_seed(_instance(ring3, power_table, 6000))
    assert seed == constant_assignment(ring3, 2000)

    # the nominal share rounds down to the nearest candidate
    seed = equal_share_seed(_instance(ring3, power_table, 10000))
    assert seed == constant_assignment(ring3, 2000)

    seed = equal_share_seed(_instance(ring3, power_table, 10500))
    assert seed == constant_assignment(ring3, 3500)

    assert equal_share_seed(_instance(ring3, power_table, 5999)) is None


def test_makespan_search_keeps_the_seed_on_timeout(ring3, power_table):
    instance = _instance(ring3, power_table, 6000)
    search = MakespanSearch(
        instance,
        time_limit=0,
        seed=equal_share_seed(instance),
    )
    search.DEFAULT_CHECK_INTERVAL = 1
    assignment = search.solve()
    assert not assignment.optimal
    assert dict(assignment) == constant_assignment(ring3, 2000)
    assert assignment.objective_time == 19


def test_makespan_search_ignores_a_bad_seed(ring3, power_table):
    instance = _instance(ring3, power_table, 6000)

    too_hot = MakespanSearch(instance, seed=constant_assignment(ring3, 3500))
    assert too_hot.solve().objective_time == 17

    not_a_candidate = MakespanSearch(
        instance,
        seed=constant_assignment(ring3, 2500),
    )
    assert not_a_candidate.solve().objective_time == 17


def test_makespan_search_matches_enumeration():
    rng = np.random.default_rng(77)
    power_table = _table(500, 750, 1000)
    for _ in range(60):
        nodes = int(rng.integers(2, 4))
        jobs = [int(rng.integers(1, 4)) for _ in range(nodes)]
        graph = random_graph(nodes, jobs, 0.6, rng, work=(100, 2000))
        cluster_bound = int(rng.integers(nodes * 2000, nodes * 3500 + 1))
        instance = _instance(graph, power_table, cluster_bound)

        best = None
        options = [instance.candidates[job_id] for job_id in instance.jobs]
        for picks in itertools.product(*options):
            candidate = dict(zip(instance.jobs, picks))
            if not _power_rows_hold(instance, candidate):
                continue
            makespan = total_execution_time(graph, candidate, power_table)
            if best is None or makespan < best:
                best = makespan

        actual = solve_makespan(graph, power_table, cluster_bound)
        assert actual.optimal
        assert actual.objective_time == best
        assert total_execution_time(graph, actual, power_table) == best
        assert _power_rows_hold(instance, actual)

        seed = equal_share_seed(instance)
        if seed is not None:
            assert best <= total_execution_time(graph, seed, power_table)


def test_long_chain_is_searched_without_recursion(power_table):
    length = sys.getrecursionlimit() + 500
    graph = random_graph(
        1,
        length,
        0.0,
        np.random.default_rng(5),
        work=(500, 500),
    )
    instance = _instance(graph, power_table, 3500)

    assignment = solve_branch_and_bound(instance)
    assert assignment.optimal
    assert set(assignment.values()) == {3500}
    assert assignment.objective_time == length / 2

    assignment = solve_makespan(graph, power_table, 3500)
    assert assignment.optimal
    assert assignment.objective_time == length / 2


def test_more_power_never_hurts_the_objective():
    rng = np.random.default_rng(41)
    power_table = _table(500, 750, 1000)
    for _ in range(30):
        nodes = int(rng.integers(2, 4))
        jobs = [int(rng.integers(1, 4)) for _ in range(nodes)]
        graph = random_graph(nodes, jobs, 0.6, rng, work=(100, 2000))
        previous = None
        for cluster_bound in range(nodes * 2000, nodes * 3500 + 1, 250):
            instance = _instance(graph, power_table, cluster_bound)
            assignment = solve_branch_and_bound(instance)
            assert _power_rows_hold(instance, assignment)
            if previous is not None:
                assert assignment.objective_time <= previous
            previous = assignment.objective_time
