import pytest

import powerdist.example_data.power_tables
from powerdist.heuristic import (
    DistributeMessage,
    OnlineGraph,
    ReportMessage,
    power_gain,
)
from powerdist.mode import BudgetMode, NodeState


@pytest.fixture
def power_table():
    return powerdist.example_data.power_tables.example_power_table()


def _three_messages(graph):
    return [
        graph.process_message(ReportMessage.blocked(2, {1}, 3000)),
        graph.process_message(ReportMessage.blocked(3, {1}, 3000)),
        graph.process_message(ReportMessage.running(2)),
    ]


def _hand_written_algorithm(cluster_bound, n, messages):
    # a direct transcription of the report handling loop, kept independent
    # of OnlineGraph
    nominal = cluster_bound // n
    state = {}
    gains = {}
    edges = set()
    bounds = {}
    out = []
    for kind, node, blockers, gain in messages:
        state[node] = kind
        gains[node] = gain
        for blocker in blockers:
            state.setdefault(blocker, 'running')
        edges = {e for e in edges if e[0] != node}
        if kind == 'blocked':
            edges |= {(node, b) for b in blockers}
        budget = sum(gains[i] for i in state if state[i] == 'blocked')
        ranks = {
            i: sum(1 for _, b in edges if b == i)
            for i in state if state[i] == 'running'
        }
        total = sum(ranks.values())
        step = []
        for i in sorted(ranks):
            if total:
                bound = nominal + budget * ranks[i] // total
            else:
                bound = nominal + budget // len(ranks)
            bound = min(bound, cluster_bound)
            if bounds.get(i, nominal) != bound:
                bounds[i] = bound
                step.append((i, bound))
        out.append(step)
    return out


def test_three_message_scenario_reported_gains():
    graph = OnlineGraph(12000, 3, 500, mode=BudgetMode.reported)
    assert _three_messages(graph) == [
        [DistributeMessage(1, 7000)],
        [DistributeMessage(1, 10000)],
        [DistributeMessage(1, 7000)],
    ]
    assert _three_messages(OnlineGraph(
        12000,
        3,
        500,
        mode=BudgetMode.reported,
    )) == _hand_written_algorithm(12000, 3, [
        ('blocked', 2, {1}, 3000),
        ('blocked', 3, {1}, 3000),
        ('running', 2, set(), 0),
    ])


def test_three_message_scenario_safe_budget():
    # p_o - p_s = 4000 - 1000 = 3000 per blocked node
    graph = OnlineGraph(12000, 3, 1000)
    bounds = [
        [(m.node, m.power_bound) for m in messages]
        for messages in _three_messages(graph)
    ]
    assert bounds == [[(1, 7000)], [(1, 10000)], [(1, 7000)]]
    assert graph.budget == 3000
    assert graph.total_rank == 1


def test_safe_budget_ignores_reported_gain():
    graph = OnlineGraph(12000, 3, 1000)
    messages = graph.process_message(ReportMessage.blocked(2, {1}, 9999))
    assert messages == [DistributeMessage(1, 7000)]


def test_unblocked_budget_is_split_equally():
    graph = OnlineGraph(12000, 3, 1000)
    for node in 1, 2, 3:
        graph.register(node)
    messages = graph.process_message(ReportMessage.blocked(2, (), 0))
    assert graph.total_rank == 0
    assert messages == [DistributeMessage(1, 5500), DistributeMessage(3, 5500)]


def test_bounds_are_capped_at_the_cluster_bound():
    graph = OnlineGraph(6000, 3, 500, mode=BudgetMode.reported)
    messages = graph.process_message(ReportMessage.blocked(2, {1}, 10000))
    assert messages == [DistributeMessage(1, 6000)]


def test_unchanged_bounds_are_not_sent():
    graph = OnlineGraph(12000, 3, 1000)
    graph.process_message(ReportMessage.blocked(2, {1}, 0))
    assert graph.process_message(ReportMessage.blocked(2, {1}, 0)) == []


def test_reblocking_replaces_edges():
    graph = OnlineGraph(12000, 3, 1000)
    graph.process_message(ReportMessage.blocked(2, {1, 3}, 0))
    assert graph.edges == {(2, 1), (2, 3)}
    graph.process_message(ReportMessage.blocked(2, {3}, 0))
    assert graph.edges == {(2, 3)}
    assert graph.bounds() == {1: 4000, 2: 4000, 3: 7000}


def test_allocated_power_stays_under_bound():
    graph = OnlineGraph(12000, 3, 1000)
    graph.process_message(ReportMessage.blocked(2, {1}, 0))
    # node 1 boosted, node 2 idle, node 3 never reported
    assert graph.allocated_power() == 7000 + 1000 + 4000
    graph.process_message(ReportMessage.blocked(3, {1}, 0))
    assert graph.allocated_power() == 10000 + 1000 + 1000


def test_per_node_idle_power(power_table):
    graph = OnlineGraph.from_power_table(power_table, 6000, 3)
    messages = graph.process_message(ReportMessage.blocked(1, {2}, 0))
    assert messages == [DistributeMessage(2, 3500)]


@pytest.mark.parametrize('report, message', [
    (ReportMessage.blocked(4, {1}, 0), r'node 4 is outside 1\.\.3'),
    (ReportMessage.blocked(0, {1}, 0), r'node 0 is outside 1\.\.3'),
    (ReportMessage.blocked(2, {5}, 0), r'blocker 5 is outside 1\.\.3'),
    (ReportMessage.blocked(2, {2}, 0), 'node 2 cannot block itself'),
])
def test_invalid_reports(report, message):
    graph = OnlineGraph(12000, 3, 1000)
    with pytest.raises(ValueError, match=message):
        graph.process_message(report)
    assert graph.edges == set()


def test_report_message_validation():
    report = ReportMessage(NodeState.blocked, 1, [2, 3], 1500)
    assert report.blockers == frozenset({2, 3})
    assert ReportMessage.running(1) == ReportMessage(NodeState.running, 1)

    with pytest.raises(ValueError, match='running report'):
        ReportMessage(NodeState.running, 1, {2})
    with pytest.raises(ValueError, match='running report'):
        ReportMessage(NodeState.running, 1, (), 100)
    with pytest.raises(ValueError, match='non-negative'):
        ReportMessage.blocked(1, {2}, -1)


def test_power_gain(power_table):
    # p_{m-1, f} - p_s, with a single core falling back to p_{1, f}
    assert power_gain(power_table, 1, 1, 1000) == 3000
    assert power_gain(power_table, 1, 2, 1000) == 3000
    assert power_gain(power_table, 1, 3, 500) == 2700


def test_status():
    graph = OnlineGraph(12000, 3, 1000)
    graph.process_message(ReportMessage.blocked(2, {1}, 0))
    status = graph.status()
    assert 'cluster bound 12000 mW, nominal bound 4000 mW' in status
    assert 'node 1: running bound=7000 rank=1' in status
    assert 'node 2: blocked bound=4000 rank=0 gain=0 blockers=1' in status
