import pytest

import powerdist.example_data.graphs
import powerdist.example_data.power_tables
import powerdist.example_data.traces


@pytest.mark.parametrize(
    'name',
    ['ring3', 'ring3_uniform', 'chain4', 'gather3'],
)
def test_example_graphs_load(name):
    graph = powerdist.example_data.graphs.example_graph(name)
    assert graph.node_count in (3, 4)


def test_example_power_table():
    table = powerdist.example_data.power_tables.example_power_table()
    assert table.frequencies(1) == (500, 1000)
    assert table.idle_power(7) == 500

    table = powerdist.example_data.power_tables.example_power_table(
        'three_step',
    )
    assert table.frequencies(2) == (500, 750, 1000)
    assert table.frequency_for(2, 3000) == 750


@pytest.mark.parametrize('loader', [
    powerdist.example_data.graphs.graph_path,
    powerdist.example_data.power_tables.power_table_path,
    powerdist.example_data.traces.trace_path,
])
def test_unknown_name(loader):
    with pytest.raises(ValueError, match='unknown'):
        loader('missing')
