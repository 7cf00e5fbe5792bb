import pytest

import powerdist.example_data.power_tables
from powerdist.power import (
    NodePowerTable,
    PowerBoundError,
    PowerBoundSet,
    PowerTable,
    PowerTableError,
    minimum_cluster_bound,
)


@pytest.fixture
def power_table():
    return powerdist.example_data.power_tables.example_power_table()


def test_synthetic_table(power_table):
    for node in 1, 2, 3:
        assert power_table.idle_power(node) == 500
        assert power_table.frequencies(node) == (500, 1000)
        assert power_table.max_frequency(node) == 1000
        assert power_table.min_operating_power(node) == 2000
        assert power_table.power(node, 1000) == 3500
        assert power_table.power(node, 500, cores=2) == 3200


@pytest.mark.parametrize('bound, freq', [
    (2000, 500),
    (3499, 500),
    (3500, 1000),
    (10000, 1000),
])
def test_frequency_for(power_table, bound, freq):
    assert power_table.frequency_for(1, bound) == freq


def test_frequency_for_below_minimum(power_table):
    with pytest.raises(PowerBoundError, match='1999 mW'):
        power_table.frequency_for(1, 1999)


def test_missing_entry(power_table):
    with pytest.raises(PowerTableError, match='3 cores'):
        power_table.power(1, 500, cores=3)


def test_per_node_rows_override_wildcard():
    table = PowerTable.parse(
        'node,cores,freq_mhz,power_mw\n'
        '*,idle,,500\n'
        '*,1,500,2000\n'
        '2,idle,,400\n'
        '2,1,800,2500\n'
        '2,1,1600,4000\n'
    )
    assert table.frequencies(1) == (500,)
    assert table.frequencies(2) == (800, 1600)
    assert table.idle_power(2) == 400
    assert table.frequency_for(2, 3999) == 800


def test_node_without_table():
    table = PowerTable.parse(
        'node,cores,freq_mhz,power_mw\n'
        '1,idle,,500\n'
        '1,1,500,2000\n'
    )
    with pytest.raises(KeyError):
        table.node(2)


def test_pack_round_trip(power_table):
    assert PowerTable.parse(power_table.pack()) == power_table


@pytest.mark.parametrize('text, message', [
    ('', 'empty power table'),
    ('node,freq\n', 'line 1: expected header'),
    ('node,cores,freq_mhz,power_mw\n*,1,500\n', 'line 2: expected 4 columns'),
    (
        'node,cores,freq_mhz,power_mw\n*,idle,,500\n*,1,fast,2000\n',
        'line 3: freq_mhz should be an int',
    ),
    (
        'node,cores,freq_mhz,power_mw\n*,idle,,500\n*,1,500,2000\n'
        '*,1,500,2100\n',
        'line 4: duplicate entry',
    ),
    ('node,cores,freq_mhz,power_mw\n*,1,500,2000\n', 'missing idle power'),
    ('node,cores,freq_mhz,power_mw\n3,idle,,500\n', 'missing frequency'),
    (
        'node,cores,freq_mhz,power_mw\n*,idle,,500\n*,1,500,2000\n'
        '*,1,1000,1800\n',
        'power must increase',
    ),
    (
        'node,cores,freq_mhz,power_mw\n*,idle,,2500\n*,1,500,2000\n',
        'idle power 2500 mW is not below',
    ),
    ('node,cores,freq_mhz,power_mw\n0,idle,,500\n', 'node ids start at 1'),
])
def test_parse_errors(text, message):
    with pytest.raises(PowerTableError, match=message):
        PowerTable.parse(text)


def test_node_table_needs_single_core_entries():
    with pytest.raises(PowerTableError, match='no single core'):
        NodePowerTable(500, {(2, 500): 3200})


def test_power_bound_set(power_table):
    bounds = PowerBoundSet.from_table(power_table, [1, 2, 3])
    assert list(bounds) == [1, 2, 3]
    assert bounds[2] == (2000, 3500)
    assert bounds.min_bound(1) == 2000
    assert bounds.max_bound(3) == 3500

    with pytest.raises(ValueError, match='node 4'):
        PowerBoundSet({4: []})


def test_minimum_cluster_bound(power_table):
    assert minimum_cluster_bound(power_table, 3) == 6000
    assert minimum_cluster_bound(power_table, 4) == 8000
