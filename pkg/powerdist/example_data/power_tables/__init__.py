from pathlib import Path

from powerdist.power import PowerTable


_power_tables = frozenset({
    'synthetic',
    'three_step',
})


def power_table_path(name):
    """The path of one of the example power tables.
    """
    if name not in _power_tables:
        raise ValueError(
            f'unknown power table {name!r}, options: {set(_power_tables)}',
        )
    return Path(__file__).parent / f'{name}.csv'


def example_power_table(name='synthetic'):
    """Load one of the example power tables.

    Parameters
    ----------
    name : str
        The name of the table to open.

    Returns
    -------
    power_table : PowerTable
        The table. ``synthetic`` gives every node 500 and 1000 MHz at 2000 and
        3500 mW on one core, idling at 500 mW. ``three_step`` adds 750 MHz at
        2750 mW.
    """
    return PowerTable.from_path(power_table_path(name))
