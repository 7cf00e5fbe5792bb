from pathlib import Path

from powerdist.netproto import parse_trace


_traces = frozenset({
    'three_step',
    'churn',
})


def trace_path(name):
    """The path of one of the example detector traces.
    """
    if name not in _traces:
        raise ValueError(f'unknown trace {name!r}, options: {set(_traces)}')
    return Path(__file__).parent / f'{name}.csv'


def example_trace(name, node_count=3):
    """Load one of the example detector traces.

    Parameters
    ----------
    name : str
        The name of the trace to open.
    node_count : int, optional
        The number of nodes, used to deduce the blockers of MPI calls.

    Returns
    -------
    rows : list[TraceRow]
        The parsed trace.
    """
    with open(trace_path(name), encoding='utf-8') as f:
        return parse_trace(f.read(), node_count)
