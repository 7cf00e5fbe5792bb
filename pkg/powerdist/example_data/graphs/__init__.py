from pathlib import Path

from powerdist.model import DependencyGraph


_graphs = frozenset({
    'ring3',
    'ring3_uniform',
    'chain4',
    'gather3',
})


def graph_path(name):
    """The path of one of the example graphs.

    Parameters
    ----------
    name : str
        The name of the graph, without the ``.graph`` suffix.
    """
    if name not in _graphs:
        raise ValueError(f'unknown graph {name!r}, options: {set(_graphs)}')
    return Path(__file__).parent / f'{name}.graph'


def example_graph(name):
    """Load one of the example graphs.

    Parameters
    ----------
    name : str
        The name of the graph to open.

    Returns
    -------
    graph : DependencyGraph
        The graph.
    """
    return DependencyGraph.from_path(graph_path(name))


def ring3():
    """Three nodes, five jobs each, run at 500 MHz.

    Returns
    -------
    ring3 : DependencyGraph
        The graph object.
    """
    return example_graph('ring3')
