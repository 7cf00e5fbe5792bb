from collections import namedtuple
from fractions import Fraction

import networkx as nx
import numpy as np

from .utils import lazyval, to_fraction


class GraphError(ValueError):
    """Raised when a job dependency graph is malformed or invalid.

    Parameters
    ----------
    message : str
        The reason the graph was rejected.
    lineno : int, optional
        The line of the graph file the error was found on.
    """
    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f'line {lineno}: {message}'
        super().__init__(message)
        self.lineno = lineno


class CycleError(GraphError):
    """Raised when the dependencies of a graph form a cycle.

    Parameters
    ----------
    cycle : list[JobId]
        The jobs on the cycle, in dependency order.
    """
    def __init__(self, cycle):
        path = ' -> '.join(str(job) for job in [*cycle, cycle[0]])
        super().__init__(f'dependency cycle: {path}')
        self.cycle = cycle


class JobId(namedtuple('JobId', 'node index')):
    """The identity of a job: the ``index``-th job on ``node``.

    Both the node id and the job index start at 1.
    """
    def __str__(self):
        return f'J{self.node},{self.index}'


class Job:
    """A block of one node's execution between blocking communication calls.

    Parameters
    ----------
    node : int
        The node the job runs on.
    index : int
        The position of the job in the node's sequence, starting at 1.
    work : Fraction
        The abstract work of the job. At frequency ``f`` MHz the job takes
        ``work / f`` time units.
    serial_fraction : Fraction, optional
        The share of the work that always runs at the node's top frequency.
    """
    def __init__(self, node, index, work, serial_fraction=0):
        self.id = JobId(node, index)
        self.work = work = to_fraction(work, 'work')
        self.serial_fraction = serial_fraction = to_fraction(
            serial_fraction,
            'serial_fraction',
        )
        if work <= 0:
            raise ValueError(f'work must be positive, got {work!r}')
        if not 0 <= serial_fraction <= 1:
            raise ValueError(
                f'serial_fraction must be in [0, 1], got {serial_fraction!r}',
            )

    @property
    def node(self):
        return self.id.node

    @property
    def index(self):
        return self.id.index

    def __repr__(self):
        return f'<{type(self).__qualname__}: {self.id}, work={self.work}>'

    def __eq__(self, other):
        if not isinstance(other, Job):
            return NotImplemented
        return (
            self.id == other.id and
            self.work == other.work and
            self.serial_fraction == other.serial_fraction
        )

    def __hash__(self):
        return hash(self.id)

    def replace(self, *, work=None, serial_fraction=None):
        """Copy this job with new parameters.
        """
        return type(self)(
            self.node,
            self.index,
            self.work if work is None else work,
            (
                self.serial_fraction
                if serial_fraction is None else
                serial_fraction
            ),
        )


class DependencyGraph:
    """A directed acyclic graph of jobs.

    Parameters
    ----------
    node_count : int
        The number of nodes ``n``; node ids are ``1..n``.
    jobs : iterable[Job]
        The jobs. Each node's job indices must run ``1..k`` without gaps.
    edges : iterable[(JobId, JobId)]
        Dependencies as ``(source, target)`` pairs: ``target`` cannot start
        before ``source`` finishes. The serial edge between consecutive jobs
        of the same node is always added.

    Raises
    ------
    GraphError
        Raised when a job is duplicated, a node has no jobs or a gap in its
        job indices, an edge references an unknown job, or a job depends on
        two jobs of the same other node.
    CycleError
        Raised when the dependencies are cyclic.

    Notes
    -----
    Every job of an acyclic graph is reachable from some initial job, so that
    property needs no separate check.
    """
    def __init__(self, node_count, jobs, edges=()):
        if node_count < 1:
            raise GraphError(
                f'a graph needs at least one node, got {node_count}',
            )
        self.node_count = node_count

        self.jobs = job_map = {}
        for job in jobs:
            if job.id in job_map:
                raise GraphError(f'duplicate job {job.id}')
            if not 1 <= job.node <= node_count:
                raise GraphError(
                    f'job {job.id} is on node {job.node}, expected 1..'
                    f'{node_count}',
                )
            job_map[job.id] = job

        self._node_jobs = {}
        for node in range(1, node_count + 1):
            indices = sorted(
                job_id.index for job_id in job_map if job_id.node == node
            )
            if not indices:
                raise GraphError(f'node {node} has no jobs')
            if indices != list(range(1, len(indices) + 1)):
                raise GraphError(
                    f'node {node} job indices must run 1..{len(indices)},'
                    f' got {indices}',
                )
            self._node_jobs[node] = tuple(
                JobId(node, index) for index in indices
            )

        self.graph = graph = nx.DiGraph()
        graph.add_nodes_from(sorted(job_map))
        for ids in self._node_jobs.values():
            graph.add_edges_from(zip(ids, ids[1:]))
        for source, target in edges:
            source = JobId(*source)
            target = JobId(*target)
            for job_id in source, target:
                if job_id not in job_map:
                    raise GraphError(
                        f'dependency {target} <- {source} references unknown'
                        f' job {job_id}',
                    )
            graph.add_edge(source, target)

        self._check_acyclic()
        self._check_single_dependency_per_node()

    def _check_acyclic(self):
        try:
            cycle = nx.find_cycle(self.graph)
        except nx.NetworkXNoCycle:
            return
        raise CycleError([source for source, _ in cycle])

    def _check_single_dependency_per_node(self):
        for job_id in self.graph:
            seen = {}
            for parent in sorted(self.graph.predecessors(job_id)):
                if parent.node == job_id.node:
                    continue
                if parent.node in seen:
                    raise GraphError(
                        f'{job_id} depends on both {seen[parent.node]} and'
                        f' {parent} of node {parent.node}',
                    )
                seen[parent.node] = parent

    def __repr__(self):
        return (
            f'<{type(self).__qualname__}: {self.node_count} nodes,'
            f' {len(self.jobs)} jobs, {self.graph.number_of_edges()} edges>'
        )

    def __eq__(self, other):
        if not isinstance(other, DependencyGraph):
            return NotImplemented
        return (
            self.node_count == other.node_count and
            self.jobs == other.jobs and
            set(self.graph.edges) == set(other.graph.edges)
        )

    def __len__(self):
        return len(self.jobs)

    def __iter__(self):
        return iter(self.topological_order)

    def __contains__(self, job_id):
        return job_id in self.jobs

    def __getitem__(self, job_id):
        return self.jobs[JobId(*job_id)]

    @property
    def nodes(self):
        """The node ids ``1..n``.
        """
        return range(1, self.node_count + 1)

    @property
    def edges(self):
        """Every dependency edge including the serial ones, sorted.
        """
        return sorted(self.graph.edges)

    @property
    def cross_edges(self):
        """The dependency edges between jobs of different nodes, sorted.
        """
        return [
            (source, target)
            for source, target in self.edges
            if source.node != target.node
        ]

    def node_jobs(self, node):
        """The ids of the jobs of ``node`` in execution order.
        """
        return self._node_jobs[node]

    def predecessors(self, job_id):
        return sorted(self.graph.predecessors(job_id))

    def successors(self, job_id):
        return sorted(self.graph.successors(job_id))

    @lazyval
    def topological_order(self):
        """The job ids in the lexicographically smallest topological order.
        """
        return tuple(nx.lexicographical_topological_sort(self.graph))

    @lazyval
    def initial_jobs(self):
        """The jobs with no dependencies.
        """
        return tuple(
            job_id for job_id in sorted(self.jobs)
            if not self.graph.in_degree(job_id)
        )

    @lazyval
    def final_jobs(self):
        """The jobs nothing depends on.
        """
        return tuple(
            job_id for job_id in sorted(self.jobs)
            if not self.graph.out_degree(job_id)
        )

    def with_work(self, work):
        """A graph with the same structure and new work values.

        Parameters
        ----------
        work : mapping[JobId, Fraction]
            The new work of each job. Jobs not in the mapping keep their work.

        Returns
        -------
        graph : DependencyGraph
            The new graph.
        """
        return type(self)(
            self.node_count,
            [
                job.replace(work=work[job_id]) if job_id in work else job
                for job_id, job in self.jobs.items()
            ],
            self.cross_edges,
        )

    def with_uniform_work(self, work):
        """A graph with the same structure where every job has ``work``.
        """
        return self.with_work({job_id: work for job_id in self.jobs})

    @classmethod
    def from_path(cls, path):
        """Read a graph from a file on disk.

        Parameters
        ----------
        path : str or pathlib.Path
            The path to the graph file.

        Returns
        -------
        graph : DependencyGraph
            The parsed graph.
        """
        with open(path, encoding='utf-8-sig') as f:
            return cls.from_file(f)

    @classmethod
    def from_file(cls, file):
        """Read a graph from an open text file.
        """
        return cls.parse(file.read())

    @classmethod
    def parse(cls, data):
        """Parse a graph file.

        Parameters
        ----------
        data : str
            The graph file's content.

        Returns
        -------
        graph : DependencyGraph
            The parsed, validated graph with serial edges added.

        Raises
        ------
        GraphError
            Raised on a syntax or validation error. Errors that can be pinned
            to a line carry its number as ``lineno``.
        CycleError
            Raised when the dependencies are cyclic.

        Notes
        -----
        The format is line oriented; ``#`` starts a comment::

            nodes <n>
            job <node_id> <job_index> <work> [serial_fraction]
            dep <node_id> <job_index> <- <node_id> <job_index>
        """
        node_count = None
        jobs = {}
        edges = []
        for lineno, line in enumerate(data.splitlines(), start=1):
            line = line.partition('#')[0].strip()
            if not line:
                continue

            keyword, *args = line.split()
            if keyword == 'nodes':
                if node_count is not None:
                    raise GraphError('duplicate nodes declaration', lineno)
                if len(args) != 1:
                    raise GraphError(
                        f'expected "nodes <n>", got {line!r}',
                        lineno,
                    )
                node_count = _parse_id(args[0], 'node count', lineno)
            elif keyword == 'job':
                if node_count is None:
                    raise GraphError('job before nodes declaration', lineno)
                if len(args) not in (3, 4):
                    raise GraphError(
                        'expected "job <node_id> <job_index> <work>'
                        f' [serial_fraction]", got {line!r}',
                        lineno,
                    )
                node = _parse_id(args[0], 'node id', lineno)
                index = _parse_id(args[1], 'job index', lineno)
                if not 1 <= node <= node_count:
                    raise GraphError(
                        f'node id {node} outside 1..{node_count}',
                        lineno,
                    )
                job_id = JobId(node, index)
                if job_id in jobs:
                    raise GraphError(f'duplicate job {job_id}', lineno)
                try:
                    jobs[job_id] = Job(node, index, *args[2:])
                except ValueError as e:
                    raise GraphError(str(e), lineno) from e
            elif keyword == 'dep':
                if len(args) != 5 or args[2] != '<-':
                    raise GraphError(
                        'expected "dep <node_id> <job_index> <- <node_id>'
                        f' <job_index>", got {line!r}',
                        lineno,
                    )
                target = JobId(
                    _parse_id(args[0], 'node id', lineno),
                    _parse_id(args[1], 'job index', lineno),
                )
                source = JobId(
                    _parse_id(args[3], 'node id', lineno),
                    _parse_id(args[4], 'job index', lineno),
                )
                edges.append((source, target, lineno))
            else:
                raise GraphError(f'unknown keyword {keyword!r}', lineno)

        if node_count is None:
            raise GraphError('missing nodes declaration')

        for source, target, lineno in edges:
            for job_id in source, target:
                if job_id not in jobs:
                    raise GraphError(
                        f'dependency {target} <- {source} references unknown'
                        f' job {job_id}',
                        lineno,
                    )

        return cls(
            node_count,
            jobs.values(),
            [(source, target) for source, target, _ in edges],
        )

    def pack(self):
        """The graph file text of this graph.

        Returns
        -------
        packed_str : str
            Text that :meth:`parse` reads back to an equal graph. Serial edges
            are left implicit.
        """
        lines = [f'nodes {self.node_count}']
        for job_id in sorted(self.jobs):
            job = self.jobs[job_id]
            line = f'job {job_id.node} {job_id.index} {job.work}'
            if job.serial_fraction:
                line += f' {job.serial_fraction}'
            lines.append(line)
        for source, target in sorted(self.cross_edges, key=lambda e: e[::-1]):
            lines.append(
                f'dep {target.node} {target.index} <- {source.node}'
                f' {source.index}',
            )
        return '\n'.join(lines) + '\n'


def _parse_id(raw, field, lineno):
    try:
        value = int(raw)
    except ValueError:
        raise GraphError(f'{field} should be an int, got {raw!r}', lineno)
    if value < 1:
        raise GraphError(f'{field} must be >= 1, got {value}', lineno)
    return value


def parse_graph(text):
    """Parse and validate a graph file.

    See Also
    --------
    :meth:`powerdist.model.DependencyGraph.parse`
    """
    return DependencyGraph.parse(text)


def execution_time_at_frequency(job, freq, max_frequency):
    """The time ``job`` takes at ``freq`` MHz.

    Parameters
    ----------
    job : Job
        The job.
    freq : int
        The frequency the job runs at.
    max_frequency : int
        The top frequency of the job's node; the serial share of the work
        always runs at it.

    Returns
    -------
    time : Fraction
        The execution time.
    """
    serial = job.serial_fraction
    return job.work * (
        serial / Fraction(max_frequency) + (1 - serial) / Fraction(freq)
    )


def execution_time_of_job(job, bound, power_table):
    """The time ``job`` takes under a power bound.

    Parameters
    ----------
    job : Job
        The job.
    bound : int
        The power bound in milliwatts.
    power_table : PowerTable
        The table used to find the highest frequency within ``bound``.

    Returns
    -------
    time : Fraction
        The execution time.

    Raises
    ------
    PowerBoundError
        Raised when ``bound`` is below the node's minimum operating power.
    """
    return execution_time_at_frequency(
        job,
        power_table.frequency_for(job.node, bound),
        power_table.max_frequency(job.node),
    )


def path_time(graph, path, assignment, power_table):
    """The execution time of a path: the sum of its jobs' times.

    Parameters
    ----------
    graph : DependencyGraph
        The graph the jobs belong to.
    path : iterable[JobId]
        The jobs on the path.
    assignment : mapping[JobId, int]
        The power bound of each job.
    power_table : PowerTable
        The power table.

    Raises
    ------
    KeyError
        Raised when a job on the path has no bound.
    """
    return sum(
        (
            execution_time_of_job(
                graph[job_id],
                assignment[job_id],
                power_table,
            )
            for job_id in path
        ),
        Fraction(0),
    )


def _finish_times(graph, assignment, power_table):
    finish = {}
    best_parent = {}
    for job_id in graph.topological_order:
        start = Fraction(0)
        parent = None
        for pred in graph.predecessors(job_id):
            if parent is None or finish[pred] > start:
                start = finish[pred]
                parent = pred
        best_parent[job_id] = parent
        finish[job_id] = start + execution_time_of_job(
            graph[job_id],
            assignment[job_id],
            power_table,
        )
    return finish, best_parent


def total_execution_time(graph, assignment, power_table):
    """The makespan: the time of the longest execution path.

    Parameters
    ----------
    graph : DependencyGraph
        The graph.
    assignment : mapping[JobId, int]
        The power bound of each job.
    power_table : PowerTable
        The power table.

    Returns
    -------
    time : Fraction
        The makespan, computed by longest path over the topological order.
    """
    finish, _ = _finish_times(graph, assignment, power_table)
    return max(finish.values())


def critical_path(graph, assignment, power_table):
    """The execution path that realises the makespan.

    Ties are broken towards the smallest job id.

    Returns
    -------
    path : list[JobId]
        The jobs from an initial job to a final job.
    """
    finish, best_parent = _finish_times(graph, assignment, power_table)
    end = max(sorted(finish), key=finish.__getitem__)
    path = [end]
    while best_parent[path[-1]] is not None:
        path.append(best_parent[path[-1]])
    path.reverse()
    return path


def constant_assignment(graph, bound):
    """Map every job of ``graph`` to the same power bound.
    """
    return {job_id: bound for job_id in graph.jobs}


def nominal_power_bound(cluster_bound, node_count):
    """The equal share of the cluster bound among ``node_count`` nodes.

    The remainder of the division is left unallocated.
    """
    if node_count < 1:
        raise ValueError(f'node count must be >= 1, got {node_count!r}')
    return cluster_bound // node_count


def random_graph(nodes,
                 jobs_per_node,
                 edge_probability=0.5,
                 rng=None,
                 *,
                 work=(500, 5000)):
    """Generate a random valid dependency graph.

    Parameters
    ----------
    nodes : int
        The number of nodes.
    jobs_per_node : int or sequence[int]
        The number of jobs on every node, or on each node in order.
    edge_probability : float, optional
        The chance that a job depends on some earlier job of each other node.
    rng : numpy.random.Generator, optional
        The random source.
    work : (int, int), optional
        The inclusive range integer work values are drawn from.

    Returns
    -------
    graph : DependencyGraph
        The random graph. Cross node dependencies always point at a job with
        a strictly smaller index, so the graph is acyclic.
    """
    if rng is None:
        rng = np.random.default_rng()
    if isinstance(jobs_per_node, int):
        jobs_per_node = [jobs_per_node] * nodes

    low, high = work
    jobs = [
        Job(node, index, int(rng.integers(low, high + 1)))
        for node, count in enumerate(jobs_per_node, start=1)
        for index in range(1, count + 1)
    ]
    edges = []
    for node, count in enumerate(jobs_per_node, start=1):
        for index in range(2, count + 1):
            for other, other_count in enumerate(jobs_per_node, start=1):
                limit = min(index - 1, other_count)
                if other == node or limit < 1:
                    continue
                if rng.random() < edge_probability:
                    source = JobId(other, int(rng.integers(1, limit + 1)))
                    edges.append((source, JobId(node, index)))

    return DependencyGraph(nodes, jobs, edges)
