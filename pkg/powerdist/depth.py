from collections import namedtuple
import csv
import io

from .utils import align_columns


class DepthRange(namedtuple('DepthRange', 'lo hi')):
    """An inclusive interval of depth levels ``[lo, hi]``.
    """
    def covers(self, level):
        return self.lo <= level <= self.hi

    @property
    def levels(self):
        return range(self.lo, self.hi + 1)

    def __str__(self):
        return f'[{self.lo},{self.hi}]'


class DepthInfo(namedtuple('DepthInfo', 'max_depth next_depth')):
    """The depth data of one job.

    Parameters
    ----------
    max_depth : int
        The length of the longest path from an initial job.
    next_depth : int
        The smallest max-depth among the job's dependents, or
        ``max_depth + 1`` for final jobs.
    """
    @property
    def depth_range(self):
        """``[max_depth, next_depth - 1]``, the levels the job may stretch
        over.
        """
        return DepthRange(self.max_depth, self.next_depth - 1)


def max_depths(graph):
    """Compute the max-depth of every job.

    Parameters
    ----------
    graph : DependencyGraph
        The graph.

    Returns
    -------
    depths : dict[JobId, int]
        Zero for initial jobs, otherwise one more than the deepest dependency.
    """
    depths = {}
    for job_id in graph.topological_order:
        depths[job_id] = max(
            (depths[parent] + 1 for parent in graph.predecessors(job_id)),
            default=0,
        )
    return depths


def depth_info(graph, depths=None):
    """Compute the max-depth and next depth of every job.

    Returns
    -------
    info : dict[JobId, DepthInfo]
        The depth data of each job.
    """
    if depths is None:
        depths = max_depths(graph)
    return {
        job_id: DepthInfo(
            depths[job_id],
            min(
                (depths[child] for child in graph.successors(job_id)),
                default=depths[job_id] + 1,
            ),
        )
        for job_id in sorted(depths)
    }


def depth_ranges(graph, depths=None):
    """Compute the depth range of every job.

    Parameters
    ----------
    graph : DependencyGraph
        The graph.
    depths : dict[JobId, int], optional
        The output of :func:`max_depths`, computed when not given.

    Returns
    -------
    ranges : dict[JobId, DepthRange]
        ``[max_depth, next_depth - 1]`` for each job. Final jobs have the
        degenerate range ``[max_depth, max_depth]``.
    """
    return {
        job_id: info.depth_range
        for job_id, info in depth_info(graph, depths).items()
    }


def concurrency_sets(ranges):
    """Group jobs by the depth levels they may occupy.

    Parameters
    ----------
    ranges : dict[JobId, DepthRange]
        The output of :func:`depth_ranges`.

    Returns
    -------
    levels : dict[int, tuple[JobId]]
        For each level from 0 to the deepest level, the sorted jobs whose
        range covers it.
    """
    deepest = max((r.hi for r in ranges.values()), default=-1)
    levels = {level: [] for level in range(deepest + 1)}
    for job_id in sorted(ranges):
        for level in ranges[job_id].levels:
            levels[level].append(job_id)
    return {level: tuple(jobs) for level, jobs in levels.items()}


def _job_rows(graph, cell):
    deepest = max(len(graph.node_jobs(node)) for node in graph.nodes)
    rows = [['', *(f'Node {node}' for node in graph.nodes)]]
    for index in range(1, deepest + 1):
        row = [f'Job {index}']
        for node in graph.nodes:
            jobs = graph.node_jobs(node)
            row.append(cell(jobs[index - 1]) if index <= len(jobs) else '-')
        rows.append(row)
    return rows


def depth_table(graph):
    """Render the max-depths and depth ranges of a graph as aligned text.

    The first table holds max-depths and the second depth ranges; rows are
    job indices and columns are nodes.
    """
    info = depth_info(graph)
    depths = _job_rows(graph, lambda job_id: str(info[job_id].max_depth))
    ranges = _job_rows(graph, lambda job_id: str(info[job_id].depth_range))
    return '\n'.join([
        'Max-depths',
        align_columns(depths),
        '',
        'Depth ranges',
        align_columns(ranges),
        '',
    ])


def depth_csv(graph):
    """The depth data of a graph as CSV.

    Columns are ``node,job,delta,range_lo,range_hi``.
    """
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(['node', 'job', 'delta', 'range_lo', 'range_hi'])
    for job_id, info in depth_info(graph).items():
        lo, hi = info.depth_range
        writer.writerow([job_id.node, job_id.index, info.max_depth, lo, hi])
    return out.getvalue()
