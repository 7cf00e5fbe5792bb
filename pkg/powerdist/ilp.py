import bisect
from collections import namedtuple
from collections.abc import Mapping
import csv
from fractions import Fraction
import io
import itertools
import logging
import math
import time

from .depth import concurrency_sets, depth_ranges
from .model import execution_time_of_job, nominal_power_bound
from .power import PowerBoundSet
from .utils import format_time


log = logging.getLogger(__name__)


class InfeasibleError(ValueError):
    """Raised when no assignment satisfies every power row.
    """


class InstanceTooLarge(ValueError):
    """Raised when an instance is too large to enumerate exhaustively.
    """


class Constraint(namedtuple('Constraint', 'name kind terms sense rhs')):
    """One row of an ILP instance.

    Parameters
    ----------
    name : str
        The row name used in LP exports.
    kind : {'assign', 'power', 'makespan'}
        The constraint family.
    terms : tuple[(str, Fraction)]
        ``(variable, coefficient)`` pairs.
    sense : {'=', '<='}
        The row sense.
    rhs : int
        The right hand side.
    """


def _variable(job_id, bound):
    return f'x_{job_id.node}_{job_id.index}_{bound}'


class IlpInstance:
    """The power bound assignment problem as an integer linear program.

    There is one binary variable ``x_{j,b}`` per job and candidate bound and
    one continuous variable ``t``. The rows are:

    - one unique assignment row per job: ``sum_b x_{j,b} = 1``;
    - one power row per depth level ``d``: the bounds of every job whose
      depth range covers ``d`` sum to at most the cluster bound;
    - one makespan row per node: the times of the node's jobs sum to at most
      ``t``.

    The objective is to minimize ``t``.

    Parameters
    ----------
    graph : DependencyGraph
        The graph.
    ranges : dict[JobId, DepthRange]
        The depth range of every job.
    bounds : PowerBoundSet
        The candidate bounds of each node.
    cluster_bound : int
        The cluster power bound in milliwatts.
    power_table : PowerTable
        The table used to evaluate each job's time under each bound.

    Raises
    ------
    InfeasibleError
        Raised when some node's smallest bound exceeds the cluster bound.
    """
    def __init__(self, graph, ranges, bounds, cluster_bound, power_table):
        self.graph = graph
        self.ranges = ranges
        self.cluster_bound = cluster_bound

        for node in graph.nodes:
            if bounds.min_bound(node) > cluster_bound:
                raise InfeasibleError(
                    f'node {node} needs at least {bounds.min_bound(node)} mW'
                    f' but the cluster bound is {cluster_bound} mW',
                )

        # variable order: (max-depth, node, job index)
        self.jobs = tuple(sorted(
            graph.jobs,
            key=lambda job_id: (ranges[job_id].lo, *job_id),
        ))
        self.candidates = {
            job_id: bounds[job_id.node] for job_id in self.jobs
        }
        self.times = {
            (job_id, bound): execution_time_of_job(
                graph[job_id],
                bound,
                power_table,
            )
            for job_id in self.jobs
            for bound in self.candidates[job_id]
        }
        self.levels = concurrency_sets(ranges)

        self.constraints = constraints = []
        for job_id in self.jobs:
            constraints.append(Constraint(
                f'assign_{job_id.node}_{job_id.index}',
                'assign',
                tuple(
                    (_variable(job_id, bound), Fraction(1))
                    for bound in self.candidates[job_id]
                ),
                '=',
                1,
            ))
        for level, jobs in self.levels.items():
            constraints.append(Constraint(
                f'power_{level}',
                'power',
                tuple(
                    (_variable(job_id, bound), Fraction(bound))
                    for job_id in jobs
                    for bound in self.candidates[job_id]
                ),
                '<=',
                cluster_bound,
            ))
        for node in graph.nodes:
            constraints.append(Constraint(
                f'makespan_{node}',
                'makespan',
                tuple(
                    (_variable(job_id, bound), self.times[job_id, bound])
                    for job_id in graph.node_jobs(node)
                    for bound in self.candidates[job_id]
                ) + (('t', Fraction(-1)),),
                '<=',
                0,
            ))

        log.debug(
            'built ILP instance: %d assignment variables, %d constraints',
            self.assignment_variable_count,
            len(constraints),
        )

    def __repr__(self):
        return (
            f'<{type(self).__qualname__}: {len(self.jobs)} jobs,'
            f' {self.assignment_variable_count} variables,'
            f' {self.constraint_count} constraints>'
        )

    @property
    def variables(self):
        """The names of the binary variables in order, then ``t``.
        """
        return [
            _variable(job_id, bound)
            for job_id in self.jobs
            for bound in self.candidates[job_id]
        ] + ['t']

    @property
    def assignment_variable_count(self):
        return sum(len(bounds) for bounds in self.candidates.values())

    @property
    def constraint_count(self):
        return len(self.constraints)

    def rows(self, kind):
        """The constraints of one family.
        """
        return [row for row in self.constraints if row.kind == kind]

    @property
    def time_scale(self):
        """The smallest integer that makes every job time integral.
        """
        return math.lcm(*(t.denominator for t in self.times.values()))

    def to_lp(self):
        """Export the instance in CPLEX LP text format.

        Returns
        -------
        lp : str
            The instance as ``Minimize``, ``Subject To``, ``Bounds``,
            ``Binaries`` and ``End`` sections.
        """
        lines = [
            f'\\ {len(self.jobs)} jobs on {self.graph.node_count} nodes,'
            f' cluster bound {self.cluster_bound} mW',
            'Minimize',
            ' obj: t',
            'Subject To',
        ]
        for row in self.constraints:
            lines.extend(_lp_row(row))
        lines.append('Bounds')
        lines.append(' t >= 0')
        lines.append('Binaries')
        binaries = self.variables[:-1]
        for start in range(0, len(binaries), 8):
            lines.append(' ' + ' '.join(binaries[start:start + 8]))
        lines.append('End')
        return '\n'.join(lines) + '\n'


def _lp_number(value):
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    return format(float(value), '.12g')


def _lp_row(row):
    terms = []
    for ix, (name, coef) in enumerate(row.terms):
        sign = '-' if coef < 0 else '+'
        magnitude = abs(coef)
        term = name if magnitude == 1 else f'{_lp_number(magnitude)} {name}'
        if ix == 0:
            terms.append(f'- {term}' if sign == '-' else term)
        else:
            terms.append(f'{sign} {term}')

    lines = []
    head = f' {row.name}:'
    for start in range(0, len(terms), 6):
        chunk = ' '.join(terms[start:start + 6])
        lines.append(f'{head} {chunk}' if start == 0 else f'   {chunk}')
    lines[-1] += f' {row.sense} {row.rhs}'
    return lines


def build_instance(graph, ranges, bounds, cluster_bound, power_table):
    """Build the ILP for a graph.

    See Also
    --------
    :class:`powerdist.ilp.IlpInstance`
    """
    return IlpInstance(graph, ranges, bounds, cluster_bound, power_table)


class Assignment(Mapping):
    """A job to power bound mapping.

    Parameters
    ----------
    bounds : dict[JobId, int]
        The bound of every job.
    objective_time : Fraction
        The objective value: ``t`` for the ILP search, the makespan for
        :class:`MakespanSearch`.
    optimal : bool
        Whether the assignment was proved optimal.
    nodes_explored : int, optional
        The number of search nodes the solver visited.
    """
    def __init__(self, bounds, objective_time, optimal, nodes_explored=0):
        self._bounds = dict(bounds)
        self.objective_time = objective_time
        self.optimal = optimal
        self.nodes_explored = nodes_explored

    def __repr__(self):
        status = 'optimal' if self.optimal else 'best found'
        return (
            f'<{type(self).__qualname__}: t={self.objective_time}'
            f' ({status}), {len(self)} jobs>'
        )

    def __getitem__(self, job_id):
        return self._bounds[job_id]

    def __iter__(self):
        return iter(sorted(self._bounds))

    def __len__(self):
        return len(self._bounds)

    def to_csv(self, graph, power_table):
        """The assignment as CSV.

        Columns are ``node,job,bound_mw,freq_mhz,time``.
        """
        out = io.StringIO()
        writer = csv.writer(out, lineterminator='\n')
        writer.writerow(['node', 'job', 'bound_mw', 'freq_mhz', 'time'])
        for job_id in self:
            bound = self[job_id]
            writer.writerow([
                job_id.node,
                job_id.index,
                bound,
                power_table.frequency_for(job_id.node, bound),
                format_time(
                    execution_time_of_job(graph[job_id], bound, power_table),
                ),
            ])
        return out.getvalue()


class _SearchTimeout(Exception):
    pass


class BranchAndBound:
    """Depth first branch and bound over the assignment variables.

    Jobs are assigned in the instance's variable order and each job tries its
    candidate bounds from largest to smallest. A partial assignment is pruned
    when some power row can no longer be met even with every remaining job at
    its smallest bound, or when the committed time of some node plus the
    fastest admissible time of its remaining jobs is no better than the
    incumbent. The first optimum in search order is returned.

    The search keeps an explicit stack, so its depth is not tied to the
    interpreter's recursion limit.

    Parameters
    ----------
    instance : IlpInstance
        The instance to solve.
    time_limit : float, optional
        The wall clock budget in seconds. When it runs out the best
        assignment found so far is returned, flagged as not optimal.
    """
    DEFAULT_CHECK_INTERVAL = 1024

    def __init__(self, instance, *, time_limit=None):
        self.instance = instance
        self.time_limit = time_limit
        self.nodes_explored = 0

    def _prepare(self):
        inst = self.instance
        cap = inst.cluster_bound
        scale = inst.time_scale
        jobs = inst.jobs
        job_levels = [tuple(inst.ranges[job_id].levels) for job_id in jobs]
        min_bound = [inst.candidates[job_id][0] for job_id in jobs]

        remaining_min = dict.fromkeys(inst.levels, 0)
        for levels, bound in zip(job_levels, min_bound):
            for level in levels:
                remaining_min[level] += bound
        for level, total in remaining_min.items():
            if total > cap:
                raise InfeasibleError(
                    f'depth level {level} needs at least {total} mW but the'
                    f' cluster bound is {cap} mW',
                )

        choices = []
        for job_id, levels, floor in zip(jobs, job_levels, min_bound):
            choices.append([
                (bound, int(inst.times[job_id, bound] * scale))
                for bound in reversed(inst.candidates[job_id])
                if all(
                    remaining_min[level] - floor + bound <= cap
                    for level in levels
                )
            ])

        self._cap = cap
        self._scale = scale
        self._jobs = jobs
        self._job_levels = job_levels
        self._min_bound = min_bound
        self._remaining_min = remaining_min
        self._used = dict.fromkeys(inst.levels, 0)
        self._choices = choices
        self._fastest = [min(t for _, t in options) for options in choices]
        self._node_of = [job_id.node for job_id in jobs]
        self._picks = [None] * len(jobs)
        self._best = None
        self._best_picks = None

        self._committed = dict.fromkeys(inst.graph.nodes, 0)
        self._remaining_fast = dict.fromkeys(inst.graph.nodes, 0)
        for node, t in zip(self._node_of, self._fastest):
            self._remaining_fast[node] += t

    def _enter(self, k):
        self._remaining_fast[self._node_of[k]] -= self._fastest[k]

    def _leave(self, k):
        self._remaining_fast[self._node_of[k]] += self._fastest[k]

    def _commit(self, k, t):
        """Account for job ``k`` taking time ``t``.

        Returns False, leaving no trace, when the partial assignment cannot
        beat the incumbent.
        """
        node = self._node_of[k]
        committed = self._committed
        committed[node] += t
        lower = max(
            committed[i] + self._remaining_fast[i] for i in committed
        )
        if self._best is None or lower < self._best:
            return True
        committed[node] -= t
        return False

    def _uncommit(self, k, t):
        self._committed[self._node_of[k]] -= t

    def _leaf(self):
        return max(self._committed.values())

    def _admit(self, k, bound, t):
        levels = self._job_levels[k]
        floor = self._min_bound[k]
        used = self._used
        remaining_min = self._remaining_min
        extra = bound - floor
        if any(
            used[level] + remaining_min[level] + extra > self._cap
            for level in levels
        ):
            return False
        if not self._commit(k, t):
            return False
        for level in levels:
            used[level] += bound
            remaining_min[level] -= floor
        self._picks[k] = bound
        return True

    def _retract(self, k, bound, t):
        floor = self._min_bound[k]
        for level in self._job_levels[k]:
            self._used[level] -= bound
            self._remaining_min[level] += floor
        self._uncommit(k, t)

    def _tick(self, deadline):
        self.nodes_explored += 1
        if (deadline is not None and
                self.nodes_explored % self.DEFAULT_CHECK_INTERVAL == 0 and
                time.monotonic() > deadline):
            raise _SearchTimeout()

    def _search(self, deadline):
        n = len(self._jobs)
        pending = [None] * n
        applied = [None] * n
        k = 0
        self._tick(deadline)
        if n:
            self._enter(0)
            pending[0] = iter(self._choices[0])
        while k >= 0:
            if k == n:
                objective = self._leaf()
                if self._best is None or objective < self._best:
                    self._best = objective
                    self._best_picks = list(self._picks)
                k -= 1
                continue

            if applied[k] is not None:
                self._retract(k, *applied[k])
                applied[k] = None
            for bound, t in pending[k]:
                if self._admit(k, bound, t):
                    applied[k] = bound, t
                    break
            else:
                self._leave(k)
                k -= 1
                continue

            k += 1
            self._tick(deadline)
            if k < n:
                self._enter(k)
                pending[k] = iter(self._choices[k])

    def solve(self):
        """Run the search.

        Returns
        -------
        assignment : Assignment
            The best assignment.

        Raises
        ------
        InfeasibleError
            Raised when no assignment satisfies every power row.
        """
        self._prepare()
        deadline = (
            None
            if self.time_limit is None else
            time.monotonic() + self.time_limit
        )

        optimal = True
        try:
            self._search(deadline)
        except _SearchTimeout:
            optimal = False
            log.info(
                'time limit of %ss reached after %d search nodes',
                self.time_limit,
                self.nodes_explored,
            )

        if self._best_picks is None:
            if not optimal:
                raise InfeasibleError(
                    f'time limit of {self.time_limit}s reached before a'
                    f' feasible assignment was found',
                )
            raise InfeasibleError(
                'no assignment satisfies every depth level power row',
            )

        return Assignment(
            dict(zip(self._jobs, self._best_picks)),
            Fraction(self._best, self._scale),
            optimal,
            self.nodes_explored,
        )


class MakespanSearch(BranchAndBound):
    """Branch and bound for the dependency aware makespan.

    The variables and power rows are those of the instance, but the
    objective is the length of the longest execution path rather than the
    busiest node's time. The variable order is topological, so the finish
    time of every assigned job is exact; a partial assignment is pruned when
    some assigned job's finish time plus the fastest path after it is no
    better than the incumbent.

    Parameters
    ----------
    instance : IlpInstance
        The instance to solve.
    time_limit : float, optional
        The wall clock budget in seconds.
    seed : mapping[JobId, int], optional
        A starting incumbent. It is used only when every bound is a candidate
        of its job and it meets every power row; ties with it are kept.
    """
    def __init__(self, instance, *, time_limit=None, seed=None):
        super().__init__(instance, time_limit=time_limit)
        self.seed = seed

    def _prepare(self):
        super()._prepare()
        graph = self.instance.graph
        jobs = self._jobs
        index = {job_id: ix for ix, job_id in enumerate(jobs)}
        self._preds = [
            [index[pred] for pred in graph.predecessors(job_id)]
            for job_id in jobs
        ]

        tail = [0] * len(jobs)
        for k in reversed(range(len(jobs))):
            tail[k] = max(
                (
                    self._fastest[index[succ]] + tail[index[succ]]
                    for succ in graph.successors(jobs[k])
                ),
                default=0,
            )
        self._tail = tail
        self._finish = [0] * len(jobs)
        self._lower = [0] * (len(jobs) + 1)
        self._seed_incumbent()

    def _seed_incumbent(self):
        if self.seed is None:
            return
        inst = self.instance
        picks = []
        for job_id in self._jobs:
            bound = self.seed.get(job_id)
            if bound not in inst.candidates[job_id]:
                log.debug('seed bound %r of %s is not a candidate', bound,
                          job_id)
                return
            picks.append(bound)

        totals = dict.fromkeys(inst.levels, 0)
        for levels, bound in zip(self._job_levels, picks):
            for level in levels:
                totals[level] += bound
        if any(total > self._cap for total in totals.values()):
            log.debug('seed assignment breaks a power row')
            return

        finish = []
        for k, (job_id, bound) in enumerate(zip(self._jobs, picks)):
            t = int(inst.times[job_id, bound] * self._scale)
            finish.append(
                max((finish[p] for p in self._preds[k]), default=0) + t,
            )
        self._best = max(finish, default=0)
        self._best_picks = picks

    def _enter(self, k):
        pass

    def _leave(self, k):
        pass

    def _commit(self, k, t):
        finish = max(
            (self._finish[p] for p in self._preds[k]),
            default=0,
        ) + t
        lower = max(self._lower[k], finish + self._tail[k])
        if self._best is not None and lower >= self._best:
            return False
        self._finish[k] = finish
        self._lower[k + 1] = lower
        return True

    def _uncommit(self, k, t):
        pass

    def _leaf(self):
        return max(self._finish, default=0)


def solve_branch_and_bound(instance, time_limit=None):
    """Solve an instance with :class:`BranchAndBound`.
    """
    return BranchAndBound(instance, time_limit=time_limit).solve()


ORACLE_LIMIT = 10 ** 7


def exhaustive_oracle(instance):
    """Solve an instance by enumerating every assignment.

    Assignments are visited in the same order :class:`BranchAndBound`
    searches, so both return the same assignment.

    Raises
    ------
    InstanceTooLarge
        Raised when there are more than ``ORACLE_LIMIT`` assignments.
    InfeasibleError
        Raised when no assignment satisfies every power row.
    """
    jobs = instance.jobs
    options = [tuple(reversed(instance.candidates[job_id])) for job_id in jobs]
    count = math.prod(len(o) for o in options)
    if count > ORACLE_LIMIT:
        raise InstanceTooLarge(
            f'{count} assignments exceed the oracle limit of {ORACLE_LIMIT}',
        )

    index = {job_id: ix for ix, job_id in enumerate(jobs)}
    levels = [
        [index[job_id] for job_id in level_jobs]
        for level_jobs in instance.levels.values()
    ]
    nodes = [
        [index[job_id] for job_id in instance.graph.node_jobs(node)]
        for node in instance.graph.nodes
    ]

    best = None
    best_picks = None
    for picks in itertools.product(*options):
        if any(sum(picks[ix] for ix in level) > instance.cluster_bound
               for level in levels):
            continue
        objective = max(
            sum(
                (instance.times[jobs[ix], picks[ix]] for ix in node),
                Fraction(0),
            )
            for node in nodes
        )
        if best is None or objective < best:
            best = objective
            best_picks = picks

    if best_picks is None:
        raise InfeasibleError(
            'no assignment satisfies every depth level power row',
        )
    return Assignment(dict(zip(jobs, best_picks)), best, True, count)


def solve(graph, power_table, cluster_bound, time_limit=None):
    """Find the optimal power bound assignment for a graph.

    Parameters
    ----------
    graph : DependencyGraph
        The graph.
    power_table : PowerTable
        The power table; each node's candidate bounds are its single core
        power draws.
    cluster_bound : int
        The cluster power bound in milliwatts.
    time_limit : float, optional
        The solver's wall clock budget in seconds.

    Returns
    -------
    assignment : Assignment
        The solved assignment.
    """
    instance = build_instance(
        graph,
        depth_ranges(graph),
        PowerBoundSet.from_table(power_table, graph.nodes),
        cluster_bound,
        power_table,
    )
    return solve_branch_and_bound(instance, time_limit)


def equal_share_seed(instance):
    """The assignment that gives every job its node's equal share.

    Each job gets the largest of its candidate bounds that fits in the
    nominal bound, which runs it at the same frequency the nominal bound
    does. Returns None when some job has no such candidate.
    """
    nominal = nominal_power_bound(
        instance.cluster_bound,
        len(instance.graph.nodes),
    )
    seed = {}
    for job_id in instance.jobs:
        candidates = instance.candidates[job_id]
        ix = bisect.bisect_right(candidates, nominal) - 1
        if ix < 0:
            return None
        seed[job_id] = candidates[ix]
    return seed


def solve_makespan(graph, power_table, cluster_bound, time_limit=None):
    """Find the bound assignment with the shortest dependency aware makespan.

    The assignment meets every power row of the ILP instance. The search
    starts from the equal share point, so the result is never slower than
    running every job at the nominal bound, even when the time limit cuts
    the search short.

    Parameters
    ----------
    graph : DependencyGraph
        The graph.
    power_table : PowerTable
        The power table.
    cluster_bound : int
        The cluster power bound in milliwatts.
    time_limit : float, optional
        The search's wall clock budget in seconds.

    Returns
    -------
    assignment : Assignment
        The assignment; its ``objective_time`` is the makespan.
    """
    instance = build_instance(
        graph,
        depth_ranges(graph),
        PowerBoundSet.from_table(power_table, graph.nodes),
        cluster_bound,
        power_table,
    )
    search = MakespanSearch(
        instance,
        time_limit=time_limit,
        seed=equal_share_seed(instance),
    )
    return search.solve()
