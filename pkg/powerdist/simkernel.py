from collections import namedtuple
import csv
from fractions import Fraction
import heapq
import io
import logging

import numpy as np
from scipy.stats import spearmanr, truncnorm

from .cli import maybe_show_progress
from .heuristic import OnlineGraph, ReportMessage, power_gain
from .ilp import solve_makespan
from .mode import BudgetMode, SimMode
from .model import (
    constant_assignment,
    execution_time_at_frequency,
    nominal_power_bound,
)
from .utils import format_time


log = logging.getLogger(__name__)


class SimConfig:
    """The settings of one simulation.

    Parameters
    ----------
    cluster_bound : int
        The cluster power bound in milliwatts.
    mode : SimMode, optional
        The power distribution strategy.
    latency : Fraction, optional
        The time between a report reaching the controller and the resulting
        distribute messages reaching their nodes.
    transition_delay : Fraction, optional
        The extra time a node takes to switch frequency after a distribute
        message arrives.
    budget_mode : BudgetMode, optional
        How the controller computes the budget of blocked nodes.
    seed : int, optional
        The seed of any random draws made for this configuration.
    assignment : Assignment, optional
        The assignment to use in ILP mode. When not given, the assignment
        that meets every power row with the shortest makespan is searched
        for, starting from the equal share point.
    time_limit : float, optional
        The ILP solver's time budget in seconds.
    """
    DEFAULT_LATENCY = 0
    DEFAULT_TRANSITION_DELAY = 0
    DEFAULT_BUDGET_MODE = BudgetMode.safe
    DEFAULT_SEED = 0

    def __init__(self,
                 cluster_bound,
                 mode=SimMode.equal_share,
                 *,
                 latency=DEFAULT_LATENCY,
                 transition_delay=DEFAULT_TRANSITION_DELAY,
                 budget_mode=DEFAULT_BUDGET_MODE,
                 seed=DEFAULT_SEED,
                 assignment=None,
                 time_limit=None):
        if cluster_bound <= 0:
            raise ValueError(
                f'cluster bound must be positive, got {cluster_bound!r}',
            )
        latency = Fraction(latency)
        transition_delay = Fraction(transition_delay)
        if latency < 0:
            raise ValueError(f'latency must be >= 0, got {latency}')
        if transition_delay < 0:
            raise ValueError(
                f'transition delay must be >= 0, got {transition_delay}',
            )

        self.cluster_bound = cluster_bound
        self.mode = SimMode(mode)
        self.latency = latency
        self.transition_delay = transition_delay
        self.budget_mode = BudgetMode(budget_mode)
        self.seed = seed
        self.assignment = assignment
        self.time_limit = time_limit

    def __repr__(self):
        return (
            f'<{type(self).__qualname__}: {self.mode.label},'
            f' {self.cluster_bound} mW, latency={self.latency}>'
        )

    def replace(self, **kwargs):
        """Copy this configuration with some settings changed.
        """
        settings = {
            'mode': self.mode,
            'latency': self.latency,
            'transition_delay': self.transition_delay,
            'budget_mode': self.budget_mode,
            'seed': self.seed,
            'assignment': self.assignment,
            'time_limit': self.time_limit,
        }
        settings.update(kwargs)
        cluster_bound = settings.pop('cluster_bound', self.cluster_bound)
        return type(self)(cluster_bound, **settings)


JobRecord = namedtuple('JobRecord', 'start finish bound freq')
JobRecord.__doc__ = """\
When a job ran, and the bound and frequency it started with.
"""


Event = namedtuple('Event', 'time node job event bound freq')
Event.__doc__ = """\
One entry of a simulation's event log.

``event`` is one of ``start``, ``finish``, ``block``, ``unblock``, ``bound``
(frequency change of a running job) or ``done`` (the node ran its last job).
"""


Violation = namedtuple('Violation', 'start end peak_power')
Violation.__doc__ = """\
An interval during which the cluster drew more than its bound.
"""


class SimResult:
    """The outcome of a simulation.

    Parameters
    ----------
    mode : SimMode
        The strategy that was simulated.
    cluster_bound : int or None
        The cluster bound the run is checked against.
    jobs : dict[JobId, JobRecord]
        When each job ran.
    events : list[Event]
        The event log in time order.
    power_trace : list[(Fraction, int)]
        ``(time, power)`` steps: the cluster draws ``power`` milliwatts from
        ``time`` until the next step.
    """
    def __init__(self, mode, cluster_bound, jobs, events, power_trace):
        self.mode = mode
        self.cluster_bound = cluster_bound
        self.jobs = jobs
        self.events = events
        self.power_trace = power_trace
        self.makespan = max(record.finish for record in jobs.values())

    def __repr__(self):
        return (
            f'<{type(self).__qualname__}: {self.mode.label},'
            f' makespan={format_time(self.makespan)}>'
        )

    def _steps(self):
        """The trace steps clipped to ``[0, makespan]`` as
        ``(start, end, power)``.
        """
        steps = []
        points = self.power_trace
        for (start, power), (end, _) in zip(points, points[1:]):
            end = min(end, self.makespan)
            if start < end:
                steps.append((start, end, power))
        return steps

    @property
    def peak_power(self):
        return max(power for _, _, power in self._steps())

    @property
    def average_power(self):
        """The time weighted mean cluster draw over the run, in milliwatts.
        """
        steps = self._steps()
        durations = np.array([float(end - start) for start, end, _ in steps])
        powers = np.array([power for _, _, power in steps], dtype=float)
        return float(np.average(powers, weights=durations))

    @property
    def violations(self):
        """The intervals where the cluster drew more than its bound.
        """
        if self.cluster_bound is None:
            return []
        out = []
        for start, end, power in self._steps():
            if power <= self.cluster_bound:
                continue
            if out and out[-1].end == start:
                last = out.pop()
                out.append(
                    Violation(last.start, end, max(last.peak_power, power)),
                )
            else:
                out.append(Violation(start, end, power))
        return out

    def speedup(self, baseline):
        """The makespan of ``baseline`` divided by this run's makespan.
        """
        return baseline.makespan / self.makespan

    def events_csv(self):
        """The event log as CSV.

        Columns are ``time,node,job,event,bound_mw,freq_mhz``.
        """
        out = io.StringIO()
        writer = csv.writer(out, lineterminator='\n')
        writer.writerow(
            ['time', 'node', 'job', 'event', 'bound_mw', 'freq_mhz'],
        )
        for event in self.events:
            writer.writerow([
                format_time(event.time),
                event.node,
                '' if event.job is None else event.job,
                event.event,
                '' if event.bound is None else event.bound,
                '' if event.freq is None else event.freq,
            ])
        return out.getvalue()

    def summary(self, baseline=None):
        """A one line summary of the run.
        """
        parts = [
            f'mode={self.mode.label}',
            f'makespan={format_time(self.makespan)}',
            f'avg_power={self.average_power:.1f}',
            f'peak_power={self.peak_power}',
        ]
        if baseline is not None:
            parts.append(f'speedup={float(self.speedup(baseline)):.4f}')
        if self.violations:
            parts.append(f'violations={len(self.violations)}')
        return ' '.join(parts)


class _NodeRun:
    """The simulator's state of one node.
    """
    def __init__(self, node, jobs, bound):
        self.node = node
        self.jobs = jobs
        self.next = 0
        self.job = None
        self.progress = Fraction(0)
        self.rate = Fraction(0)
        self.freq = None
        self.bound = bound
        self.updated = Fraction(0)
        self.version = 0
        self.retime = False
        self.blockers = None
        self.done = False


_FINISH = 0
_DELIVER = 1


class Simulator:
    """Event driven execution of a dependency graph.

    Each node runs its jobs in order; a job starts once all of its
    dependencies have finished. A running job advances at the rate set by its
    node's frequency, so a frequency change mid-job re-times only the
    remaining work. Running nodes draw their single core table power; idle
    nodes draw their idle power.

    Parameters
    ----------
    graph : DependencyGraph
        The graph to run.
    power_table : PowerTable
        The power table.
    mode : SimMode
        The strategy label attached to the result.
    cluster_bound : int, optional
        The bound violations are checked against.
    assignment : mapping[JobId, int], optional
        A fixed bound per job. Used when there is no controller.
    controller : OnlineGraph, optional
        An online controller fed with block reports. Node bounds then follow
        its distribute messages.
    delay : Fraction, optional
        The time between a report and the resulting bound change.
    """
    def __init__(self,
                 graph,
                 power_table,
                 mode,
                 *,
                 cluster_bound=None,
                 assignment=None,
                 controller=None,
                 delay=0):
        if (assignment is None) == (controller is None):
            raise ValueError('pass exactly one of assignment or controller')

        self.graph = graph
        self.power_table = power_table
        self.mode = mode
        self.cluster_bound = cluster_bound
        self.assignment = assignment
        self.controller = controller
        self.delay = Fraction(delay)

        if controller is not None:
            for node in graph.nodes:
                controller.register(node)
            initial = controller.bounds()
        else:
            initial = {
                node: assignment[graph.node_jobs(node)[0]]
                for node in graph.nodes
            }
        self._nodes = {
            node: _NodeRun(node, graph.node_jobs(node), initial[node])
            for node in graph.nodes
        }
        self._queue = []
        self._counter = 0
        self._finish = {}
        self._records = {}
        self._events = []
        self._trace = []

    def _push(self, time, kind, payload):
        heapq.heappush(self._queue, (time, self._counter, kind, payload))
        self._counter += 1

    def _log(self, time, state, event, job=None):
        self._events.append(Event(
            time,
            state.node,
            job,
            event,
            state.bound,
            state.freq,
        ))

    def run(self):
        """Run the graph to completion.

        Returns
        -------
        result : SimResult
            The outcome.
        """
        self._process(Fraction(0), [])
        while self._queue:
            now = self._queue[0][0]
            batch = []
            while self._queue and self._queue[0][0] == now:
                batch.append(heapq.heappop(self._queue))
            self._process(now, batch)

        unfinished = set(self.graph.jobs) - set(self._finish)
        if unfinished:
            raise RuntimeError(
                f'simulation stalled with {len(unfinished)} unfinished jobs',
            )

        result = SimResult(
            self.mode,
            self.cluster_bound,
            self._records,
            self._events,
            self._trace,
        )
        log.debug(
            'simulated %s: makespan %s',
            self.mode.label,
            format_time(result.makespan),
        )
        return result

    def _process(self, now, batch):
        for state in self._nodes.values():
            if state.job is not None:
                state.progress += (now - state.updated) * state.rate
                state.updated = now

        deliveries = []
        for _, _, kind, payload in batch:
            if kind == _FINISH:
                node, version = payload
                state = self._nodes[node]
                if state.version == version and state.job is not None:
                    self._retire(now, state)
            else:
                deliveries.append(payload)

        for node, bound in deliveries:
            self._set_bound(self._nodes[node], bound)

        reports = []
        for node in sorted(self._nodes):
            self._advance(now, self._nodes[node], reports)

        if self.controller is not None:
            for report in reports:
                for message in self.controller.process_message(report):
                    if self.delay:
                        self._push(
                            now + self.delay,
                            _DELIVER,
                            (message.node, message.power_bound),
                        )
                    else:
                        self._set_bound(
                            self._nodes[message.node],
                            message.power_bound,
                        )

        for node in sorted(self._nodes):
            state = self._nodes[node]
            if state.job is not None and state.retime:
                self._retime(now, state)

        self._trace.append((now, self._power()))

    def _retire(self, now, state):
        job_id = state.job
        self._finish[job_id] = now
        start, _, bound, freq = self._records[job_id]
        self._records[job_id] = JobRecord(start, now, bound, freq)
        self._log(now, state, 'finish', job_id.index)
        state.job = None
        state.next += 1

    def _set_bound(self, state, bound):
        if bound != state.bound:
            state.bound = bound
            state.retime = True

    def _advance(self, now, state, reports):
        if state.job is not None:
            return

        if state.next == len(state.jobs):
            if not state.done:
                state.done = True
                self._log(now, state, 'done')
                if self.controller is not None:
                    reports.append(ReportMessage.blocked(
                        state.node,
                        (),
                        self._gain(state),
                    ))
            return

        job_id = state.jobs[state.next]
        unmet = [
            parent for parent in self.graph.predecessors(job_id)
            if parent not in self._finish
        ]
        if unmet:
            blockers = frozenset(parent.node for parent in unmet)
            if blockers != state.blockers:
                state.blockers = blockers
                self._log(now, state, 'block', job_id.index)
                if self.controller is not None:
                    reports.append(ReportMessage.blocked(
                        state.node,
                        blockers,
                        self._gain(state),
                    ))
            return

        if state.blockers is not None:
            state.blockers = None
            self._log(now, state, 'unblock', job_id.index)
            if self.controller is not None:
                reports.append(ReportMessage.running(state.node))

        if self.assignment is not None:
            state.bound = self.assignment[job_id]
        state.job = job_id
        state.progress = Fraction(0)
        state.updated = now
        state.freq = None
        state.retime = True
        self._records[job_id] = JobRecord(now, None, state.bound, None)

    def _gain(self, state):
        if state.freq is None:
            freq = self.power_table.frequency_for(state.node, state.bound)
        else:
            freq = state.freq
        return power_gain(self.power_table, state.node, 1, freq)

    def _retime(self, now, state):
        state.retime = False
        freq = self.power_table.frequency_for(state.node, state.bound)
        job_id = state.job
        starting = state.freq is None
        if freq == state.freq:
            return

        state.freq = freq
        duration = execution_time_at_frequency(
            self.graph[job_id],
            freq,
            self.power_table.max_frequency(state.node),
        )
        state.rate = 1 / duration
        state.version += 1
        self._push(
            now + (1 - state.progress) * duration,
            _FINISH,
            (state.node, state.version),
        )
        if starting:
            start, finish, bound, _ = self._records[job_id]
            self._records[job_id] = JobRecord(start, finish, state.bound, freq)
            self._log(now, state, 'start', job_id.index)
        else:
            self._log(now, state, 'bound', job_id.index)

    def _power(self):
        total = 0
        for node, state in self._nodes.items():
            if state.job is None:
                total += self.power_table.idle_power(node)
            else:
                total += self.power_table.power(node, state.freq)
        return total


def _check_feasible(graph, power_table, bound):
    for node in graph.nodes:
        power_table.frequency_for(node, bound)


def run_equal_share(graph, power_table, cluster_bound):
    """Run every job at the equal share of the cluster bound.

    Raises
    ------
    PowerBoundError
        Raised when the nominal bound admits no frequency on some node.
    """
    bound = nominal_power_bound(cluster_bound, graph.node_count)
    _check_feasible(graph, power_table, bound)
    return Simulator(
        graph,
        power_table,
        SimMode.equal_share,
        cluster_bound=cluster_bound,
        assignment=constant_assignment(graph, bound),
    ).run()


def run_with_assignment(graph,
                        power_table,
                        assignment,
                        cluster_bound=None,
                        *,
                        mode=SimMode.ilp):
    """Run every job at the bound it is assigned.

    Parameters
    ----------
    graph : DependencyGraph
        The graph.
    power_table : PowerTable
        The power table.
    assignment : mapping[JobId, int]
        The bound of every job.
    cluster_bound : int, optional
        The bound to record violations against.
    mode : SimMode, optional
        The label of the result.

    Raises
    ------
    KeyError
        Raised when a job has no bound.
    """
    missing = [
        job_id for job_id in sorted(graph.jobs) if job_id not in assignment
    ]
    if missing:
        raise KeyError(f'no bound assigned to {missing[0]}')
    return Simulator(
        graph,
        power_table,
        mode,
        cluster_bound=cluster_bound,
        assignment=assignment,
    ).run()


def run_heuristic(graph, power_table, config):
    """Run the graph under the online controller.

    Every node starts at the nominal bound. A node whose next job is waiting
    on other nodes reports itself blocked on those nodes and reports running
    again when the job can start; a node that ran its last job reports itself
    blocked on nobody. The controller's distribute messages take effect
    ``latency + transition_delay`` after the report.

    Raises
    ------
    PowerBoundError
        Raised when the nominal bound admits no frequency on some node.
    """
    controller = OnlineGraph.from_power_table(
        power_table,
        config.cluster_bound,
        graph.node_count,
        mode=config.budget_mode,
    )
    _check_feasible(graph, power_table, controller.nominal_bound)
    return Simulator(
        graph,
        power_table,
        SimMode.heuristic,
        cluster_bound=config.cluster_bound,
        controller=controller,
        delay=config.latency + config.transition_delay,
    ).run()


def run(graph, power_table, config):
    """Run one simulation in the mode named by ``config``.
    """
    if config.mode == SimMode.equal_share:
        return run_equal_share(graph, power_table, config.cluster_bound)
    if config.mode == SimMode.ilp:
        assignment = config.assignment
        if assignment is None:
            assignment = solve_makespan(
                graph,
                power_table,
                config.cluster_bound,
                time_limit=config.time_limit,
            )
        return run_with_assignment(
            graph,
            power_table,
            assignment,
            config.cluster_bound,
        )
    return run_heuristic(graph, power_table, config)


def compare_modes(graph, power_table, config, modes=tuple(SimMode)):
    """Run several modes on the same graph.

    Parameters
    ----------
    graph : DependencyGraph
        The graph.
    power_table : PowerTable
        The power table.
    config : SimConfig
        The shared settings; the mode is overridden.
    modes : iterable[SimMode], optional
        The modes to run.

    Returns
    -------
    results : dict[SimMode, SimResult]
        The result of each mode.
    """
    return {
        mode: run(graph, power_table, config.replace(mode=mode))
        for mode in modes
    }


StddevRow = namedtuple('StddevRow', 'stddev mode median_speedup')
PowerRow = namedtuple('PowerRow', 'power_mw mode speedup')


def draw_work(structure, power_table, cluster_bound, mean, stddev, rng):
    """Draw job work so nominal times follow a truncated normal.

    Times are drawn with the given mean and standard deviation and clamped
    below at a tenth of the mean, then converted to work at each node's
    nominal frequency.

    Returns
    -------
    work : dict[JobId, int]
        The work of every job.
    """
    mean = float(mean)
    stddev = float(stddev)
    jobs = sorted(structure.jobs)
    if stddev == 0:
        times = np.full(len(jobs), mean)
    else:
        low = 0.1 * mean
        times = truncnorm.rvs(
            (low - mean) / stddev,
            np.inf,
            loc=mean,
            scale=stddev,
            size=len(jobs),
            random_state=rng,
        )
    nominal = nominal_power_bound(cluster_bound, structure.node_count)
    return {
        job_id: max(
            int(round(t * power_table.frequency_for(job_id.node, nominal))),
            1,
        )
        for job_id, t in zip(jobs, times)
    }


def sweep_stddev(structure,
                 power_table,
                 config,
                 mean,
                 stddevs,
                 trials,
                 *,
                 show_progress=False):
    """Measure speedups over equal-share as job times grow more varied.

    Parameters
    ----------
    structure : DependencyGraph
        The graph whose structure is reused; its work values are replaced.
    power_table : PowerTable
        The power table.
    config : SimConfig
        The shared settings. ``config.seed`` seeds the draws.
    mean : Fraction
        The mean nominal job time.
    stddevs : iterable[Fraction]
        The standard deviations to sweep.
    trials : int
        The number of random graphs per standard deviation.
    show_progress : bool, optional
        Display a progress bar?

    Returns
    -------
    rows : list[StddevRow]
        The median speedup of each mode at each standard deviation.
    """
    if mean <= 0:
        raise ValueError(f'mean must be positive, got {mean!r}')
    rng = np.random.default_rng(config.seed)
    rows = []
    progress = maybe_show_progress(
        list(stddevs),
        show_progress,
        label='Sweeping standard deviations: ',
        item_show_func=lambda s: '' if s is None else format_time(s),
    )
    with progress as it:
        for stddev in it:
            speedups = {mode: [] for mode in SimMode}
            for _ in range(trials):
                graph = structure.with_work(draw_work(
                    structure,
                    power_table,
                    config.cluster_bound,
                    mean,
                    stddev,
                    rng,
                ))
                results = compare_modes(graph, power_table, config)
                baseline = results[SimMode.equal_share]
                for mode, result in results.items():
                    speedups[mode].append(float(result.speedup(baseline)))
            for mode in SimMode:
                rows.append(StddevRow(
                    stddev,
                    mode,
                    float(np.median(speedups[mode])),
                ))
            log.info(
                'stddev %s: %s',
                format_time(stddev),
                ', '.join(
                    f'{row.mode.label}={row.median_speedup:.3f}'
                    for row in rows[-len(SimMode):]
                ),
            )
    return rows


def sweep_power_bound(graph, power_table, config, bounds):
    """Measure speedups over equal-share as the cluster bound changes.

    Returns
    -------
    rows : list[PowerRow]
        The speedup of each mode at each bound.
    """
    rows = []
    for bound in bounds:
        results = compare_modes(
            graph,
            power_table,
            config.replace(cluster_bound=int(bound)),
        )
        baseline = results[SimMode.equal_share]
        for mode, result in results.items():
            rows.append(PowerRow(
                int(bound),
                mode,
                float(result.speedup(baseline)),
            ))
    return rows


def speedup_trend(rows, mode=SimMode.ilp):
    """The Spearman rank correlation between standard deviation and median
    speedup of one mode.

    Returns
    -------
    rho : float
        The correlation, ``nan`` when either series is constant.
    """
    selected = [row for row in rows if row.mode == mode]
    rho, _ = spearmanr(
        [float(row.stddev) for row in selected],
        [row.median_speedup for row in selected],
    )
    return float(rho)


def rows_csv(rows):
    """Sweep rows as CSV with a header row.
    """
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(rows[0]._fields if rows else [])
    for row in rows:
        writer.writerow([
            value.label if isinstance(value, SimMode) else
            format(value, '.6g') if isinstance(value, float) else
            format_time(value)
            for value in row
        ])
    return out.getvalue()
