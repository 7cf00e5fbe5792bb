import logging
from pathlib import Path
import sys

from .cli import EXIT_USAGE, exit_code_for, parse_config
from .depth import depth_csv, depth_ranges, depth_table
from .example_data.graphs import graph_path
from .example_data.power_tables import power_table_path
from .example_data.traces import trace_path
from .ilp import build_instance, solve_branch_and_bound
from .mode import BudgetMode, SimMode
from .model import DependencyGraph
from .netproto import (
    ControllerServer,
    detector_replay,
    parse_node_map,
    parse_trace,
    schedule_trace,
)
from .power import PowerBoundSet, PowerTable, minimum_cluster_bound
from .simkernel import (
    SimConfig,
    compare_modes,
    rows_csv,
    speedup_trend,
    sweep_power_bound,
    sweep_stddev,
)
from .utils import align_columns, format_time, parse_range, to_fraction

try:
    import click
except ImportError as e:
    raise ImportError(
        "click must be installed to use the powerdist cli",
    ) from e


log = logging.getLogger(__name__)


class DataFile(click.ParamType):
    """A path on disk or the name of a bundled example file.
    """
    def __init__(self, kind, bundled):
        self.name = kind
        self._bundled = bundled

    def convert(self, value, param, ctx):
        if isinstance(value, Path):
            return value
        path = Path(value)
        if path.is_file():
            return path
        try:
            return self._bundled(value)
        except ValueError:
            self.fail(
                f'{value!r} is neither a file nor a bundled {self.name}',
                param,
                ctx,
            )


class ExactNumber(click.ParamType):
    name = 'number'

    def convert(self, value, param, ctx):
        try:
            return to_fraction(value, param.name if param else 'value')
        except ValueError as e:
            self.fail(str(e), param, ctx)


class NumberRange(click.ParamType):
    name = 'range'

    def convert(self, value, param, ctx):
        if isinstance(value, list):
            return value
        try:
            values = parse_range(value)
        except ValueError as e:
            self.fail(str(e), param, ctx)
        if not values:
            self.fail(f'{value!r} is empty', param, ctx)
        return values


GRAPH = DataFile('graph', graph_path)
POWER_TABLE = DataFile('power table', power_table_path)
TRACE = DataFile('trace', trace_path)
NUMBER = ExactNumber()
RANGE = NumberRange()


class PowerdistGroup(click.Group):
    """A command group that exits with the code of the error that stopped it.

    Usage errors exit with 1; domain errors are printed and exit with the
    code :func:`powerdist.cli.exit_code_for` gives them.
    """
    def main(self, *args, standalone_mode=True, **kwargs):
        if not standalone_mode:
            return super().main(*args, standalone_mode=False, **kwargs)
        try:
            rv = super().main(*args, standalone_mode=False, **kwargs)
        except click.UsageError as e:
            e.show()
            sys.exit(EXIT_USAGE)
        except click.ClickException as e:
            e.show()
            sys.exit(e.exit_code)
        except click.Abort:
            click.echo('Aborted!', err=True)
            sys.exit(EXIT_USAGE)
        except Exception as e:
            code = exit_code_for(e)
            if code is None:
                raise
            log.debug('command failed', exc_info=True)
            click.echo(f'error: {e}', err=True)
            sys.exit(code)
        sys.exit(rv if isinstance(rv, int) else 0)


def _configure(ctx, verbose, config):
    if verbose:
        logging.basicConfig(
            level=logging.INFO if verbose == 1 else logging.DEBUG,
            format='%(levelname)s %(name)s: %(message)s',
            stream=sys.stderr,
        )
    if config is not None:
        with open(config, encoding='utf-8') as f:
            try:
                ctx.default_map = parse_config(f.read(), ctx.command.commands)
            except ValueError as e:
                raise click.BadParameter(str(e), param_hint="'--config'")


@click.group(cls=PowerdistGroup)
@click.option(
    '-v',
    '--verbose',
    count=True,
    help='Log more; repeat for debug output.',
)
@click.option(
    '--config',
    type=click.Path(exists=True, dir_okay=False),
    help='A key=value file supplying defaults for any option.',
)
@click.pass_context
def main(ctx, verbose, config):
    """Power-bounded scheduling of MPI job dependency graphs.
    """
    _configure(ctx, verbose, config)


graph_argument = click.argument('graph', type=GRAPH)
power_table_option = click.option(
    '--power-table',
    type=POWER_TABLE,
    default='synthetic',
    show_default=True,
    help='The power table CSV, or the name of a bundled table.',
)
power_option = click.option(
    '--power',
    type=click.IntRange(min=1),
    help=(
        'The cluster power bound in mW. Defaults to the smallest bound that'
        ' runs every node.'
    ),
)


def _load(graph, power_table, power):
    graph = DependencyGraph.from_path(graph)
    power_table = PowerTable.from_path(power_table)
    if power is None:
        power = minimum_cluster_bound(power_table, graph.node_count)
        log.info('using cluster bound %d mW', power)
    return graph, power_table, power


@main.command()
@graph_argument
def validate(graph):
    """Check a graph file and summarize it.
    """
    graph = DependencyGraph.from_path(graph)
    click.echo(f'{len(graph)} jobs, valid')
    click.echo(
        f'{len(graph.edges)} edges, {len(graph.cross_edges)} between nodes',
    )
    click.echo(f'initial jobs: {" ".join(map(str, graph.initial_jobs))}')
    click.echo(f'final jobs: {" ".join(map(str, graph.final_jobs))}')


@main.command()
@graph_argument
@click.option(
    '--csv/--text',
    'as_csv',
    default=False,
    help='Write CSV instead of aligned tables.',
)
def depths(graph, as_csv):
    """Print the max-depth and depth range of every job.
    """
    graph = DependencyGraph.from_path(graph)
    click.echo(depth_csv(graph) if as_csv else depth_table(graph), nl=False)


@main.command()
@graph_argument
@power_table_option
@power_option
@click.option(
    '--export',
    type=click.Path(dir_okay=False, allow_dash=True),
    help='Write the program in LP format to this path, - for stdout.',
)
@click.option(
    '--solve/--no-solve',
    default=None,
    help='Solve the program. The default unless --export is given.',
)
@click.option(
    '--time-limit',
    type=click.FloatRange(min=0),
    help='Stop the search after this many seconds.',
)
def ilp(graph, power_table, power, export, solve, time_limit):
    """Build and solve the power bound assignment program.
    """
    graph, power_table, power = _load(graph, power_table, power)
    instance = build_instance(
        graph,
        depth_ranges(graph),
        PowerBoundSet.from_table(power_table, graph.nodes),
        power,
        power_table,
    )
    if export is not None:
        with click.open_file(export, 'w') as f:
            f.write(instance.to_lp())
    if solve or (solve is None and export is None):
        assignment = solve_branch_and_bound(instance, time_limit)
        click.echo(assignment.to_csv(graph, power_table), nl=False)
        click.echo(
            f'objective t={format_time(assignment.objective_time)}'
            f' ({"optimal" if assignment.optimal else "best found"},'
            f' {assignment.nodes_explored} nodes explored)',
            err=True,
        )


def _results_rows(results, baseline):
    rows = [[
        'mode',
        'makespan',
        'speedup',
        'avg_power_mw',
        'peak_power_mw',
        'violations',
    ]]
    for mode, result in results.items():
        rows.append([
            mode.label,
            format_time(result.makespan),
            f'{float(result.speedup(baseline)):.4f}',
            f'{result.average_power:.1f}',
            str(result.peak_power),
            str(len(result.violations)),
        ])
    return rows


@main.command()
@graph_argument
@power_table_option
@power_option
@click.option(
    '--mode',
    type=click.Choice(['equal', 'ilp', 'heuristic', 'all']),
    default='all',
    show_default=True,
    help='The power distribution strategy to simulate.',
)
@click.option(
    '--latency',
    type=NUMBER,
    default=str(SimConfig.DEFAULT_LATENCY),
    show_default=True,
    help='Report to distribute delay of the controller.',
)
@click.option(
    '--transition-delay',
    type=NUMBER,
    default=str(SimConfig.DEFAULT_TRANSITION_DELAY),
    show_default=True,
    help='Extra delay before a new frequency takes effect.',
)
@click.option(
    '--budget',
    type=click.Choice([mode.name for mode in BudgetMode]),
    default=SimConfig.DEFAULT_BUDGET_MODE.name,
    show_default=True,
    help=(
        'How the controller credits blocked nodes: each frees the nominal'
        ' bound less its idle power, or the gain it reports.'
    ),
)
@click.option(
    '--time-limit',
    type=click.FloatRange(min=0),
    help='Time budget of the ILP search in seconds.',
)
@click.option(
    '--events',
    type=click.Path(dir_okay=False, allow_dash=True),
    help='Write the event log CSV of a single mode run here.',
)
@click.option(
    '--csv/--text',
    'as_csv',
    default=False,
    help='Write CSV instead of an aligned table.',
)
def simulate(graph,
             power_table,
             power,
             mode,
             latency,
             transition_delay,
             budget,
             time_limit,
             events,
             as_csv):
    """Simulate a graph under a cluster power bound.

    Speedups are relative to running every node at an equal share of the
    bound.
    """
    if events is not None and mode == 'all':
        raise click.UsageError('--events needs a single --mode')

    graph, power_table, power = _load(graph, power_table, power)
    config = SimConfig(
        power,
        latency=latency,
        transition_delay=transition_delay,
        budget_mode=BudgetMode[budget],
        time_limit=time_limit,
    )
    modes = list(SimMode) if mode == 'all' else [SimMode.parse(mode)]
    results = compare_modes(
        graph,
        power_table,
        config,
        modes=sorted({SimMode.equal_share, *modes}),
    )
    baseline = results[SimMode.equal_share]
    shown = {m: results[m] for m in modes}

    rows = _results_rows(shown, baseline)
    if as_csv:
        click.echo('\n'.join(','.join(row) for row in rows))
    else:
        click.echo(f'cluster bound {power} mW')
        click.echo(align_columns(rows))

    if events is not None:
        with click.open_file(events, 'w') as f:
            f.write(shown[modes[0]].events_csv())


@main.command()
@graph_argument
@power_table_option
@power_option
@click.option(
    '--over',
    type=click.Choice(['stddev', 'power']),
    default='stddev',
    show_default=True,
    help='What to vary.',
)
@click.option(
    '--stddevs',
    type=RANGE,
    default='0..6',
    show_default=True,
    help='Standard deviations of job time, e.g. 0..6 or 0,1.5,3.',
)
@click.option(
    '--mean',
    type=NUMBER,
    default='10',
    show_default=True,
    help='Mean job time at the nominal bound.',
)
@click.option(
    '--trials',
    type=click.IntRange(min=1),
    default=20,
    show_default=True,
    help='Random graphs per standard deviation.',
)
@click.option(
    '--seed',
    type=int,
    default=SimConfig.DEFAULT_SEED,
    show_default=True,
    help='Seed of the job time draws.',
)
@click.option(
    '--bounds',
    type=RANGE,
    help='Cluster bounds in mW for --over power, e.g. 6000..12000:1500.',
)
@click.option(
    '--progress/--no-progress',
    default=False,
    help='Show a progress bar?',
)
def sweep(graph,
          power_table,
          power,
          over,
          stddevs,
          mean,
          trials,
          seed,
          bounds,
          progress):
    """Measure speedups over equal share across a parameter sweep.
    """
    graph, power_table, power = _load(graph, power_table, power)
    config = SimConfig(power, seed=seed)
    if over == 'power':
        if bounds is None:
            raise click.UsageError('--over power needs --bounds')
        rows = sweep_power_bound(graph, power_table, config, bounds)
    else:
        rows = sweep_stddev(
            graph,
            power_table,
            config,
            mean,
            stddevs,
            trials,
            show_progress=progress,
        )
        if len(stddevs) > 1:
            log.info(
                'spearman rho of ilp speedup against stddev: %.3f',
                speedup_trend(rows),
            )
    click.echo(rows_csv(rows), nl=False)


@main.command()
@power_table_option
@click.option(
    '--power',
    type=click.IntRange(min=1),
    required=True,
    help='The cluster power bound in mW.',
)
@click.option(
    '--nodes',
    type=click.IntRange(min=1),
    required=True,
    help='The number of nodes.',
)
@click.option('--host', default='127.0.0.1', show_default=True)
@click.option('--port', type=click.IntRange(0, 65535), default=9750)
@click.option(
    '--node-map',
    type=click.Path(exists=True, dir_okay=False),
    help='A file of "node host:port" lines fixing node addresses.',
)
@click.option(
    '--status',
    type=click.Path(dir_okay=False),
    help='A file rewritten with the controller state after each report.',
)
@click.option(
    '--budget',
    type=click.Choice([mode.name for mode in BudgetMode]),
    default=BudgetMode.safe.name,
    show_default=True,
)
def serve(power_table, power, nodes, host, port, node_map, status, budget):
    """Run the power distribution controller over UDP.
    """
    power_table = PowerTable.from_path(power_table)
    addresses = None
    if node_map is not None:
        with open(node_map, encoding='utf-8') as f:
            addresses = parse_node_map(f.read())

    with ControllerServer(
        (host, port),
        power,
        nodes,
        power_table,
        mode=BudgetMode[budget],
        node_map=addresses,
        status_path=status,
    ) as server:
        click.echo(
            'controller listening on %s:%d' % server.server_address[:2],
            err=True,
        )
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass


@main.command()
@click.argument('trace', type=TRACE)
@power_table_option
@click.option(
    '--nodes',
    type=click.IntRange(min=1),
    default=3,
    show_default=True,
    help='The number of nodes, used to deduce blockers of MPI calls.',
)
@click.option('--host', default='127.0.0.1', show_default=True)
@click.option('--port', type=click.IntRange(0, 65535), default=9750)
@click.option(
    '--timeout',
    type=NUMBER,
    help='Breakeven timeout in seconds. Measured with pings when not given.',
)
@click.option(
    '--speed',
    type=click.FloatRange(min=0),
    default=1.0,
    show_default=True,
    help='Wall clock seconds per trace second; 0 sends at once.',
)
@click.option(
    '--dry-run',
    is_flag=True,
    help='Print the send schedule without contacting a controller.',
)
def replay(trace, power_table, nodes, host, port, timeout, speed, dry_run):
    """Replay a block detector trace against a controller.
    """
    with open(trace, encoding='utf-8') as f:
        rows = parse_trace(f.read(), nodes)

    if dry_run:
        schedule = schedule_trace(rows, timeout or 0)
        click.echo('send_time,node,state,blockers,gain_mw')
        for when, report in schedule:
            click.echo(','.join([
                format_time(when),
                str(report.node),
                report.state.name,
                ';'.join(map(str, sorted(report.blockers))),
                str(report.power_gain),
            ]))
        return

    result = detector_replay(
        rows,
        (host, port),
        PowerTable.from_path(power_table),
        timeout=None if timeout is None else float(timeout),
        speed=speed,
    )
    click.echo(
        f'sent {len(result.schedule)} of {len(rows)} reports',
        err=True,
    )
    click.echo('node,bound_mw,freq_mhz')
    for message, freq in result.distributes:
        click.echo(
            f'{message.node},{message.power_bound},'
            f'{"" if freq is None else freq}',
        )


if __name__ == '__main__':
    main()
