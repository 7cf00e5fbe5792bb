from contextlib import contextmanager

from .ilp import InfeasibleError, InstanceTooLarge
from .power import PowerBoundError


EXIT_SUCCESS = 0
EXIT_USAGE = 1
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3
EXIT_RUNTIME = 4


def maybe_show_progress(it, show_progress, **kwargs):
    """Optionally show a progress bar for the given iterator.

    Parameters
    ----------
    it : iterable
        The underlying iterator.
    show_progress : bool
        Should progress be shown.
    **kwargs
        Forwarded to the click progress bar.

    Returns
    -------
    itercontext : context manager
        A context manager whose enter is the actual iterator to use.

    Examples
    --------
    .. code-block:: python

       with maybe_show_progress([1, 2, 3], True) as ns:
            for n in ns:
                ...
    """
    if show_progress:
        try:
            import click
        except ImportError as e:
            raise ImportError(
                "click must be installed to show a progressbar"
            ) from e
        return click.progressbar(it, **kwargs)

    @contextmanager
    def ctx():
        yield it

    return ctx()


def parse_config(data, commands=()):
    """Parse a ``key=value`` configuration file into a click default map.

    Blank lines and ``#`` comments are ignored and dashes in keys are read as
    underscores. A plain key supplies a default to every command in
    ``commands``; a key written ``command.key`` supplies it to one command
    only and wins over the plain key.

    Parameters
    ----------
    data : str
        The file's text.
    commands : iterable[str], optional
        The names of the subcommands.

    Returns
    -------
    default_map : dict[str, dict[str, str]]
        The defaults of each command.

    Raises
    ------
    ValueError
        Raised when a line is not ``key=value``.
    """
    shared = {}
    scoped = {}
    for lineno, line in enumerate(data.splitlines(), start=1):
        line = line.partition('#')[0].strip()
        if not line:
            continue
        key, sep, value = line.partition('=')
        key = key.strip().replace('-', '_')
        if not sep or not key:
            raise ValueError(
                f'line {lineno}: expected key=value, got {line!r}',
            )
        command, dot, name = key.rpartition('.')
        if dot:
            scoped.setdefault(command.replace('_', '-'), {})[name] = (
                value.strip()
            )
        else:
            shared[name] = value.strip()

    default_map = {command: dict(shared) for command in commands}
    for command, values in scoped.items():
        default_map.setdefault(command, dict(shared)).update(values)
    return default_map


def exit_code_for(exc):
    """The exit code for a domain error.

    Parameters
    ----------
    exc : Exception
        The error.

    Returns
    -------
    code : int or None
        ``3`` for infeasible power bounds, ``2`` for malformed or invalid
        input, ``4`` for runtime and network failures, or ``None`` when the
        error is not a domain error.
    """
    if isinstance(exc, (InfeasibleError, PowerBoundError)):
        return EXIT_INFEASIBLE
    if isinstance(exc, InstanceTooLarge):
        return EXIT_RUNTIME
    if isinstance(exc, (ValueError, KeyError)):
        return EXIT_INVALID
    if isinstance(exc, OSError):
        return EXIT_RUNTIME
    return None

