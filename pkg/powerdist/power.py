import bisect
import csv
import io

from .utils import lazyval


class PowerTableError(ValueError):
    """Raised when a power table is malformed or inconsistent.
    """


class PowerBoundError(ValueError):
    """Raised when a power bound is below a node's minimum operating power.
    """


class NodePowerTable:
    """The power draw of a single node.

    Parameters
    ----------
    idle_power : int
        The power drawn by the node while idle, in milliwatts.
    entries : dict[(int, int), int]
        Map from ``(active_cores, freq_mhz)`` to the power drawn in
        milliwatts (``p_{m,f}``).

    Raises
    ------
    PowerTableError
        Raised when the table has no single core entries, a frequency is not
        positive, power does not strictly increase with frequency for a fixed
        core count, or the idle power is not below every entry.
    """
    def __init__(self, idle_power, entries):
        self.idle_power = idle_power
        self.entries = entries = dict(entries)

        if not any(cores == 1 for cores, _ in entries):
            raise PowerTableError('no single core entries')

        by_cores = {}
        for (cores, freq), power in entries.items():
            if cores < 1:
                raise PowerTableError(f'cores should be >= 1, got {cores!r}')
            if freq <= 0:
                raise PowerTableError(
                    f'frequency should be positive, got {freq!r}',
                )
            if power <= idle_power:
                raise PowerTableError(
                    f'idle power {idle_power} mW is not below the entry'
                    f' ({cores} cores, {freq} MHz, {power} mW)',
                )
            by_cores.setdefault(cores, []).append((freq, power))

        for cores, points in by_cores.items():
            points.sort()
            for (f0, p0), (f1, p1) in zip(points, points[1:]):
                if p1 <= p0:
                    raise PowerTableError(
                        f'power must increase with frequency at {cores}'
                        f' cores: {f0} MHz draws {p0} mW but {f1} MHz draws'
                        f' {p1} mW',
                    )

    def __repr__(self):
        return (
            f'<{type(self).__qualname__}: idle={self.idle_power}mW,'
            f' frequencies={list(self.frequencies)}>'
        )

    def __eq__(self, other):
        if not isinstance(other, NodePowerTable):
            return NotImplemented
        return (
            self.idle_power == other.idle_power and
            self.entries == other.entries
        )

    @lazyval
    def frequencies(self):
        """The available frequencies at one active core, ascending.
        """
        return tuple(sorted(
            freq for cores, freq in self.entries if cores == 1
        ))

    @lazyval
    def _single_core_powers(self):
        return tuple(self.entries[1, freq] for freq in self.frequencies)

    @property
    def max_frequency(self):
        return self.frequencies[-1]

    @property
    def min_operating_power(self):
        """The power drawn at the lowest frequency with one active core.
        """
        return self._single_core_powers[0]

    def power(self, freq, cores=1):
        """Look up ``p_{m,f}``.

        Raises
        ------
        PowerTableError
            Raised when the table has no entry for ``(cores, freq)``.
        """
        try:
            return self.entries[cores, freq]
        except KeyError:
            raise PowerTableError(
                f'no entry for {cores} cores at {freq} MHz',
            )

    def frequency_for(self, bound):
        """The highest frequency whose single core power fits in ``bound``.

        Parameters
        ----------
        bound : int
            The power bound in milliwatts.

        Returns
        -------
        freq : int
            The frequency in MHz.

        Raises
        ------
        PowerBoundError
            Raised when even the lowest frequency draws more than ``bound``.
        """
        ix = bisect.bisect_right(self._single_core_powers, bound) - 1
        if ix < 0:
            raise PowerBoundError(
                f'power bound {bound} mW is below the minimum operating power'
                f' {self.min_operating_power} mW',
            )
        return self.frequencies[ix]

    def bounds(self):
        """The candidate per-job power bounds: one per frequency at one core.
        """
        return self._single_core_powers


class PowerTable:
    """Per node lookup tables from CPU frequency to power draw.

    Parameters
    ----------
    nodes : dict[int, NodePowerTable]
        The tables for specific nodes.
    default : NodePowerTable, optional
        The table used for nodes without an explicit entry. This is written as
        the ``*`` node in the CSV format.

    Notes
    -----
    The CSV format has the header ``node,cores,freq_mhz,power_mw``. Idle power
    is given by a row of the form ``node,idle,,power_mw``.
    """
    header = ('node', 'cores', 'freq_mhz', 'power_mw')
    wildcard = '*'

    def __init__(self, nodes, default=None):
        self.nodes = dict(nodes)
        self.default = default

    def __repr__(self):
        nodes = sorted(self.nodes)
        if self.default is not None:
            nodes.insert(0, self.wildcard)
        return f'<{type(self).__qualname__}: nodes={nodes}>'

    def __eq__(self, other):
        if not isinstance(other, PowerTable):
            return NotImplemented
        return self.nodes == other.nodes and self.default == other.default

    def node(self, node_id):
        """The table for one node.

        Raises
        ------
        KeyError
            Raised when there is neither an explicit nor a default table.
        """
        try:
            return self.nodes[node_id]
        except KeyError:
            if self.default is None:
                raise KeyError(f'no power table for node {node_id}')
            return self.default

    def power(self, node_id, freq, cores=1):
        return self.node(node_id).power(freq, cores)

    def idle_power(self, node_id):
        return self.node(node_id).idle_power

    def frequencies(self, node_id):
        return self.node(node_id).frequencies

    def max_frequency(self, node_id):
        return self.node(node_id).max_frequency

    def min_operating_power(self, node_id):
        return self.node(node_id).min_operating_power

    def frequency_for(self, node_id, bound):
        """The highest frequency of ``node_id`` that fits in ``bound``.

        See Also
        --------
        :meth:`powerdist.power.NodePowerTable.frequency_for`
        """
        return self.node(node_id).frequency_for(bound)

    @classmethod
    def from_path(cls, path):
        """Read a power table from a CSV file on disk.

        Parameters
        ----------
        path : str or pathlib.Path
            The path to the file to read from.
        """
        with open(path, encoding='utf-8') as f:
            return cls.from_file(f)

    @classmethod
    def from_file(cls, file):
        """Read a power table from an open text file.
        """
        return cls.parse(file.read())

    @classmethod
    def parse(cls, data):
        """Parse a power table from CSV text.

        Parameters
        ----------
        data : str
            The CSV text.

        Returns
        -------
        power_table : PowerTable
            The parsed table.

        Raises
        ------
        PowerTableError
            Raised when the text is not a valid power table.
        """
        rows = csv.reader(io.StringIO(data))
        header = None
        idle = {}
        entries = {}
        for lineno, row in enumerate(rows, start=1):
            row = [cell.strip() for cell in row]
            if not any(row) or row[0].startswith('#'):
                continue
            if header is None:
                header = tuple(cell.lower() for cell in row)
                if header != cls.header:
                    raise PowerTableError(
                        f'line {lineno}: expected header'
                        f' {",".join(cls.header)!r}, got {",".join(row)!r}',
                    )
                continue

            if len(row) != 4:
                raise PowerTableError(
                    f'line {lineno}: expected 4 columns, got {len(row)}',
                )
            raw_node, raw_cores, raw_freq, raw_power = row
            node = cls._parse_node(raw_node, lineno)
            power = _parse_int(raw_power, 'power_mw', lineno)

            if raw_cores.lower() == 'idle':
                if raw_freq:
                    raise PowerTableError(
                        f'line {lineno}: idle rows take no frequency,'
                        f' got {raw_freq!r}',
                    )
                if node in idle:
                    raise PowerTableError(
                        f'line {lineno}: duplicate idle power for node'
                        f' {raw_node}',
                    )
                idle[node] = power
                continue

            cores = _parse_int(raw_cores, 'cores', lineno)
            freq = _parse_int(raw_freq, 'freq_mhz', lineno)
            node_entries = entries.setdefault(node, {})
            if (cores, freq) in node_entries:
                raise PowerTableError(
                    f'line {lineno}: duplicate entry for node {raw_node} at'
                    f' {cores} cores, {freq} MHz',
                )
            node_entries[cores, freq] = power

        if header is None:
            raise PowerTableError('empty power table')

        tables = {}
        for node in sorted(set(idle) | set(entries), key=str):
            name = 'default' if node == cls.wildcard else f'node {node}'
            if node not in idle:
                raise PowerTableError(f'missing idle power for {name}')
            if node not in entries:
                raise PowerTableError(f'missing frequency entries for {name}')
            try:
                tables[node] = NodePowerTable(idle[node], entries[node])
            except PowerTableError as e:
                raise PowerTableError(f'{name}: {e}') from e

        default = tables.pop(cls.wildcard, None)
        return cls(tables, default=default)

    @classmethod
    def _parse_node(cls, raw, lineno):
        if raw == cls.wildcard:
            return cls.wildcard
        node = _parse_int(raw, 'node', lineno)
        if node < 1:
            raise PowerTableError(
                f'line {lineno}: node ids start at 1, got {node}',
            )
        return node

    def pack(self):
        """The CSV text of this table.

        Returns
        -------
        packed_str : str
            Text that :meth:`parse` reads back to an equal table.
        """
        out = io.StringIO()
        writer = csv.writer(out, lineterminator='\n')
        writer.writerow(self.header)

        tables = [(self.wildcard, self.default)] if self.default else []
        tables.extend(sorted(self.nodes.items()))
        for node, table in tables:
            writer.writerow([node, 'idle', '', table.idle_power])
            for (cores, freq), power in sorted(table.entries.items()):
                writer.writerow([node, cores, freq, power])

        return out.getvalue()


def _parse_int(raw, field, lineno):
    try:
        return int(raw)
    except ValueError:
        raise PowerTableError(
            f'line {lineno}: {field} should be an int, got {raw!r}',
        )


class PowerBoundSet:
    """The finite set of candidate power bounds for the jobs of each node.

    Parameters
    ----------
    bounds : dict[int, iterable[int]]
        Map from node id to candidate bounds in milliwatts.

    Raises
    ------
    ValueError
        Raised when a node has no candidate bounds.
    """
    def __init__(self, bounds):
        self._bounds = {}
        for node, node_bounds in bounds.items():
            node_bounds = tuple(sorted(set(node_bounds)))
            if not node_bounds:
                raise ValueError(f'node {node} has no candidate power bounds')
            self._bounds[node] = node_bounds

    def __repr__(self):
        return f'<{type(self).__qualname__}: {self._bounds}>'

    def __getitem__(self, node_id):
        return self._bounds[node_id]

    def __iter__(self):
        return iter(sorted(self._bounds))

    def __len__(self):
        return len(self._bounds)

    def min_bound(self, node_id):
        return self._bounds[node_id][0]

    def max_bound(self, node_id):
        return self._bounds[node_id][-1]

    @classmethod
    def from_table(cls, power_table, nodes):
        """Build the candidate bounds from a power table.

        Each node gets one bound per supported frequency: the power drawn at
        that frequency with one active core.

        Parameters
        ----------
        power_table : PowerTable
            The power table.
        nodes : iterable[int]
            The node ids to include.
        """
        return cls({
            node: power_table.node(node).bounds()
            for node in nodes
        })


def minimum_cluster_bound(power_table, node_count):
    """The smallest cluster power bound whose nominal share runs every node.

    Parameters
    ----------
    power_table : PowerTable
        The power table.
    node_count : int
        The number of nodes, ids ``1..node_count``.

    Returns
    -------
    cluster_bound : int
        ``node_count`` times the largest minimum operating power.
    """
    return node_count * max(
        power_table.min_operating_power(node)
        for node in range(1, node_count + 1)
    )
