from collections import namedtuple
from collections.abc import Mapping

from .mode import BudgetMode, NodeState
from .model import nominal_power_bound


_ReportMessage = namedtuple('ReportMessage', 'state node blockers power_gain')


class ReportMessage(_ReportMessage):
    """A block detector's report.

    Parameters
    ----------
    state : NodeState
        Whether the node is running or blocked.
    node : int
        The reporting node.
    blockers : frozenset[int]
        The nodes the reporter waits on. Empty when running.
    power_gain : int
        The power the reporter frees by blocking, in milliwatts. Zero when
        running.
    """
    def __new__(cls, state, node, blockers=(), power_gain=0):
        state = NodeState(state)
        blockers = frozenset(blockers)
        if state == NodeState.running and (blockers or power_gain):
            raise ValueError(
                f'a running report carries no blockers or gain, got'
                f' blockers={sorted(blockers)} power_gain={power_gain!r}',
            )
        if power_gain < 0:
            raise ValueError(
                f'power_gain must be non-negative, got {power_gain!r}',
            )
        return super().__new__(cls, state, node, blockers, power_gain)

    @classmethod
    def running(cls, node):
        return cls(NodeState.running, node)

    @classmethod
    def blocked(cls, node, blockers, power_gain):
        return cls(NodeState.blocked, node, blockers, power_gain)


class DistributeMessage(namedtuple('DistributeMessage', 'node power_bound')):
    """A controller's instruction: run ``node`` under
    ``power_bound`` milliwatts.
    """


def power_gain(power_table, node, cores, freq):
    """The power a node frees when it blocks.

    Parameters
    ----------
    power_table : PowerTable
        The power table.
    node : int
        The blocking node.
    cores : int
        The number of active cores before blocking.
    freq : int
        The frequency the node runs at.

    Returns
    -------
    gain : int
        The power at ``cores - 1`` active cores and ``freq`` less the idle
        power, or the single core power less the idle power with one active
        core.

    Raises
    ------
    PowerTableError
        Raised when the table has no entry for the looked up point.
    """
    idle = power_table.idle_power(node)
    return power_table.power(node, freq, max(cores - 1, 1)) - idle


class OnlineNode:
    """A vertex of the online dependency graph.

    Parameters
    ----------
    node_id : int
        The node.
    bound : int
        The power bound most recently distributed to the node.
    """
    def __init__(self, node_id, bound):
        self.node_id = node_id
        self.state = NodeState.running
        self.power_gain = 0
        self.rank = 0
        self.bound = bound

    def __repr__(self):
        return (
            f'<{type(self).__qualname__}: {self.node_id} {self.state.name},'
            f' bound={self.bound}, rank={self.rank}>'
        )


class OnlineGraph:
    """The controller's view of which nodes block which.

    Each blocked node has an edge to every node it waits on. The power freed
    by blocked nodes is handed to the running nodes in proportion to how many
    nodes each one blocks.

    Parameters
    ----------
    cluster_bound : int
        The cluster power bound in milliwatts.
    node_count : int
        The number of nodes; node ids are ``1..n``.
    idle_power : int or mapping[int, int]
        The idle power of every node, or of each node.
    mode : BudgetMode, optional
        How the budget of blocked nodes is computed.
    """
    DEFAULT_MODE = BudgetMode.safe

    def __init__(self,
                 cluster_bound,
                 node_count,
                 idle_power,
                 *,
                 mode=DEFAULT_MODE):
        self.cluster_bound = cluster_bound
        self.node_count = node_count
        self.nominal_bound = nominal_power_bound(cluster_bound, node_count)
        if isinstance(idle_power, Mapping):
            self._idle_power = dict(idle_power)
        else:
            self._idle_power = dict.fromkeys(
                range(1, node_count + 1),
                idle_power,
            )
        self.mode = BudgetMode(mode)

        self.vertices = {}
        self.edges = set()
        self.budget = 0
        self.total_rank = 0

    @classmethod
    def from_power_table(cls,
                         power_table,
                         cluster_bound,
                         node_count,
                         *,
                         mode=DEFAULT_MODE):
        """Build a graph with idle powers read from a power table.
        """
        return cls(
            cluster_bound,
            node_count,
            {
                node: power_table.idle_power(node)
                for node in range(1, node_count + 1)
            },
            mode=mode,
        )

    def __repr__(self):
        return (
            f'<{type(self).__qualname__}: {len(self.vertices)} nodes,'
            f' {len(self.edges)} edges, budget={self.budget}mW>'
        )

    def _check_node(self, node, role):
        if not 1 <= node <= self.node_count:
            raise ValueError(
                f'{role} {node!r} is outside 1..{self.node_count}',
            )

    def register(self, node):
        """Add ``node`` as a running vertex at the nominal bound.

        Returns
        -------
        vertex : OnlineNode
            The new or existing vertex.
        """
        self._check_node(node, 'node')
        try:
            return self.vertices[node]
        except KeyError:
            vertex = OnlineNode(node, self.nominal_bound)
            self.vertices[node] = vertex
            return vertex

    def process_message(self, report):
        """Apply a report and redistribute power.

        Parameters
        ----------
        report : ReportMessage
            The report.

        Returns
        -------
        messages : list[DistributeMessage]
            The new bounds of every running node whose bound changed, in
            ascending node order.

        Raises
        ------
        ValueError
            Raised when the reporter or a blocker is outside ``1..n`` or a
            node reports itself as a blocker.
        """
        node = report.node
        self._check_node(node, 'node')
        for blocker in report.blockers:
            self._check_node(blocker, 'blocker')
        if node in report.blockers:
            raise ValueError(f'node {node} cannot block itself')

        vertex = self.register(node)
        vertex.state = report.state
        vertex.power_gain = report.power_gain

        self.edges = {edge for edge in self.edges if edge[0] != node}
        if report.state == NodeState.blocked:
            for blocker in sorted(report.blockers):
                self.register(blocker)
                self.edges.add((node, blocker))

        self.budget = self.compute_budget()
        self.total_rank = self.rank_graph()
        return self.distribute_power(self.budget, self.total_rank)

    def compute_budget(self):
        """The power freed by blocked nodes.

        In safe mode each blocked node frees the nominal bound less its idle
        power; otherwise each frees its reported gain.
        """
        blocked = [
            vertex for vertex in self.vertices.values()
            if vertex.state == NodeState.blocked
        ]
        if self.mode == BudgetMode.safe:
            return sum(
                max(self.nominal_bound - self._idle_power[v.node_id], 0)
                for v in blocked
            )
        return sum(v.power_gain for v in blocked)

    def rank_graph(self):
        """Rank the running nodes by how many nodes wait on them.

        Returns
        -------
        total_rank : int
            The sum of all ranks.
        """
        in_degree = {}
        for _, blocker in self.edges:
            in_degree[blocker] = in_degree.get(blocker, 0) + 1

        total = 0
        for node, vertex in self.vertices.items():
            if vertex.state == NodeState.running:
                vertex.rank = in_degree.get(node, 0)
                total += vertex.rank
            else:
                vertex.rank = 0
        return total

    def distribute_power(self, budget, total_rank):
        """Compute new bounds for the running nodes.

        Each running node gets the nominal bound plus its rank's share of the
        budget, capped at the cluster bound. When no running node blocks anyone
        the budget is split equally among the running nodes.

        Returns
        -------
        messages : list[DistributeMessage]
            One message per running node whose bound changed.
        """
        running = [
            self.vertices[node] for node in sorted(self.vertices)
            if self.vertices[node].state == NodeState.running
        ]
        messages = []
        for vertex in running:
            if total_rank:
                extra = budget * vertex.rank // total_rank
            else:
                extra = budget // len(running)
            bound = min(self.nominal_bound + extra, self.cluster_bound)
            if bound != vertex.bound:
                vertex.bound = bound
                messages.append(DistributeMessage(vertex.node_id, bound))
        return messages

    def bounds(self):
        """The current bound of every known node.
        """
        return {
            node: vertex.bound
            for node, vertex in sorted(self.vertices.items())
        }

    def allocated_power(self):
        """The power the cluster may draw under the current state.

        Running nodes count at their bound, blocked nodes at their idle power
        and nodes that never reported at the nominal bound.
        """
        total = 0
        for node in range(1, self.node_count + 1):
            vertex = self.vertices.get(node)
            if vertex is None:
                total += self.nominal_bound
            elif vertex.state == NodeState.running:
                total += vertex.bound
            else:
                total += self._idle_power[node]
        return total

    def status(self):
        """A plain text dump of the graph.
        """
        lines = [
            f'cluster bound {self.cluster_bound} mW, nominal bound'
            f' {self.nominal_bound} mW, {self.mode.name} budget',
            f'budget {self.budget} mW, total rank {self.total_rank}',
        ]
        for node in sorted(self.vertices):
            vertex = self.vertices[node]
            line = (
                f'node {node}: {vertex.state.name} bound={vertex.bound}'
                f' rank={vertex.rank}'
            )
            if vertex.state == NodeState.blocked:
                blockers = sorted(b for a, b in self.edges if a == node)
                line += (
                    f' gain={vertex.power_gain}'
                    f' blockers={",".join(map(str, blockers)) or "-"}'
                )
            lines.append(line)
        return '\n'.join(lines) + '\n'
