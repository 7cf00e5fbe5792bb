from collections import namedtuple
import csv
from enum import IntEnum, unique
import io
import logging
import socket
import socketserver
import time

import numpy as np

from .heuristic import DistributeMessage, OnlineGraph, ReportMessage
from .mode import BudgetMode, NodeState
from .utils import (
    consume_byte,
    consume_int,
    consume_short,
    consume_uint,
    pack_uint,
    to_fraction,
)


log = logging.getLogger(__name__)


MAGIC = b'PD'
VERSION = 1
#: magic, version, type, node, state, power gain, blocker count
REPORT_HEADER_SIZE = 15
DISTRIBUTE_SIZE = 12
PING_SIZE = 12


@unique
class MessageType(IntEnum):
    """The type byte of a datagram.
    """
    report = 1
    distribute = 2
    ping = 3
    pong = 4


class MalformedDatagram(ValueError):
    """Raised when a datagram cannot be decoded.

    Parameters
    ----------
    reason : str
        Why the datagram was rejected.
    """
    def __init__(self, reason):
        super().__init__(f'malformed datagram: {reason}')
        self.reason = reason


class Ping(namedtuple('Ping', 'kind node sequence')):
    """A round trip message. The controller answers a ``ping`` with a ``pong``
    carrying the same node and sequence number.
    """
    @property
    def is_pong(self):
        return self.kind == MessageType.pong


def _header(kind):
    return MAGIC + bytes([VERSION, kind])


def encode_report(report):
    """Encode a report datagram.

    The layout is big-endian: magic ``PD``, version, type 1, node id (u32),
    state (u8), power gain in mW (u32), blocker count (u16), then one u32
    per blocker in ascending order.

    Parameters
    ----------
    report : ReportMessage
        The report.

    Returns
    -------
    datagram : bytes
        ``15 + 4 * len(report.blockers)`` bytes.
    """
    blockers = sorted(report.blockers)
    return b''.join([
        _header(MessageType.report),
        pack_uint(report.node, 4, 'node id'),
        pack_uint(report.state, 1, 'state'),
        pack_uint(report.power_gain, 4, 'power gain'),
        pack_uint(len(blockers), 2, 'blocker count'),
        *(pack_uint(blocker, 4, 'blocker id') for blocker in blockers),
    ])


def encode_distribute(message):
    """Encode a distribute datagram: magic, version, type 2, node id (u32),
    power bound in mW (u32).
    """
    return b''.join([
        _header(MessageType.distribute),
        pack_uint(message.node, 4, 'node id'),
        pack_uint(message.power_bound, 4, 'power bound'),
    ])


def encode_ping(ping):
    """Encode a ping or pong datagram: magic, version, type, node id (u32),
    sequence number (u32).
    """
    return b''.join([
        _header(ping.kind),
        pack_uint(ping.node, 4, 'node id'),
        pack_uint(ping.sequence, 4, 'sequence'),
    ])


def encode(message):
    """Encode any message.
    """
    if isinstance(message, ReportMessage):
        return encode_report(message)
    if isinstance(message, DistributeMessage):
        return encode_distribute(message)
    if isinstance(message, Ping):
        return encode_ping(message)
    raise TypeError(f'cannot encode {type(message).__qualname__}')


def decode(data):
    """Decode a datagram.

    Parameters
    ----------
    data : bytes
        The datagram.

    Returns
    -------
    message : ReportMessage, DistributeMessage or Ping
        The decoded message.

    Raises
    ------
    MalformedDatagram
        Raised for bad magic, an unsupported version, an unknown type, a
        length that does not match the type, or invalid field values. No other
        exception escapes for any input.
    """
    buffer = bytearray(data)
    try:
        message = _decode(buffer)
    except MalformedDatagram:
        raise
    except ValueError as e:
        raise MalformedDatagram(str(e)) from e
    if buffer:
        raise MalformedDatagram(f'{len(buffer)} trailing bytes')
    return message


def _decode(buffer):
    if consume_uint(buffer, 2) != int.from_bytes(MAGIC, 'big'):
        raise MalformedDatagram('bad magic')
    version = consume_byte(buffer)
    if version != VERSION:
        raise MalformedDatagram(f'unsupported version {version}')
    raw_kind = consume_byte(buffer)
    try:
        kind = MessageType(raw_kind)
    except ValueError:
        raise MalformedDatagram(f'unknown message type {raw_kind}')

    if kind == MessageType.report:
        node = consume_int(buffer)
        raw_state = consume_byte(buffer)
        if raw_state not in (NodeState.running, NodeState.blocked):
            raise MalformedDatagram(f'unknown state {raw_state}')
        gain = consume_int(buffer)
        count = consume_short(buffer)
        if len(buffer) != 4 * count:
            raise MalformedDatagram(
                f'{count} blockers need {4 * count} bytes, got {len(buffer)}',
            )
        blockers = [consume_int(buffer) for _ in range(count)]
        if len(set(blockers)) != len(blockers):
            raise MalformedDatagram('duplicate blocker ids')
        return ReportMessage(NodeState(raw_state), node, blockers, gain)

    if kind == MessageType.distribute:
        return DistributeMessage(consume_int(buffer), consume_int(buffer))

    return Ping(kind, consume_int(buffer), consume_int(buffer))


def power_to_frequency(power_table, node, bound):
    """The highest frequency of ``node`` whose power fits in ``bound``.

    Raises
    ------
    PowerBoundError
        Raised when ``bound`` is below the node's minimum operating power.
    """
    return power_table.frequency_for(node, bound)


@unique
class MpiCall(IntEnum):
    """The blocking MPI calls a block detector understands.
    """
    send = 0
    recv = 1
    bcast = 2
    wait = 3
    scatter = 4
    reduce = 5
    alltoall = 6

    @classmethod
    def parse(cls, text):
        try:
            return cls[text.strip().lower()]
        except KeyError:
            raise ValueError(
                f'unknown MPI call {text!r}, options:'
                f' {[call.name for call in cls]}',
            )


def blockers_for_call(call, rank, size, peer=None):
    """The nodes a call on ``rank`` waits on.

    Parameters
    ----------
    call : MpiCall
        The call.
    rank : int
        The calling node, ``1..size``.
    size : int
        The number of nodes.
    peer : int, optional
        The partner of a point to point call or the root of a rooted
        collective. Rooted collectives default to root 1.

    Returns
    -------
    blockers : frozenset[int]
        Point to point calls wait on the peer; a broadcast or all-to-all waits
        on every other node; scatter and reduce wait on the root, and the root
        waits on every other node.

    Raises
    ------
    ValueError
        Raised when a point to point call has no peer or a node is outside
        ``1..size``.
    """
    call = MpiCall(call)
    for name, value in (('rank', rank), ('peer', peer)):
        if value is not None and not 1 <= value <= size:
            raise ValueError(f'{name} {value} is outside 1..{size}')

    others = frozenset(range(1, size + 1)) - {rank}
    if call in (MpiCall.send, MpiCall.recv, MpiCall.wait):
        if peer is None:
            raise ValueError(f'{call.name} needs a peer')
        return frozenset({peer}) - {rank}
    if call in (MpiCall.bcast, MpiCall.alltoall):
        return others
    root = 1 if peer is None else peer
    return others if rank == root else frozenset({root})


class ReportManager:
    """Buffer reports for a breakeven timeout before sending them.

    A running report cancels the node's pending blocked report: both are
    dropped, so a block that ends within the timeout, or exactly when it
    runs out, never reaches the controller. Everything else is released in
    order once it has waited longer than ``timeout``; with a zero timeout
    reports are due as soon as they are buffered.

    Parameters
    ----------
    timeout : Fraction, optional
        The breakeven timeout: the report to distribute round trip time.
    """
    DEFAULT_TIMEOUT = 0

    def __init__(self, timeout=DEFAULT_TIMEOUT):
        if timeout < 0:
            raise ValueError(f'timeout must be >= 0, got {timeout!r}')
        self.timeout = timeout
        self._queue = []
        self.sent = 0
        self.cancelled = 0

    def __repr__(self):
        return (
            f'<{type(self).__qualname__}: timeout={self.timeout},'
            f' pending={len(self._queue)}>'
        )

    @property
    def pending(self):
        """The buffered reports in order.
        """
        return [report for _, report in self._queue]

    def enqueue(self, report, now):
        """Buffer a report.

        Parameters
        ----------
        report : ReportMessage
            The report.
        now : Fraction
            The time the report was made.
        """
        if report.state == NodeState.running:
            for ix in range(len(self._queue) - 1, -1, -1):
                _, pending = self._queue[ix]
                if pending.node != report.node:
                    continue
                if pending.state == NodeState.blocked:
                    del self._queue[ix]
                    self.cancelled += 2
                    return
                break
        self._queue.append((now, report))

    def _has_waited(self, elapsed):
        if not self.timeout:
            return elapsed >= 0
        return elapsed > self.timeout

    def pop_due(self, now=None):
        """Remove the reports whose timeout has passed.

        Parameters
        ----------
        now : Fraction, optional
            The current time. When not given every report is due.

        Returns
        -------
        due : list[(Fraction, ReportMessage)]
            Each released report with the time its timeout ran out.
        """
        due = []
        while self._queue:
            enqueued, report = self._queue[0]
            if now is not None and not self._has_waited(now - enqueued):
                break
            deadline = enqueued + self.timeout
            self._queue.pop(0)
            due.append((deadline, report))
        self.sent += len(due)
        return due

    def flush(self, now):
        """The reports to send at ``now``.
        """
        return [report for _, report in self.pop_due(now)]


class TraceError(ValueError):
    """Raised when a detector trace row is malformed.
    """
    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f'line {lineno}: {message}'
        super().__init__(message)
        self.lineno = lineno


TraceRow = namedtuple('TraceRow', 'time report lineno')


def parse_trace(data, node_count=None):
    """Parse a detector trace.

    Parameters
    ----------
    data : str
        CSV with the header ``time_s,node,state,blockers,gain_mw``. Blockers
        are semicolon separated node ids, or an MPI call such as ``bcast``,
        ``recv:2`` or ``reduce:1`` whose blockers are deduced.
    node_count : int, optional
        The number of nodes. Needed to deduce the blockers of MPI calls.

    Returns
    -------
    rows : list[TraceRow]
        The rows in time order.

    Raises
    ------
    TraceError
        Raised on a malformed row or when time goes backwards.
    """
    rows = []
    header = None
    last = None
    for lineno, row in enumerate(csv.reader(io.StringIO(data)), start=1):
        row = [cell.strip() for cell in row]
        if not any(row) or row[0].startswith('#'):
            continue
        if header is None:
            header = [cell.lower() for cell in row]
            expected = ['time_s', 'node', 'state', 'blockers', 'gain_mw']
            if header != expected:
                raise TraceError(
                    f'expected header {",".join(expected)!r}',
                    lineno,
                )
            continue
        if len(row) != 5:
            raise TraceError(f'expected 5 columns, got {len(row)}', lineno)

        raw_time, raw_node, raw_state, raw_blockers, raw_gain = row
        try:
            when = to_fraction(raw_time, 'time_s')
            node = int(raw_node)
            state = NodeState.parse(raw_state)
            gain = int(raw_gain) if raw_gain else 0
            blockers = _parse_blockers(raw_blockers, node, node_count)
            report = ReportMessage(state, node, blockers, gain)
        except ValueError as e:
            raise TraceError(str(e), lineno) from e
        if last is not None and when < last:
            raise TraceError(f'time {raw_time} goes backwards', lineno)
        last = when
        rows.append(TraceRow(when, report, lineno))
    return rows


def _parse_blockers(raw, node, node_count):
    if not raw:
        return frozenset()
    if raw[0].isalpha():
        name, _, peer = raw.partition(':')
        if node_count is None:
            raise ValueError(
                f'the node count is needed to deduce blockers of {raw!r}',
            )
        return blockers_for_call(
            MpiCall.parse(name),
            node,
            node_count,
            int(peer) if peer else None,
        )
    return frozenset(int(part) for part in raw.split(';') if part.strip())


def schedule_trace(rows, timeout):
    """The times reports of a trace are sent through a report manager.

    At each trace time, reports whose timeout has run out are released
    before the new report is buffered; with a zero timeout the new report is
    released immediately.

    Parameters
    ----------
    rows : iterable[TraceRow]
        The trace.
    timeout : Fraction
        The breakeven timeout.

    Returns
    -------
    schedule : list[(Fraction, ReportMessage)]
        The send time and report of every report that survives.
    """
    manager = ReportManager(timeout)
    schedule = []
    for row in rows:
        schedule.extend(manager.pop_due(row.time))
        manager.enqueue(row.report, row.time)
        if not timeout:
            schedule.extend(manager.pop_due(row.time))
    schedule.extend(manager.pop_due())
    return schedule


def parse_node_map(data):
    """Parse a static node map: one ``node host:port`` pair per line.

    Returns
    -------
    addresses : dict[int, (str, int)]
        The address of each node.
    """
    addresses = {}
    for lineno, line in enumerate(data.splitlines(), start=1):
        line = line.partition('#')[0].strip()
        if not line:
            continue
        try:
            raw_node, raw_address = line.split()
            host, _, port = raw_address.rpartition(':')
            addresses[int(raw_node)] = (host, int(port))
        except ValueError:
            raise ValueError(
                f'line {lineno}: expected "node host:port", got {line!r}',
            )
    return addresses


class _DatagramHandler(socketserver.BaseRequestHandler):
    def handle(self):
        data, sock = self.request
        try:
            replies = self.server.handle_datagram(data, self.client_address)
        except Exception:
            log.exception(
                'failed to handle datagram from %s',
                self.client_address,
            )
            return
        for address, payload in replies:
            sock.sendto(payload, address)


class ControllerServer(socketserver.UDPServer):
    """The power distribution controller as a UDP service.

    Reports are fed one at a time to an :class:`OnlineGraph`; the resulting
    distribute messages go to the address each node first reported from, or
    to the address in the static node map.

    Parameters
    ----------
    address : (str, int)
        The address to bind.
    cluster_bound : int
        The cluster power bound in milliwatts.
    node_count : int
        The number of nodes.
    power_table : PowerTable
        The power table, read for idle powers.
    mode : BudgetMode, optional
        The controller's budget mode.
    node_map : dict[int, (str, int)], optional
        Fixed node addresses.
    status_path : path-like, optional
        A file rewritten with :meth:`status` after each accepted report.
    max_datagram : int, optional
        The largest datagram accepted, in bytes.
    """
    DEFAULT_MAX_DATAGRAM = 8192

    def __init__(self,
                 address,
                 cluster_bound,
                 node_count,
                 power_table,
                 *,
                 mode=BudgetMode.safe,
                 node_map=None,
                 status_path=None,
                 max_datagram=DEFAULT_MAX_DATAGRAM):
        self.engine = OnlineGraph.from_power_table(
            power_table,
            cluster_bound,
            node_count,
            mode=mode,
        )
        self.addresses = dict(node_map or {})
        self.status_path = status_path
        self.max_datagram = max_datagram
        self.max_packet_size = max_datagram + 1
        self.accepted = 0
        self.dropped = 0
        super().__init__(address, _DatagramHandler)

    def _drop(self, source, reason):
        self.dropped += 1
        log.warning('dropped datagram from %s: %s', source, reason)
        return []

    def handle_datagram(self, data, source):
        """Process one datagram.

        Parameters
        ----------
        data : bytes
            The datagram.
        source : (str, int)
            The sender's address.

        Returns
        -------
        replies : list[((str, int), bytes)]
            The datagrams to send and where to send them.
        """
        if len(data) > self.max_datagram:
            return self._drop(source, f'oversized ({len(data)} bytes)')
        try:
            message = decode(data)
        except MalformedDatagram as e:
            return self._drop(source, e.reason)

        if isinstance(message, Ping):
            if message.is_pong:
                return self._drop(source, 'unexpected pong')
            pong = Ping(MessageType.pong, message.node, message.sequence)
            return [(source, encode_ping(pong))]
        if isinstance(message, DistributeMessage):
            return self._drop(source, 'unexpected distribute message')

        try:
            distribute = self.engine.process_message(message)
        except ValueError as e:
            return self._drop(source, str(e))

        self.accepted += 1
        self.addresses.setdefault(message.node, source)
        log.debug('accepted report %s from %s', message, source)

        replies = []
        for out in distribute:
            address = self.addresses.get(out.node)
            if address is None:
                log.warning('no address for node %d, bound not sent', out.node)
                continue
            log.info(
                'node %d bound %d mW -> %s',
                out.node,
                out.power_bound,
                address,
            )
            replies.append((address, encode_distribute(out)))

        if self.status_path is not None:
            with open(self.status_path, 'w') as f:
                f.write(self.status())
        return replies

    def status(self):
        """The controller state as plain text.
        """
        lines = [self.engine.status().rstrip('\n')]
        lines.append(f'accepted {self.accepted}, dropped {self.dropped}')
        for node in sorted(self.addresses):
            host, port = self.addresses[node][:2]
            lines.append(f'node {node} at {host}:{port}')
        return '\n'.join(lines) + '\n'


def controller_serve(address,
                     cluster_bound,
                     node_count,
                     power_table,
                     **kwargs):
    """Run a controller until interrupted.

    ``kwargs`` are forwarded to :class:`ControllerServer`.
    """
    with ControllerServer(
        address,
        cluster_bound,
        node_count,
        power_table,
        **kwargs,
    ) as server:
        log.info('controller listening on %s:%d', *server.server_address[:2])
        server.serve_forever()


def measure_rtt(sock, address, pings=5, node=0):
    """Measure the report to distribute round trip time with pings.

    Parameters
    ----------
    sock : socket.socket
        A UDP socket with a timeout set.
    address : (str, int)
        The controller's address.
    pings : int, optional
        The number of pings.
    node : int, optional
        The node id carried in the pings.

    Returns
    -------
    rtt : float
        The median round trip in seconds.

    Raises
    ------
    socket.timeout
        Raised when a pong does not arrive in time.
    """
    samples = []
    for sequence in range(pings):
        start = time.monotonic()
        ping = Ping(MessageType.ping, node, sequence)
        sock.sendto(encode_ping(ping), address)
        while True:
            data, _ = sock.recvfrom(DISTRIBUTE_SIZE * 8)
            try:
                reply = decode(data)
            except MalformedDatagram:
                continue
            if (isinstance(reply, Ping) and
                    reply.is_pong and
                    reply.sequence == sequence):
                break
        samples.append(time.monotonic() - start)
    return float(np.median(samples))


ReplayResult = namedtuple('ReplayResult', 'schedule distributes')


class DetectorEmulator:
    """Replay a block detector trace against a controller over UDP.

    Parameters
    ----------
    address : (str, int)
        The controller's address.
    power_table : PowerTable
        Used to translate distributed bounds to frequencies.
    timeout : float, optional
        The breakeven timeout in trace seconds. Measured with
        :func:`measure_rtt` when not given.
    speed : float, optional
        Wall clock seconds per trace second; ``0`` sends as fast as
        possible.
    settle : float, optional
        How long to wait for distribute messages after the last report.
    """
    DEFAULT_SPEED = 1.0
    DEFAULT_SETTLE = 0.2

    def __init__(self,
                 address,
                 power_table,
                 *,
                 timeout=None,
                 speed=DEFAULT_SPEED,
                 settle=DEFAULT_SETTLE):
        self.address = address
        self.power_table = power_table
        self.timeout = timeout
        self.speed = speed
        self.settle = settle

    def replay(self, rows):
        """Send a trace and collect the controller's answers.

        Parameters
        ----------
        rows : iterable[TraceRow]
            The trace.

        Returns
        -------
        result : ReplayResult
            The send schedule and every distribute message received with the
            frequency it translates to (``None`` when the bound is below the
            node's minimum).
        """
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
            sock.settimeout(max(self.settle, 1.0))
            timeout = self.timeout
            if timeout is None:
                rtt = measure_rtt(sock, self.address)
                # the schedule is in trace seconds
                timeout = rtt / self.speed if self.speed else rtt
                log.info(
                    'breakeven timeout %.6fs (round trip %.6fs)',
                    timeout,
                    rtt,
                )

            schedule = schedule_trace(rows, to_fraction(timeout, 'timeout'))
            started = time.monotonic()
            for when, report in schedule:
                if self.speed:
                    due = started + float(when) * self.speed
                    delay = due - time.monotonic()
                    if delay > 0:
                        time.sleep(delay)
                sock.sendto(encode_report(report), self.address)
                log.debug('sent %s', report)

            sock.settimeout(self.settle)
            distributes = []
            while True:
                try:
                    data, _ = sock.recvfrom(DISTRIBUTE_SIZE * 8)
                except socket.timeout:
                    break
                try:
                    message = decode(data)
                except MalformedDatagram as e:
                    log.warning('ignored reply: %s', e.reason)
                    continue
                if not isinstance(message, DistributeMessage):
                    continue
                try:
                    freq = power_to_frequency(
                        self.power_table,
                        message.node,
                        message.power_bound,
                    )
                except ValueError as e:
                    log.warning('node %d: %s', message.node, e)
                    freq = None
                distributes.append((message, freq))

        return ReplayResult(schedule, distributes)


def detector_replay(rows, address, power_table, **kwargs):
    """Replay a trace with a :class:`DetectorEmulator`.
    """
    return DetectorEmulator(address, power_table, **kwargs).replay(rows)
