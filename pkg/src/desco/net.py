"""Packet-level network model.

Nodes are joined by full-duplex point-to-point links.  Each side of a link is
an interface with eight strict-priority egress FIFOs (7 is served first) and
per-priority PFC-style pause.  A packet occupies its interface for
``ceil(size_bytes * 8 * ticks_per_second / bandwidth_bps)`` ticks and reaches
the peer ``latency`` ticks after its last bit left.

The core API is callback based (``send_cb``/``recv_cb``); ``send``/``recv``
are the awaitable forms and schedule exactly the same kernel events.
"""

from __future__ import annotations

import math
from collections import deque
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

from desco.kernel import EventId, Simulation
from desco.tasks import OperationHandle, new_operation

__all__ = [
    "INFINITE",
    "NUM_PRIORITIES",
    "Iface",
    "Link",
    "LinkConfig",
    "Network",
    "Packet",
    "PacketDropped",
    "Topology",
    "TopologyError",
    "TxDone",
    "build_topology",
]

NUM_PRIORITIES = 8
INFINITE = math.inf


class TopologyError(ValueError):
    """Invalid topology description; ``location`` names the offending entry."""

    def __init__(self, message: str, location: str | None = None) -> None:
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


class PacketDropped(RuntimeError):
    pass


@dataclass(frozen=True)
class LinkConfig:
    latency: int
    bandwidth_bps: int

    def __post_init__(self) -> None:
        if not isinstance(self.latency, int) or self.latency <= 0:
            raise ValueError(f"latency must be a positive tick count, got {self.latency!r}")
        if not isinstance(self.bandwidth_bps, int) or self.bandwidth_bps <= 0:
            raise ValueError(f"bandwidth must be a positive bit rate, got {self.bandwidth_bps!r}")

    def serialization(self, size_bytes: int, ticks_per_second: int = 1_000_000_000) -> int:
        return -(-(size_bytes * 8 * ticks_per_second) // self.bandwidth_bps)


@dataclass
class Packet:
    src: int
    dst: int
    size_bytes: int
    priority: int = 0
    kind: str = "data"
    payload: Any = None
    # assigned by the network on send
    uid: int = -1

    def __post_init__(self) -> None:
        if self.size_bytes < 1:
            raise ValueError(f"packet size must be >= 1 byte, got {self.size_bytes}")
        if not 0 <= self.priority < NUM_PRIORITIES:
            raise ValueError(f"priority {self.priority} outside 0..{NUM_PRIORITIES - 1}")


@dataclass(frozen=True)
class TxDone:
    time: int
    packet: Packet


@dataclass(frozen=True)
class Iface:
    node: int
    index: int
    link: int
    peer_node: int
    peer_iface: int


@dataclass(frozen=True)
class Link:
    id: int
    a: int
    b: int
    a_iface: int
    b_iface: int
    config: LinkConfig


@dataclass
class Topology:
    node_names: list[str]
    links: list[Link]
    ifaces: list[list[Iface]]
    _index: dict[str, int] = field(default_factory=dict, repr=False)
    _routes: dict[tuple[int, int], int] = field(default_factory=dict, repr=False)

    @property
    def num_nodes(self) -> int:
        return len(self.node_names)

    def node_id(self, name: str | int) -> int:
        if isinstance(name, int) and not isinstance(name, bool):
            if 0 <= name < self.num_nodes:
                return name
            raise TopologyError(f"unknown node {name}")
        try:
            return self._index[name]
        except KeyError:
            raise TopologyError(f"unknown node {name!r}") from None

    def neighbors(self, node: int) -> list[int]:
        return [i.peer_node for i in self.ifaces[node]]

    def iface_to(self, node: int, neighbor: int) -> int:
        for i in self.ifaces[node]:
            if i.peer_node == neighbor:
                return i.index
        raise TopologyError(f"node {node} has no link to {neighbor}")

    def hop_distances(self, src: int, exclude_links: Iterable[int] = ()) -> dict[int, int]:
        """BFS hop counts from ``src``; unreachable nodes are absent."""
        cut = set(exclude_links)
        dist = {src: 0}
        frontier = deque([src])
        while frontier:
            n = frontier.popleft()
            for i in self.ifaces[n]:
                if i.link in cut or i.peer_node in dist:
                    continue
                dist[i.peer_node] = dist[n] + 1
                frontier.append(i.peer_node)
        return dist

    def diameter(self) -> int:
        best = 0
        for n in range(self.num_nodes):
            d = self.hop_distances(n)
            if len(d) != self.num_nodes:
                return -1
            best = max(best, max(d.values()))
        return best

    def next_hop_iface(self, node: int, dst: int) -> int:
        """Interface on a shortest path to ``dst``; ties go to the lowest interface index."""
        cached = self._routes.get((node, dst))
        if cached is not None:
            return cached
        if node == dst:
            raise TopologyError(f"node {node} routing to itself")
        dist = self.hop_distances(dst)
        if node not in dist:
            raise TopologyError(f"node {dst} unreachable from {node}")
        for i in self.ifaces[node]:
            if dist.get(i.peer_node, -1) == dist[node] - 1:
                self._routes[(node, dst)] = i.index
                return i.index
        raise AssertionError("BFS inconsistency")


def build_topology(
    nodes: Sequence[str] | int,
    links: Sequence[Mapping[str, Any] | tuple[Any, Any, LinkConfig]],
) -> Topology:
    """Assign dense ids in input order.

    ``nodes`` is a count or a list of unique names.  Each link is a mapping
    with ``a``, ``b``, ``latency`` and ``bandwidth`` (bits/s), or a tuple
    ``(a, b, LinkConfig)``.  Interfaces are numbered per node in link order.
    """
    names = [str(i) for i in range(nodes)] if isinstance(nodes, int) else [str(n) for n in nodes]
    index: dict[str, int] = {}
    for pos, name in enumerate(names):
        if name in index:
            raise TopologyError(f"duplicate node {name!r}", f"nodes[{pos}]")
        index[name] = pos

    def resolve(ref: Any, where: str) -> int:
        if isinstance(ref, int) and not isinstance(ref, bool) and str(ref) not in index:
            if 0 <= ref < len(names):
                return ref
        key = str(ref)
        if key not in index:
            raise TopologyError(f"link endpoint {ref!r} is not a known node", where)
        return index[key]

    ifaces: list[list[Iface]] = [[] for _ in names]
    out: list[Link] = []
    seen: dict[frozenset[int], int] = {}
    for lid, spec in enumerate(links):
        where = f"links[{lid}]"
        if isinstance(spec, Mapping):
            try:
                a_ref, b_ref = spec["a"], spec["b"]
            except KeyError as err:
                raise TopologyError(f"missing field {err.args[0]!r}", where) from None
            try:
                cfg = LinkConfig(int(spec["latency"]), int(spec["bandwidth"]))
            except KeyError as err:
                raise TopologyError(f"missing field {err.args[0]!r}", where) from None
            except ValueError as err:
                raise TopologyError(str(err), where) from None
        else:
            a_ref, b_ref, cfg = spec
        a, b = resolve(a_ref, where), resolve(b_ref, where)
        if a == b:
            raise TopologyError(f"self-loop on node {names[a]!r}", where)
        key = frozenset((a, b))
        if key in seen:
            raise TopologyError(f"duplicate link between {names[a]!r} and {names[b]!r} (first at links[{seen[key]}])", where)
        seen[key] = lid
        ai, bi = len(ifaces[a]), len(ifaces[b])
        ifaces[a].append(Iface(a, ai, lid, b, bi))
        ifaces[b].append(Iface(b, bi, lid, a, ai))
        out.append(Link(lid, a, b, ai, bi, cfg))
    return Topology(names, out, ifaces, index)


class _Port:
    __slots__ = (
        "node", "iface", "link", "peer", "queues", "paused_until", "expiry", "busy",
        "busy_since", "busy_ticks", "rx_buffer", "rx_waiters", "max_depth", "watchers",
        "capacity",
    )

    def __init__(self, node: int, iface: Iface, link: Link, capacity: int | None) -> None:
        self.node = node
        self.iface = iface.index
        self.link = link
        self.peer = (iface.peer_node, iface.peer_iface)
        self.queues: list[deque[tuple[Packet, Any]]] = [deque() for _ in range(NUM_PRIORITIES)]
        self.paused_until: list[float] = [0] * NUM_PRIORITIES
        self.expiry: list[EventId | None] = [None] * NUM_PRIORITIES
        self.busy = False
        self.busy_since = 0
        self.busy_ticks = 0
        self.rx_buffer: deque[Packet] = deque()
        self.rx_waiters: deque[Callable[[Packet], None]] = deque()
        self.max_depth = [0] * NUM_PRIORITIES
        self.watchers: list[Callable[[int, int, int, int], None]] = []
        self.capacity = capacity


@dataclass
class NetCounters:
    sent: int = 0
    queued: int = 0
    serializing: int = 0
    propagating: int = 0
    delivered: int = 0
    dropped: int = 0

    @property
    def in_flight(self) -> int:
        return self.serializing + self.propagating

    def balanced(self) -> bool:
        return self.delivered + self.in_flight + self.queued + self.dropped == self.sent


class Network:
    """Runtime state of a topology inside one simulation."""

    def __init__(self, sim: Simulation, topology: Topology, queue_capacity: int | None = None) -> None:
        self.sim = sim
        self.topology = topology
        self.counters = NetCounters()
        self.link_up = [True] * len(topology.links)
        self._ports: dict[tuple[int, int], _Port] = {}
        for node, ifs in enumerate(topology.ifaces):
            for i in ifs:
                self._ports[(node, i.index)] = _Port(node, i, topology.links[i.link], queue_capacity)
        self._uid = 0
        self._window_start = 0

    def port(self, node: int, iface: int) -> _Port:
        try:
            return self._ports[(node, iface)]
        except KeyError:
            raise TopologyError(f"node {node} has no interface {iface}") from None

    def _trace(self, kind: str, **attrs: Any) -> None:
        tracer = self.sim.tracer
        if tracer is not None:
            tracer.emit(kind, self.sim.now(), **attrs)

    # -- egress --------------------------------------------------------

    def send_cb(
        self,
        node: int,
        iface: int,
        pkt: Packet,
        on_done: Callable[[TxDone], None] | None = None,
        on_drop: Callable[[Packet], None] | None = None,
    ) -> None:
        """Enqueue ``pkt``; ``on_done`` fires when its last bit leaves the interface."""
        port = self.port(node, iface)
        pkt.uid = self._uid
        self._uid += 1
        self.counters.sent += 1
        q = port.queues[pkt.priority]
        if port.capacity is not None and len(q) >= port.capacity:
            self.counters.dropped += 1
            self._trace("drop", node=node, iface=iface, prio=pkt.priority, pkt=pkt.uid, reason="queue-full")
            if on_drop is not None:
                on_drop(pkt)
            return
        q.append((pkt, on_done))
        self.counters.queued += 1
        depth = len(q)
        if depth > port.max_depth[pkt.priority]:
            port.max_depth[pkt.priority] = depth
        self._notify(port, pkt.priority)
        self._kick(port)

    def enqueue(self, node: int, iface: int, pkt: Packet) -> None:
        """Fire-and-forget send."""
        self.send_cb(node, iface, pkt)

    def send(self, node: int, iface: int, pkt: Packet) -> OperationHandle:
        """Awaitable send; completes with :class:`TxDone` when serialization ends.

        Aborting the operation only detaches the notification; the packet is
        still transmitted.
        """
        handle, res = new_operation(self.sim, "send")
        self.send_cb(node, iface, pkt, res.resolve, lambda p: res.reject(PacketDropped(f"packet {p.uid} dropped")))
        return handle

    def _notify(self, port: _Port, prio: int) -> None:
        if port.watchers:
            depth = len(port.queues[prio])
            for w in port.watchers:
                w(port.node, port.iface, prio, depth)

    def _kick(self, port: _Port) -> None:
        if port.busy:
            return
        now = self.sim.now()
        for prio in range(NUM_PRIORITIES - 1, -1, -1):
            q = port.queues[prio]
            if q and port.paused_until[prio] <= now:
                pkt, on_done = q.popleft()
                self._start_tx(port, pkt, on_done)
                self._notify(port, prio)
                return

    def _start_tx(self, port: _Port, pkt: Packet, on_done: Callable[[TxDone], None] | None) -> None:
        sim = self.sim
        c = self.counters
        c.queued -= 1
        c.serializing += 1
        port.busy = True
        port.busy_since = sim.now()
        cfg = port.link.config
        ser = cfg.serialization(pkt.size_bytes, sim.ticks_per_second)
        self._trace("tx", node=port.node, iface=port.iface, prio=pkt.priority, pkt=pkt.uid, size=pkt.size_bytes)

        def done() -> None:
            c.serializing -= 1
            c.propagating += 1
            port.busy = False
            port.busy_ticks += sim.now() - max(port.busy_since, self._window_start)
            sim.schedule(cfg.latency, lambda: self._deliver(port, pkt))
            self._kick(port)
            if on_done is not None:
                on_done(TxDone(sim.now(), pkt))

        sim.schedule(ser, done)

    # -- ingress -------------------------------------------------------

    def _deliver(self, port: _Port, pkt: Packet) -> None:
        c = self.counters
        c.propagating -= 1
        peer_node, peer_iface = port.peer
        if not self.link_up[port.link.id]:
            c.dropped += 1
            self._trace("drop", node=peer_node, iface=peer_iface, pkt=pkt.uid, reason="link-down")
            return
        c.delivered += 1
        self._trace("rx", node=peer_node, iface=peer_iface, prio=pkt.priority, pkt=pkt.uid)
        dst = self._ports[port.peer]
        if dst.rx_waiters:
            dst.rx_waiters.popleft()(pkt)
        else:
            dst.rx_buffer.append(pkt)

    def recv_cb(self, node: int, iface: int, callback: Callable[[Packet], None]) -> Callable[[], bool]:
        """Hand the oldest undelivered packet to ``callback`` (now if one is buffered).

        Returns a function that withdraws the registration if it is still pending.
        """
        port = self.port(node, iface)
        if port.rx_buffer and not port.rx_waiters:
            callback(port.rx_buffer.popleft())
            return lambda: False
        port.rx_waiters.append(callback)

        def withdraw() -> bool:
            try:
                port.rx_waiters.remove(callback)
            except ValueError:
                return False
            return True

        return withdraw

    def recv(self, node: int, iface: int) -> OperationHandle:
        """Awaitable receive; concurrent receives on one interface are served in call order."""
        withdraw: list[Callable[[], bool]] = []
        handle, res = new_operation(self.sim, "recv", on_abort=lambda: withdraw[0]())
        withdraw.append(self.recv_cb(node, iface, res.resolve))
        return handle

    def buffered(self, node: int, iface: int) -> int:
        return len(self.port(node, iface).rx_buffer)

    # -- pause ---------------------------------------------------------

    def pause_priority(self, node: int, iface: int, prio: int, duration: int | None) -> None:
        """Pause egress of ``prio`` for ``duration`` ticks from now, replacing any earlier pause.

        ``None`` pauses until :meth:`resume_priority`; ``0`` resumes at once.
        """
        if duration == 0:
            self.resume_priority(node, iface, prio)
            return
        if duration is not None and duration < 0:
            raise ValueError(f"negative pause {duration}")
        port = self.port(node, iface)
        sim = self.sim
        self._cancel_expiry(port, prio)
        until = INFINITE if duration is None else sim.now() + duration
        port.paused_until[prio] = until
        self._trace("pause", node=node, iface=iface, prio=prio,
                    until=-1 if duration is None else int(until))
        if duration is not None:
            def expire() -> None:
                port.expiry[prio] = None
                self._trace("resume", node=node, iface=iface, prio=prio)
                self._kick(port)

            port.expiry[prio] = sim.schedule(duration, expire)

    def resume_priority(self, node: int, iface: int, prio: int) -> None:
        port = self.port(node, iface)
        self._cancel_expiry(port, prio)
        port.paused_until[prio] = self.sim.now()
        self._trace("resume", node=node, iface=iface, prio=prio)
        self._kick(port)

    def _cancel_expiry(self, port: _Port, prio: int) -> None:
        eid = port.expiry[prio]
        if eid is not None:
            self.sim.cancel(eid)
            port.expiry[prio] = None

    def paused(self, node: int, iface: int, prio: int) -> bool:
        return self.port(node, iface).paused_until[prio] > self.sim.now()

    def paused_until(self, node: int, iface: int, prio: int) -> float:
        return self.port(node, iface).paused_until[prio]

    # -- links ---------------------------------------------------------

    def fail_link(self, link: int) -> None:
        self.link_up[link] = False
        self._trace("app", event="link-down", link=link)

    def repair_link(self, link: int) -> None:
        self.link_up[link] = True
        self._trace("app", event="link-up", link=link)

    def inject_link_failure(self, link: int, at: int) -> EventId:
        if not 0 <= link < len(self.link_up):
            raise TopologyError(f"unknown link {link}")
        return self.sim.schedule(at - self.sim.now(), lambda: self.fail_link(link))

    def inject_link_repair(self, link: int, at: int) -> EventId:
        if not 0 <= link < len(self.link_up):
            raise TopologyError(f"unknown link {link}")
        return self.sim.schedule(at - self.sim.now(), lambda: self.repair_link(link))

    # -- telemetry -----------------------------------------------------

    def queue_depth(self, node: int, iface: int, prio: int) -> int:
        return len(self.port(node, iface).queues[prio])

    def max_queue_depth(self, node: int, iface: int, prio: int) -> int:
        return self.port(node, iface).max_depth[prio]

    def max_depths(self) -> dict[str, int]:
        out = {}
        for (node, iface), port in sorted(self._ports.items()):
            for prio, d in enumerate(port.max_depth):
                if d:
                    out[f"{node}/{iface}/{prio}"] = d
        return out

    def watch_queue(self, node: int, iface: int, fn: Callable[[int, int, int, int], None]) -> None:
        """Call ``fn(node, iface, prio, depth)`` whenever that egress queue changes length."""
        self.port(node, iface).watchers.append(fn)

    def reset_utilization(self) -> None:
        self._window_start = self.sim.now()
        for port in self._ports.values():
            port.busy_ticks = 0

    def link_utilization(self, link: int, direction: int | None = None) -> float:
        """Busy fraction since the last :meth:`reset_utilization` (or time zero).

        ``direction`` 0 is a->b, 1 is b->a; by default the busier direction.
        """
        lk = self.topology.links[link]
        now = self.sim.now()
        span = now - self._window_start
        if span <= 0:
            return 0.0

        def busy(node: int, iface: int) -> int:
            port = self._ports[(node, iface)]
            extra = now - max(port.busy_since, self._window_start) if port.busy else 0
            return port.busy_ticks + extra

        sides = [busy(lk.a, lk.a_iface), busy(lk.b, lk.b_iface)]
        if direction is not None:
            return sides[direction] / span
        return max(sides) / span
