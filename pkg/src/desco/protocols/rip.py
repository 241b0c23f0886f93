"""RIP-style distance-vector routing as cooperating tasks.

Every router runs an advertiser (full table to each neighbour every
``update_period``, split horizon with poisoned reverse), one receiver per
interface (distance-vector relaxation, metrics clamped at 16), a sweeper
(route timeout marks a route unreachable, garbage collection removes it) and
a triggered-update task that batches same-instant changes into one extra
advertisement.

Unreachable routes (metric 16) are still advertised so neighbours learn of
the loss quickly, but :meth:`RipDomain.next_hop` never forwards over them.
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass, replace

from desco.combinators import all_of
from desco.net import Network, Packet
from desco.protocols.loops import LoopGroup, LoopStopped
from desco.tasks import Mailbox, OperationHandle, spawn, yield_now

__all__ = [
    "INFINITY",
    "RIP_PRIORITY",
    "RipDomain",
    "RipRouter",
    "RipTimers",
    "RouteEntry",
    "oracle_distances",
    "start_rip",
]

INFINITY = 16
RIP_PRIORITY = 5
HEADER_BYTES = 4
ENTRY_BYTES = 20


@dataclass(frozen=True)
class RipTimers:
    update_period: int = 30
    route_timeout: int = 180
    gc_timeout: int = 120

    def __post_init__(self) -> None:
        for name in ("update_period", "route_timeout", "gc_timeout"):
            v = getattr(self, name)
            if not isinstance(v, int) or v <= 0:
                raise ValueError(f"{name} must be a positive tick count, got {v!r}")
        if self.route_timeout <= self.update_period:
            raise ValueError(
                f"route_timeout ({self.route_timeout}) must exceed update_period ({self.update_period})")

    def scaled(self, ticks_per_unit: int) -> RipTimers:
        return RipTimers(self.update_period * ticks_per_unit, self.route_timeout * ticks_per_unit,
                         self.gc_timeout * ticks_per_unit)


@dataclass
class RouteEntry:
    dest: int
    next_hop: int
    metric: int
    last_refresh: int
    gc_deadline: int | None = None

    @property
    def usable(self) -> bool:
        return self.metric < INFINITY


class RipRouter:
    def __init__(self, domain: RipDomain, node: int) -> None:
        self.domain = domain
        self.net = domain.net
        self.node = node
        self.timers = domain.timers
        self.table: dict[int, RouteEntry] = {node: RouteEntry(node, node, 0, 0)}
        self.loops = LoopGroup()
        self._trigger_box = Mailbox(self.net.sim, f"rip{node}.trigger")
        self._trigger_armed = False
        self._last_triggered: int | None = None
        self.triggered_sent = 0
        self.periodic_sent = 0

    # -- bookkeeping -----------------------------------------------------

    def _log(self, action: str, e: RouteEntry) -> None:
        sim = self.net.sim
        self.domain.last_change = sim.now()
        if sim.tracer is not None:
            sim.tracer.emit("route-update", sim.now(), node=self.node, dest=e.dest, next_hop=e.next_hop,
                            metric=e.metric, action=action)

    def _invalidate(self, e: RouteEntry) -> None:
        e.metric = INFINITY
        e.gc_deadline = self.net.sim.now() + self.timers.gc_timeout
        self._log("invalidate", e)

    def request_trigger(self) -> None:
        if not self._trigger_armed:
            self._trigger_armed = True
            self._trigger_box.put(None)

    # -- advertisement ---------------------------------------------------

    def vector_for(self, neighbor: int) -> tuple[tuple[int, int], ...]:
        """What this router tells ``neighbor``: routes learned from it come back poisoned."""
        out = []
        for dest in sorted(self.table):
            e = self.table[dest]
            poisoned = e.next_hop == neighbor and dest != self.node
            out.append((dest, INFINITY if poisoned else e.metric))
        return tuple(out)

    def advertise(self) -> None:
        net, node = self.net, self.node
        for iface in net.topology.ifaces[node]:
            vec = self.vector_for(iface.peer_node)
            size = HEADER_BYTES + ENTRY_BYTES * len(vec)
            net.enqueue(node, iface.index, Packet(node, iface.peer_node, size, RIP_PRIORITY, "rip", vec))

    # -- tasks -----------------------------------------------------------

    async def advertiser(self) -> None:
        sim = self.net.sim
        try:
            while True:
                self.advertise()
                self.periodic_sent += 1
                await self.loops.wait(sim.sleep(self.timers.update_period))
        except LoopStopped:
            return

    async def receiver(self, iface: int) -> None:
        net = self.net
        neighbor = net.topology.ifaces[self.node][iface].peer_node
        try:
            while True:
                pkt = await self.loops.wait(net.recv(self.node, iface))
                if pkt.kind == "rip":
                    self.relax(neighbor, pkt.payload)
        except LoopStopped:
            return

    def relax(self, neighbor: int, vector: Iterable[tuple[int, int]]) -> None:
        now = self.net.sim.now()
        changed = False
        for dest, advertised in vector:
            if dest == self.node:
                continue
            metric = min(advertised + 1, INFINITY)
            e = self.table.get(dest)
            if e is None:
                if metric < INFINITY:
                    e = self.table[dest] = RouteEntry(dest, neighbor, metric, now)
                    self._log("install", e)
                    changed = True
            elif e.next_hop == neighbor:
                if metric == e.metric:
                    if metric < INFINITY:
                        e.last_refresh = now
                elif metric == INFINITY:
                    self._invalidate(e)
                    changed = True
                else:
                    e.metric, e.last_refresh, e.gc_deadline = metric, now, None
                    self._log("update", e)
                    changed = True
            elif metric < e.metric:
                e.next_hop, e.metric, e.last_refresh, e.gc_deadline = neighbor, metric, now, None
                self._log("update", e)
                changed = True
        if changed:
            self.request_trigger()

    def _next_deadline(self) -> int | None:
        t = self.timers
        soonest = None
        for dest, e in self.table.items():
            if dest == self.node:
                continue
            d = e.last_refresh + t.route_timeout if e.usable else e.gc_deadline
            if d is not None and (soonest is None or d < soonest):
                soonest = d
        return soonest

    def sweep(self) -> None:
        now = self.net.sim.now()
        changed = False
        for dest in sorted(self.table):
            e = self.table[dest]
            if dest == self.node:
                continue
            if e.usable and e.last_refresh + self.timers.route_timeout <= now:
                self._invalidate(e)
                changed = True
            elif not e.usable and e.gc_deadline is not None and e.gc_deadline <= now:
                del self.table[dest]
                self._log("remove", e)
        if changed:
            self.request_trigger()

    async def sweeper(self) -> None:
        sim = self.net.sim
        t = self.timers
        # routes learned while asleep expire no sooner than this horizon
        horizon = min(t.route_timeout, t.gc_timeout)
        try:
            while True:
                now = sim.now()
                wake = now + horizon
                due = self._next_deadline()
                if due is not None:
                    wake = min(wake, due)
                await self.loops.wait(sim.sleep(max(0, wake - now)))
                self.sweep()
        except LoopStopped:
            return

    async def triggered(self) -> None:
        sim = self.net.sim
        try:
            while True:
                await self.loops.wait(self._trigger_box.get())
                # let the rest of this instant's changes land first
                await self.loops.wait(_yield_op(sim))
                if self._last_triggered == sim.now():
                    await self.loops.wait(sim.sleep(1))
                self._trigger_armed = False
                self._last_triggered = sim.now()
                self.triggered_sent += 1
                self.advertise()
        except LoopStopped:
            return

    def start(self) -> OperationHandle:
        sim = self.net.sim
        n = self.node
        tasks = [
            spawn(sim, self.triggered(), name=f"rip{n}.triggered"),
            spawn(sim, self.sweeper(), name=f"rip{n}.sweeper"),
        ]
        tasks += [spawn(sim, self.receiver(i.index), name=f"rip{n}.rx{i.index}") for i in self.net.topology.ifaces[n]]
        tasks.append(spawn(sim, self.advertiser(), name=f"rip{n}.advertiser"))
        return all_of(sim, tasks)

    def snapshot(self) -> list[RouteEntry]:
        return [replace(self.table[d]) for d in sorted(self.table)]


def _yield_op(sim) -> OperationHandle:
    async def step() -> None:
        await yield_now()

    return spawn(sim, step(), name="yield")


def oracle_distances(net: Network, src: int, excluded_links: Iterable[int] = ()) -> dict[int, int]:
    """Hop counts from ``src`` by breadth-first search, clamped at 16."""
    return {d: min(h, INFINITY) for d, h in net.topology.hop_distances(src, excluded_links).items()}


class RipDomain:
    """All RIP routers of one network plus oracle checks against BFS hop counts."""

    def __init__(self, net: Network, timers: RipTimers) -> None:
        self.net = net
        self.timers = timers
        self.routers: dict[int, RipRouter] = {}
        self.handles: dict[int, OperationHandle] = {}
        self.last_change = 0

    def start(self, node: int) -> OperationHandle:
        if node in self.routers:
            raise ValueError(f"RIP already running on node {node}")
        router = self.routers[node] = RipRouter(self, node)
        handle = router.start()
        self.handles[node] = handle
        return handle.retain()

    def start_all(self) -> None:
        for node in range(self.net.topology.num_nodes):
            self.start(node).release()

    def stop(self) -> None:
        for r in self.routers.values():
            r.loops.stop()
        for h in self.handles.values():
            h.release()
        self.handles.clear()

    def routing_table(self, node: int) -> list[RouteEntry]:
        return self.routers[node].snapshot()

    def next_hop(self, node: int, dest: int) -> int | None:
        e = self.routers[node].table.get(dest)
        if e is None or not e.usable:
            return None
        return e.next_hop

    def inject_link_failure(self, link: int, at: int) -> None:
        self.net.inject_link_failure(link, at)

    def inject_link_repair(self, link: int, at: int) -> None:
        self.net.inject_link_repair(link, at)

    def mismatches(self, excluded_links: Iterable[int] = ()) -> list[str]:
        """Differences between the usable routes and the oracle; empty when converged."""
        excluded = tuple(excluded_links)
        problems = []
        for node, router in sorted(self.routers.items()):
            want = {d: h for d, h in oracle_distances(self.net, node, excluded).items() if h < INFINITY}
            have = {d: e for d, e in router.table.items() if e.usable}
            for d in sorted(set(want) | set(have)):
                if d not in have:
                    problems.append(f"node {node}: no route to {d} (oracle {want[d]})")
                elif d not in want:
                    problems.append(f"node {node}: usable route to unreachable {d}")
                elif have[d].metric != want[d]:
                    problems.append(f"node {node}: metric {have[d].metric} to {d}, oracle {want[d]}")
                elif d != node:
                    hop = have[d].next_hop
                    via = oracle_distances(self.net, hop, excluded).get(d)
                    if via is None or via != want[d] - 1:
                        problems.append(f"node {node}: next hop {hop} to {d} is not on a shortest path")
        return problems

    def converged(self, excluded_links: Iterable[int] = ()) -> bool:
        return not self.mismatches(excluded_links)


def start_rip(domain: RipDomain, node: int) -> OperationHandle:
    """Start the routing tasks of ``node``; the handle supervises them."""
    return domain.start(node)
