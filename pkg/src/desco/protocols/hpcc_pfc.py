"""HPCC-lite: switch queues with PFC pause/resume and a telemetry-driven sender.

Switches forward by destination and watch every egress priority queue.  When
a queue crosses ``xoff_threshold`` upward the switch sends a pause frame to
each interface that has fed that queue; when it later falls below
``xon_threshold`` it sends a resume frame (quanta 0).  Pause frames ride on
priority 7, which is never paused.

A node receiving a pause frame hands it to its :class:`PauseGuard`, which
pauses the local egress priority and arms a recovery timer.  A newer frame
aborts the pending timer and arms a fresh one, so the effective resume is
always the last frame's arrival plus its quanta.

Senders keep a byte window.  Every data packet collects the deepest egress
queue it passed; the receiver echoes that depth in its ACK and the sender
halves its window (floor one MTU) above ``high_mark`` and grows it by one
MTU below ``low_mark``.  This is a deliberately simple control law, not the
full HPCC algorithm.
"""

from __future__ import annotations

from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

from desco.combinators import all_of
from desco.kernel import Simulation
from desco.net import NUM_PRIORITIES, Network, Packet
from desco.protocols.loops import LoopGroup, LoopStopped
from desco.tasks import Mailbox, OperationAborted, OperationHandle, spawn

__all__ = [
    "ACK_PRIORITY",
    "MTU",
    "PFC_PRIORITY",
    "Ack",
    "FlowResult",
    "FlowSpec",
    "HostAgent",
    "HpccRun",
    "PauseGuard",
    "PfcConfig",
    "Segment",
    "SenderWindow",
    "Switch",
    "WindowMarks",
    "run_switch",
    "start_hpcc",
    "windowed_sender",
]

MTU = 1000
PFC_PRIORITY = 7
ACK_PRIORITY = 6
CONTROL_BYTES = 64

GuardKey = tuple[int, int, int]


@dataclass(frozen=True)
class PfcConfig:
    xoff_threshold: int
    xon_threshold: int
    pause_quanta: int

    def __post_init__(self) -> None:
        if not self.xon_threshold < self.xoff_threshold:
            raise ValueError(
                f"xon_threshold ({self.xon_threshold}) must be below xoff_threshold ({self.xoff_threshold})")
        if self.xon_threshold < 0:
            raise ValueError("xon_threshold must be non-negative")
        if self.pause_quanta <= 0:
            raise ValueError(f"pause_quanta must be positive, got {self.pause_quanta}")


# -- pause guard -------------------------------------------------------------


class PauseGuard:
    """Owns at most one recovery timer per (node, iface, priority).

    The timer is a plain sleep operation; a small task awaits it and resumes
    the queue when it completes normally.  Refreshing aborts the sleep, which
    cancels its kernel event, so a superseded timer never fires.
    """

    def __init__(self, net: Network) -> None:
        self.net = net
        self.timers: dict[GuardKey, OperationHandle] = {}
        self.live: dict[GuardKey, int] = defaultdict(int)
        self.max_live: dict[GuardKey, int] = defaultdict(int)
        self.frames_seen = 0
        self.resumes: list[tuple[int, GuardKey]] = []

    def on_frame(self, node: int, iface: int, prio: int, quanta: int) -> None:
        key = (node, iface, prio)
        self.frames_seen += 1
        old = self.timers.pop(key, None)
        if old is not None:
            old.abort()
            old.release()
        if quanta == 0:
            self._resume(key)
            return
        self.net.pause_priority(node, iface, prio, None)
        self._arm(key, quanta)

    def _resume(self, key: GuardKey) -> None:
        self.resumes.append((self.net.sim.now(), key))
        self.net.resume_priority(*key)

    def _arm(self, key: GuardKey, quanta: int) -> None:
        sim = self.net.sim
        timer = sim.sleep(quanta)
        self.timers[key] = timer
        self.live[key] += 1
        self.max_live[key] = max(self.max_live[key], self.live[key])

        def gone(_frame: object) -> None:
            self.live[key] -= 1

        timer.frame.add_waiter(gone)
        watcher = timer.retain()

        async def recover() -> None:
            try:
                await watcher
            except OperationAborted:
                return
            finally:
                watcher.release()
            if self.timers.get(key) is timer:
                del self.timers[key]
                timer.release()
            self._resume(key)

        spawn(sim, recover(), name="pfc-recover").release()

    def live_timers(self) -> int:
        return sum(self.live.values())

    def unique(self) -> bool:
        return all(v <= 1 for v in self.max_live.values())


# -- packets -----------------------------------------------------------------


@dataclass
class Segment:
    flow: int
    seq: int
    nbytes: int
    max_depth: int = 0


@dataclass(frozen=True)
class Ack:
    flow: int
    seq: int
    nbytes: int
    depth: int


# -- switch ------------------------------------------------------------------


@dataclass
class SwitchStats:
    forwarded: int = 0
    pauses_sent: int = 0
    resumes_sent: int = 0
    pfc_received: int = 0


class Switch:
    def __init__(self, net: Network, node: int, cfg: PfcConfig, guard: PauseGuard) -> None:
        if len(net.topology.ifaces[node]) < 2:
            raise ValueError(f"switch {node} needs at least two interfaces")
        self.net = net
        self.node = node
        self.cfg = cfg
        self.guard = guard
        self.stats = SwitchStats()
        # (egress iface, prio) -> ingress ifaces that fed it, in first-seen order
        self.feeders: dict[tuple[int, int], dict[int, None]] = {}
        self.last_depth: dict[tuple[int, int], int] = {}
        self.asserted: dict[tuple[int, int], bool] = {}
        self.pause_log: list[tuple[int, int, int, int]] = []
        self.loop_group = LoopGroup()
        for i in net.topology.ifaces[node]:
            net.watch_queue(node, i.index, self._on_depth)

    def _on_depth(self, _node: int, iface: int, prio: int, depth: int) -> None:
        if prio == PFC_PRIORITY:
            return
        key = (iface, prio)
        prev = self.last_depth.get(key, 0)
        self.last_depth[key] = depth
        xoff, xon = self.cfg.xoff_threshold, self.cfg.xon_threshold
        if prev < xoff <= depth:
            self.asserted[key] = True
            self.stats.pauses_sent += self._signal(key, self.cfg.pause_quanta)
        elif depth < xon <= prev and self.asserted.get(key):
            self.asserted[key] = False
            self.stats.resumes_sent += self._signal(key, 0)

    def _signal(self, key: tuple[int, int], quanta: int) -> int:
        iface, prio = key
        topo = self.net.topology
        sent = 0
        for feeder in self.feeders.get(key, ()):
            peer = topo.ifaces[self.node][feeder].peer_node
            frame = Packet(self.node, peer, CONTROL_BYTES, PFC_PRIORITY, "pfc", (prio, quanta))
            self.pause_log.append((self.net.sim.now(), feeder, prio, quanta))
            self.net.enqueue(self.node, feeder, frame)
            sent += 1
        return sent

    async def ingress(self, iface: int) -> None:
        net, node = self.net, self.node
        topo = net.topology
        while True:
            try:
                pkt = await self.loop_group.wait(net.recv(node, iface))
            except LoopStopped:
                return
            if pkt.kind == "pfc":
                self.stats.pfc_received += 1
                self.guard.on_frame(node, iface, *pkt.payload)
                continue
            out = topo.next_hop_iface(node, pkt.dst)
            self.feeders.setdefault((out, pkt.priority), {})[iface] = None
            if isinstance(pkt.payload, Segment):
                depth = net.queue_depth(node, out, pkt.priority)
                pkt.payload.max_depth = max(pkt.payload.max_depth, depth)
            self.stats.forwarded += 1
            net.enqueue(node, out, pkt)


def run_switch(net: Network, node: int, cfg: PfcConfig, guard: PauseGuard) -> tuple[Switch, OperationHandle]:
    """Start one ingress task per interface; the handle supervises all of them."""
    sw = Switch(net, node, cfg, guard)
    loops = [spawn(net.sim, sw.ingress(i.index), name=f"switch{node}.if{i.index}") for i in net.topology.ifaces[node]]
    return sw, all_of(net.sim, loops)


# -- hosts -------------------------------------------------------------------


class HostAgent:
    """Per-host dispatcher: PFC frames to the guard, ACKs to flow mailboxes, DATA gets acked."""

    def __init__(self, net: Network, node: int, guard: PauseGuard) -> None:
        self.net = net
        self.node = node
        self.guard = guard
        self.mailboxes: dict[int, Mailbox] = {}
        self.received: dict[int, int] = defaultdict(int)
        self.loop_group = LoopGroup()
        self.loops = [
            spawn(net.sim, self.ingress(i.index), name=f"host{node}.if{i.index}") for i in net.topology.ifaces[node]
        ]

    def mailbox(self, flow: int) -> Mailbox:
        box = self.mailboxes.get(flow)
        if box is None:
            box = self.mailboxes[flow] = Mailbox(self.net.sim, f"acks{flow}")
        return box

    async def ingress(self, iface: int) -> None:
        net, node = self.net, self.node
        while True:
            try:
                pkt = await self.loop_group.wait(net.recv(node, iface))
            except LoopStopped:
                return
            if pkt.kind == "pfc":
                self.guard.on_frame(node, iface, *pkt.payload)
            elif pkt.kind == "ack":
                self.mailbox(pkt.payload.flow).put(pkt.payload)
            elif isinstance(pkt.payload, Segment):
                seg = pkt.payload
                self.received[seg.flow] += seg.nbytes
                ack = Ack(seg.flow, seg.seq, seg.nbytes, seg.max_depth)
                back = net.topology.next_hop_iface(node, pkt.src)
                net.enqueue(node, back, Packet(node, pkt.src, CONTROL_BYTES, ACK_PRIORITY, "ack", ack))

    def stop(self) -> None:
        self.loop_group.stop()
        for h in self.loops:
            h.release()
        self.loops = []


# -- sender ------------------------------------------------------------------


@dataclass
class SenderWindow:
    window_bytes: int
    inflight_bytes: int = 0
    mtu: int = MTU
    history: list[tuple[int, int]] = field(default_factory=list)
    violations: int = 0

    def __post_init__(self) -> None:
        if self.window_bytes <= 0:
            raise ValueError("window must be positive")
        if self.inflight_bytes < 0:
            raise ValueError("inflight must be non-negative")

    def can_send(self, nbytes: int) -> bool:
        return self.inflight_bytes + nbytes <= self.window_bytes

    def on_send(self, nbytes: int) -> None:
        self.inflight_bytes += nbytes
        if self.inflight_bytes > self.window_bytes:
            self.violations += 1

    def on_ack(self, nbytes: int, depth: int, marks: WindowMarks, now: int) -> None:
        self.inflight_bytes -= nbytes
        if depth > marks.high:
            self.window_bytes = max(self.mtu, self.window_bytes // 2)
        elif depth < marks.low:
            self.window_bytes += self.mtu
        self.history.append((now, self.window_bytes))


@dataclass(frozen=True)
class WindowMarks:
    low: int = 1
    high: int = 4

    def __post_init__(self) -> None:
        if self.low > self.high:
            raise ValueError("low mark above high mark")


@dataclass
class FlowResult:
    flow: int
    started_at: int
    completed_at: int
    bytes_acked: int
    window: SenderWindow


def windowed_sender(
    net: Network,
    host: HostAgent,
    dst: int,
    flow_bytes: int,
    window: SenderWindow,
    flow: int = 0,
    marks: WindowMarks = WindowMarks(),
    priority: int = 0,
) -> OperationHandle:
    """Send ``flow_bytes`` to ``dst``; completes with a :class:`FlowResult` once all bytes are ACKed."""
    if flow_bytes <= 0:
        raise ValueError("flow size must be positive")
    if priority in (PFC_PRIORITY, ACK_PRIORITY):
        raise ValueError(f"data may not use priority {priority}")
    sim = net.sim
    src = host.node
    out = net.topology.next_hop_iface(src, dst)
    acks = host.mailbox(flow)

    async def body() -> FlowResult:
        started = sim.now()
        sent = acked = seq = 0
        while acked < flow_bytes:
            while sent < flow_bytes:
                nbytes = min(window.mtu, flow_bytes - sent)
                if not window.can_send(nbytes):
                    break
                window.on_send(nbytes)
                net.enqueue(src, out, Packet(src, dst, nbytes, priority, "data", Segment(flow, seq, nbytes)))
                sent += nbytes
                seq += 1
            ack = await acks.get()
            acked += ack.nbytes
            window.on_ack(ack.nbytes, ack.depth, marks, sim.now())
        return FlowResult(flow, started, sim.now(), acked, window)

    return spawn(sim, body(), name=f"flow{flow}")


# -- assembly ----------------------------------------------------------------


@dataclass(frozen=True)
class FlowSpec:
    src: int
    dst: int
    size_bytes: int
    start: int = 0
    initial_window: int = 4 * MTU
    priority: int = 0


@dataclass
class HpccRun:
    guard: PauseGuard
    switches: dict[int, Switch]
    supervisors: list[OperationHandle]
    hosts: dict[int, HostAgent]
    flows: list[OperationHandle]
    windows: list[SenderWindow]

    def results(self) -> list[FlowResult | None]:
        return [h.result() if h.done() else None for h in self.flows]

    def stop(self) -> None:
        for sw in self.switches.values():
            sw.loop_group.stop()
        for h in self.supervisors:
            h.release()
        self.supervisors = []
        for agent in self.hosts.values():
            agent.stop()


def start_hpcc(
    net: Network,
    switch_nodes: Iterable[int],
    cfg: PfcConfig,
    flows: Sequence[FlowSpec],
    marks: WindowMarks = WindowMarks(),
) -> HpccRun:
    sim: Simulation = net.sim
    guard = PauseGuard(net)
    switches: dict[int, Switch] = {}
    supervisors = []
    for node in switch_nodes:
        sw, sup = run_switch(net, node, cfg, guard)
        switches[node] = sw
        supervisors.append(sup)
    hosts = {n: HostAgent(net, n, guard) for n in range(net.topology.num_nodes) if n not in switches}
    handles: list[OperationHandle] = []
    windows: list[SenderWindow] = []
    for idx, spec in enumerate(flows):
        if spec.src not in hosts or spec.dst not in hosts:
            raise ValueError(f"flow {idx}: endpoints must be hosts, not switches")
        if not 0 <= spec.priority < NUM_PRIORITIES:
            raise ValueError(f"flow {idx}: bad priority {spec.priority}")
        win = SenderWindow(spec.initial_window)
        windows.append(win)

        async def delayed(spec: FlowSpec = spec, win: SenderWindow = win, idx: int = idx) -> FlowResult:
            if spec.start:
                await sim.sleep(spec.start)
            inner = windowed_sender(net, hosts[spec.src], spec.dst, spec.size_bytes, win, idx, marks, spec.priority)
            with inner:
                return await inner

        handles.append(spawn(sim, delayed(), name=f"flow{idx}.start"))
    return HpccRun(guard, switches, supervisors, hosts, handles, windows)
