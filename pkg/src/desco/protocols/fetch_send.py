"""Fetch-and-send demo written twice: as sequential tasks and as callbacks.

Three nodes: an application host, a remote store and a sink.  For each key the
application runs ``connect_and_send(key)``: fetch the value with ``get(key)``,
send it to the sink, then send a FIN.  ``get`` answers local keys at once and
remote keys with a request/reply exchange with the store, which spends
``store_delay`` ticks processing each request.

In the task version ``get`` is an ordinary ``async def`` whether or not the key
is remote, so ``connect_and_send`` does not change when a source becomes
blocking.  The callback version needs every step turned into a continuation
and the per-request state moved into an explicit object.  Both schedule the
same kernel events in the same order, which :func:`compare_styles` checks.
"""

from __future__ import annotations

import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any

from desco.kernel import SimStats, Simulation
from desco.net import Network, Packet, Topology, TxDone, build_topology
from desco.trace import Divergence, TraceRecord, Tracer, diff_traces

__all__ = [
    "APP",
    "SINK",
    "STORE",
    "FetchSendConfig",
    "FetchSendRun",
    "compare_styles",
    "demo_topology",
    "run_fetch_send",
]

APP, STORE, SINK = 0, 1, 2
CONTROL_BYTES = 64


@dataclass(frozen=True)
class FetchSendConfig:
    """``keys`` are fetched in order; keys present in ``local`` never leave the host."""

    keys: tuple[str, ...]
    local: dict[str, Any] = field(default_factory=dict)
    remote: dict[str, Any] = field(default_factory=dict)
    data_bytes: int = 1000
    store_delay: int = 5000
    latency: int = 1000
    bandwidth_bps: int = 1_000_000_000

    def __post_init__(self) -> None:
        for k in self.keys:
            if k not in self.local and k not in self.remote:
                raise ValueError(f"key {k!r} has no source")
        if self.data_bytes < 1:
            raise ValueError("data_bytes must be positive")
        if self.store_delay < 0:
            raise ValueError("store_delay must be non-negative")

    @property
    def remote_fetches(self) -> int:
        return sum(1 for k in self.keys if k not in self.local)


@dataclass
class FetchSendRun:
    style: str
    delivered: list[tuple[str, Any]]
    completed_at: int | None
    stats: SimStats
    trace: list[TraceRecord]
    wall_seconds: float


def demo_topology(cfg: FetchSendConfig) -> Topology:
    link = {"latency": cfg.latency, "bandwidth": cfg.bandwidth_bps}
    return build_topology(
        ["app", "store", "sink"],
        [{"a": "app", "b": "store", **link}, {"a": "app", "b": "sink", **link}],
    )


def _record_delivery(sim: Simulation, delivered: list, pkt: Packet) -> None:
    key, value = pkt.payload
    delivered.append((pkt.kind, key if pkt.kind == "fin" else value))
    if sim.tracer is not None:
        sim.tracer.emit("app", sim.now(), node=SINK, what=pkt.kind, key=key, value=repr(value))


# -- sequential tasks ------------------------------------------------------


def _start_tasks(net: Network, cfg: FetchSendConfig, delivered: list, finished: list[int]) -> None:
    sim = net.sim
    topo = net.topology
    to_store = topo.iface_to(APP, STORE)
    to_sink = topo.iface_to(APP, SINK)
    store_in = topo.iface_to(STORE, APP)
    sink_in = topo.iface_to(SINK, APP)

    async def get(key: str) -> Any:
        if key in cfg.local:
            return cfg.local[key]
        await net.send(APP, to_store, Packet(APP, STORE, CONTROL_BYTES, 0, "request", key))
        reply = await net.recv(APP, to_store)
        return reply.payload

    async def connect_and_send(key: str) -> None:
        data = await get(key)
        await net.send(APP, to_sink, Packet(APP, SINK, cfg.data_bytes, 0, "data", (key, data)))
        await net.send(APP, to_sink, Packet(APP, SINK, CONTROL_BYTES, 0, "fin", (key, None)))

    async def application() -> None:
        for key in cfg.keys:
            await connect_and_send(key)
        finished.append(sim.now())

    async def store() -> None:
        for _ in range(cfg.remote_fetches):
            req = await net.recv(STORE, store_in)
            await sim.sleep(cfg.store_delay)
            reply = Packet(STORE, APP, cfg.data_bytes, 0, "reply", cfg.remote[req.payload])
            await net.send(STORE, store_in, reply)

    async def sink() -> None:
        for _ in range(2 * len(cfg.keys)):
            pkt = await net.recv(SINK, sink_in)
            _record_delivery(sim, delivered, pkt)

    # servers first so their receives are posted before any traffic exists
    for body, name in ((store, "store"), (sink, "sink"), (application, "application")):
        sim.spawn(body(), name=name).release()


# -- callbacks -------------------------------------------------------------


class _CallbackRequest:
    """State of one ``connect_and_send`` that the task version keeps in locals."""

    def __init__(self, app: _CallbackApp, key: str, on_closed: Callable[[], None]) -> None:
        self.app = app
        self.key = key
        self.on_closed = on_closed

    def start(self) -> None:
        self.app.get(self.key, self._on_data)

    def _on_data(self, data: Any) -> None:
        a = self.app
        pkt = Packet(APP, SINK, a.cfg.data_bytes, 0, "data", (self.key, data))
        a.net.send_cb(APP, a.to_sink, pkt, self._on_data_sent)

    def _on_data_sent(self, _done: TxDone) -> None:
        a = self.app
        a.net.send_cb(APP, a.to_sink, Packet(APP, SINK, CONTROL_BYTES, 0, "fin", (self.key, None)), self._on_fin_sent)

    def _on_fin_sent(self, _done: TxDone) -> None:
        self.on_closed()


class _CallbackApp:
    def __init__(self, net: Network, cfg: FetchSendConfig, finished: list[int]) -> None:
        self.net = net
        self.cfg = cfg
        self.finished = finished
        self.to_store = net.topology.iface_to(APP, STORE)
        self.to_sink = net.topology.iface_to(APP, SINK)
        self.next_key = 0

    def get(self, key: str, on_value: Callable[[Any], None]) -> None:
        if key in self.cfg.local:
            on_value(self.cfg.local[key])
            return

        def on_request_sent(_done: TxDone) -> None:
            self.net.recv_cb(APP, self.to_store, lambda reply: on_value(reply.payload))

        self.net.send_cb(APP, self.to_store, Packet(APP, STORE, CONTROL_BYTES, 0, "request", key), on_request_sent)

    def run_next(self) -> None:
        if self.next_key == len(self.cfg.keys):
            self.finished.append(self.net.sim.now())
            return
        key = self.cfg.keys[self.next_key]
        self.next_key += 1
        _CallbackRequest(self, key, self.run_next).start()


class _CallbackStore:
    def __init__(self, net: Network, cfg: FetchSendConfig) -> None:
        self.net = net
        self.cfg = cfg
        self.port = net.topology.iface_to(STORE, APP)
        self.remaining = cfg.remote_fetches

    def listen(self) -> None:
        if self.remaining == 0:
            return
        self.remaining -= 1
        self.net.recv_cb(STORE, self.port, self._on_request)

    def _on_request(self, req: Packet) -> None:
        self.net.sim.schedule(self.cfg.store_delay, lambda: self._reply(req.payload))

    def _reply(self, key: str) -> None:
        pkt = Packet(STORE, APP, self.cfg.data_bytes, 0, "reply", self.cfg.remote[key])
        self.net.send_cb(STORE, self.port, pkt, lambda _done: self.listen())


class _CallbackSink:
    def __init__(self, net: Network, expected: int, delivered: list) -> None:
        self.net = net
        self.port = net.topology.iface_to(SINK, APP)
        self.remaining = expected
        self.delivered = delivered

    def listen(self) -> None:
        if self.remaining == 0:
            return
        self.remaining -= 1
        self.net.recv_cb(SINK, self.port, self._on_packet)

    def _on_packet(self, pkt: Packet) -> None:
        _record_delivery(self.net.sim, self.delivered, pkt)
        self.listen()


def _start_callbacks(net: Network, cfg: FetchSendConfig, delivered: list, finished: list[int]) -> None:
    _CallbackStore(net, cfg).listen()
    _CallbackSink(net, 2 * len(cfg.keys), delivered).listen()
    _CallbackApp(net, cfg, finished).run_next()


STYLES: dict[str, Callable[[Network, FetchSendConfig, list, list], None]] = {
    "tasks": _start_tasks,
    "callbacks": _start_callbacks,
}


def run_fetch_send(
    cfg: FetchSendConfig,
    style: str = "tasks",
    tracer: Tracer | None = None,
    max_events: int = 10_000_000,
) -> FetchSendRun:
    """Run the demo in a fresh simulation and report what the sink received."""
    try:
        start = STYLES[style]
    except KeyError:
        raise ValueError(f"unknown style {style!r}; expected one of {sorted(STYLES)}") from None
    tracer = tracer if tracer is not None else Tracer()
    sim = Simulation(tracer=tracer)
    net = Network(sim, demo_topology(cfg))
    delivered: list[tuple[str, Any]] = []
    finished: list[int] = []
    t0 = time.perf_counter()
    start(net, cfg, delivered, finished)
    stats = sim.run_to_completion(max_events=max_events)
    wall = time.perf_counter() - t0
    return FetchSendRun(style, delivered, finished[0] if finished else None, stats, tracer.records, wall)


def compare_styles(cfg: FetchSendConfig) -> tuple[FetchSendRun, FetchSendRun, Divergence | None]:
    seq = run_fetch_send(cfg, "tasks")
    cb = run_fetch_send(cfg, "callbacks")
    return seq, cb, diff_traces(seq.trace, cb.trace)


def default_config(keys: Sequence[str] = ("a", "b", "c")) -> FetchSendConfig:
    """Alternating local and remote sources, the shape that breaks naive callbacks."""
    local = {k: f"local-{k}" for i, k in enumerate(keys) if i % 2 == 0}
    remote = {k: f"remote-{k}" for i, k in enumerate(keys) if i % 2 == 1}
    return FetchSendConfig(tuple(keys), local, remote)
