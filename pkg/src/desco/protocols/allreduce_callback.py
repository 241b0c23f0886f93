"""Callback-style ring allreduce, the baseline for the sequential version.

Same algorithm and the same kernel events as :mod:`desco.protocols.allreduce`,
but every step is split across send/receive handlers and the per-rank state
lives in an explicit object.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from typing import Any

from desco.net import Network, Packet, TxDone
from desco.protocols.allreduce import CHUNK_PRIORITY, SUM, ReduceOp, World, _check_inputs

__all__ = ["CallbackRank", "ring_allreduce_callbacks"]


class CallbackRank:
    def __init__(
        self,
        net: Network,
        world: World,
        r: int,
        buf: list[Any],
        op: ReduceOp,
        on_finish: Callable[[int, list[Any]], None],
    ) -> None:
        self.net = net
        self.world = world
        self.r = r
        self.buf = buf
        self.op = op
        self.on_finish = on_finish
        n = world.size
        topo = net.topology
        self.me = world.ranks[r]
        self.nxt = world.ranks[(r + 1) % n]
        self.out_if = topo.iface_to(self.me, self.nxt)
        self.in_if = topo.iface_to(self.me, world.ranks[(r - 1) % n])
        self.step = 0
        self.sent = False
        self.received: tuple[int, list[Any]] | None = None
        self.done_at: int | None = None
        self.result: list[Any] | None = None

    def start(self) -> None:
        self._begin_step()

    def _send_index(self) -> int:
        n, r, s = self.world.size, self.r, self.step
        if s < n - 1:
            return (r - s) % n
        return (r - (s - (n - 1)) + 1) % n

    def _begin_step(self) -> None:
        self.sent = False
        self.received = None
        idx = self._send_index()
        lo, hi = self.world.chunks[idx]
        pkt = Packet(self.me, self.nxt, self.world.chunk_bytes(idx), CHUNK_PRIORITY, "chunk",
                     (idx, self.buf[lo:hi]))
        self.net.send_cb(self.me, self.out_if, pkt, self._on_sent)
        self.net.recv_cb(self.me, self.in_if, self._on_recv)

    def _on_sent(self, _done: TxDone) -> None:
        self.sent = True
        self._maybe_advance()

    def _on_recv(self, pkt: Packet) -> None:
        self.received = pkt.payload
        self._maybe_advance()

    def _maybe_advance(self) -> None:
        if not self.sent or self.received is None:
            return
        n = self.world.size
        idx, data = self.received
        lo, hi = self.world.chunks[idx]
        if self.step < n - 1:
            for k, v in enumerate(data):
                self.buf[lo + k] = self.op(self.buf[lo + k], v)
        else:
            self.buf[lo:hi] = data
        self.step += 1
        if self.step == 2 * (n - 1):
            self.done_at = self.net.sim.now()
            self.result = self.buf
            self.on_finish(self.r, self.buf)
            return
        self._begin_step()


def ring_allreduce_callbacks(
    net: Network,
    world: World,
    inputs: Sequence[Sequence[Any]],
    op: ReduceOp = SUM,
    on_finish: Callable[[int, list[Any]], None] | None = None,
) -> list[CallbackRank]:
    _check_inputs(world, inputs)
    ranks = [
        CallbackRank(net, world, r, list(inputs[r]), op, on_finish or (lambda r, buf: None))
        for r in range(world.size)
    ]
    for rank in ranks:
        rank.start()
    return ranks
