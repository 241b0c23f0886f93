"""Ring allreduce as sequential tasks.

Each rank runs reduce-scatter for ``N - 1`` steps and then allgather for
``N - 1`` steps.  A step is one joint operation: send a chunk to the next
rank and receive one from the previous rank; the next step starts only when
both have finished.  Received chunks land directly in the rank's buffer.
"""

from __future__ import annotations

import operator
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from functools import reduce
from typing import Any

from desco.combinators import all_of
from desco.net import Network, Packet
from desco.tasks import OperationHandle

__all__ = [
    "ELEMENT_BYTES",
    "MAX",
    "MIN",
    "PROD",
    "SUM",
    "ReduceOp",
    "World",
    "chunk_bounds",
    "naive_allreduce_oracle",
    "ring_allreduce",
    "ring_completion_time",
]

ELEMENT_BYTES = 8
CHUNK_PRIORITY = 0


@dataclass(frozen=True)
class ReduceOp:
    name: str
    fn: Callable[[Any, Any], Any]

    def __call__(self, a: Any, b: Any) -> Any:
        return self.fn(a, b)


SUM = ReduceOp("sum", operator.add)
MAX = ReduceOp("max", max)
MIN = ReduceOp("min", min)
PROD = ReduceOp("prod", operator.mul)
OPS = {op.name: op for op in (SUM, MAX, MIN, PROD)}


def chunk_bounds(length: int, parts: int) -> list[tuple[int, int]]:
    """Split ``[0, length)`` into ``parts`` contiguous chunks whose sizes differ by at most one."""
    base, extra = divmod(length, parts)
    bounds = []
    start = 0
    for i in range(parts):
        end = start + base + (1 if i < extra else 0)
        bounds.append((start, end))
        start = end
    return bounds


@dataclass(frozen=True)
class World:
    ranks: tuple[int, ...]
    length: int

    def __post_init__(self) -> None:
        if len(self.ranks) < 2:
            raise ValueError("a ring needs at least two ranks")
        if len(set(self.ranks)) != len(self.ranks):
            raise ValueError("ranks must be distinct nodes")
        if self.length < 1:
            raise ValueError("vector length must be positive")

    @property
    def size(self) -> int:
        return len(self.ranks)

    @property
    def chunks(self) -> list[tuple[int, int]]:
        return chunk_bounds(self.length, self.size)

    def chunk_bytes(self, index: int) -> int:
        lo, hi = self.chunks[index]
        return max(1, (hi - lo) * ELEMENT_BYTES)


def naive_allreduce_oracle(inputs: Sequence[Sequence[Any]], op: ReduceOp = SUM) -> list[Any]:
    """Element-wise fold of all inputs, no simulation involved."""
    return [reduce(op.fn, column) for column in zip(*inputs)]


def _check_inputs(world: World, inputs: Sequence[Sequence[Any]]) -> None:
    if len(inputs) != world.size:
        raise ValueError(f"{len(inputs)} input vectors for {world.size} ranks")
    for r, vec in enumerate(inputs):
        if len(vec) != world.length:
            raise ValueError(f"rank {r} holds {len(vec)} elements, expected {world.length}")


async def _rank(net: Network, world: World, r: int, buf: list[Any], op: ReduceOp) -> list[Any]:
    topo = net.topology
    n = world.size
    me = world.ranks[r]
    nxt = world.ranks[(r + 1) % n]
    prv = world.ranks[(r - 1) % n]
    out_if = topo.iface_to(me, nxt)
    in_if = topo.iface_to(me, prv)
    chunks = world.chunks

    async def exchange(send_idx: int) -> tuple[int, list[Any]]:
        lo, hi = chunks[send_idx]
        pkt = Packet(me, nxt, world.chunk_bytes(send_idx), CHUNK_PRIORITY, "chunk", (send_idx, buf[lo:hi]))
        joined = await all_of(net.sim, [net.send(me, out_if, pkt), net.recv(me, in_if)])
        return joined.values[1].payload

    for step in range(n - 1):
        idx, data = await exchange((r - step) % n)
        expected = (r - step - 1) % n
        if idx != expected:
            raise RuntimeError(f"rank {r} reduce-scatter step {step}: got chunk {idx}, expected {expected}")
        lo, _ = chunks[idx]
        for k, v in enumerate(data):
            buf[lo + k] = op(buf[lo + k], v)
    for step in range(n - 1):
        idx, data = await exchange((r - step + 1) % n)
        expected = (r - step) % n
        if idx != expected:
            raise RuntimeError(f"rank {r} allgather step {step}: got chunk {idx}, expected {expected}")
        lo, hi = chunks[idx]
        buf[lo:hi] = data
    return buf


def ring_allreduce(
    net: Network, world: World, inputs: Sequence[Sequence[Any]], op: ReduceOp = SUM
) -> list[OperationHandle]:
    """Start one task per rank; each completes with that rank's reduced vector."""
    _check_inputs(world, inputs)
    return [
        net.sim.spawn(_rank(net, world, r, list(inputs[r]), op), name=f"allreduce-rank{r}")
        for r in range(world.size)
    ]


def ring_completion_time(world_size: int, latency: int, serialization: int) -> int:
    """Closed-form finish instant of a lock-step ring with uniform links and equal chunks."""
    return 2 * (world_size - 1) * (latency + serialization)
