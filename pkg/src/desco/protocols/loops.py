"""Stopping long-running protocol loops cleanly.

Aborting a task does not unwind what it is waiting on, so a receive loop that
is simply aborted leaves its receive registered and a periodic loop leaves its
sleep event in the queue.  Loops that wait through a :class:`LoopGroup`
instead expose their current operation; :meth:`LoopGroup.stop` aborts those
operations and the loops exit through :class:`LoopStopped`.
"""

from __future__ import annotations

from typing import Any

from desco.tasks import OperationAborted, OperationHandle

__all__ = ["LoopGroup", "LoopStopped"]


class LoopStopped(Exception):
    pass


class LoopGroup:
    def __init__(self) -> None:
        self.pending: dict[int, OperationHandle] = {}
        self.stopped = False
        self._next = 0

    async def wait(self, op: OperationHandle) -> Any:
        if self.stopped:
            op.abort()
            op.release()
            raise LoopStopped
        key = self._next
        self._next += 1
        self.pending[key] = op
        try:
            return await op
        except OperationAborted:
            if self.stopped:
                raise LoopStopped from None
            raise
        finally:
            self.pending.pop(key, None)
            op.release()

    def stop(self) -> None:
        self.stopped = True
        for op in list(self.pending.values()):
            op.abort()
        self.pending.clear()
