from __future__ import annotations

from collections import deque

from .base import Qdisc


class DropTail(Qdisc):
    """FIFO with a packet limit and optional byte limit."""

    kind = "droptail"

    def __init__(self, sim, limit: int = 1000, limit_bytes: int | None = None):
        super().__init__()
        self.sim = sim
        self.limit = limit
        self.limit_bytes = limit_bytes
        self.queue = deque()
        self.qdelay = 0.0

    def enqueue(self, pkt) -> bool:
        self.arrivals += 1
        self.arrival_bytes += pkt.size
        if self.npackets >= self.limit or (
                self.limit_bytes is not None and self.nbytes + pkt.size > self.limit_bytes):
            self._dropped(pkt)
            return False
        pkt.enq_time = self.sim.now
        self.queue.append(pkt)
        self.npackets += 1
        self.nbytes += pkt.size
        self.enqueues += 1
        return True

    def dequeue(self):
        if not self.queue:
            return None
        pkt = self.queue.popleft()
        self.npackets -= 1
        self.nbytes -= pkt.size
        self.dequeues += 1
        self.dequeue_bytes += pkt.size
        self.qdelay = (self.sim.now - pkt.enq_time) * 1e-9
        return pkt

    def avg_qdelay(self) -> float:
        return self.qdelay if self.queue else 0.0
