"""FQ-PIE: per-flow PIE queues served by deficit round robin."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .base import Qdisc
from .jhash import classify_flow
from .pie import DROP, PieParams, PieState, pie_enqueue, pie_update


@dataclass
class FqPieParams(PieParams):
    limit: int = 10240
    buckets: int = 1024
    quantum: int = 1514
    salt: int = 0


class Bucket:
    __slots__ = ("index", "queue", "pie", "deficit", "active", "nbytes")

    def __init__(self, index: int, pie: PieState):
        self.index = index
        self.queue = deque()
        self.pie = pie
        self.deficit = 0
        self.active = False
        self.nbytes = 0

    def __repr__(self):
        return (f"Bucket({self.index}, pkts={len(self.queue)}, bytes={self.nbytes}, "
                f"deficit={self.deficit}, active={self.active})")


class FqPieQdisc(Qdisc):
    """Flow-isolating PIE.

    Every bucket carries its own PIE controller; all controllers are
    stepped by one qdisc-wide timer.  Buckets are materialised on first
    use, and an idle bucket that has decayed to rest is no longer stepped
    (stepping it would be a no-op), which keeps the timer cost proportional
    to the number of recently active flows.
    """

    kind = "fq_pie"

    def __init__(self, sim, rng, params: FqPieParams | None = None):
        super().__init__()
        self.sim = sim
        self.rng = rng
        self.params = params or FqPieParams()
        classify_flow_check = self.params.buckets
        if classify_flow_check < 1 or classify_flow_check & (classify_flow_check - 1):
            raise ValueError(f"buckets must be a power of two, got {classify_flow_check}")
        self.buckets: list[Bucket | None] = [None] * self.params.buckets
        self.schedule: deque[Bucket] = deque()
        self.live: dict[int, Bucket] = {}
        self.ticks = 0
        self.overflow_drops = 0
        self._index_cache: dict = {}
        self._tick_ns = int(round(self.params.t_update * 1e9))
        sim.after(self._tick_ns, self._tick)

    # classification -------------------------------------------------------

    def bucket_index(self, key) -> int:
        idx = self._index_cache.get(key)
        if idx is None:
            idx = self._index_cache[key] = classify_flow(key, self.params.salt, self.params.buckets)
        return idx

    def _bucket(self, idx: int) -> Bucket:
        b = self.buckets[idx]
        if b is None:
            # an untouched bucket has only had its burst allowance drained by past ticks
            p = self.params
            burst = max(0.0, p.max_burst - self.ticks * p.t_update)
            if burst <= 1e-12:
                burst = 0.0
            b = self.buckets[idx] = Bucket(idx, PieState.from_params(p, burst_allowance=burst))
        return b

    # controller timer -------------------------------------------------------

    def _tick(self, _=None):
        self.ticks += 1
        live = self.live
        for idx, b in list(live.items()):
            state = b.pie
            if not b.queue:
                state.qdelay = 0.0
            pie_update(state)
            if not b.queue and state.at_rest():
                del live[idx]
        self.sim.after(self._tick_ns, self._tick)

    # queue ops --------------------------------------------------------------

    def enqueue(self, pkt) -> bool:
        self.arrivals += 1
        self.arrival_bytes += pkt.size
        params = self.params
        b = self._bucket(self.bucket_index(pkt.key))
        if b.index not in self.live:
            self.live[b.index] = b
        if pie_enqueue(b.pie, len(b.queue), self.rng) is DROP:
            self._dropped(pkt)
            return False
        pkt.enq_time = self.sim.now
        b.queue.append(pkt)
        b.nbytes += pkt.size
        b.pie.enqueued += 1
        self.npackets += 1
        self.nbytes += pkt.size
        self.enqueues += 1
        if not b.active:
            b.active = True
            b.deficit = 0
            self.schedule.append(b)
        if self.npackets > params.limit or (
                params.limit_bytes is not None and self.nbytes > params.limit_bytes):
            return self._overflow(pkt)
        return True

    def _overflow(self, arriving) -> bool:
        longest = None
        for b in self.schedule:
            if longest is None or b.nbytes > longest.nbytes:
                longest = b
        victim = longest.queue.popleft()
        longest.nbytes -= victim.size
        self.npackets -= 1
        self.nbytes -= victim.size
        self.overflow_drops += 1
        self._dropped(victim)
        if not longest.queue:
            self._deactivate(longest)
        return victim is not arriving

    def _deactivate(self, b: Bucket):
        b.active = False
        b.deficit = 0
        self.schedule.remove(b)

    def dequeue(self):
        schedule = self.schedule
        quantum = self.params.quantum
        while schedule:
            b = schedule[0]
            head = b.queue[0]
            if b.deficit < head.size:
                b.deficit += quantum
                schedule.rotate(-1)
                continue
            b.queue.popleft()
            b.deficit -= head.size
            b.nbytes -= head.size
            b.pie.qdelay = (self.sim.now - head.enq_time) * 1e-9
            self.npackets -= 1
            self.nbytes -= head.size
            self.dequeues += 1
            self.dequeue_bytes += head.size
            if not b.queue:
                b.active = False
                b.deficit = 0
                schedule.popleft()
            return head
        return None

    # statistics -------------------------------------------------------------

    def active_buckets(self) -> list[Bucket]:
        return [b for b in self.schedule if b.active]

    def avg_qdelay(self) -> float:
        active = self.schedule
        if not active:
            return 0.0
        return sum(b.pie.qdelay for b in active) / len(active)

    def drop_probability(self) -> float:
        active = self.schedule
        if not active:
            return 0.0
        return sum(b.pie.drop_prob for b in active) / len(active)

    def check_invariants(self) -> None:
        total = 0
        for b in self.buckets:
            if b is None:
                continue
            assert (b in self.schedule) == bool(b.queue), b
            assert b.nbytes == sum(p.size for p in b.queue), b
            total += b.nbytes
            for p in b.queue:
                assert self.bucket_index(p.key) == b.index
        assert total == self.nbytes
