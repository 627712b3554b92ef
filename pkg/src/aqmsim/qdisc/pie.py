"""PIE: delay-based drop probability controller with random early drop.

Queue delay is measured per packet from departure timestamps.  Every
``t_update`` the drop probability moves by a proportional term on the
error against ``target`` plus a term on the delay trend, scaled down
while the probability is small so the controller does not overshoot
from an idle start.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .base import Qdisc

# (drop_prob upper bound, increment divisor)
AUTOTUNE_LADDER = (
    (1e-6, 2048.0),
    (1e-5, 512.0),
    (1e-4, 128.0),
    (1e-3, 32.0),
    (1e-2, 8.0),
    (1e-1, 2.0),
)
IDLE_DECAY = 0.98


class Verdict(Enum):
    ENQUEUE = "enqueue"
    DROP = "drop"


ENQUEUE = Verdict.ENQUEUE
DROP = Verdict.DROP


@dataclass
class PieParams:
    target: float = 0.015
    t_update: float = 0.015
    alpha: float = 0.125
    beta: float = 1.25
    max_burst: float = 0.150
    limit: int = 1000
    limit_bytes: int | None = None


@dataclass(slots=True)
class PieState:
    target: float = 0.015
    t_update: float = 0.015
    alpha: float = 0.125
    beta: float = 1.25
    drop_prob: float = 0.0
    qdelay: float = 0.0
    qdelay_old: float = 0.0
    burst_allowance: float = 0.150
    updates: int = 0
    early_drops: int = 0
    enqueued: int = 0

    @classmethod
    def from_params(cls, params: PieParams, burst_allowance: float | None = None) -> "PieState":
        return cls(target=params.target, t_update=params.t_update,
                   alpha=params.alpha, beta=params.beta,
                   burst_allowance=params.max_burst if burst_allowance is None else burst_allowance)

    def at_rest(self) -> bool:
        """True when further updates on an empty queue cannot change anything."""
        return (self.drop_prob == 0.0 and self.qdelay == 0.0 and self.qdelay_old == 0.0
                and self.burst_allowance == 0.0)


def pie_increment(state: PieState) -> float:
    p = (state.alpha * (state.qdelay - state.target)
         + state.beta * (state.qdelay - state.qdelay_old))
    prob = state.drop_prob
    for bound, divisor in AUTOTUNE_LADDER:
        if prob < bound:
            return p / divisor
    return p


def pie_update(state: PieState) -> PieState:
    """One periodic controller step; mutates and returns ``state``."""
    prob = state.drop_prob + pie_increment(state)
    if prob < 0.0:
        prob = 0.0
    elif prob > 1.0:
        prob = 1.0
    if state.qdelay == 0.0 and state.qdelay_old == 0.0:
        prob *= IDLE_DECAY
    state.drop_prob = prob
    state.qdelay_old = state.qdelay
    burst = state.burst_allowance - state.t_update
    # float residue after repeated subtraction must not extend protection by a tick
    state.burst_allowance = burst if burst > 1e-12 else 0.0
    state.updates += 1
    return state


def pie_enqueue(state: PieState, queue_len: int, rng, limit: int | None = None) -> Verdict:
    """Admission decision for one arriving packet.

    ``queue_len`` is the number of packets already queued.  The random
    draw is consumed only when no safeguard applies.
    """
    if limit is not None and queue_len >= limit:
        return DROP
    if state.burst_allowance > 0.0:
        return ENQUEUE
    if state.qdelay_old < state.target * 0.5 and state.drop_prob < 0.2:
        return ENQUEUE
    if queue_len < 2:
        return ENQUEUE
    if rng.random() < state.drop_prob:
        state.early_drops += 1
        return DROP
    return ENQUEUE


class PieQdisc(Qdisc):
    kind = "pie"

    def __init__(self, sim, rng, params: PieParams | None = None):
        super().__init__()
        self.sim = sim
        self.rng = rng
        self.params = params or PieParams()
        self.state = PieState.from_params(self.params)
        self.queue = deque()
        self._tick_ns = int(round(self.params.t_update * 1e9))
        sim.after(self._tick_ns, self._tick)

    def _tick(self, _=None):
        state = self.state
        if not self.queue:
            state.qdelay = 0.0
        pie_update(state)
        self.sim.after(self._tick_ns, self._tick)

    def enqueue(self, pkt) -> bool:
        self.arrivals += 1
        self.arrival_bytes += pkt.size
        params = self.params
        if params.limit_bytes is not None and self.nbytes + pkt.size > params.limit_bytes:
            self._dropped(pkt)
            return False
        if pie_enqueue(self.state, self.npackets, self.rng, params.limit) is DROP:
            self._dropped(pkt)
            return False
        pkt.enq_time = self.sim.now
        self.queue.append(pkt)
        self.npackets += 1
        self.nbytes += pkt.size
        self.enqueues += 1
        self.state.enqueued += 1
        return True

    def dequeue(self):
        if not self.queue:
            return None
        pkt = self.queue.popleft()
        self.npackets -= 1
        self.nbytes -= pkt.size
        self.dequeues += 1
        self.dequeue_bytes += pkt.size
        self.state.qdelay = (self.sim.now - pkt.enq_time) * 1e-9
        return pkt

    def avg_qdelay(self) -> float:
        return self.state.qdelay

    def drop_probability(self) -> float:
        return self.state.drop_prob
