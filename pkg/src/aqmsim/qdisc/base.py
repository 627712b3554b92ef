from __future__ import annotations

from dataclasses import dataclass


class ConservationError(AssertionError):
    pass


@dataclass(frozen=True)
class QdiscStats:
    avg_qdelay: float  # seconds
    drop_prob: float
    arrivals: int
    enqueues: int
    dequeues: int
    drops: int
    backlog_packets: int
    backlog_bytes: int
    arrival_bytes: int = 0
    dequeue_bytes: int = 0
    drop_bytes: int = 0


class Qdisc:
    """Counters shared by every queue discipline.

    ``arrivals`` counts every offered packet; ``drops`` covers both early
    and overflow drops, so ``arrivals == dequeues + drops + backlog`` holds
    for packets and bytes alike.
    """

    kind = "base"

    def __init__(self):
        self.npackets = 0
        self.nbytes = 0
        self.arrivals = 0
        self.arrival_bytes = 0
        self.enqueues = 0
        self.dequeues = 0
        self.dequeue_bytes = 0
        self.drops = 0
        self.drop_bytes = 0
        self.drop_log: list | None = None

    def enqueue(self, pkt) -> bool:
        raise NotImplementedError

    def dequeue(self):
        raise NotImplementedError

    def avg_qdelay(self) -> float:
        return 0.0

    def drop_probability(self) -> float:
        return 0.0

    def _dropped(self, pkt):
        self.drops += 1
        self.drop_bytes += pkt.size
        if self.drop_log is not None:
            self.drop_log.append(pkt.uid)

    def stats(self) -> QdiscStats:
        return QdiscStats(
            avg_qdelay=self.avg_qdelay(),
            drop_prob=self.drop_probability(),
            arrivals=self.arrivals,
            enqueues=self.enqueues,
            dequeues=self.dequeues,
            drops=self.drops,
            backlog_packets=self.npackets,
            backlog_bytes=self.nbytes,
            arrival_bytes=self.arrival_bytes,
            dequeue_bytes=self.dequeue_bytes,
            drop_bytes=self.drop_bytes,
        )

    def check_conservation(self, label: str = "") -> None:
        if self.arrivals != self.dequeues + self.drops + self.npackets:
            raise ConservationError(
                f"{label or self.kind}: packets arrivals={self.arrivals} != "
                f"dequeues={self.dequeues} + drops={self.drops} + backlog={self.npackets}")
        if self.arrival_bytes != self.dequeue_bytes + self.drop_bytes + self.nbytes:
            raise ConservationError(
                f"{label or self.kind}: bytes arrivals={self.arrival_bytes} != "
                f"dequeues={self.dequeue_bytes} + drops={self.drop_bytes} + backlog={self.nbytes}")
