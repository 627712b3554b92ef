"""Egress queue disciplines: DropTail, PIE and FQ-PIE."""

from .base import ConservationError, Qdisc, QdiscStats
from .droptail import DropTail
from .fqpie import Bucket, FqPieParams, FqPieQdisc
from .jhash import classify_flow, hashlittle
from .pie import (DROP, ENQUEUE, PieParams, PieQdisc, PieState, Verdict, pie_enqueue,
                  pie_increment, pie_update)

KINDS = ("droptail", "pie", "fq_pie")


def qdisc_stats(qdisc: Qdisc) -> QdiscStats:
    return qdisc.stats()


def make_qdisc(kind: str, sim, rng=None, **params) -> Qdisc:
    if kind == "droptail":
        return DropTail(sim, limit=params.get("limit", 1000), limit_bytes=params.get("limit_bytes"))
    if kind == "pie":
        return PieQdisc(sim, rng, PieParams(**params))
    if kind == "fq_pie":
        return FqPieQdisc(sim, rng, FqPieParams(**params))
    raise ValueError(f"unknown qdisc kind {kind!r}")


__all__ = [
    "Bucket", "ConservationError", "DROP", "DropTail", "ENQUEUE", "FqPieParams", "FqPieQdisc",
    "KINDS", "PieParams", "PieQdisc", "PieState", "Qdisc", "QdiscStats", "Verdict",
    "classify_flow", "hashlittle", "make_qdisc", "pie_enqueue", "pie_increment", "pie_update",
    "qdisc_stats",
]
