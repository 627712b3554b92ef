"""Packets and 5-tuple flow identity."""

from __future__ import annotations

import ipaddress
import struct
from typing import NamedTuple

TCP = 6
UDP = 17

MTU = 1500
TCP_HEADER = 52  # IPv4 + TCP with timestamp option
MSS = MTU - TCP_HEADER

DATA = 0
ACK = 1
DGRAM = 2


class FlowKey(NamedTuple):
    src_addr: int
    dst_addr: int
    src_port: int
    dst_port: int
    protocol: int

    def to_bytes(self) -> bytes:
        # network byte order, 13 bytes
        return struct.pack("!IIHHB", self.src_addr, self.dst_addr,
                           self.src_port, self.dst_port, self.protocol)

    def reversed(self) -> "FlowKey":
        return FlowKey(self.dst_addr, self.src_addr, self.dst_port, self.src_port, self.protocol)

    @classmethod
    def parse(cls, src: str, dst: str, sport: int, dport: int, proto: int) -> "FlowKey":
        return cls(int(ipaddress.IPv4Address(src)), int(ipaddress.IPv4Address(dst)),
                   sport, dport, proto)

    def __str__(self):
        return (f"{ipaddress.IPv4Address(self.src_addr)}:{self.src_port}->"
                f"{ipaddress.IPv4Address(self.dst_addr)}:{self.dst_port}/{self.protocol}")


class Packet:
    """One datagram in flight.

    ``path`` holds the entry function of each egress interface the packet
    traverses and ``hop`` indexes the current one; ``sink`` is called on arrival at the
    last hop.  Transport fields are unused by datagram traffic.
    """

    __slots__ = ("key", "size", "kind", "seq", "ack", "length", "dseq", "ts", "ts_echo",
                 "payload", "msg", "path", "hop", "sink", "created", "enq_time", "uid")

    def __init__(self, key: FlowKey, size: int, kind: int = DGRAM):
        self.key = key
        self.size = size
        self.kind = kind
        self.seq = 0
        self.ack = 0
        self.length = 0
        self.dseq = 0
        self.ts = 0
        self.ts_echo = 0
        self.payload = None
        self.msg = None
        self.path = ()
        self.hop = 0
        self.sink = None
        self.created = 0
        self.enq_time = 0
        self.uid = 0

    def __repr__(self):
        return f"Packet(uid={self.uid}, kind={self.kind}, size={self.size}, key={self.key})"
