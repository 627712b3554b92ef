"""Static network graph: nodes, bidirectional links, egress interfaces, routes."""

from __future__ import annotations

import ipaddress
from collections import deque
from dataclasses import dataclass, field
from heapq import heappush

from .qdisc import DropTail, make_qdisc


class ConfigError(ValueError):
    """Invalid scenario or topology description."""


@dataclass
class QdiscSpec:
    kind: str = "droptail"
    params: dict = field(default_factory=dict)
    monitor: bool = False  # sampled into delay series


@dataclass
class LinkSpec:
    a: str
    b: str
    rate_bps: float
    delay_s: float
    qdisc_ab: QdiscSpec = field(default_factory=QdiscSpec)
    qdisc_ba: QdiscSpec = field(default_factory=QdiscSpec)


@dataclass
class TopologySpec:
    nodes: list[str]
    links: list[LinkSpec]
    routes: dict[tuple[str, str], list[str]] = field(default_factory=dict)


class Node:
    def __init__(self, name: str):
        self.name = name
        self.ifaces: dict[str, "Interface"] = {}  # peer name -> egress interface
        self.next_port = 49152

    def ephemeral_port(self) -> int:
        port = self.next_port
        self.next_port = 49152 if port >= 65535 else port + 1
        return port

    def __repr__(self):
        return f"Node({self.name})"


class Interface:
    """One direction of a link: egress qdisc, serializer and propagation pipe.

    The transmitter is non-preemptive.  A kick event is scheduled only when
    a packet is waiting behind the one being serialized; an idle
    transmitter sends immediately on enqueue.

    An unmonitored DropTail queue is FIFO with no per-packet state, so its
    departure time is known on arrival.  Such interfaces (``fifo``) schedule
    the peer arrival directly and settle queue counters lazily from a deque
    of pending start times, saving the kick and dequeue per packet.
    """

    __slots__ = ("sim", "net", "name", "src", "dst", "rate_bps", "delay_s", "qdisc",
                 "_ns_per_byte", "_prop_ns", "busy_until", "_kick_pending",
                 "tx_packets", "tx_bytes", "arrived_packets", "src_addr", "dst_addr",
                 "monitored", "fifo", "_starts", "_ser", "entry")

    def __init__(self, sim, net, src: Node, dst: Node, rate_bps: float, delay_s: float, qdisc):
        if rate_bps <= 0:
            raise ConfigError(f"link {src.name}->{dst.name}: rate must be positive")
        if delay_s < 0:
            raise ConfigError(f"link {src.name}->{dst.name}: delay must be non-negative")
        self.sim = sim
        self.net = net
        self.name = f"{src.name}->{dst.name}"
        self.src = src
        self.dst = dst
        self.rate_bps = rate_bps
        self.delay_s = delay_s
        self.qdisc = qdisc
        self._ns_per_byte = 8e9 / rate_bps
        self._prop_ns = int(round(delay_s * 1e9))
        self.busy_until = 0
        self._kick_pending = False
        self.tx_packets = 0
        self.tx_bytes = 0
        self.arrived_packets = 0
        self.src_addr = 0
        self.dst_addr = 0
        self.monitored = False
        self.fifo = False
        self._starts = None
        self._ser: dict[int, int] = {}  # packet size -> serialization ns
        self.entry = self.send  # what an upstream hop calls to hand over a packet

    def enable_fifo_fast_path(self) -> None:
        if not isinstance(self.qdisc, DropTail) or self.qdisc.npackets:
            raise ValueError(f"{self.name}: fast path needs an empty DropTail queue")
        self.fifo = True
        self._starts = deque()
        self.entry = self._send_fifo

    def serialization_ns(self, size: int) -> int:
        return int(round(size * self._ns_per_byte))

    @property
    def idle(self) -> bool:
        return self.sim.now >= self.busy_until

    def send(self, pkt) -> bool:
        if self.fifo:
            return self._send_fifo(pkt)
        if not self.qdisc.enqueue(pkt):
            return False
        if not self._kick_pending:
            sim = self.sim
            if sim.now >= self.busy_until:
                self._transmit()
            else:
                self._kick_pending = True
                sim.at(self.busy_until, self._kick)
        return True

    def _send_fifo(self, pkt) -> bool:
        sim = self.sim
        now = sim.now
        q = self.qdisc
        size = pkt.size
        starts = self._starts
        if starts and starts[0][0] <= now:
            self.settle()
        q.arrivals += 1
        q.arrival_bytes += size
        if q.npackets >= q.limit or (q.limit_bytes is not None and q.nbytes + size > q.limit_bytes):
            q._dropped(pkt)
            return False
        q.enqueues += 1
        busy = self.busy_until
        if busy > now:
            start = busy
            starts.append((busy, size))
            q.npackets += 1
            q.nbytes += size
        else:
            start = now
            q.dequeues += 1
            q.dequeue_bytes += size
            self.tx_packets += 1
            self.tx_bytes += size
        ser = self._ser.get(size)
        if ser is None:
            ser = self._ser[size] = int(round(size * self._ns_per_byte))
        done = start + ser
        self.busy_until = done
        sim._seq += 1
        heappush(sim._heap, (done + self._prop_ns, sim._seq, self._arrive, pkt))
        return True

    def settle(self) -> None:
        """Retire fast-path packets whose transmission has started by now."""
        starts = self._starts
        if not starts:
            return
        now = self.sim.now
        q = self.qdisc
        while starts and starts[0][0] <= now:
            size = starts.popleft()[1]
            q.npackets -= 1
            q.nbytes -= size
            q.dequeues += 1
            q.dequeue_bytes += size
            self.tx_packets += 1
            self.tx_bytes += size

    def _kick(self, _=None):
        self._kick_pending = False
        self._transmit()

    def _transmit(self):
        pkt = self.qdisc.dequeue()
        if pkt is None:
            return
        sim = self.sim
        done = sim.now + int(round(pkt.size * self._ns_per_byte))
        self.busy_until = done
        self.tx_packets += 1
        self.tx_bytes += pkt.size
        sim.at(done + self._prop_ns, self._arrive, pkt)
        if self.qdisc.npackets:
            self._kick_pending = True
            sim.at(done, self._kick)

    def transmit(self, pkt):
        """Serialize ``pkt`` on an idle transmitter, bypassing the qdisc.

        Returns the arrival time at the peer in nanoseconds.
        """
        sim = self.sim
        if sim.now < self.busy_until:
            raise RuntimeError(f"{self.name}: transmitter busy")
        done = sim.now + self.serialization_ns(pkt.size)
        self.busy_until = done
        self.tx_packets += 1
        self.tx_bytes += pkt.size
        sim.at(done + self._prop_ns, self._arrive, pkt)
        return done + self._prop_ns

    def _arrive(self, pkt):
        self.arrived_packets += 1
        hop = pkt.hop + 1
        path = pkt.path
        if hop < len(path):
            pkt.hop = hop
            path[hop](pkt)
        else:
            self.net.delivered += 1
            sink = pkt.sink
            if sink is not None:
                sink(pkt)

    @property
    def in_transit(self) -> int:
        self.settle()
        return self.tx_packets - self.arrived_packets

    def __repr__(self):
        return f"Interface({self.name}, {self.rate_bps / 1e6:g} Mbps, {self.delay_s * 1e3:g} ms, {self.qdisc.kind})"


class Path:
    """Resolved hop sequence between two hosts."""

    def __init__(self, nodes: list[str], ifaces: tuple):
        self.nodes = list(nodes)
        self.ifaces = ifaces
        self.src_addr = ifaces[0].src_addr
        self.dst_addr = ifaces[-1].dst_addr
        self.entries = tuple(i.entry for i in ifaces)

    def base_rtt_ns(self, size_fwd: int = 52, size_rev: int = 52, reverse: "Path | None" = None) -> int:
        rev = reverse.ifaces if reverse is not None else ()
        t = sum(i.serialization_ns(size_fwd) + i._prop_ns for i in self.ifaces)
        t += sum(i.serialization_ns(size_rev) + i._prop_ns for i in rev)
        return t

    def __repr__(self):
        return "Path(" + "-".join(self.nodes) + ")"


class Network:
    def __init__(self, sim):
        self.sim = sim
        self.nodes: dict[str, Node] = {}
        self.links: list[tuple[Interface, Interface]] = []
        self.interfaces: dict[str, Interface] = {}
        self.routes: dict[tuple[str, str], list[str]] = {}
        self.injected = 0
        self.delivered = 0
        self._uid = 0
        self.fast_fifo = True

    # construction -----------------------------------------------------------

    def add_node(self, name: str) -> Node:
        if name in self.nodes:
            raise ConfigError(f"duplicate node {name}")
        node = self.nodes[name] = Node(name)
        return node

    def add_link(self, spec: LinkSpec, qdisc_factory=None) -> tuple[Interface, Interface]:
        for end in (spec.a, spec.b):
            if end not in self.nodes:
                raise ConfigError(f"unknown node {end}")
        if spec.a == spec.b:
            raise ConfigError(f"self-loop link on {spec.a}")
        a, b = self.nodes[spec.a], self.nodes[spec.b]
        if b.name in a.ifaces:
            raise ConfigError(f"duplicate link {spec.a}-{spec.b}")
        factory = qdisc_factory or self._default_qdisc
        ab = Interface(self.sim, self, a, b, spec.rate_bps, spec.delay_s,
                       factory(f"{a.name}->{b.name}", spec.qdisc_ab))
        ba = Interface(self.sim, self, b, a, spec.rate_bps, spec.delay_s,
                       factory(f"{b.name}->{a.name}", spec.qdisc_ba))
        for iface, qspec in ((ab, spec.qdisc_ab), (ba, spec.qdisc_ba)):
            iface.monitored = qspec.monitor
            if self.fast_fifo and not qspec.monitor and isinstance(iface.qdisc, DropTail):
                iface.enable_fifo_fast_path()
        index = len(self.links)
        base = int(ipaddress.IPv4Address("10.0.0.0")) + (index << 8)
        ab.src_addr = ba.dst_addr = base + 1
        ab.dst_addr = ba.src_addr = base + 2
        a.ifaces[b.name] = ab
        b.ifaces[a.name] = ba
        self.interfaces[ab.name] = ab
        self.interfaces[ba.name] = ba
        self.links.append((ab, ba))
        return ab, ba

    def _default_qdisc(self, label: str, spec: QdiscSpec):
        return make_qdisc(spec.kind, self.sim, self.sim.rng(f"qdisc:{label}"), **spec.params)

    # routing ----------------------------------------------------------------

    def shortest_path(self, src: str, dst: str) -> list[str]:
        for end in (src, dst):
            if end not in self.nodes:
                raise ConfigError(f"unknown node {end}")
        prev = {src: None}
        frontier = deque([src])
        while frontier:
            n = frontier.popleft()
            if n == dst:
                break
            for peer in self.nodes[n].ifaces:
                if peer not in prev:
                    prev[peer] = n
                    frontier.append(peer)
        if dst not in prev:
            raise ConfigError(f"no route from {src} to {dst}")
        hops = [dst]
        while prev[hops[-1]] is not None:
            hops.append(prev[hops[-1]])
        return hops[::-1]

    def path(self, nodes: list[str]) -> Path:
        if len(nodes) < 2:
            raise ConfigError(f"route {nodes} needs at least two nodes")
        ifaces = []
        for a, b in zip(nodes, nodes[1:]):
            if a not in self.nodes:
                raise ConfigError(f"unknown node {a}")
            if b not in self.nodes:
                raise ConfigError(f"unknown node {b}")
            iface = self.nodes[a].ifaces.get(b)
            if iface is None:
                raise ConfigError(f"route {'-'.join(nodes)}: no link {a}-{b}")
            ifaces.append(iface)
        return Path(nodes, tuple(ifaces))

    def route(self, src: str, dst: str) -> Path:
        hops = self.routes.get((src, dst))
        if hops is None:
            rev = self.routes.get((dst, src))
            hops = rev[::-1] if rev is not None else self.shortest_path(src, dst)
        return self.path(hops)

    # forwarding -------------------------------------------------------------

    def inject(self, pkt, path: Path, sink) -> bool:
        self._uid += 1
        pkt.uid = self._uid
        entries = path.entries
        pkt.path = entries
        pkt.hop = 0
        pkt.sink = sink
        pkt.created = self.sim.now
        self.injected += 1
        return entries[0](pkt)

    # accounting -------------------------------------------------------------

    def aqm_interfaces(self) -> list[Interface]:
        """Interfaces whose statistics are sampled: flagged ones, plus any non-FIFO qdisc."""
        return [i for i in self.interfaces.values()
                if i.monitored or not isinstance(i.qdisc, DropTail)]

    def settle(self) -> None:
        for iface in self.interfaces.values():
            iface.settle()

    def qdisc_drops(self) -> int:
        return sum(i.qdisc.drops for i in self.interfaces.values())

    def in_flight(self) -> int:
        self.settle()
        return sum(i.qdisc.npackets + i.in_transit for i in self.interfaces.values())

    def check_conservation(self) -> None:
        self.settle()
        for iface in self.interfaces.values():
            iface.qdisc.check_conservation(iface.name)
            if iface.qdisc.dequeues != iface.tx_packets:
                raise AssertionError(f"{iface.name}: dequeued {iface.qdisc.dequeues} != sent {iface.tx_packets}")
        lost = self.injected - self.delivered - self.in_flight()
        if lost != self.qdisc_drops():
            raise AssertionError(f"network: injected-delivered-in_flight={lost} != qdisc drops {self.qdisc_drops()}")


def build(spec: TopologySpec, sim, qdisc_factory=None, fast_fifo: bool = True) -> Network:
    net = Network(sim)
    net.fast_fifo = fast_fifo
    for name in spec.nodes:
        net.add_node(name)
    for link in spec.links:
        net.add_link(link, qdisc_factory)
    for (src, dst), hops in spec.routes.items():
        if hops[0] != src or hops[-1] != dst:
            raise ConfigError(f"route {src}->{dst} must start at {src} and end at {dst}")
        net.path(hops)  # validates every hop
        net.routes[(src, dst)] = list(hops)
    return net
