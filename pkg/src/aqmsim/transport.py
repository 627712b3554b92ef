"""Reliable byte streams with CUBIC, a multipath connection layer, and datagrams.

A connection direction is a :class:`MultipathConn` (sender side) feeding a
:class:`MultipathReceiver` at the peer.  Each path of a connection is a
:class:`StreamConn`: its own sequence space, congestion window, RTT
estimator and retransmission machinery.  Plain single-path TCP is just a
multipath connection with one subflow.  Writes are never coalesced, so the
segment that carries the last byte of a write also carries its message tag.
"""

from __future__ import annotations

import math
from collections import deque

from .packet import ACK, DATA, DGRAM, MSS, MTU, TCP, TCP_HEADER, UDP, FlowKey, Packet

CUBIC_C = 0.4
CUBIC_BETA = 0.7
INITIAL_WINDOW = 10  # segments
MIN_RTO = 0.2
INITIAL_RTO = 1.0
MAX_RTO = 60.0
BLOCKED = None


class ProtocolError(RuntimeError):
    pass


def cubic_window(t_since_loss: float, w_max: float, mss: int = MSS) -> float:
    """CUBIC target window in bytes, ``t_since_loss`` seconds into an epoch.

    ``w_max`` is in bytes; the curve itself is evaluated in segments.
    """
    if w_max <= 0:
        raise ValueError("w_max must be positive")
    k = ((w_max / mss) * (1.0 - CUBIC_BETA) / CUBIC_C) ** (1.0 / 3.0)
    w = w_max + CUBIC_C * (t_since_loss - k) ** 3 * mss
    return max(w, 2.0 * mss)


def cubic_k(w_max: float, mss: int = MSS) -> float:
    return ((w_max / mss) * (1.0 - CUBIC_BETA) / CUBIC_C) ** (1.0 / 3.0)


class Segment:
    __slots__ = ("seq", "length", "dseq", "payload", "msg", "sent", "in_flight", "retx")

    def __init__(self, seq, length, dseq, payload, msg):
        self.seq = seq
        self.length = length
        self.dseq = dseq
        self.payload = payload
        self.msg = msg
        self.sent = 0
        self.in_flight = False
        self.retx = 0


class StreamReceiver:
    """Subflow receive side: cumulative ACKs, out-of-order hold-back."""

    def __init__(self, sim, net, key: FlowKey, ack_path, owner: "MultipathReceiver"):
        self.sim = sim
        self.net = net
        self.ack_key = key.reversed()
        self.ack_path = ack_path
        self.owner = owner
        self.rcv_nxt = 0
        self.ooo: dict[int, tuple] = {}
        self.ack_sink = None
        self.packets = 0
        self.acks_sent = 0

    def on_packet(self, pkt):
        self.packets += 1
        seq = pkt.seq
        if seq == self.rcv_nxt:
            owner = self.owner
            owner.on_mapping(pkt.dseq, pkt.length, pkt.payload, pkt.msg)
            nxt = seq + pkt.length
            ooo = self.ooo
            while nxt in ooo:
                dseq, length, payload, msg = ooo.pop(nxt)
                owner.on_mapping(dseq, length, payload, msg)
                nxt += length
            self.rcv_nxt = nxt
        elif seq > self.rcv_nxt and seq not in self.ooo:
            self.ooo[seq] = (pkt.dseq, pkt.length, pkt.payload, pkt.msg)
        ack = Packet(self.ack_key, TCP_HEADER, ACK)
        ack.ack = self.rcv_nxt
        ack.ts_echo = pkt.ts
        self.acks_sent += 1
        self.net.inject(ack, self.ack_path, self.ack_sink)


class StreamConn:
    """One congestion-controlled subflow (sender side)."""

    def __init__(self, sim, net, key: FlowKey, path, rpath, owner: "MultipathConn", index: int = 0,
                 mss: int = MSS):
        self.sim = sim
        self.net = net
        self.key = key
        self.path = path
        self.rpath = rpath
        self.owner = owner
        self.index = index
        self.mss = mss
        self.cwnd = float(INITIAL_WINDOW * mss)
        self.ssthresh = math.inf
        self.srtt: float | None = None
        self.rttvar: float | None = None
        self.rto = INITIAL_RTO
        self.snd_una = 0
        self.snd_nxt = 0
        self.unacked: deque[Segment] = deque()
        self.resend: deque[Segment] = deque()
        self.flight = 0
        self.dupacks = 0
        self.in_recovery = False
        self.recover = 0
        self.w_max = 0.0
        self.epoch_start: int | None = None
        self.rto_deadline: int | None = None
        self._timer_armed = False
        self.established = True
        self.rx: StreamReceiver | None = None
        self.data_sent = 0
        self.retransmits = 0
        self.fast_retransmits = 0
        self.timeouts = 0
        self.cwnd_log: list | None = None

    # window state -----------------------------------------------------------

    def flight_estimate(self) -> int:
        if self.in_recovery:
            est = self.flight - self.dupacks * self.mss
            return est if est > 0 else 0
        return self.flight

    def has_space(self, size: int) -> bool:
        return (self.established and not self.resend
                and self.flight_estimate() + size <= self.cwnd)

    def on_rtt_sample(self, m: float) -> None:
        if self.srtt is None:
            self.srtt = m
            self.rttvar = m / 2
        else:
            self.rttvar = 0.75 * self.rttvar + 0.25 * abs(self.srtt - m)
            self.srtt = 0.875 * self.srtt + 0.125 * m
        rto = self.srtt + 4 * self.rttvar
        self.rto = min(MAX_RTO, max(MIN_RTO, rto))

    # sending ----------------------------------------------------------------

    def send_new(self, dseq: int, length: int, payload=None, msg=None) -> None:
        seg = Segment(self.snd_nxt, length, dseq, payload, msg)
        self.snd_nxt += length
        self.unacked.append(seg)
        self._xmit(seg)

    def _xmit(self, seg: Segment):
        sim = self.sim
        seg.sent = sim.now
        if not seg.in_flight:
            seg.in_flight = True
            self.flight += seg.length
        pkt = Packet(self.key, seg.length + TCP_HEADER, DATA)
        pkt.seq = seg.seq
        pkt.length = seg.length
        pkt.dseq = seg.dseq
        pkt.ts = sim.now
        pkt.payload = seg.payload
        pkt.msg = seg.msg
        self.data_sent += 1
        if self.rto_deadline is None:
            self._set_deadline()
        self.net.inject(pkt, self.path, self.rx.on_packet)

    def _retransmit(self, seg: Segment):
        seg.retx += 1
        self.retransmits += 1
        self._xmit(seg)

    def _pump_resend(self):
        resend = self.resend
        while resend and self.flight + resend[0].length <= self.cwnd:
            self._retransmit(resend.popleft())

    # timers -----------------------------------------------------------------

    def _set_deadline(self):
        self.rto_deadline = self.sim.now + int(self.rto * 1e9)
        if not self._timer_armed:
            self._timer_armed = True
            self.sim.at(self.rto_deadline, self._on_timer)

    def _on_timer(self, _=None):
        self._timer_armed = False
        deadline = self.rto_deadline
        if deadline is None or not self.unacked or self.owner.aborted:
            return
        if self.sim.now < deadline:
            self._timer_armed = True
            self.sim.at(deadline, self._on_timer)
            return
        self._timeout()

    def _timeout(self):
        self.timeouts += 1
        prev = self.cwnd
        self.ssthresh = max(CUBIC_BETA * prev, 2.0 * self.mss)
        self.w_max = prev
        self.cwnd = 2.0 * self.mss
        self.epoch_start = None
        self.in_recovery = False
        self.dupacks = 0
        self.recover = self.snd_nxt
        self.rto = min(MAX_RTO, self.rto * 2)
        for seg in self.unacked:
            seg.in_flight = False
        self.flight = 0
        self.resend = deque(self.unacked)
        self._log_cwnd()
        self._set_deadline()
        self._pump_resend()

    # ACK processing ---------------------------------------------------------

    def on_ack(self, pkt):
        owner = self.owner
        if owner.aborted:
            return
        ack = pkt.ack
        if ack > self.snd_nxt:
            owner.abort(f"subflow {self.index}: ACK {ack} beyond snd_nxt {self.snd_nxt}")
            return
        if ack > self.snd_una:
            now = self.sim.now
            self.on_rtt_sample((now - pkt.ts_echo) * 1e-9)
            acked = ack - self.snd_una
            self.snd_una = ack
            unacked = self.unacked
            while unacked and unacked[0].seq + unacked[0].length <= ack:
                seg = unacked.popleft()
                if seg.in_flight:
                    self.flight -= seg.length
                    seg.in_flight = False
            resend = self.resend
            while resend and resend[0].seq < ack:
                resend.popleft()
            if self.in_recovery:
                self.dupacks = 0
                if ack >= self.recover:
                    self.in_recovery = False
                    self.cwnd = self.ssthresh
                elif unacked:
                    self._retransmit(unacked[0])
            else:
                self.dupacks = 0
                self._grow(acked)
            if unacked:
                self._set_deadline()
            else:
                self.rto_deadline = None
            if self.resend:
                self._pump_resend()
            if not self.resend:
                owner.push()
        elif ack == self.snd_una and self.unacked:
            self.dupacks += 1
            if self.in_recovery:
                owner.push()
            elif self.dupacks == 3 and self.snd_una >= self.recover and not self.resend:
                self._fast_retransmit()

    def _fast_retransmit(self):
        self.fast_retransmits += 1
        self.w_max = self.cwnd
        self.cwnd = max(CUBIC_BETA * self.cwnd, 2.0 * self.mss)
        self.ssthresh = self.cwnd
        self.epoch_start = self.sim.now
        self.in_recovery = True
        self.recover = self.snd_nxt
        self._log_cwnd()
        self._retransmit(self.unacked[0])

    def _grow(self, acked: int):
        mss = self.mss
        cwnd = self.cwnd
        if cwnd < self.ssthresh:
            self.cwnd = cwnd + mss
        else:
            now = self.sim.now
            if self.epoch_start is None:
                self.epoch_start = now
                if self.w_max < cwnd:
                    self.w_max = cwnd
            target = cubic_window((now - self.epoch_start) * 1e-9, self.w_max, mss)
            if target > 1.5 * cwnd:
                target = 1.5 * cwnd
            scale = acked / mss
            if target > cwnd:
                self.cwnd = cwnd + mss * (target - cwnd) / cwnd * scale
            else:
                self.cwnd = cwnd + mss * mss / (100.0 * cwnd) * scale
        self._log_cwnd()

    def _log_cwnd(self):
        if self.cwnd_log is not None:
            self.cwnd_log.append((self.sim.now, self.cwnd))


def mptcp_schedule(conn: "MultipathConn", size: int = MSS):
    """Pick the subflow for the next segment: smallest srtt among those with
    window space, ties to the lowest index.  Returns ``BLOCKED`` (None) when
    no subflow can take ``size`` bytes now."""
    best = None
    best_rtt = math.inf
    for sf in conn.subflows:
        if not sf.has_space(size):
            continue
        rtt = sf.srtt if sf.srtt is not None else math.inf
        if best is None or rtt < best_rtt:
            best = sf
            best_rtt = rtt
    return best


class MultipathConn:
    """Sender side of one connection direction."""

    def __init__(self, sim, net, mss: int = MSS):
        self.sim = sim
        self.net = net
        self.mss = mss
        self.subflows: list[StreamConn] = []
        self.queue: deque[list] = deque()  # [remaining, payload, offset, msg]
        self.next_dseq = 0
        self.queued_bytes = 0
        self.greedy = False
        self.aborted = False
        self.error: str | None = None
        self.on_abort = None
        self.established = False

    def add_subflow(self, key: FlowKey, path, rpath) -> StreamConn:
        sf = StreamConn(self.sim, self.net, key, path, rpath, self, len(self.subflows), self.mss)
        self.subflows.append(sf)
        return sf

    def send(self, data, msg=None) -> None:
        """Queue ``data`` (a byte count or real bytes) for in-order delivery."""
        if isinstance(data, int):
            length, payload = data, None
        else:
            payload = bytes(data)
            length = len(payload)
        if length <= 0:
            raise ValueError("write must carry at least one byte")
        self.queue.append([length, payload, 0, msg])
        self.queued_bytes += length
        if self.established:
            self.push()

    def push(self) -> None:
        if self.aborted or not self.established:
            return
        mss = self.mss
        queue = self.queue
        while True:
            if not queue:
                if not self.greedy:
                    return
                queue.append([1 << 40, None, 0, None])
                self.queued_bytes += 1 << 40
            chunk = queue[0]
            take = chunk[0] if chunk[0] < mss else mss
            sf = mptcp_schedule(self, take)
            if sf is BLOCKED:
                return
            payload = chunk[1]
            off = chunk[2]
            piece = payload[off:off + take] if payload is not None else None
            chunk[0] -= take
            chunk[2] = off + take
            msg = None
            if chunk[0] == 0:
                msg = chunk[3]
                queue.popleft()
            self.queued_bytes -= take
            dseq = self.next_dseq
            self.next_dseq = dseq + take
            sf.send_new(dseq, take, piece, msg)

    def abort(self, reason: str) -> None:
        if self.aborted:
            return
        self.aborted = True
        self.error = reason
        if self.on_abort is not None:
            self.on_abort(reason)

    @property
    def acked_bytes(self) -> int:
        return sum(sf.snd_una for sf in self.subflows)


class MultipathReceiver:
    """Connection-level reassembly by data sequence number."""

    def __init__(self):
        self.data_nxt = 0
        self.ooo: dict[int, tuple] = {}
        self.on_data = None  # (length, payload, msg) -> None
        self.delivered = 0

    def on_mapping(self, dseq, length, payload, msg):
        if dseq == self.data_nxt:
            self._deliver(length, payload, msg)
            ooo = self.ooo
            while self.data_nxt in ooo:
                self._deliver(*ooo.pop(self.data_nxt))
        elif dseq > self.data_nxt:
            self.ooo.setdefault(dseq, (length, payload, msg))

    def _deliver(self, length, payload, msg):
        self.data_nxt += length
        self.delivered += length
        if self.on_data is not None:
            self.on_data(length, payload, msg)


class StreamSocket:
    """One endpoint of a bidirectional (possibly multipath) connection."""

    def __init__(self, sim, net, host: str):
        self.sim = sim
        self.host = host
        self.tx = MultipathConn(sim, net)
        self.rx = MultipathReceiver()
        self.rx.on_data = self._on_data
        self.on_data = None  # (length, payload) -> None
        self.on_message = None  # (msg) -> None
        self.on_established = None
        self.peer: StreamSocket | None = None

    def send(self, data, msg=None) -> None:
        self.tx.send(data, msg)

    def _on_data(self, length, payload, msg):
        if self.on_data is not None:
            self.on_data(length, payload)
        if msg is not None and self.on_message is not None:
            self.on_message(msg)

    def _establish(self, _=None):
        self.tx.established = True
        if self.on_established is not None:
            self.on_established(self)
        self.tx.push()

    @property
    def aborted(self) -> bool:
        return self.tx.aborted or (self.peer is not None and self.peer.tx.aborted)


def open_connection(sim, net, client: str, server: str, paths: list[list[str]] | None = None,
                    sport: int | None = None, dport: int = 80):
    """Create a connected socket pair, one subflow per path.

    ``paths`` are node lists from client to server (default: the routing
    table's path).  Setup costs one round trip of the slowest path, which
    also seeds each subflow's RTT estimator; data can be queued before then.
    """
    if paths is None:
        paths = [net.route(client, server).nodes]
    csock = StreamSocket(sim, net, client)
    ssock = StreamSocket(sim, net, server)
    csock.peer, ssock.peer = ssock, csock
    if sport is None:
        sport = net.nodes[client].ephemeral_port()
    setup_ns = 0
    for nodes in paths:
        if nodes[0] != client or nodes[-1] != server:
            raise ValueError(f"path {nodes} does not join {client} and {server}")
        fwd = net.path(nodes)
        rev = net.path(nodes[::-1])
        key = FlowKey(fwd.src_addr, fwd.dst_addr, sport, dport, TCP)
        rtt_ns = fwd.base_rtt_ns(reverse=rev)
        setup_ns = max(setup_ns, rtt_ns)
        _wire(sim, net, csock, ssock, key, fwd, rev, rtt_ns)
        _wire(sim, net, ssock, csock, key.reversed(), rev, fwd, rtt_ns)
    for sock in (csock, ssock):
        sock.tx.on_abort = _abort_both(csock, ssock)
    sim.at(sim.now + setup_ns, ssock._establish)
    sim.at(sim.now + setup_ns, csock._establish)
    return csock, ssock


def app_rtt_probe(sim, csock: StreamSocket, request_size: int, response_size: int,
                  timeout: float = 60.0) -> float:
    """Time from handing a request to the transport until the last byte of
    the peer's response is delivered, driving ``sim`` until it completes.

    The peer answers any request with ``response_size`` bytes; an empty
    response is sent as a one-byte status marker.
    """
    if not csock.tx.established:
        raise RuntimeError("connection not established")
    ssock = csock.peer
    done: list[float] = []
    ssock.on_message = lambda msg: ssock.send(max(1, response_size), msg="response")
    csock.on_message = lambda msg: done.append(sim.time)
    t0 = sim.time
    csock.send(request_size, msg="request")
    deadline = t0 + timeout
    while not done and sim.time < deadline and not csock.aborted:
        sim.run_until(min(sim.time + 0.05, deadline))
    if not done:
        raise RuntimeError(f"no response within {timeout} s")
    return done[0] - t0


def _wire(sim, net, src_sock, dst_sock, key, fwd, rev, rtt_ns):
    sf = src_sock.tx.add_subflow(key, fwd, rev)
    rx = StreamReceiver(sim, net, key, rev, dst_sock.rx)
    rx.ack_sink = sf.on_ack
    sf.rx = rx
    sf.on_rtt_sample(rtt_ns * 1e-9)


def _abort_both(a, b):
    def handler(reason):
        for sock in (a, b):
            sock.tx.aborted = True
            sock.tx.error = sock.tx.error or reason
    return handler


class DatagramSocket:
    """Fire-and-forget datagrams toward a fixed destination."""

    def __init__(self, sim, net, path, sport: int, dport: int, sink=None, mtu: int = MTU):
        self.sim = sim
        self.net = net
        self.path = path
        self.key = FlowKey(path.src_addr, path.dst_addr, sport, dport, UDP)
        self.sink = sink
        self.mtu = mtu
        self.sent = 0

    def send(self, size: int) -> None:
        if size > self.mtu:
            raise ValueError(f"datagram of {size} bytes exceeds MTU {self.mtu}")
        if size <= 0:
            raise ValueError("datagram size must be positive")
        self.sent += 1
        self.net.inject(Packet(self.key, size, DGRAM), self.path, self.sink)


class DatagramReceiver:
    def __init__(self):
        self.received = 0
        self.bytes = 0

    def __call__(self, pkt):
        self.received += 1
        self.bytes += pkt.size
