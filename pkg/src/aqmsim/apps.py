"""Application traffic: DASH streaming plus FTP, VoIP and HTTP background load."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .engine import to_ns
from .packet import UDP, FlowKey, Packet
from .transport import DatagramReceiver, open_connection

REQUEST_BYTES = 200


@dataclass(frozen=True)
class Representation:
    bitrate: int  # bits/s
    label: str = ""


VIDEO_LADDER = (
    Representation(145_000, "320x180"),
    Representation(180_000, "384x216"),
    Representation(350_000, "512x288"),
    Representation(500_000, "640x360"),
    Representation(700_000, "768x432"),
    Representation(900_000, "1024x576"),
    Representation(1_400_000, "1280x720"),
    Representation(2_750_000, "1920x1080"),
    Representation(5_500_000, "1920x1080"),
    Representation(7_000_000, "2560x1440"),
    Representation(11_000_000, "3840x2160"),
    Representation(15_000_000, "3840x2160"),
    Representation(20_000_000, "5120x2880"),
    Representation(22_500_000, "7680x4320"),
    Representation(27_500_000, "7680x4320"),
)
AUDIO_LADDER = (Representation(128_000, "aac"),)


@dataclass
class Manifest:
    segment_duration: float = 4.0
    total_duration: float = 184.0
    video: tuple = VIDEO_LADDER
    audio: tuple = AUDIO_LADDER

    def __post_init__(self):
        if self.segment_duration <= 0 or self.total_duration <= 0:
            raise ValueError("manifest durations must be positive")
        for name in ("video", "audio"):
            ladder = tuple(r if isinstance(r, Representation) else Representation(int(r))
                           for r in getattr(self, name))
            if not ladder:
                raise ValueError(f"{name} ladder is empty")
            rates = [r.bitrate for r in ladder]
            if any(b <= a for a, b in zip(rates, rates[1:])):
                raise ValueError(f"{name} ladder must be strictly ascending by bitrate")
            if rates[0] <= 0:
                raise ValueError(f"{name} bitrates must be positive")
            setattr(self, name, ladder)

    @property
    def segment_count(self) -> int:
        # round first so 184/4 style ratios never pick up float residue
        return math.ceil(round(self.total_duration / self.segment_duration, 9))

    def ladder(self, media: str) -> tuple:
        return self.video if media == "video" else self.audio


def segment_bytes(rep_bitrate: float, segment_duration: float) -> int:
    if rep_bitrate <= 0 or segment_duration <= 0:
        raise ValueError("bitrate and duration must be positive")
    return int(round(rep_bitrate * segment_duration / 8))


# --- adaptive bitrate ---------------------------------------------------------

@dataclass
class AbrState:
    estimate: float = 0.0  # bits/s
    safety: float = 0.9
    gain: float = 0.25
    samples: int = 0
    last_index: int = 0


def abr_update(state: AbrState, nbytes: int, download_time: float) -> AbrState:
    if download_time <= 0:
        raise ValueError("download_time must be positive")
    sample = 8.0 * nbytes / download_time
    if state.samples == 0:
        state.estimate = sample
    else:
        state.estimate = (1.0 - state.gain) * state.estimate + state.gain * sample
    state.samples += 1
    return state


def abr_select(state: AbrState, ladder) -> Representation:
    if not ladder:
        raise ValueError("empty ladder")
    budget = state.safety * state.estimate
    index = 0
    for i, rep in enumerate(ladder):
        if rep.bitrate <= budget:
            index = i
    state.last_index = index
    return ladder[index]


# --- playback buffer ----------------------------------------------------------

class PlayState(Enum):
    BUFFERING = "buffering"
    PLAYING = "playing"
    ENDED = "ended"


@dataclass
class SegmentRecord:
    index: int
    bitrate: int
    nbytes: int
    requested: float
    completed: float

    @property
    def download_time(self) -> float:
        return self.completed - self.requested


class PlaybackBuffer:
    """Seconds of media buffered for one media type.

    Level is kept lazily (value at ``t_ref``) and drains only while
    PLAYING.  The moment the buffer runs dry is a scheduled event; a
    generation counter discards events made stale by a later refill.
    """

    def __init__(self, sim, total_segments: int, segment_duration: float,
                 capacity: float = 10.0, threshold: float = 1.0, on_change=None):
        if threshold > capacity:
            raise ValueError("resume threshold exceeds capacity")
        self.sim = sim
        self.total_segments = total_segments
        self.segment_duration = segment_duration
        self.capacity = capacity
        self.threshold = threshold
        self.state = PlayState.BUFFERING
        self._level = 0.0
        self._t_ref = sim.time
        self.t_start = sim.time
        self.t_end: float | None = None
        self.received = 0
        self.stalls = 0
        self.startup_delay: float | None = None
        self.stall_time = 0.0
        self.play_time = 0.0
        self._gen = 0
        self.on_change = on_change

    def level(self, now: float | None = None) -> float:
        if now is None:
            now = self.sim.time
        if self.state is PlayState.PLAYING:
            return max(0.0, self._level - (now - self._t_ref))
        return self._level

    def _settle(self, now: float):
        elapsed = now - self._t_ref
        if self.state is PlayState.PLAYING:
            self._level = max(0.0, self._level - elapsed)
            self.play_time += elapsed
        elif self.state is PlayState.BUFFERING and self.startup_delay is not None:
            self.stall_time += elapsed
        self._t_ref = now

    def has_room(self, duration: float | None = None) -> bool:
        d = self.segment_duration if duration is None else duration
        return self.level() + d <= self.capacity + 1e-9

    def time_until_room(self, duration: float | None = None) -> float:
        """Seconds until a segment of ``duration`` fits (inf if not draining)."""
        d = self.segment_duration if duration is None else duration
        excess = self.level() + d - self.capacity
        if excess <= 0:
            return 0.0
        return excess if self.state is PlayState.PLAYING else math.inf

    def add_segment(self, duration: float | None = None) -> None:
        now = self.sim.time
        self._settle(now)
        self._level += self.segment_duration if duration is None else duration
        if self._level > self.capacity + 1e-9:
            raise AssertionError(f"buffer overflow: {self._level:.6f} s > {self.capacity} s")
        self.received += 1
        if self.state is PlayState.BUFFERING and (
                self._level >= self.threshold or self.received == self.total_segments):
            if self.startup_delay is None:
                self.startup_delay = now - self.t_start
            self.state = PlayState.PLAYING
        if self.state is PlayState.PLAYING:
            self._arm_empty()

    def _arm_empty(self):
        self._gen += 1
        self.sim.at(self.sim.now + to_ns(self._level), self._on_empty, self._gen)

    def _on_empty(self, gen):
        if gen != self._gen or self.state is not PlayState.PLAYING:
            return
        self._settle(self.sim.time)
        self._level = 0.0
        if self.received >= self.total_segments:
            self.state = PlayState.ENDED
            self.t_end = self.sim.time
        else:
            self.state = PlayState.BUFFERING
            self.stalls += 1
        if self.on_change is not None:
            self.on_change()

    def close(self, now: float) -> None:
        """Account time up to ``now`` (run horizon) without ending the session."""
        if self.state is not PlayState.ENDED:
            self._settle(now)


# --- DASH ---------------------------------------------------------------------

class MediaStream:
    """Sequential segment fetcher for one media type."""

    def __init__(self, session: "DashSession", media: str):
        self.session = session
        self.media = media
        m = session.manifest
        self.ladder = m.ladder(media)
        self.abr = AbrState(safety=session.abr_safety)
        self.buffer = PlaybackBuffer(session.sim, m.segment_count, m.segment_duration,
                                     session.capacity, session.threshold, on_change=self.step)
        self.next_index = 0
        self.outstanding: tuple | None = None  # (index, rep, nbytes, t_request)
        self.log: list[SegmentRecord] = []
        self._wake_gen = 0

    def step(self, _=None):
        """Issue the next request if the buffer has room; otherwise sleep until it will."""
        s = self.session
        if s.aborted or self.outstanding is not None:
            return
        if self.next_index >= s.manifest.segment_count:
            return
        wait = self.buffer.time_until_room()
        if wait > 0:
            if wait != math.inf:
                self._wake_gen += 1
                s.sim.at(s.sim.now + max(1, math.ceil(wait * 1e9)), self._wake, self._wake_gen)
            return
        if len(self.ladder) == 1:
            rep = self.ladder[0]
        elif self.abr.samples == 0:
            rep = self.ladder[0]
        else:
            rep = abr_select(self.abr, self.ladder)
        nbytes = segment_bytes(rep.bitrate, s.manifest.segment_duration)
        self.outstanding = (self.next_index, rep, nbytes, s.sim.time)
        s.request(self.media, self.next_index, rep, nbytes)
        self.next_index += 1

    def _wake(self, gen):
        if gen == self._wake_gen:
            self.step()

    def on_response(self, index: int):
        idx, rep, nbytes, t_req = self.outstanding
        if idx != index:
            raise AssertionError(f"{self.media}: response {index} while waiting for {idx}")
        self.outstanding = None
        now = self.session.sim.time
        self.log.append(SegmentRecord(index, rep.bitrate, nbytes, t_req, now))
        abr_update(self.abr, nbytes, now - t_req)
        self.buffer.add_segment()
        self.step()

    @property
    def rtt_log(self) -> list[float]:
        return [r.download_time for r in self.log]


class DashSession:
    """DASH server at ``server`` streaming to a client at ``client`` over one
    (multipath) connection; audio and video are fetched independently."""

    def __init__(self, sim, net, server: str, client: str, manifest: Manifest | None = None,
                 paths: list[list[str]] | None = None, capacity: float = 10.0,
                 threshold: float = 1.0, abr_safety: float = 0.9, dport: int = 80):
        self.sim = sim
        self.net = net
        self.manifest = manifest or Manifest()
        self.capacity = capacity
        self.threshold = threshold
        self.abr_safety = abr_safety
        self.aborted = False
        self.error: str | None = None
        cpaths = [list(p)[::-1] for p in paths] if paths else None  # client -> server
        self.csock, self.ssock = open_connection(sim, net, client, server, cpaths, dport=dport)
        self.ssock.on_message = self._serve
        self.csock.on_message = self._deliver
        self.streams = {"video": MediaStream(self, "video"), "audio": MediaStream(self, "audio")}
        self.requests = 0

    def start(self):
        for st in self.streams.values():
            st.step()

    def request(self, media, index, rep, nbytes):
        self.requests += 1
        self.csock.send(REQUEST_BYTES, msg=("GET", media, index, nbytes))

    def _serve(self, msg):
        _, media, index, nbytes = msg
        self.ssock.send(nbytes, msg=("SEG", media, index))

    def _deliver(self, msg):
        _, media, index = msg
        self.streams[media].on_response(index)

    def poll(self) -> bool:
        """Refresh the abort flag from the transport; True if aborted."""
        if not self.aborted and self.csock.aborted:
            self.aborted = True
            self.error = self.csock.tx.error or self.ssock.tx.error
        return self.aborted

    @property
    def subflows(self):
        return self.ssock.tx.subflows


# --- background sources -------------------------------------------------------

def ftp_source(sock) -> None:
    """Keep ``sock``'s send queue permanently non-empty."""
    sock.tx.greedy = True
    sock.tx.push()


class FtpFlow:
    def __init__(self, sim, net, sender: str, receiver: str, dport: int = 5201):
        self.csock, self.ssock = open_connection(sim, net, sender, receiver, dport=dport)
        self.received = 0
        self.ssock.on_data = self._count
        ftp_source(self.csock)

    def _count(self, length, payload):
        self.received += length


class VoipSource:
    """Constant-rate calls between two hosts.

    A call starts every ``1/calls_per_second`` seconds and sends one packet
    each way per ``period`` for ``duration`` seconds.  Each call's packets
    fall on a random phase slot of the period so that calls started on the
    same grid do not emit in lockstep.
    """

    def __init__(self, sim, net, a: str, b: str, calls_per_second: float = 10.0,
                 duration: float = 10.0, packet_bytes: int = 172, period: float = 0.020,
                 slots: int = 20, start: float = 0.0, stop: float | None = None,
                 rng_label: str | None = None, dport: int = 5060):
        if calls_per_second <= 0 or duration <= 0 or period <= 0:
            raise ValueError("VoIP rates and durations must be positive")
        self.sim = sim
        self.net = net
        self.fwd = net.route(a, b)
        self.rev = net.route(b, a)
        self.node_a = net.nodes[a]
        self.interval_ns = to_ns(1.0 / calls_per_second)
        self.duration_ns = to_ns(duration)
        self.packet_bytes = packet_bytes
        self.slots = slots
        self.slot_ns = to_ns(period / slots)
        self.stop_ns = to_ns(stop) if stop is not None else None
        self.dport = dport
        self.rng = sim.rng(rng_label or f"voip:{a}-{b}")
        self.calls: list[list] = [[] for _ in range(slots)]  # slot -> [end_ns, key_ab, key_ba]
        self.rx_ab = DatagramReceiver()
        self.rx_ba = DatagramReceiver()
        self.started = 0
        self.sent = 0
        self._tick_index = 0
        self._ticking = False
        sim.at(to_ns(start), self._start_call)

    def _start_call(self, _=None):
        sim = self.sim
        if self.stop_ns is not None and sim.now >= self.stop_ns:
            return
        sport = self.node_a.ephemeral_port()
        key = FlowKey(self.fwd.src_addr, self.fwd.dst_addr, sport, self.dport, UDP)
        slot = self.rng.randrange(self.slots)
        self.calls[slot].append([sim.now + self.duration_ns, key, key.reversed()])
        self.started += 1
        if not self._ticking:
            self._ticking = True
            t = -(-sim.now // self.slot_ns) * self.slot_ns
            self._tick_index = t // self.slot_ns
            sim.at(t, self._tick)
        sim.at(sim.now + self.interval_ns, self._start_call)

    def _tick(self, _=None):
        sim = self.sim
        now = sim.now
        bucket = self.calls[self._tick_index % self.slots]
        if bucket:
            inject = self.net.inject
            size = self.packet_bytes
            fwd, rev = self.fwd, self.rev
            rx_ab, rx_ba = self.rx_ab, self.rx_ba
            live = []
            for call in bucket:
                if call[0] <= now:
                    continue
                live.append(call)
                inject(Packet(call[1], size), fwd, rx_ab)
                inject(Packet(call[2], size), rev, rx_ba)
            self.sent += 2 * len(live)
            self.calls[self._tick_index % self.slots] = live
        self._tick_index += 1
        if any(self.calls) or (self.stop_ns is None or now < self.stop_ns):
            sim.at(now + self.slot_ns, self._tick)
        else:
            self._ticking = False

    @property
    def active_calls(self) -> int:
        return sum(len(b) for b in self.calls)

    @property
    def received(self) -> int:
        return self.rx_ab.received + self.rx_ba.received


def voip_source(sim, net, a: str, b: str, calls_per_second: float = 10.0,
                call_duration: float = 10.0, **kw) -> VoipSource:
    return VoipSource(sim, net, a, b, calls_per_second, call_duration, **kw)


class HttpSource:
    """Open a fresh connection every ``1/rate`` seconds, send a GET, read the reply.

    A zero-byte body is still answered with a one-byte status marker so
    that the exchange completes one round trip later.
    """

    def __init__(self, sim, net, client: str, server: str, rate: float = 15.0,
                 response_bytes: int = 100_000, duration: float = 180.0, start: float = 0.0,
                 dport: int = 80):
        if rate <= 0 or duration <= 0 or response_bytes < 0:
            raise ValueError("HTTP rate/duration must be positive and response size non-negative")
        self.sim = sim
        self.net = net
        self.client = client
        self.server = server
        self.response_bytes = response_bytes
        self.dport = dport
        self.interval_ns = to_ns(1.0 / rate)
        self.count = int(round(rate * duration))
        self.issued = 0
        self.completed = 0
        self.completion_times: list[float] = []
        self.keys: list = []
        sim.at(to_ns(start), self._issue)

    def _issue(self, _=None):
        sim = self.sim
        csock, ssock = open_connection(sim, self.net, self.client, self.server, dport=self.dport)
        self.keys.append(csock.tx.subflows[0].key)
        t0 = sim.time
        body = max(1, self.response_bytes)
        ssock.on_message = lambda msg: ssock.send(body, msg="200")
        csock.on_message = lambda msg: self._done(t0)
        csock.send(REQUEST_BYTES, msg="GET")
        self.issued += 1
        if self.issued < self.count:
            sim.at(sim.now + self.interval_ns, self._issue)

    def _done(self, t0):
        self.completed += 1
        self.completion_times.append(self.sim.time - t0)

    @property
    def incomplete(self) -> int:
        return self.issued - self.completed


def http_source(sim, net, client: str, server: str, rate: float = 15.0,
                response_bytes: int = 100_000, duration: float = 180.0, **kw) -> HttpSource:
    return HttpSource(sim, net, client, server, rate, response_bytes, duration, **kw)
