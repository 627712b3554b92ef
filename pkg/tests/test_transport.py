import hashlib
import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from aqmsim.apps import ftp_source
from aqmsim.packet import ACK, MSS, FlowKey, Packet
from aqmsim.transport import (BLOCKED, CUBIC_BETA, CUBIC_C, DatagramReceiver, DatagramSocket,
                              MultipathConn, StreamConn, app_rtt_probe, cubic_window,
                              mptcp_schedule, open_connection)

from conftest import dumbbell, two_path


# --- CUBIC closed form --------------------------------------------------------

def independent_cubic(t, wmax_bytes, mss):
    w = wmax_bytes / mss
    k = math.pow(w * (1 - 0.7) / 0.4, 1 / 3)
    return max((0.4 * (t - k) ** 3 + w) * mss, 2 * mss)


def test_cubic_examples():
    wmax = 100 * MSS
    k = 75 ** (1 / 3)
    assert abs(k - 4.2172) < 1e-4
    assert cubic_window(k, wmax) == wmax
    assert abs(cubic_window(0.0, wmax) - 0.7 * wmax) <= 1e-9 * wmax
    assert abs(cubic_window(2.0, wmax) / MSS - 95.64) < 0.01


@given(st.floats(0, 30), st.floats(3, 5000))
def test_cubic_matches_formula(t, wseg):
    wmax = wseg * MSS
    got = cubic_window(t, wmax)
    ref = independent_cubic(t, wmax, MSS)
    assert abs(got - ref) <= 1e-9 * ref


def test_cubic_continuous_and_increasing_after_k():
    wmax = 80 * MSS
    k = (80 * 0.3 / 0.4) ** (1 / 3)
    eps = 1e-7
    assert abs(cubic_window(k + eps, wmax) - cubic_window(k - eps, wmax)) < 1e-6
    ts = [k + 0.01 * i for i in range(1, 500)]
    ws = [cubic_window(t, wmax) for t in ts]
    assert all(b > a for a, b in zip(ws, ws[1:]))


def test_cubic_rejects_nonpositive_wmax():
    with pytest.raises(ValueError):
        cubic_window(1.0, 0.0)


# --- per-ACK machinery ----------------------------------------------------------

def established(kind="droptail", **kw):
    sim, net = dumbbell(kind, **kw)
    c, s = open_connection(sim, net, "H1", "S1")
    sim.run_until(0.1)
    return sim, net, c, s


def ack(n, ts=0):
    p = Packet(FlowKey(1, 2, 3, 4, 6), 52, ACK)
    p.ack = n
    p.ts_echo = ts
    return p


def test_slow_start_increment():
    sim, net, c, s = established()
    sf = c.tx.subflows[0]
    assert sf.cwnd == 10 * MSS
    sf.send_new(0, MSS)
    sf.on_ack(ack(MSS, sim.now))
    assert sf.cwnd == 11 * MSS


def test_third_dupack_multiplicative_decrease():
    sim, net, c, s = established()
    sf = c.tx.subflows[0]
    for i in range(5):
        sf.send_new(i * MSS, MSS)
    sf.cwnd = 100 * MSS
    for _ in range(3):
        sf.on_ack(ack(0))
    assert sf.cwnd == pytest.approx(70 * MSS)
    assert sf.w_max == 100 * MSS
    assert sf.in_recovery and sf.fast_retransmits == 1
    assert sf.epoch_start == sim.now


def test_rtt_estimator():
    sim, net = dumbbell()
    conn = MultipathConn(sim, net)
    sf = StreamConn(sim, net, FlowKey(1, 2, 3, 4, 6), None, None, conn)
    assert sf.rto == 1.0
    sf.on_rtt_sample(0.1)
    assert sf.srtt == 0.1 and sf.rttvar == 0.05
    assert sf.rto == pytest.approx(0.3)
    sf.on_rtt_sample(0.1)
    assert sf.rttvar == pytest.approx(0.0375)
    for _ in range(50):
        sf.on_rtt_sample(0.01)
    assert sf.rto == 0.2  # floor


def test_timeout_resets_window():
    sim, net, c, s = established()
    sf = c.tx.subflows[0]
    for i in range(3):
        sf.send_new(i * MSS, MSS)
    sf.cwnd = 40 * MSS
    sf._timeout()
    assert sf.cwnd == 2 * MSS
    assert sf.ssthresh == pytest.approx(CUBIC_BETA * 40 * MSS)
    assert sf.timeouts == 1


def test_ack_for_unsent_data_aborts():
    sim, net, c, s = established()
    sf = c.tx.subflows[0]
    sf.on_ack(ack(sf.snd_nxt + 1))
    assert c.tx.aborted and c.aborted and s.aborted
    assert "beyond" in c.tx.error


# --- scheduler ------------------------------------------------------------------

class _Sf:
    def __init__(self, srtt, space):
        self.srtt = srtt
        self.space = space

    def has_space(self, size):
        return self.space


class _Conn:
    def __init__(self, *sfs):
        self.subflows = list(sfs)


def test_scheduler_rules():
    a = _Sf(0.010, True)
    b = _Sf(0.050, True)
    assert mptcp_schedule(_Conn(a)) is a
    assert mptcp_schedule(_Conn(b, a)) is a
    assert mptcp_schedule(_Conn(_Sf(0.01, False), _Sf(0.01, False))) is BLOCKED
    t1, t2 = _Sf(0.02, True), _Sf(0.02, True)
    assert mptcp_schedule(_Conn(t1, t2)) is t1


# --- end-to-end properties --------------------------------------------------------

def _stream_through(sim, net, c, s, nbytes, chunk, horizon):
    data = random.Random(5).randbytes(nbytes)
    got = bytearray()
    s.on_data = lambda length, payload: got.extend(payload)
    for i in range(0, nbytes, chunk):
        c.send(data[i:i + chunk])
    sim.run_until(horizon)
    return data, bytes(got)


def test_reliable_in_order_delivery_under_drops():
    sim, net = dumbbell("pie", rate=2e6, target=0.005)
    for _ in range(3):
        f, _ = open_connection(sim, net, "H1", "S1")
        ftp_source(f)
    c, s = open_connection(sim, net, "H1", "S1")
    data, got = _stream_through(sim, net, c, s, 600_000, 10_000, 30.0)
    assert hashlib.sha256(got).hexdigest() == hashlib.sha256(data).hexdigest()
    assert c.tx.subflows[0].retransmits > 0
    net.check_conservation()


def test_multipath_reassembly_under_drops():
    sim, net = two_path("pie", rate=2e6, target=0.005)
    for side in "AB":
        f, _ = open_connection(sim, net, "X", "Y", paths=[["X", f"{side}1", f"{side}2", "Y"]])
        ftp_source(f)
    c, s = open_connection(sim, net, "H", "S", paths=[["H", "A1", "A2", "S"], ["H", "B1", "B2", "S"]])
    data, got = _stream_through(sim, net, c, s, 800_000, 50_000, 40.0)
    assert got == data
    sent = [sf.snd_una for sf in c.tx.subflows]
    assert all(x > 0 for x in sent) and sum(sent) == len(data)
    assert sum(sf.retransmits for sf in c.tx.subflows) > 0


def test_window_respected_at_send_time():
    sim, net = dumbbell("pie", rate=2e6, target=0.005)
    c, s = open_connection(sim, net, "H1", "S1")
    sf = c.tx.subflows[0]
    orig = sf.send_new
    violations = []

    def checked(dseq, length, payload=None, msg=None):
        if sf.flight_estimate() + length > sf.cwnd:
            violations.append(sim.now)
        orig(dseq, length, payload, msg)

    sf.send_new = checked
    ftp_source(c)
    sim.run_until(10.0)
    assert not violations
    assert sf.data_sent > 1000


def test_full_sized_packets_are_1500_bytes():
    sim, net = dumbbell()
    c, s = open_connection(sim, net, "H1", "S1")
    sizes = set()
    iface = net.interfaces["R1->R3"]
    orig = iface.qdisc.enqueue
    iface.qdisc.enqueue = lambda p: sizes.add(p.size) or orig(p)
    c.send(10 * MSS)
    sim.run_until(1.0)
    assert sizes == {1500}


def _cwnd_trace(load_flows, multipath):
    sim, net = two_path("pie", rate=4e6, target=0.010, seed=3)
    for _ in range(load_flows):
        f, _ = open_connection(sim, net, "X", "Y", paths=[["X", "A1", "A2", "Y"]])
        ftp_source(f)
    paths = [["H", "A1", "A2", "S"], ["H", "B1", "B2", "S"]] if multipath else [["H", "B1", "B2", "S"]]
    c, s = open_connection(sim, net, "H", "S", paths=paths)
    sf = c.tx.subflows[-1]
    sf.cwnd_log = []
    ftp_source(c)
    sim.run_until(20.0)
    return sf.cwnd_log


def test_uncoupled_subflows():
    single = _cwnd_trace(0, multipath=False)
    light = _cwnd_trace(1, multipath=True)
    heavy = _cwnd_trace(4, multipath=True)
    assert len(single) > 100
    assert light == single
    assert heavy == single


def test_app_rtt_probe():
    sim, net = dumbbell(rate=100e6, delay=0.0, edge_delay=0.0005)
    # path RTT: 2 x (0.5 + 0 + 0.5) ms
    c, s = open_connection(sim, net, "H1", "S1")
    sim.run_until(0.1)
    bare = app_rtt_probe(sim, c, 200, 0)
    assert 0.002 <= bare < 0.0025
    sizes = [0, 10_000, 100_000, 400_000]
    rtts = []
    for n in sizes:
        sim2, net2 = dumbbell(rate=100e6, delay=0.0, edge_delay=0.0005)
        c2, _ = open_connection(sim2, net2, "H1", "S1")
        sim2.run_until(0.1)
        rtts.append(app_rtt_probe(sim2, c2, 200, n))
    assert rtts == sorted(rtts)


def test_app_rtt_includes_transfer_time():
    sim, net = dumbbell(rate=10e6, delay=0.010)
    c, s = open_connection(sim, net, "S1", "H1")
    sim.run_until(0.1)
    assert app_rtt_probe(sim, c, 200, 700_000) >= 0.56


# --- datagrams --------------------------------------------------------------------

def test_datagram_socket():
    sim, net = dumbbell("pie", rate=1e6, target=0.005)
    rx = DatagramReceiver()
    sock = DatagramSocket(sim, net, net.route("H1", "S1"), 4000, 5000, rx)
    sizes = []
    orig = net.interfaces["H1->R1"].entry
    sock.send(172)
    sim.run_until(0.1)
    assert rx.received == 1 and rx.bytes == 172
    with pytest.raises(ValueError):
        sock.send(1501)
    for i in range(3000):
        sock.send(1000)
    sim.run_until(30.0)
    assert rx.received <= sock.sent
    assert rx.received < sock.sent  # the 1 Mbps PIE queue dropped some
    assert sock.sent - rx.received == net.qdisc_drops()
