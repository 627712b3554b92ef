import pytest

from aqmsim.engine import Simulator
from aqmsim.topology import LinkSpec, QdiscSpec, TopologySpec, build


def dumbbell(kind="pie", rate=10e6, delay=0.010, edge_rate=100e6, edge_delay=0.001,
             seed=1, fast_fifo=True, **params):
    """H1 - R1 =bottleneck= R3 - S1, with ``kind`` on the R1->R3 egress."""
    sim = Simulator(seed)
    links = [
        LinkSpec("H1", "R1", edge_rate, edge_delay),
        LinkSpec("R1", "R3", rate, delay, QdiscSpec(kind, params, monitor=True)),
        LinkSpec("R3", "S1", edge_rate, edge_delay),
    ]
    net = build(TopologySpec(["H1", "R1", "R3", "S1"], links), sim, fast_fifo=fast_fifo)
    return sim, net


def two_path(kind="droptail", rate=10e6, delay=0.010, seed=1, **params):
    """H - A1 - A2 - S and H - B1 - B2 - S with identical bottlenecks A1->A2, B1->B2."""
    sim = Simulator(seed)
    links = []
    for side in "AB":
        links += [
            LinkSpec("H", f"{side}1", 100e6, 0.001),
            LinkSpec(f"{side}1", f"{side}2", rate, delay, QdiscSpec(kind, params, monitor=True)),
            LinkSpec(f"{side}2", "S", 100e6, 0.001),
            LinkSpec("X", f"{side}1", 100e6, 0.001),
            LinkSpec(f"{side}2", "Y", 100e6, 0.001),
        ]
    # X/Y are competing-traffic endpoints; duplicates are filtered below
    seen, uniq = set(), []
    for ln in links:
        k = frozenset((ln.a, ln.b))
        if k not in seen:
            seen.add(k)
            uniq.append(ln)
    net = build(TopologySpec(["H", "A1", "A2", "B1", "B2", "S", "X", "Y"], uniq), sim)
    return sim, net


@pytest.fixture
def sim():
    return Simulator(7)


def lossfree_dash(horizon=200.0, rate=1e9, seed=1):
    """DASH over two fat, effectively unbounded paths; returns (sim, net, session)."""
    from aqmsim.apps import DashSession

    big = QdiscSpec("droptail", {"limit": 10 ** 6})
    links = []
    for side in "AB":
        links += [
            LinkSpec("S", f"{side}1", rate, 0.001, big, big),
            LinkSpec(f"{side}1", f"{side}2", rate, 0.005, big, big),
            LinkSpec(f"{side}2", "C", rate, 0.001, big, big),
        ]
    sim = Simulator(seed)
    net = build(TopologySpec(["S", "A1", "A2", "B1", "B2", "C"], links), sim)
    dash = DashSession(sim, net, "S", "C", paths=[["S", "A1", "A2", "C"], ["S", "B1", "B2", "C"]])
    dash.start()
    sim.run_until(horizon)
    return sim, net, dash


ACCEPTANCE: dict = {}


@pytest.fixture
def criterion():
    """Record one acceptance verdict; all verdicts are echoed after the run."""
    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
