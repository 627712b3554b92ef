import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aqmsim.engine import RngStream, SimulationError, Simulator, to_ns


def test_events_fire_in_time_then_fifo_order():
    sim = Simulator()
    out = []
    sim.at(to_ns(2.0), out.append, "c")
    sim.at(to_ns(1.0), out.append, "a")
    sim.at(to_ns(1.0), out.append, "b")
    sim.run_until(5.0)
    assert out == ["a", "b", "c"]
    assert sim.time == 5.0


def test_schedule_and_cancel_accounting():
    sim = Simulator()
    fired = []
    h1 = sim.schedule(0.5, lambda: fired.append(1))
    h2 = sim.schedule(0.7, lambda: fired.append(2))
    assert sim.cancel(h2)
    assert not sim.cancel(h2)
    sim.run_until(1.0)
    assert fired == [1]
    assert h1.fired and not h1.pending
    assert h2.cancelled
    assert sim.scheduled == sim.executed + sim.cancelled_count + sim.pending


def test_negative_delay_and_finished_rejected():
    sim = Simulator()
    with pytest.raises(ValueError):
        sim.schedule(-1e-9, lambda: None)
    sim.finish()
    with pytest.raises(SimulationError):
        sim.schedule(1.0, lambda: None)


def test_run_until_cannot_go_backwards():
    sim = Simulator()
    sim.run_until(2.0)
    with pytest.raises(ValueError):
        sim.run_until(1.0)


def test_rng_streams_independent_and_reproducible():
    a = RngStream(5, "x")
    b = RngStream(5, "x")
    c = RngStream(5, "y")
    da = [a.random() for _ in range(5)]
    assert da == [b.random() for _ in range(5)]
    assert da != [c.random() for _ in range(5)]
    sim = Simulator(5)
    assert sim.rng("x") is sim.rng("x")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10**9), st.booleans()), max_size=60))
def test_event_count_invariant(items):
    sim = Simulator()
    handles = []
    for t, cancel in items:
        h = sim.schedule(t / 1e9, lambda: None)
        if cancel:
            handles.append(h)
    for h in handles:
        sim.cancel(h)
    sim.run_until(0.5)
    assert sim.scheduled == sim.executed + sim.cancelled_count + sim.pending
    sim.run_until(2.0)
    assert sim.pending == 0
    assert sim.executed == len(items) - len(handles)
