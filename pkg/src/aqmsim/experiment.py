"""Build a scenario, drive it for the horizon, and collect per-sample results."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .apps import AUDIO_LADDER, DashSession, FtpFlow, HttpSource, Manifest, PlayState, Representation, VoipSource
from .config import ScenarioConfig
from .engine import SimulationError, Simulator, to_ns
from .metrics import DELAY_COLUMNS, QOE_COLUMNS, DelaySeries, QoeReport, aggregate, qoe_report
from .qdisc import FqPieQdisc
from .topology import build

log = logging.getLogger(__name__)


@dataclass
class SampleResult:
    sample: int
    seed: int
    qoe: dict  # media -> QoeReport
    delays: list  # DelaySeries per AQM interface
    stats: dict = field(default_factory=dict)
    error: str | None = None


class Scenario:
    """A live instance of a scenario: network, traffic and samplers."""

    def __init__(self, cfg: ScenarioConfig, seed: int):
        self.cfg = cfg
        self.sim = sim = Simulator(seed)
        self.net = net = build(cfg.topology(), sim)
        self.aqm_ifaces = net.aqm_interfaces()
        self.delays = [DelaySeries(i.name) for i in self.aqm_ifaces]
        self.buffer_samples = {"video": [], "audio": []}
        self.dash = None
        if cfg.dash is not None:
            d = cfg.dash
            video = tuple(Representation(b) for b in d.video_ladder) if d.video_ladder else None
            audio = tuple(Representation(b) for b in d.audio_ladder) if d.audio_ladder else AUDIO_LADDER
            manifest = Manifest(d.segment_duration, d.total_duration, audio=audio,
                                **({"video": video} if video else {}))
            self.dash = DashSession(sim, net, d.server, d.client, manifest, d.paths or None,
                                    d.capacity, d.threshold, d.abr_safety)
        self.ftp = [FtpFlow(sim, net, f.sender, f.receiver) for f in cfg.ftp for _ in range(f.count)]
        self.voip = [VoipSource(sim, net, v.a, v.b, v.rate, v.duration, v.packet_bytes,
                                rng_label=f"voip:{i}:{v.a}-{v.b}")
                     for i, v in enumerate(cfg.voip)]
        self.http = [HttpSource(sim, net, h.client, h.server, h.rate, h.response_bytes, h.duration)
                     for h in cfg.http]
        if self.dash is not None:
            self.dash.start()
        self._interval_ns = to_ns(cfg.sampling_interval)
        sim.at(self._interval_ns, self._sample)

    def _sample(self, _=None):
        sim = self.sim
        t = sim.time
        for iface, series in zip(self.aqm_ifaces, self.delays):
            q = iface.qdisc
            series.add(t, q.avg_qdelay(), q.drop_probability(), q.nbytes, q.drops)
        if self.dash is not None:
            if self.dash.poll():
                raise SimulationError(f"DASH session aborted: {self.dash.error}")
            for media, st in self.dash.streams.items():
                if st.buffer.state is not PlayState.ENDED:
                    self.buffer_samples[media].append((t, st.buffer.level(t)))
        sim.at(sim.now + self._interval_ns, self._sample)

    def run(self) -> None:
        self.sim.run_until(self.cfg.horizon)
        self.sim.finish()

    def check(self) -> None:
        self.net.check_conservation()
        for iface in self.aqm_ifaces:
            if isinstance(iface.qdisc, FqPieQdisc):
                iface.qdisc.check_invariants()

    def qoe(self) -> dict:
        out = {}
        if self.dash is None:
            return out
        for media in ("video", "audio"):
            st = self.dash.streams[media]
            st.buffer.close(self.sim.time)
            out[media] = qoe_report(media, st.log, self.buffer_samples[media],
                                    st.buffer.stalls, st.buffer.startup_delay)
        return out

    def stats(self) -> dict:
        net = self.net
        s = {
            "events": self.sim.executed,
            "injected": net.injected,
            "delivered": net.delivered,
            "drops": {i.name: i.qdisc.drops for i in net.interfaces.values() if i.qdisc.drops},
        }
        for i in self.aqm_ifaces:
            s.setdefault("utilization", {})[i.name] = round(
                i.tx_bytes * 8 / (i.rate_bps * self.sim.time), 6) if self.sim.time > 0 else 0.0
        if self.dash is not None:
            s["dash_segments"] = {m: len(st.log) for m, st in self.dash.streams.items()}
            s["dash_subflow_bytes"] = [sf.snd_una for sf in self.dash.subflows]
            s["dash_retransmits"] = sum(sf.retransmits for sf in self.dash.subflows)
        s["voip_sent"] = sum(v.sent for v in self.voip)
        s["voip_received"] = sum(v.received for v in self.voip)
        s["http_issued"] = sum(h.issued for h in self.http)
        s["http_incomplete"] = sum(h.incomplete for h in self.http)
        s["ftp_bytes"] = [f.received for f in self.ftp]
        return s


def run_sample(cfg: ScenarioConfig, sample: int) -> SampleResult:
    seed = cfg.seed + sample
    sc = Scenario(cfg, seed)
    sc.run()
    sc.check()
    return SampleResult(sample, seed, sc.qoe(), sc.delays, sc.stats())


def _run_sample_safe(args):
    cfg, sample = args
    try:
        return run_sample(cfg, sample)
    except (SimulationError, AssertionError) as exc:
        return SampleResult(sample, cfg.seed + sample, {}, [], {}, error=f"{type(exc).__name__}: {exc}")


@dataclass
class RunReport:
    digest: str
    config: dict
    results: list

    @property
    def failed(self) -> list:
        return [r for r in self.results if r.error]

    def qoe_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(QOE_COLUMNS)
        for r in self.results:
            for media in ("video", "audio"):
                if media in r.qoe:
                    w.writerow(r.qoe[media].row(r.sample, r.seed))
        return buf.getvalue()

    def delay_csv(self, result: SampleResult) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(DELAY_COLUMNS)
        for series in result.delays:
            for row in series.rows():
                w.writerow(row)
        return buf.getvalue()

    def mean_delay_csv(self) -> str:
        ok = [r for r in self.results if not r.error and r.delays]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(DELAY_COLUMNS)
        if ok:
            for k, series in enumerate(ok[0].delays):
                n = min(len(r.delays[k].samples) for r in ok)
                for j in range(n):
                    rows = [r.delays[k].samples[j] for r in ok]
                    m = len(rows)
                    w.writerow([repr(round(rows[0][0], 9)), series.iface,
                                repr(round(sum(x[1] for x in rows) / m * 1e3, 9)),
                                repr(round(sum(x[2] for x in rows) / m, 9)),
                                repr(round(sum(x[3] for x in rows) / m, 3)),
                                repr(round(sum(x[4] for x in rows) / m, 3))])
        return buf.getvalue()

    def summary(self) -> dict:
        agg = {}
        for media in ("video", "audio"):
            reps = [r.qoe[media] for r in self.results if media in r.qoe]
            if reps:
                agg[media] = aggregate(reps)
        return {
            "scenario": self.config["name"],
            "digest": self.digest,
            "config": self.config,
            "samples": len(self.results),
            "seeds": [r.seed for r in self.results],
            "failed_samples": [{"sample": r.sample, "seed": r.seed, "error": r.error} for r in self.failed],
            "aggregate": agg,
            "runs": [{"sample": r.sample, "seed": r.seed, **r.stats} for r in self.results],
        }

    def write(self, out: Path) -> None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "qoe.csv").write_text(self.qoe_csv())
        for r in self.results:
            if not r.error:
                (out / f"delay_sample{r.sample:03d}.csv").write_text(self.delay_csv(r))
        (out / "delay_mean.csv").write_text(self.mean_delay_csv())
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def run_experiment(cfg: ScenarioConfig, out: Path | None = None, jobs: int = 1) -> RunReport:
    """Run ``cfg.samples`` seeded samples; results are ordered by sample index."""
    tasks = [(cfg, i) for i in range(cfg.samples)]
    if jobs > 1 and len(tasks) > 1:
        from multiprocessing import Pool
        with Pool(min(jobs, len(tasks))) as pool:
            results = pool.map(_run_sample_safe, tasks)
    else:
        results = []
        for t in tasks:
            results.append(_run_sample_safe(t))
            log.info("sample %d (seed %d) done", t[1], cfg.seed + t[1])
    report = RunReport(cfg.digest(), cfg.to_dict(), results)
    if out is not None:
        report.write(out)
    return report
