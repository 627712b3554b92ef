"""QoE metrics for the DASH client, queue-delay series, and cross-sample aggregation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

QOE_COLUMNS = ("sample", "seed", "media", "switches", "avg_bitrate_bps", "avg_throughput_bps",
               "avg_buffer_s", "avg_app_rtt_s", "avg_app_jitter_s", "stalls", "startup_s")
DELAY_COLUMNS = ("time_s", "iface", "avg_qdelay_ms", "drop_prob", "backlog_bytes", "drops_cum")


def count_switches(rep_log) -> int:
    return sum(1 for a, b in zip(rep_log, rep_log[1:]) if a != b)


def avg_throughput(download_log) -> float:
    """Mean of per-segment ``8*bytes/download_time``; accepts (bytes, seconds)
    pairs or objects with ``nbytes`` and ``download_time``."""
    rates = []
    for rec in download_log:
        if isinstance(rec, tuple):
            nbytes, dt = rec
        else:
            nbytes, dt = rec.nbytes, rec.download_time
        rates.append(8.0 * nbytes / dt)
    return sum(rates) / len(rates) if rates else 0.0


def avg_jitter(rtt_log) -> float:
    if len(rtt_log) < 2:
        return 0.0
    diffs = [abs(b - a) for a, b in zip(rtt_log, rtt_log[1:])]
    return sum(diffs) / len(diffs)


def avg_buffer(samples) -> float:
    """Time-weighted mean of a step function given as (time, level) samples.

    Each level holds until the next sample; the final sample is weighted by
    the median spacing (the sampling interval).
    """
    samples = list(samples)
    if not samples:
        return 0.0
    if len(samples) == 1:
        return float(samples[0][1])
    gaps = sorted(b[0] - a[0] for a, b in zip(samples, samples[1:]))
    last = gaps[len(gaps) // 2]
    total = 0.0
    span = 0.0
    for (t0, lv), (t1, _) in zip(samples, samples[1:]):
        total += lv * (t1 - t0)
        span += t1 - t0
    total += samples[-1][1] * last
    span += last
    return total / span if span > 0 else 0.0


def avg_bitrate(rep_log) -> float:
    # segments are equal length, so the duration weighting is uniform
    return sum(rep_log) / len(rep_log) if rep_log else 0.0


@dataclass
class QoeReport:
    media_type: str
    bitrate_switches: int = 0
    avg_bitrate: float = 0.0
    avg_throughput: float = 0.0
    avg_buffer_level: float = 0.0
    avg_app_rtt: float = 0.0
    avg_app_jitter: float = 0.0
    stall_count: int = 0
    startup_delay: float = 0.0
    segments: int = 0

    def row(self, sample: int, seed: int) -> list:
        return [sample, seed, self.media_type, self.bitrate_switches, _num(self.avg_bitrate),
                _num(self.avg_throughput), _num(self.avg_buffer_level), _num(self.avg_app_rtt),
                _num(self.avg_app_jitter), self.stall_count, _num(self.startup_delay)]


def _num(x: float) -> str:
    return repr(round(float(x), 9))


def qoe_report(media: str, log, buffer_samples, stalls: int, startup: float | None) -> QoeReport:
    reps = [r.bitrate for r in log]
    rtts = [r.download_time for r in log]
    return QoeReport(
        media_type=media,
        bitrate_switches=count_switches(reps),
        avg_bitrate=avg_bitrate(reps),
        avg_throughput=avg_throughput(log),
        avg_buffer_level=avg_buffer(buffer_samples),
        avg_app_rtt=sum(rtts) / len(rtts) if rtts else 0.0,
        avg_app_jitter=avg_jitter(rtts),
        stall_count=stalls,
        startup_delay=startup if startup is not None else 0.0,
        segments=len(log),
    )


_NUMERIC = [f.name for f in fields(QoeReport) if f.name != "media_type"]


def aggregate(samples: list[QoeReport]) -> dict:
    """Per-field mean and population standard deviation."""
    if not samples:
        raise ValueError("cannot aggregate an empty sample list")
    media = {s.media_type for s in samples}
    if len(media) != 1:
        raise ValueError(f"mixed media types in one aggregate: {sorted(media)}")
    n = len(samples)
    out = {"media": media.pop(), "count": n}
    for name in _NUMERIC:
        vals = [float(getattr(s, name)) for s in samples]
        mean = sum(vals) / n
        std = math.sqrt(sum((v - mean) ** 2 for v in vals) / n)
        out[name] = {"mean": mean, "std": std}
    return out


@dataclass
class DelaySeries:
    iface: str
    samples: list = field(default_factory=list)  # (t, avg_qdelay_s, drop_prob, backlog, drops)

    def add(self, t: float, qdelay: float, drop_prob: float, backlog: int, drops: int):
        if self.samples:
            if t <= self.samples[-1][0]:
                raise ValueError("delay samples must be strictly increasing in time")
            if drops < self.samples[-1][4]:
                raise ValueError("cumulative drops decreased")
        self.samples.append((t, qdelay, drop_prob, backlog, drops))

    def mean_qdelay(self, after: float = 0.0) -> float:
        vals = [s[1] for s in self.samples if s[0] >= after]
        return sum(vals) / len(vals) if vals else 0.0

    def rows(self):
        for t, qd, p, backlog, drops in self.samples:
            yield [_num(t), self.iface, _num(qd * 1e3), _num(p), backlog, drops]


def jain_index(xs) -> float:
    xs = list(xs)
    if not xs:
        raise ValueError("empty allocation")
    sq = sum(x * x for x in xs)
    if sq == 0:
        return 1.0
    return sum(xs) ** 2 / (len(xs) * sq)


def report_dict(r: QoeReport) -> dict:
    return asdict(r)
