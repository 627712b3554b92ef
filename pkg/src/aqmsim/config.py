"""Scenario files: YAML in, validated ScenarioConfig out.

Durations accept seconds as a bare number or a string with a unit
(``"15ms"``, ``"184s"``); rates accept bits/s or ``"10Mbps"``.  Every
error names the offending field and, when it came from a file, its line.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .qdisc import KINDS
from .topology import ConfigError, LinkSpec, QdiscSpec, TopologySpec

SCENARIO_DIR = Path(__file__).parent / "scenarios"

_DURATION = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*(s|ms|us|ns)?\s*$")
_RATE = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*([kKmMgG]?)(bps|bit/s)?\s*$")
_UNIT_S = {None: 1.0, "s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9}
_UNIT_RATE = {"": 1.0, "k": 1e3, "m": 1e6, "g": 1e9}


# --- YAML with line numbers -------------------------------------------------

def _load_with_lines(text: str, source: str):
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: YAML parse error: {getattr(exc, 'problem', exc)}") from None
    if node is None:
        raise ConfigError(f"{source}: empty scenario")
    lines: dict[tuple, int] = {}
    constructor = yaml.SafeLoader("")

    def walk(n, path):
        lines[path] = n.start_mark.line + 1
        if isinstance(n, yaml.MappingNode):
            out = {}
            for k, v in n.value:
                key = constructor.construct_object(k, deep=True)
                if key in out:
                    raise ConfigError(f"{source}:{k.start_mark.line + 1}: duplicate key {key!r}")
                lines[path + (key,)] = k.start_mark.line + 1
                out[key] = walk(v, path + (key,))
            return out
        if isinstance(n, yaml.SequenceNode):
            return [walk(v, path + (i,)) for i, v in enumerate(n.value)]
        return constructor.construct_object(n, deep=True)

    return walk(node, ()), lines


class _Ctx:
    def __init__(self, source: str, lines: dict):
        self.source = source
        self.lines = lines

    def fail(self, path: tuple, msg: str):
        line = None
        p = path
        while p is not None:
            if p in self.lines:
                line = self.lines[p]
                break
            p = p[:-1] if p else None
        name = _dotted(path) or "<root>"
        where = f"{self.source}:{line}" if line is not None else self.source
        raise ConfigError(f"{where}: {name}: {msg}")


def _dotted(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


# --- scalar parsers -------------------------------------------------------------

def parse_duration(value) -> float:
    if isinstance(value, bool):
        raise ValueError(f"not a duration: {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    m = _DURATION.match(str(value))
    if not m:
        raise ValueError(f"not a duration: {value!r}")
    return float(m.group(1)) * _UNIT_S[m.group(2)]


def parse_rate(value) -> float:
    if isinstance(value, bool):
        raise ValueError(f"not a rate: {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    m = _RATE.match(str(value))
    if not m:
        raise ValueError(f"not a rate: {value!r}")
    return float(m.group(1)) * _UNIT_RATE[m.group(2).lower()]


# --- config model ------------------------------------------------------------

@dataclass
class AqmConfig:
    kind: str = "pie"
    target: float = 0.015
    t_update: float = 0.015
    alpha: float = 0.125
    beta: float = 1.25
    max_burst: float = 0.150
    limit: int | None = None
    buckets: int = 1024
    quantum: int = 1514

    def qdisc_params(self) -> dict:
        if self.kind == "droptail":
            return {"limit": self.limit if self.limit is not None else 1000}
        p = {"target": self.target, "t_update": self.t_update, "alpha": self.alpha,
             "beta": self.beta, "max_burst": self.max_burst}
        if self.limit is not None:
            p["limit"] = self.limit
        if self.kind == "fq_pie":
            p["buckets"] = self.buckets
            p["quantum"] = self.quantum
        return p


@dataclass
class LinkConfig:
    a: str
    b: str
    rate_bps: float
    delay_s: float
    qdisc: object = None  # "aqm" or {"kind": ..., params} for a->b
    qdisc_reverse: object = None


@dataclass
class DashConfig:
    server: str
    client: str
    paths: list = field(default_factory=list)
    segment_duration: float = 4.0
    total_duration: float = 184.0
    capacity: float = 10.0
    threshold: float = 1.0
    abr_safety: float = 0.9
    video_ladder: list | None = None
    audio_ladder: list | None = None


@dataclass
class FtpConfig:
    sender: str
    receiver: str
    count: int = 5


@dataclass
class VoipConfig:
    a: str
    b: str
    rate: float = 10.0
    duration: float = 10.0
    packet_bytes: int = 172


@dataclass
class HttpConfig:
    client: str
    server: str
    rate: float = 15.0
    response_bytes: int = 100_000
    duration: float = 180.0


@dataclass
class ScenarioConfig:
    name: str
    horizon: float
    nodes: list
    links: list
    routes: list = field(default_factory=list)
    aqm: AqmConfig = field(default_factory=AqmConfig)
    dash: DashConfig | None = None
    ftp: list = field(default_factory=list)
    voip: list = field(default_factory=list)
    http: list = field(default_factory=list)
    sampling_interval: float = 0.1
    samples: int = 1
    seed: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def topology(self) -> TopologySpec:
        links = []
        for ln in self.links:
            links.append(LinkSpec(ln.a, ln.b, ln.rate_bps, ln.delay_s,
                                  self._qdisc(ln.qdisc), self._qdisc(ln.qdisc_reverse)))
        routes = {(r[0], r[-1]): list(r) for r in self.routes}
        return TopologySpec(list(self.nodes), links, routes)

    def _qdisc(self, q) -> QdiscSpec:
        if q is None:
            return QdiscSpec("droptail", {"limit": 1000})
        if q == "aqm":
            return QdiscSpec(self.aqm.kind, self.aqm.qdisc_params(), monitor=True)
        q = dict(q)
        kind = q.pop("kind")
        return QdiscSpec(kind, q)

    def with_overrides(self, qdisc: str | None = None, target: float | None = None,
                       samples: int | None = None, seed: int | None = None,
                       horizon: float | None = None) -> "ScenarioConfig":
        """Copy with command-line values applied (flags beat file values)."""
        cfg = copy.deepcopy(self)
        if qdisc is not None:
            if qdisc not in KINDS:
                raise ConfigError(f"--qdisc: unknown kind {qdisc!r} (expected one of {', '.join(KINDS)})")
            cfg.aqm.kind = qdisc
        if target is not None:
            if target <= 0:
                raise ConfigError("--target-ms: must be positive")
            cfg.aqm.target = target
        if samples is not None:
            if samples < 1:
                raise ConfigError("--samples: must be at least 1")
            cfg.samples = samples
        if seed is not None:
            if seed < 0 or seed >= 2 ** 64:
                raise ConfigError("--seed: must fit in an unsigned 64-bit integer")
            cfg.seed = seed
        if horizon is not None:
            if horizon <= 0:
                raise ConfigError("--horizon-s: must be positive")
            cfg.horizon = horizon
        return cfg


# --- validation ----------------------------------------------------------------

_TOP_KEYS = {"name", "horizon", "sampling_interval", "samples", "seed", "nodes", "links",
             "routes", "aqm", "traffic"}
_AQM_KEYS = {"kind", "target", "t_update", "alpha", "beta", "max_burst", "limit", "buckets", "quantum"}
_LINK_KEYS = {"a", "b", "rate", "delay", "qdisc", "qdisc_reverse"}
_DASH_KEYS = {"server", "client", "paths", "segment_duration", "total_duration", "capacity",
              "threshold", "abr_safety", "video_ladder", "audio_ladder"}
_FTP_KEYS = {"from", "to", "count"}
_VOIP_KEYS = {"between", "rate", "duration", "packet_bytes"}
_HTTP_KEYS = {"client", "server", "rate", "response_bytes", "duration"}
_QDISC_KEYS = {"droptail": {"kind", "limit", "limit_bytes"},
               "pie": {"kind", "target", "t_update", "alpha", "beta", "max_burst", "limit", "limit_bytes"},
               "fq_pie": {"kind", "target", "t_update", "alpha", "beta", "max_burst", "limit",
                          "limit_bytes", "buckets", "quantum", "salt"}}
_DURATION_PARAMS = {"target", "t_update", "max_burst"}


def _mapping(ctx, data, path, allowed, required=()):
    if not isinstance(data, dict):
        ctx.fail(path, f"expected a mapping, got {type(data).__name__}")
    for k in data:
        if k not in allowed:
            ctx.fail(path + (k,), f"unknown key (allowed: {', '.join(sorted(allowed))})")
    for k in required:
        if k not in data:
            ctx.fail(path, f"missing required field {_dotted(path + (k,))!r}")
    return data


def _get(ctx, data, path, key, conv, default=None, positive=False, nonneg=False):
    if key not in data:
        return default
    p = path + (key,)
    try:
        v = conv(data[key])
    except (TypeError, ValueError) as exc:
        ctx.fail(p, str(exc))
    if positive and not v > 0:
        ctx.fail(p, f"must be positive, got {data[key]!r}")
    if nonneg and v < 0:
        ctx.fail(p, f"must be non-negative, got {data[key]!r}")
    return v


def _int(v) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError(f"expected an integer, got {v!r}")
    return v


def _num(v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"expected a number, got {v!r}")
    return float(v)


def _str(v) -> str:
    if not isinstance(v, str):
        raise ValueError(f"expected a string, got {v!r}")
    return v


def _node(ctx, nodes, data, path, key):
    name = _get(ctx, data, path, key, _str)
    if name not in nodes:
        ctx.fail(path + (key,), f"unknown node {name}")
    return name


def _node_list(ctx, nodes, value, path):
    if not isinstance(value, list) or len(value) < 2:
        ctx.fail(path, "expected a list of at least two node names")
    for i, n in enumerate(value):
        if n not in nodes:
            ctx.fail(path + (i,), f"unknown node {n}")
    return [str(n) for n in value]


def _qdisc_spec(ctx, value, path):
    if value is None or value == "aqm":
        return value
    if isinstance(value, str):
        if value in _QDISC_KEYS:
            return {"kind": value}
        ctx.fail(path, f"expected 'aqm', a qdisc kind or a mapping, got {value!r}")
    if not isinstance(value, dict) or "kind" not in value:
        ctx.fail(path, "qdisc mapping needs a 'kind'")
    kind = value["kind"]
    if kind not in _QDISC_KEYS:
        ctx.fail(path + ("kind",), f"unknown qdisc kind {kind!r}")
    _mapping(ctx, value, path, _QDISC_KEYS[kind])
    out = {"kind": kind}
    for k, v in value.items():
        if k == "kind":
            continue
        conv = parse_duration if k in _DURATION_PARAMS else (_num if k in ("alpha", "beta") else _int)
        out[k] = _get(ctx, value, path, k, conv, positive=k != "salt", nonneg=True)
    return out


def _ladder(ctx, value, path):
    if value is None:
        return None
    if not isinstance(value, list) or not value:
        ctx.fail(path, "expected a non-empty list of bitrates")
    rates = []
    for i, v in enumerate(value):
        try:
            r = parse_rate(v)
        except ValueError as exc:
            ctx.fail(path + (i,), str(exc))
        if r <= 0:
            ctx.fail(path + (i,), "bitrate must be positive")
        rates.append(int(round(r)))
    if any(b <= a for a, b in zip(rates, rates[1:])):
        ctx.fail(path, "bitrates must be strictly ascending")
    return rates


def validate(data, source: str = "<scenario>", lines: dict | None = None) -> ScenarioConfig:
    ctx = _Ctx(source, lines or {})
    root = ()
    _mapping(ctx, data, root, _TOP_KEYS, required=("horizon", "nodes", "links"))
    nodes = data["nodes"]
    if not isinstance(nodes, list) or not nodes:
        ctx.fail(("nodes",), "expected a non-empty list of node names")
    seen = set()
    for i, n in enumerate(nodes):
        if not isinstance(n, str) or not n:
            ctx.fail(("nodes", i), f"node names must be non-empty strings, got {n!r}")
        if n in seen:
            ctx.fail(("nodes", i), f"duplicate node {n}")
        seen.add(n)

    links = []
    pairs = set()
    if not isinstance(data["links"], list):
        ctx.fail(("links",), "expected a list of links")
    for i, ln in enumerate(data["links"]):
        p = ("links", i)
        _mapping(ctx, ln, p, _LINK_KEYS, required=("a", "b", "rate", "delay"))
        a = _node(ctx, seen, ln, p, "a")
        b = _node(ctx, seen, ln, p, "b")
        if a == b:
            ctx.fail(p, f"self-loop link on {a}")
        if frozenset((a, b)) in pairs:
            ctx.fail(p, f"duplicate link {a}-{b}")
        pairs.add(frozenset((a, b)))
        links.append(LinkConfig(
            a, b,
            _get(ctx, ln, p, "rate", parse_rate, positive=True),
            _get(ctx, ln, p, "delay", parse_duration, nonneg=True),
            _qdisc_spec(ctx, ln.get("qdisc"), p + ("qdisc",)),
            _qdisc_spec(ctx, ln.get("qdisc_reverse"), p + ("qdisc_reverse",)),
        ))

    def check_route(hops, path):
        for j, (x, y) in enumerate(zip(hops, hops[1:])):
            if frozenset((x, y)) not in pairs:
                ctx.fail(path + (j + 1,), f"no link {x}-{y}")

    routes = []
    for i, r in enumerate(data.get("routes") or []):
        hops = _node_list(ctx, seen, r, ("routes", i))
        check_route(hops, ("routes", i))
        routes.append(hops)

    aqm = AqmConfig()
    if "aqm" in data:
        p = ("aqm",)
        q = _mapping(ctx, data["aqm"], p, _AQM_KEYS)
        if "kind" in q:
            if q["kind"] not in KINDS:
                ctx.fail(p + ("kind",), f"unknown qdisc kind {q['kind']!r} (expected one of {', '.join(KINDS)})")
            aqm.kind = q["kind"]
        for k in ("target", "t_update", "max_burst"):
            setattr(aqm, k, _get(ctx, q, p, k, parse_duration, getattr(aqm, k), positive=True))
        for k in ("alpha", "beta"):
            setattr(aqm, k, _get(ctx, q, p, k, _num, getattr(aqm, k), positive=True))
        for k in ("limit", "buckets", "quantum"):
            setattr(aqm, k, _get(ctx, q, p, k, _int, getattr(aqm, k), positive=True))
        if aqm.buckets & (aqm.buckets - 1):
            ctx.fail(p + ("buckets",), f"must be a power of two, got {aqm.buckets}")

    cfg = ScenarioConfig(
        name=str(data.get("name", Path(source).stem)),
        horizon=_get(ctx, data, root, "horizon", parse_duration, positive=True),
        nodes=list(nodes), links=links, routes=routes, aqm=aqm,
        sampling_interval=_get(ctx, data, root, "sampling_interval", parse_duration, 0.1, positive=True),
        samples=_get(ctx, data, root, "samples", _int, 1, positive=True),
        seed=_get(ctx, data, root, "seed", _int, 1, nonneg=True),
    )

    traffic = data.get("traffic") or {}
    tp = ("traffic",)
    _mapping(ctx, traffic, tp, {"dash", "ftp", "voip", "http"})
    if "dash" in traffic:
        p = tp + ("dash",)
        d = _mapping(ctx, traffic["dash"], p, _DASH_KEYS, required=("server", "client"))
        server = _node(ctx, seen, d, p, "server")
        client = _node(ctx, seen, d, p, "client")
        paths = []
        for i, hops in enumerate(d.get("paths") or []):
            hp = p + ("paths", i)
            hops = _node_list(ctx, seen, hops, hp)
            if hops[0] != server or hops[-1] != client:
                ctx.fail(hp, f"path must run from {server} to {client}")
            check_route(hops, hp)
            paths.append(hops)
        dash = DashConfig(server, client, paths)
        for k in ("segment_duration", "total_duration", "capacity", "threshold"):
            setattr(dash, k, _get(ctx, d, p, k, parse_duration, getattr(dash, k), positive=True))
        dash.abr_safety = _get(ctx, d, p, "abr_safety", _num, dash.abr_safety, positive=True)
        if dash.threshold > dash.capacity:
            ctx.fail(p + ("threshold",), "must not exceed capacity")
        if dash.segment_duration > dash.capacity:
            ctx.fail(p + ("segment_duration",), "a segment must fit in the buffer capacity")
        dash.video_ladder = _ladder(ctx, d.get("video_ladder"), p + ("video_ladder",))
        dash.audio_ladder = _ladder(ctx, d.get("audio_ladder"), p + ("audio_ladder",))
        cfg.dash = dash
    for i, f in enumerate(_list(ctx, traffic, tp, "ftp")):
        p = tp + ("ftp", i)
        _mapping(ctx, f, p, _FTP_KEYS, required=("from", "to"))
        cfg.ftp.append(FtpConfig(_node(ctx, seen, f, p, "from"), _node(ctx, seen, f, p, "to"),
                                 _get(ctx, f, p, "count", _int, 5, nonneg=True)))
    for i, v in enumerate(_list(ctx, traffic, tp, "voip")):
        p = tp + ("voip", i)
        _mapping(ctx, v, p, _VOIP_KEYS, required=("between",))
        ends = _node_list(ctx, seen, v["between"], p + ("between",))
        if len(ends) != 2:
            ctx.fail(p + ("between",), "expected exactly two endpoints")
        cfg.voip.append(VoipConfig(
            ends[0], ends[1],
            _get(ctx, v, p, "rate", _num, 10.0, positive=True),
            _get(ctx, v, p, "duration", parse_duration, 10.0, positive=True),
            _get(ctx, v, p, "packet_bytes", _int, 172, positive=True)))
        if cfg.voip[-1].packet_bytes > 1500:
            ctx.fail(p + ("packet_bytes",), "exceeds the 1500-byte MTU")
    for i, h in enumerate(_list(ctx, traffic, tp, "http")):
        p = tp + ("http", i)
        _mapping(ctx, h, p, _HTTP_KEYS, required=("client", "server"))
        cfg.http.append(HttpConfig(
            _node(ctx, seen, h, p, "client"), _node(ctx, seen, h, p, "server"),
            _get(ctx, h, p, "rate", _num, 15.0, positive=True),
            _get(ctx, h, p, "response_bytes", _int, 100_000, nonneg=True),
            _get(ctx, h, p, "duration", parse_duration, 180.0, positive=True)))
    return cfg


def _list(ctx, data, path, key):
    v = data.get(key)
    if v is None:
        return []
    if not isinstance(v, list):
        ctx.fail(path + (key,), "expected a list")
    return v


def loads(text: str, source: str = "<scenario>") -> ScenarioConfig:
    data, lines = _load_with_lines(text, source)
    return validate(data, source, lines)


def resolve_path(name_or_path: str) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    for cand in (SCENARIO_DIR / name_or_path, SCENARIO_DIR / f"{name_or_path}.yaml"):
        if cand.exists():
            return cand
    raise ConfigError(f"{name_or_path}: no such scenario file or bundled scenario")


def load_scenario(path) -> ScenarioConfig:
    p = resolve_path(str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{p}: cannot read: {exc.strerror}") from None
    return loads(text, str(p))


def list_scenarios() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.yaml"))
