import json
import subprocess
import sys

import pytest

from aqmsim.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main
from aqmsim.config import list_scenarios, load_scenario, loads, parse_duration, parse_rate
from aqmsim.metrics import QOE_COLUMNS
from aqmsim.topology import ConfigError

SMALL = """\
name: small
horizon: 6s
sampling_interval: 100ms
samples: 2
seed: 42
nodes: [S, R, C]
links:
  - {a: S, b: R, rate: 50Mbps, delay: 2ms}
  - {a: R, b: C, rate: 8Mbps, delay: 5ms, qdisc_reverse: aqm}
aqm: {kind: pie, target: 10ms}
traffic:
  dash: {server: C, client: S, paths: [[C, R, S]], total_duration: 16s}
  ftp: [{from: C, to: S, count: 1}]
  voip: [{between: [S, C], rate: 2, duration: 2s}]
  http: [{client: S, server: C, rate: 2, response_bytes: 2000, duration: 4s}]
"""


def test_duration_and_rate_units():
    assert parse_duration("15ms") == 0.015
    assert parse_duration("184s") == 184.0
    assert parse_duration(2) == 2.0
    assert parse_rate("10Mbps") == 10e6
    assert parse_rate("128kbps") == 128e3
    with pytest.raises(ValueError):
        parse_duration("fast")
    with pytest.raises(ValueError):
        parse_rate(True)


def test_bundled_default_scenario_contents():
    cfg = load_scenario("paper-default")
    assert cfg.aqm.target == 0.015
    assert cfg.samples == 25 and cfg.horizon == 184.0
    assert cfg.dash is not None and len(cfg.dash.paths) == 2
    assert sum(f.count for f in cfg.ftp) == 10 and len(cfg.ftp) == 2
    assert len(cfg.voip) == 2 and all(v.rate == 10 for v in cfg.voip)
    assert len(cfg.http) == 2 and all(h.rate == 15 and h.duration == 180 for h in cfg.http)
    assert set(list_scenarios()) >= {"paper-default", "dumbbell"}


def test_errors_name_line_and_field():
    text = SMALL.replace("rate: 8Mbps", "rate: eight")
    with pytest.raises(ConfigError, match=r"^x.yaml:9: links\[1\]\.rate: "):
        loads(text, "x.yaml")
    with pytest.raises(ConfigError, match=r"x.yaml:10: aqm\.colour: unknown key"):
        loads(SMALL.replace("target: 10ms}", "target: 10ms, colour: red}"), "x.yaml")
    with pytest.raises(ConfigError, match=r"horizon"):
        loads(SMALL.replace("horizon: 6s\n", ""), "x.yaml")
    with pytest.raises(ConfigError, match=r"x.yaml:13: traffic.ftp\[0\].to: unknown node Q"):
        loads(SMALL.replace("to: S,", "to: Q,"), "x.yaml")
    with pytest.raises(ConfigError, match=r"no link"):
        loads(SMALL.replace("paths: [[C, R, S]]", "paths: [[C, S]]"), "x.yaml")
    with pytest.raises(ConfigError, match=r"YAML parse error"):
        loads("a: [1, 2", "x.yaml")


def test_override_precedence():
    cfg = loads(SMALL)
    assert cfg.aqm.target == 0.010  # file beats default
    assert loads(SMALL.replace("target: 10ms", "t_update: 15ms")).aqm.target == 0.015  # default
    o = cfg.with_overrides(target=0.005, samples=3, seed=7, horizon=2.0)
    assert (o.aqm.target, o.samples, o.seed, o.horizon) == (0.005, 3, 7, 2.0)
    assert cfg.aqm.target == 0.010  # original untouched
    with pytest.raises(ConfigError):
        cfg.with_overrides(qdisc="red")


def test_digest_differs_only_by_qdisc_kind():
    cfg = load_scenario("paper-default")
    a, b = cfg.with_overrides(qdisc="pie"), cfg.with_overrides(qdisc="fq_pie")
    assert a.digest() != b.digest()
    da, db = a.to_dict(), b.to_dict()
    assert da["aqm"].pop("kind") == "pie" and db["aqm"].pop("kind") == "fq_pie"
    assert da == db
    assert cfg.with_overrides(qdisc="fq_pie").digest() == b.digest()


def _write(tmp_path, text=SMALL):
    p = tmp_path / "small.yaml"
    p.write_text(text)
    return str(p)


def test_cli_exit_codes(tmp_path, capsys):
    good = _write(tmp_path)
    assert main(["validate", "--scenario", good]) == EXIT_OK
    assert main(["validate", "--scenario", str(tmp_path / "missing.yaml")]) == EXIT_INVALID
    bad = tmp_path / "bad.yaml"
    bad.write_text(SMALL.replace("horizon: 6s", "horizon: -1s"))
    assert main(["validate", "--scenario", str(bad)]) == EXIT_INVALID
    assert main(["run", "--scenario", good, "--samples", "0"]) == EXIT_INVALID
    assert "horizon" in capsys.readouterr().err
    assert main(["list-scenarios"]) == EXIT_OK
    assert "paper-default" in capsys.readouterr().out


def test_cli_runtime_failure_exit_code(tmp_path, monkeypatch):
    import aqmsim.experiment as ex

    def boom(cfg, sample):
        raise ex.SimulationError("forced")

    monkeypatch.setattr(ex, "run_sample", boom)
    out = tmp_path / "out"
    assert main(["run", "--scenario", _write(tmp_path), "--out", str(out)]) == EXIT_RUNTIME
    summary = json.loads((out / "summary.json").read_text())
    assert [f["seed"] for f in summary["failed_samples"]] == [42, 43]


def test_cli_run_outputs_and_determinism(tmp_path):
    scen = _write(tmp_path)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["run", "--scenario", scen, "--out", str(out)]) == EXIT_OK
        outs.append(out)
    a, b = outs
    names = sorted(p.name for p in a.iterdir())
    assert names == ["delay_mean.csv", "delay_sample000.csv", "delay_sample001.csv", "qoe.csv", "summary.json"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n
    qoe = (a / "qoe.csv").read_text().splitlines()
    assert qoe[0] == ",".join(QOE_COLUMNS)
    assert len(qoe) == 1 + 2 * 2
    assert [r.split(",")[1] for r in qoe[1:]] == ["42", "42", "43", "43"]
    delay = (a / "delay_sample000.csv").read_text().splitlines()
    assert delay[0] == "time_s,iface,avg_qdelay_ms,drop_prob,backlog_bytes,drops_cum"
    assert len(delay) == 1 + 60 and all(",C->R," in r for r in delay[1:])
    summary = json.loads((a / "summary.json").read_text())
    assert summary["seeds"] == [42, 43]
    assert summary["aggregate"]["audio"]["avg_bitrate"] == {"mean": 128000.0, "std": 0.0}
    assert summary["aggregate"]["video"]["count"] == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "aqmsim", "list-scenarios"], capture_output=True, text=True)
    assert r.returncode == 0 and "dumbbell" in r.stdout
