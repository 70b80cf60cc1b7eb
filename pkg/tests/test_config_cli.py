import dataclasses
import json
import logging
import subprocess
import sys
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobmine import cli, config, pipeline
from mobmine.errors import InvalidConfig, PrivacyGateError

from conftest import SALT

TEXT = st.text("abcdefghijklmnopqrstuvwxyz0123456789_./-", max_size=12)
FLOATS = st.floats(allow_nan=False, width=64)


def _strategy_for(default):
    if isinstance(default, bool):
        return st.booleans()
    if isinstance(default, int):
        return st.integers(-2**40, 2**40)
    if isinstance(default, float):
        return FLOATS
    if isinstance(default, str):
        return TEXT
    if isinstance(default, tuple):
        return st.tuples(*(_strategy_for(x) for x in default))
    if isinstance(default, dict):
        return st.dictionaries(TEXT, FLOATS, max_size=4)
    raise TypeError(type(default))


def _config_strategy():
    base = config.PipelineConfig()
    sections = {}
    for name in config.SECTIONS:
        current = getattr(base, name)
        fields = {f.name: _strategy_for(getattr(current, f.name)) for f in dataclasses.fields(current)}
        sections[name] = st.fixed_dictionaries(fields)
    return st.fixed_dictionaries(sections)


@settings(max_examples=100, deadline=None)
@given(_config_strategy())
def test_config_round_trip(values):
    cfg = config.PipelineConfig()
    for name, fields in values.items():
        cfg.update(name, **fields)
    back = config.loads(config.dumps(cfg))
    assert back == cfg
    assert config.dumps(back) == config.dumps(cfg)


def test_config_file_partial_and_errors(tmp_path):
    cfg = config.loads("[kanon]\nk = 7\nL = 2\n[run]\norder = anonymize-first\n")
    assert cfg.kanon.k == 7 and cfg.kanon.L == 2 and cfg.run.order == "anonymize-first"
    assert cfg.sim == config.PipelineConfig().sim
    for bad in ("[nope]\nx = 1\n", "[kanon]\nq = 1\n", "[kanon]\nk = five\n", "[kanon]\nk = 2.5\n",
                "[population]\nunique_home_work = 1\n", "not a config"):
        with pytest.raises(InvalidConfig):
            config.loads(bad)
    with pytest.raises(InvalidConfig):
        config.loads("[run]\norder = sideways\n").validate()
    config.dump(cfg, tmp_path / "c.ini")
    assert config.load(tmp_path / "c.ini") == cfg


@pytest.mark.parametrize("argv", [
    ["anonymize", "--out", "x", "--k", "0"],
    ["anonymize", "--out", "x", "--k", "two"],
    ["anonymize", "--k", "5"],
    ["pipeline", "--out", "x", "--order", "sideways"],
    ["teleport", "--out", "x"],
    [],
])
def test_usage_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 2


def test_ingest_without_salt_exits_1(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("MOBMINE_SALT", raising=False)
    assert cli.main(["gen-net", "--out", str(tmp_path), "--seed", "1"]) == 0
    assert cli.main(["simulate", "--out", str(tmp_path), "--agents", "5", "--days", "1"]) == 0
    assert cli.main(["ingest", "--out", str(tmp_path)]) == 1
    assert "salt" in capsys.readouterr().err.lower()


def test_missing_inputs_exit_1(tmp_path, capsys):
    assert cli.main(["od", "--out", str(tmp_path / "empty")]) == 1


def test_stage_context_refuses_raw_inputs(tmp_path):
    ws = pipeline.Workspace(tmp_path)
    ws.demographics.parent.mkdir(parents=True)
    ws.demographics.write_text("sub,age,gender,postcode,home_zone\n")
    ws.events.write_text("ts,sub,kind,cell\n")
    salt = tmp_path / "salt.hex"
    salt.write_text(SALT.hex())
    ctx = pipeline.StageContext(ws, "rogue", {}, pipeline.post_ingest_forbidden(ws, salt))
    for p in (ws.demographics, ws.events, salt):
        with pytest.raises(PrivacyGateError):
            ctx.input(p)


def _chain(tmp_path, salt_file, extra=()):
    out = str(tmp_path / "ws")
    common = ["--out", out, "--seed", "3", *extra]
    steps = [
        ["gen-net", *common],
        ["simulate", *common, "--agents", "80", "--days", "3"],
        ["ingest", *common, "--salt-file", str(salt_file)],
        ["mine", *common, "--salt-file", str(salt_file)],
        ["anonymize", *common, "--k", "2", "--salt-file", str(salt_file)],
        ["od", *common, "--k", "2", "--salt-file", str(salt_file)],
        ["attack", *common, "--k", "2", "--salt-file", str(salt_file)],
    ]
    return out, steps


@pytest.fixture
def salt_file(tmp_path):
    p = tmp_path / "salt.hex"
    p.write_text(SALT.hex() + "\n")
    return p


def test_rogue_stage_exits_3(tmp_path, salt_file, monkeypatch, capsys):
    out, steps = _chain(tmp_path, salt_file)
    for argv in steps[:4]:
        assert cli.main(argv) == 0

    def rogue(ws, cfg, salt_file=None):
        ctx = pipeline._post_ctx(ws, "anonymize", {}, salt_file)
        ctx.input(ws.demographics)

    monkeypatch.setattr(pipeline, "stage_anonymize", rogue)
    assert cli.main(steps[4]) == 3
    assert "privacy gate" in capsys.readouterr().err


def test_individual_subcommands_chain(tmp_path, salt_file, capsys):
    out, steps = _chain(tmp_path, salt_file)
    for argv in steps:
        assert cli.main(argv) == 0, argv
    ws = pipeline.Workspace(out)
    for name in ("cells", "zones", "events", "stream_events", "stations", "paths", "bundles", "routes",
                 "anon_windows", "classes", "loss", "density", "od", "od_anon", "heatmap", "reid", "verify"):
        assert getattr(ws, name).exists(), name
    assert json.loads(ws.verify.read_text())["passed"]
    reid = json.loads(ws.reid.read_text())
    assert reid["k"] == 2 and reid["reports"]["density_graph"]["reid_rate"] == 0.0
    header = json.loads(ws.anon_windows.read_text().splitlines()[0])["params"]
    assert header["k"] == 2 and header["L"] == 3 and len(header["salt_id"]) == 16
    raw = {line.split(",")[1] for line in ws.events.read_text().splitlines()[1:]}
    assert pipeline.scan_for(raw, pipeline.post_ingest_files(ws)) == []
    # re-cluster the published windows instead of raw paths
    assert cli.main(["mine", "--out", out, "--seed", "3", "--source", "anon", "--salt-file", str(salt_file)]) == 0


def test_external_inputs_for_ingest(tmp_path, salt_file):
    out, steps = _chain(tmp_path, salt_file)
    for argv in steps[:2]:
        assert cli.main(argv) == 0
    ws = pipeline.Workspace(out)
    moved = tmp_path / "ext"
    moved.mkdir()
    for name in ("events", "cells", "demographics"):
        (moved / f"{name}.csv").write_bytes(getattr(ws, name).read_bytes())
    assert cli.main(["ingest", "--out", str(tmp_path / "other"), "--salt-file", str(salt_file),
                     "--events", str(moved / "events.csv"), "--cells", str(moved / "cells.csv"),
                     "--demographics", str(moved / "demographics.csv")]) == 0
    assert (tmp_path / "other" / "ingest" / "stream_events.csv").exists()


def test_scan_detects_planted_id(tmp_path):
    files = []
    for i, text in enumerate(["nothing here", "x,+46701234567,y", "+4670123456 is shorter"]):
        p = tmp_path / f"f{i}.txt"
        p.write_text(text)
        files.append(p)
    hits = pipeline.scan_for({"+46701234567", "+46709999999"}, files)
    assert hits == [(str(files[1]), "+46701234567")]
    assert pipeline.scan_for([], files) == []


def test_salt_resolution(tmp_path, salt_file, caplog):
    assert pipeline.resolve_salt(salt_file, environ={}) == (SALT, "file")
    assert pipeline.resolve_salt(None, environ={"MOBMINE_SALT": SALT.hex()}) == (SALT, "env")
    with caplog.at_level(logging.WARNING):
        salt, source = pipeline.resolve_salt(None, environ={}, seed=7)
    assert source == "derived" and salt == pipeline.demo_salt(7) and "demo" in caplog.text


def test_flags_override_config_file(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[kanon]\nk = 9\n[sim]\ndays = 2\n")
    args = cli.build_parser().parse_args(["pipeline", "--out", "x", "--config", str(ini), "--k", "4",
                                          "--seed", "5", "--window", "2", "--bucketing", "86400"])
    cfg = cli.config_from_args(args)
    assert (cfg.kanon.k, cfg.kanon.L, cfg.sim.days, cfg.od.bucket_s) == (4, 2, 2, 86400)
    assert cfg.run.seed == 5 and cfg.routes.seed == 5


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "mobmine.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("mobmine ")
