import json

import pytest

from fpsim.cli import main
from fpsim.metrics import ATTRIBUTES


@pytest.fixture
def config_file(tmp_path, personas_file):
    personas_file(12)
    path = tmp_path / "config.toml"
    path.write_text('personas = "personas.jsonl"\nseed = 7\nmax_iterations = 4\n')
    return path


def simulate(config, out):
    return main(["simulate", "--config", str(config), "--out", str(out)])


def test_simulate_writes_manifest_and_artifacts(config_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert simulate(config_file, out) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["halt_reason"] == "iteration-cap" and manifest["seed"] == 7
    assert manifest["iterations"] == 4 and manifest["agent_count"] == 12
    for name in manifest["artifacts"]:
        assert (out / name).exists()
    assert "graph_iter_3.csv" in manifest["artifacts"]
    assert "halt_reason\titeration-cap" in capsys.readouterr().out


def test_simulate_is_byte_reproducible(config_file, tmp_path):
    assert simulate(config_file, tmp_path / "a") == 0
    assert simulate(config_file, tmp_path / "b") == 0
    assert (tmp_path / "a/events.jsonl").read_bytes() == (tmp_path / "b/events.jsonl").read_bytes()


def test_simulate_missing_personas(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('personas = "nowhere.jsonl"\n')
    assert simulate(cfg, tmp_path / "run") == 2
    assert "nowhere.jsonl" in capsys.readouterr().err


def test_simulate_invalid_config(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("personas = [unclosed\n")
    assert simulate(cfg, tmp_path / "run") == 2


def test_simulate_io_failure(config_file, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert simulate(config_file, blocker / "run") == 3


def test_simulate_remote_unreachable(tmp_path, personas_file, monkeypatch):
    personas_file(3)
    monkeypatch.setenv("LLM_ENDPOINT", "http://127.0.0.1:9/v1/chat/completions")
    cfg = tmp_path / "c.toml"
    cfg.write_text('personas = "personas.jsonl"\nbackend = "remote"\n[remote]\ntimeout = 2\n')
    assert simulate(cfg, tmp_path / "run") == 4


def test_analyze_run(config_file, tmp_path, capsys):
    out = tmp_path / "run"
    simulate(config_file, out)
    capsys.readouterr()
    assert main(["analyze", "--run", str(out)]) == 0
    summary = capsys.readouterr().out.splitlines()
    assert summary[0].split("\t")[0] == "attribute"
    assert [line.split("\t")[0] for line in summary[1:]] == list(ATTRIBUTES)
    report = json.loads((out / "report.json").read_text())
    assert {r["attribute"] for r in report["rows"]} == set(ATTRIBUTES)
    assert len(report["rows"]) == 84
    assert (out / "correlations.csv").exists()
    first = (out / "report.csv").read_bytes()
    assert main(["analyze", "--run", str(out)]) == 0
    assert (out / "report.csv").read_bytes() == first


def test_analyze_k_and_agg_flags(config_file, tmp_path):
    out = tmp_path / "run"
    simulate(config_file, out)
    assert main(["analyze", "--run", str(out), "--k", "1,inf", "--agg", "median"]) == 0
    rows = json.loads((out / "report.json").read_text())["rows"]
    assert {r["k"] for r in rows} == {"1", "inf"}
    assert {r["aggregator"] for r in rows} == {"median"}
    assert main(["analyze", "--run", str(out), "--k", "1,3,inf"]) == 0
    rows = json.loads((out / "report.json").read_text())["rows"]
    assert {r["k"] for r in rows} == {"1", "3", "inf"}


def test_analyze_truncated_log(config_file, tmp_path, capsys):
    out = tmp_path / "run"
    simulate(config_file, out)
    lines = (out / "events.jsonl").read_text().splitlines()
    lines[4] = lines[4][: len(lines[4]) // 2]
    (out / "events.jsonl").write_text("\n".join(lines[:5]) + "\n")
    capsys.readouterr()
    assert main(["analyze", "--run", str(out)]) == 2
    assert "line 5" in capsys.readouterr().err


def test_analyze_external_log(tmp_path, capsys):
    log = tmp_path / "external.jsonl"
    rows = [
        {"iteration": 0, "phase": "action", "agent": 0, "kind": "Publish", "post": 0, "feed": []},
        {"iteration": 0, "phase": "action", "agent": 1, "kind": "Refrain", "feed": []},
        {"iteration": 0, "phase": "follow", "agent": 1, "kind": "Follow", "target": 0},
        {"iteration": 1, "phase": "action", "agent": 1, "kind": "Reshare", "target": 0,
         "post": 1, "feed": [0]},
    ]
    log.write_text("".join(json.dumps(r) + "\n" for r in rows))
    assert main(["analyze", "--run", str(log), "--out", str(tmp_path / "rep")]) == 0
    report = json.loads((tmp_path / "rep/report.json").read_text())
    assert report["agent_count"] == 2


def test_infer_personas_round_trip(tmp_path):
    corpus = tmp_path / "corpus.jsonl"
    corpus.write_text(
        json.dumps({"user_id": "alice", "ideology_label": "democrat",
                    "posts": ["Medicare for all!", "unions built this country"]}) + "\n" +
        json.dumps({"user_id": "bob", "ideology_label": "republican",
                    "posts": ["secure the border", "cut taxes now"]}) + "\n")
    assert main(["infer-personas", "--corpus", str(corpus), "--out", str(tmp_path / "p1.jsonl")]) == 0
    assert main(["infer-personas", "--corpus", str(corpus), "--out", str(tmp_path / "p2.jsonl")]) == 0
    assert (tmp_path / "p1.jsonl").read_bytes() == (tmp_path / "p2.jsonl").read_bytes()
    recs = [json.loads(x) for x in (tmp_path / "p1.jsonl").read_text().splitlines()]
    assert [r["user_id"] for r in recs] == ["alice", "bob"]
    assert "unions" in recs[0]["traits"]
    cfg = tmp_path / "c.toml"
    cfg.write_text('personas = "p1.jsonl"\nmax_iterations = 2\n')
    assert simulate(cfg, tmp_path / "run") == 0


def test_infer_personas_mapping_corpus_and_empty(tmp_path):
    corpus = tmp_path / "corpus.json"
    corpus.write_text(json.dumps({"u1": ["hello world"], "u2": ["goodbye moon"]}))
    assert main(["infer-personas", "--corpus", str(corpus), "--out", str(tmp_path / "p.jsonl")]) == 0
    corpus.write_text("{}")
    assert main(["infer-personas", "--corpus", str(corpus), "--out", str(tmp_path / "p.jsonl")]) == 2


def test_replay_detects_tampering(config_file, tmp_path, capsys):
    out = tmp_path / "run"
    simulate(config_file, out)
    assert main(["replay", "--run", str(out)]) == 0
    path = out / "events.jsonl"
    data = bytearray(path.read_bytes())
    line_starts = [0] + [i + 1 for i, b in enumerate(data) if b == ord("\n")]
    pos = line_starts[11] + data[line_starts[11]:].index(b'"iteration":') + len(b'"iteration":')
    data[pos] = ord("7") if data[pos] != ord("7") else ord("8")
    path.write_bytes(bytes(data))
    capsys.readouterr()
    assert main(["replay", "--run", str(out)]) == 1
    assert "line 12" in capsys.readouterr().out


def test_replay_refuses_remote_runs(config_file, tmp_path):
    out = tmp_path / "run"
    simulate(config_file, out)
    manifest = json.loads((out / "manifest.json").read_text())
    manifest["backend"] = "remote"
    (out / "manifest.json").write_text(json.dumps(manifest))
    assert main(["replay", "--run", str(out)]) == 5
