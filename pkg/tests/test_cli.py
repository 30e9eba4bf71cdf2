import csv
import hashlib
import json

import pytest

from helpers import DATA, GOLDEN, SCENARIOS, StubServer
from signalgame.cli import main
from signalgame.config import resolve
from signalgame.errors import ValidationError

FAST = ["--rounds", "300"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def digest(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.iterdir()) if p.is_file() and p.name != "config.json"}


# -- configuration layers ---------------------------------------------------


def test_defaults():
    cfg = resolve({}, environ={})
    hp = cfg.hyper()
    assert (hp.w, hp.lam, hp.eta, hp.rounds, hp.n_candidates) == (0.5, 0.1, 0.1, 5000, 3)
    assert cfg.selection == "equilibrium" and cfg.backend == "fixture"


def test_precedence(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"model": "file-model", "eta": 0.3, "lambda": 0.2, "api_key": "***"}))
    env = {"SIGNALGAME_MODEL": "env-model", "SIGNALGAME_TIMEOUT": "9", "SIGNALGAME_API_KEY": "k"}
    cfg = resolve({"eta": 0.4, "model": None}, conf, env)
    assert cfg.model == "file-model"  # file beats env
    assert cfg.eta == 0.4  # flag beats file
    assert cfg.lam == 0.2 and cfg.timeout == 9.0 and cfg.api_key == "k"
    assert cfg.to_dict()["api_key"] == "***" and cfg.to_dict()["lambda"] == 0.2


def test_bad_config(tmp_path):
    with pytest.raises(ValidationError):
        resolve({"colour": "red"}, environ={})
    with pytest.raises(ValidationError):
        resolve({"selection": "vote"}, environ={})
    with pytest.raises(ValidationError):
        resolve({"eta": -1.0}, environ={})


def test_run_config_error_exit(tmp_path, capsys):
    code, _, err = run(capsys, "run", "--input", tmp_path / "missing.json", "--out", tmp_path / "o")
    assert code == 2 and "config error" in err


# -- run -------------------------------------------------------------------


def test_debate_run_and_rerun_hash_equal(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        code, stdout, _ = run(capsys, "run", "--scenario", "debate", "--input", SCENARIOS / "remote-work.json", "--out", out, *FAST)
        assert code == 0 and stdout.startswith("ok")
    assert digest(a) == digest(b)
    names = set(digest(a))
    assert {"remote-work.transcript.jsonl", "remote-work.requests.jsonl", "remote-work.stats.json"} <= names
    conf = json.loads((a / "config.json").read_text())
    assert conf["rounds"] == 300 and conf["scenario"] == "debate"


def test_directory_input_one_transcript_each(tmp_path, capsys):
    code, stdout, _ = run(capsys, "run", "--input", SCENARIOS, "--out", tmp_path, *FAST, "--workers", 2)
    assert code == 0
    assert sorted(p.name for p in tmp_path.glob("*.transcript.jsonl")) == ["loan-dispute.transcript.jsonl", "remote-work.transcript.jsonl"]


def test_rerank_selection_recorded(tmp_path, capsys):
    code, _, _ = run(capsys, "run", "--input", SCENARIOS / "remote-work.json", "--out", tmp_path, "--selection", "rerank")
    assert code == 0
    turns = [json.loads(x) for x in (tmp_path / "remote-work.transcript.jsonl").read_text().splitlines()]
    modes = {t["selection_mode"] for t in turns if t["kind"] == "turn"}
    assert modes == {"rerank"}
    by_turn = {t["turn"]: t for t in turns if t["kind"] == "turn"}
    assert by_turn[3]["winning_index"] == 2 and by_turn[7]["winning_index"] == 1


def test_trace_files(tmp_path, capsys):
    code, _, _ = run(capsys, "run", "--input", SCENARIOS / "remote-work.json", "--out", tmp_path, "--rounds", 40, "--trace")
    assert code == 0
    traces = sorted((tmp_path / "traces").glob("*.csv"))
    assert len(traces) == 12
    assert len(list(csv.reader(traces[0].open()))) == 41


def test_failure_isolated_and_nonzero(tmp_path, capsys):
    inputs = tmp_path / "in"
    inputs.mkdir()
    (inputs / "remote-work.json").write_text((SCENARIOS / "remote-work.json").read_text())
    (inputs / "remote-work.fixture.json").write_text((SCENARIOS / "remote-work.fixture.json").read_text())
    bad = json.loads((SCENARIOS / "remote-work.json").read_text())
    bad["proposition_id"] = "broken"
    (inputs / "broken.json").write_text(json.dumps(bad))
    (inputs / "broken.fixture.json").write_text(json.dumps({"schema": "lingua-game-fixture/1", "dialogue_id": "broken", "turns": {"2": {"generate": {"not": "valid"}}}}))
    code, stdout, _ = run(capsys, "run", "--input", inputs, "--out", tmp_path / "o", *FAST)
    assert code == 1
    assert "FAIL broken" in stdout and "ok   remote-work" in stdout
    assert (tmp_path / "o" / "remote-work.stats.json").exists()


def test_http_backend_abort_writes_checkpoint(tmp_path, capsys):
    with StubServer() as server:
        server.llm.fail_with = 500
        code, stdout, _ = run(capsys, "run", "--input", SCENARIOS / "remote-work.json", "--out", tmp_path,
                              "--backend", "http", "--endpoint", server.url, "--timeout", 5)
    assert code == 1 and "checkpoint" in stdout
    assert (tmp_path / "remote-work.checkpoint.json").exists()


def test_resume_completes(tmp_path, capsys):
    with StubServer() as server:
        server.llm.fail_with = 500
        run(capsys, "run", "--input", SCENARIOS / "remote-work.json", "--out", tmp_path, "--backend", "http", "--endpoint", server.url)
    code, _, _ = run(capsys, "run", "--input", SCENARIOS / "remote-work.json", "--out", tmp_path, "--resume", *FAST)
    assert code == 0 and not (tmp_path / "remote-work.checkpoint.json").exists()


# -- solve -----------------------------------------------------------------


def test_solve_demo(capsys):
    code, stdout, _ = run(capsys, "solve", DATA / "demo_game.json", "--exploitability")
    res = json.loads(stdout)
    assert code == 0
    assert (res["winning_index"], res["initial_index"], res["alternated"]) == (1, 0, True)
    assert res["rounds_run"] == 5000 and "exploitability" in res


def test_solve_zero_rounds(capsys):
    code, stdout, _ = run(capsys, "solve", DATA / "demo_game.json", "--rounds", 0)
    res = json.loads(stdout)
    assert code == 0 and res["winning_index"] == res["initial_index"] == 0


def test_solve_trace_rows(tmp_path, capsys):
    trace = tmp_path / "t.csv"
    code, _, _ = run(capsys, "solve", DATA / "demo_game.json", "--rounds", 17, "--trace", trace)
    assert code == 0 and len(trace.read_text().splitlines()) == 18


def test_solve_bad_spec(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{}")
    code, _, err = run(capsys, "solve", p)
    assert code == 2 and err.startswith("error")


# -- stats -----------------------------------------------------------------


def test_stats_empty_dir(tmp_path, capsys):
    code, _, err = run(capsys, "stats", tmp_path)
    assert code == 1 and "no *.transcript.jsonl" in err


def test_stats_golden_report(tmp_path, capsys):
    out = tmp_path / "report.json"
    code, stdout, _ = run(capsys, "stats", GOLDEN / "transcripts", "--json", out)
    assert code == 0
    header = stdout.splitlines()[0].split()
    assert header == ["Court", "Debate", "Overall"]
    assert json.loads(out.read_text()) == json.loads((GOLDEN / "report.json").read_text())
