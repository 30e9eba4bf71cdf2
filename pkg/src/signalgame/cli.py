"""Command-line entry point: ``signalgame run | solve | stats``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .backend import FixtureBackend, HTTPBackend, HTTPConfig, RequestLog
from .config import RunConfig, resolve
from .equilibrium import exploitability, run_equilibrium, run_with_trace
from .errors import SignalGameError, ValidationError
from .inventory import load_inventory_file, shipped_inventory
from .orchestrator import RunAborted, load_checkpoint, run_courtroom, run_debate
from .orchestrator.transcript import TRANSCRIPT_SUFFIX, corpus_report, dialogue_stats, dumps, load_transcripts
from .orchestrator.turn import pair_key
from .game import load_game_spec
from .schemas import validate_document

log = logging.getLogger("signalgame")

EXIT_OK, EXIT_RUN_FAILURE, EXIT_CONFIG = 0, 1, 2


class ConfigError(SignalGameError):
    pass


# -- run -------------------------------------------------------------------


def _scenario_of(doc: dict, forced: str | None) -> str:
    guess = "courtroom" if "parties" in doc else "debate" if "proposition" in doc else None
    scenario = forced or guess
    if scenario is None:
        raise ConfigError("cannot tell whether the input is a case or a proposition file")
    validate_document(doc, "case" if scenario == "courtroom" else "proposition")
    return scenario


def discover_inputs(cfg: RunConfig) -> list[tuple[Path, dict, str]]:
    if not cfg.inputs:
        raise ConfigError("no --input given")
    paths: list[Path] = []
    for raw in cfg.inputs:
        p = Path(raw)
        if p.is_dir():
            paths.extend(q for q in sorted(p.glob("*.json")) if not q.name.endswith(".fixture.json"))
        elif p.is_file():
            paths.append(p)
        else:
            raise ConfigError(f"input {raw} does not exist")
    if not paths:
        raise ConfigError("no input files found")
    out = []
    for p in paths:
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
            out.append((p, doc, _scenario_of(doc, cfg.scenario)))
        except (json.JSONDecodeError, ValidationError) as exc:
            raise ConfigError(f"{p}: {exc}") from exc
    return out


def dialogue_id(doc: dict, scenario: str) -> str:
    return doc["case_id"] if scenario == "courtroom" else doc["proposition_id"]


def _fixture_script(cfg: RunConfig, did: str, source: Path) -> dict:
    candidates = []
    if cfg.fixture:
        f = Path(cfg.fixture)
        candidates.append(f / f"{did}.fixture.json" if f.is_dir() else f)
    candidates.append(source.parent / f"{did}.fixture.json")
    for c in candidates:
        if c.is_file():
            return json.loads(c.read_text(encoding="utf-8"))
    log.warning("no fixture script for %s; using hashed defaults", did)
    return {"schema": "lingua-game-fixture/1", "dialogue_id": did, "defaults": {"scores": "hashed"}}


def make_backend(cfg: RunConfig, did: str, source: Path, req_log: RequestLog):
    if cfg.backend == "fixture":
        return FixtureBackend(_fixture_script(cfg, did, source), req_log)
    http = HTTPConfig(
        endpoint=cfg.endpoint,
        model=cfg.model,
        api_key=cfg.api_key,
        top_logprobs=cfg.top_logprobs,
        timeout=cfg.timeout,
        scoring=cfg.scoring,
    )
    return HTTPBackend(http, req_log)


def inventory_for(cfg: RunConfig, scenario: str):
    return load_inventory_file(cfg.inventory) if cfg.inventory else shipped_inventory(scenario)


def run_one(cfg: RunConfig, source: Path, doc: dict, scenario: str, resume: bool = False) -> dict:
    out = Path(cfg.out)
    did = dialogue_id(doc, scenario)
    tpath = out / f"{did}{TRANSCRIPT_SUFFIX}"
    cpath = out / f"{did}.checkpoint.json"
    state = load_checkpoint(cpath) if resume and cpath.exists() else None
    req_log = RequestLog(out / f"{did}.requests.jsonl", append=state is not None)
    backend = make_backend(cfg, did, source, req_log)
    inv = inventory_for(cfg, scenario)
    dcfg = cfg.dialogue_config(str(out / "traces") if cfg.trace else None)

    tpath.write_text("".join(dumps(e) + "\n" for e in (state.events if state else [])), encoding="utf-8")
    with open(tpath, "a", encoding="utf-8") as fh:

        def sink(event):
            fh.write(dumps(event) + "\n")
            fh.flush()

        runner = run_courtroom if scenario == "courtroom" else run_debate
        transcript = runner(doc, backend, inv, dcfg, state=state, sink=sink, checkpoint=cpath)
    stats = dialogue_stats(transcript)
    (out / f"{did}.stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return stats


def cmd_run(cfg: RunConfig, resume: bool = False) -> int:
    jobs = discover_inputs(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def attempt(job):
        source, doc, scenario = job
        try:
            return run_one(cfg, source, doc, scenario, resume), None
        except RunAborted as exc:
            return None, f"aborted ({exc}); checkpoint at {exc.checkpoint}"
        except SignalGameError as exc:
            return None, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        results = list(pool.map(attempt, jobs))
    failures = 0
    for (source, doc, scenario), (stats, err) in zip(jobs, results):
        did = dialogue_id(doc, scenario)
        if err:
            failures += 1
            print(f"FAIL {did}: {err}")
        else:
            print(f"ok   {did}: {stats['utterances']} utterances, {stats['flipped']}/{stats['game_turns']} flipped, closed by {stats['closed_by']}")
    return EXIT_RUN_FAILURE if failures else EXIT_OK


# -- solve -----------------------------------------------------------------


def cmd_solve(args) -> int:
    try:
        game = load_game_spec(args.spec)
        overrides = {k: v for k, v in (("rounds", args.rounds), ("w", args.w), ("lam", args.lam), ("eta", args.eta)) if v is not None}
        if overrides:
            game = replace(game, hyper=replace(game.hyper, **overrides))
    except (OSError, json.JSONDecodeError, SignalGameError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outcome = run_with_trace(game, args.trace) if args.trace else run_equilibrium(game)
    s, i, r = outcome.final_policies
    result = {
        "winning_index": outcome.winning_index,
        "winning_utterance": outcome.winning_utterance,
        "initial_index": outcome.initial_index,
        "alternated": outcome.alternated,
        "rounds_run": outcome.rounds_run,
        "gold_pair": list(game.gold_pair),
        "final_policies": {
            "sender": {pair_key(p): s.row(p).tolist() for p in s.rows},
            "intent": i.probs.tolist(),
            "strategy": r.probs.tolist(),
        },
    }
    if args.exploitability:
        result["exploitability"] = exploitability(game, s, i, r)
    print(json.dumps(result, indent=2))
    return EXIT_OK


# -- stats -----------------------------------------------------------------


def format_report(report: dict) -> str:
    cols = list(report["columns"])
    rows = [
        ("dialogues", "dialogues", "{:d}"),
        ("utt/dialogue", "utt_per_dialogue", "{:.2f}"),
        ("tokens/utt", "tokens_per_utterance", "{:.2f}"),
        ("game turns", "game_turns", "{:d}"),
        ("altered", "altered", "{:d}"),
        ("altered rate", "altered_rate", "{:.3f}"),
    ]
    width = max(len(r[0]) for r in rows) + 2
    lines = ["".ljust(width) + "".join(c.rjust(10) for c in cols)]
    for label, key, fmt in rows:
        lines.append(label.ljust(width) + "".join(fmt.format(report["columns"][c][key]).rjust(10) for c in cols))
    lines.append(f"({report['token_counting']})")
    return "\n".join(lines)


def cmd_stats(args) -> int:
    d = Path(args.directory)
    transcripts = load_transcripts(d) if d.is_dir() else []
    if not transcripts:
        print(f"error: no *{TRANSCRIPT_SUFFIX} files in {d}", file=sys.stderr)
        return EXIT_RUN_FAILURE
    report = corpus_report(transcripts)
    print(format_report(report))
    if args.json:
        Path(args.json).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="signalgame", description="Signalling-game utterance selection for courtroom and debate dialogues.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate dialogues and write transcripts")
    run.add_argument("--scenario", choices=["courtroom", "debate"])
    run.add_argument("--input", action="append", dest="inputs", help="case/proposition file or directory (repeatable)")
    run.add_argument("--backend", choices=["fixture", "http"])
    run.add_argument("--fixture", help="fixture script, or directory of <id>.fixture.json files")
    run.add_argument("--endpoint")
    run.add_argument("--model")
    run.add_argument("--top-logprobs", type=int, dest="top_logprobs")
    run.add_argument("--timeout", type=float)
    run.add_argument("--no-scoring", action="store_const", const=False, dest="scoring", help="endpoint cannot teacher-force; use uniform non-gold rows")
    run.add_argument("--selection", choices=["equilibrium", "rerank", "initial"])
    run.add_argument("--w", type=float)
    run.add_argument("--lambda", type=float, dest="lam")
    run.add_argument("--eta", type=float)
    run.add_argument("--rounds", type=int)
    run.add_argument("--candidates", type=int)
    run.add_argument("--max-turns", type=int, dest="max_turns", help="turn cap per courtroom stage or per debate")
    run.add_argument("--length-normalise", action="store_const", const=True, dest="length_normalise")
    run.add_argument("--inventory", help="custom inventory file instead of the shipped one")
    run.add_argument("--out")
    run.add_argument("--trace", action="store_const", const=True, help="write a per-turn solver trace CSV")
    run.add_argument("--workers", type=int)
    run.add_argument("--config", help="JSON config file")
    run.add_argument("--resume", action="store_true", help="continue dialogues from their checkpoints")

    solve = sub.add_parser("solve", help="solve a standalone game-spec file")
    solve.add_argument("spec")
    solve.add_argument("--rounds", type=int)
    solve.add_argument("--w", type=float)
    solve.add_argument("--lambda", type=float, dest="lam")
    solve.add_argument("--eta", type=float)
    solve.add_argument("--trace", help="CSV path for the per-round trace")
    solve.add_argument("--exploitability", action="store_true")

    stats = sub.add_parser("stats", help="summarise a directory of transcripts")
    stats.add_argument("directory")
    stats.add_argument("--json", help="also write the machine-readable report here")
    return p


RUN_FLAGS = (
    "scenario", "inputs", "backend", "fixture", "endpoint", "model", "top_logprobs", "timeout", "scoring",
    "selection", "w", "lam", "eta", "rounds", "candidates", "max_turns", "length_normalise", "inventory", "out", "trace", "workers",
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "solve":
        return cmd_solve(args)
    if args.command == "stats":
        return cmd_stats(args)
    try:
        flags = {k: getattr(args, k) for k in RUN_FLAGS}
        cfg = resolve(flags, args.config)
        return cmd_run(cfg, args.resume)
    except (ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
