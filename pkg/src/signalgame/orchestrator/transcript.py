"""Transcript persistence, corpus statistics and the visible-context audit."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ..backend.prompts import COURT_STAGES
from ..errors import PreconditionError, ValidationError
from .state import ROLE_NAMES, TurnRecord, describe_case, describe_proposition

TRANSCRIPT_SUFFIX = ".transcript.jsonl"


def dumps(event: Mapping) -> str:
    return json.dumps(event, ensure_ascii=False, sort_keys=True)


@dataclass
class Transcript:
    dialogue_id: str
    scenario: str
    events: list[dict] = field(default_factory=list)

    @property
    def turns(self) -> list[TurnRecord]:
        return [TurnRecord.from_dict(e) for e in self.events if e["kind"] == "turn"]

    @property
    def summaries(self) -> list[dict]:
        return [e for e in self.events if e["kind"] == "summary"]

    @property
    def end(self) -> dict | None:
        ends = [e for e in self.events if e["kind"] == "end"]
        return ends[-1] if ends else None

    @property
    def material(self) -> Mapping:
        return self.events[0]["material"]

    def to_jsonl(self) -> str:
        return "".join(dumps(e) + "\n" for e in self.events)

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_jsonl(), encoding="utf-8")
        return path

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "Transcript":
        events = [json.loads(line) for line in lines if line.strip()]
        if not events or events[0].get("kind") != "start":
            raise ValidationError("transcript must begin with a start record")
        return cls(events[0]["dialogue_id"], events[0]["scenario"], events)

    @classmethod
    def load(cls, path: str | Path) -> "Transcript":
        with open(path, encoding="utf-8") as fh:
            return cls.from_lines(fh)


def load_transcripts(directory: str | Path) -> list[Transcript]:
    return [Transcript.load(p) for p in sorted(Path(directory).glob(f"*{TRANSCRIPT_SUFFIX}"))]


def dialogue_stats(t: Transcript) -> dict:
    turns = t.turns
    games = [r for r in turns if r.game_played]
    flipped = sum(r.alternation == "flipped" for r in games)
    end = t.end or {}
    return {
        "dialogue_id": t.dialogue_id,
        "scenario": t.scenario,
        "utterances": len(turns),
        "tokens": sum(r.n_tokens for r in turns),
        "tokens_per_utterance": (sum(r.n_tokens for r in turns) / len(turns)) if turns else 0.0,
        "game_turns": len(games),
        "flipped": flipped,
        "altered_rate": flipped / len(games) if games else 0.0,
        "summaries": len(t.summaries),
        "closed_by": end.get("closed_by"),
        "flags": end.get("flags", []),
    }


def alternation_stats(transcripts: Sequence[Transcript]) -> dict:
    """Flipped game turns over all game turns, overall and per scenario."""
    if not transcripts:
        raise PreconditionError("no transcripts given")
    per: dict[str, list[int]] = {}
    for t in transcripts:
        games = [r for r in t.turns if r.game_played]
        acc = per.setdefault(t.scenario, [0, 0])
        acc[0] += sum(r.alternation == "flipped" for r in games)
        acc[1] += len(games)
    altered = sum(a for a, _ in per.values())
    total = sum(g for _, g in per.values())
    if total == 0:
        raise PreconditionError("transcripts contain no game turns")
    return {
        "altered": altered,
        "game_turns": total,
        "rate": altered / total,
        "by_scenario": {s: {"altered": a, "game_turns": g, "rate": a / g if g else 0.0} for s, (a, g) in sorted(per.items())},
    }


def corpus_report(transcripts: Sequence[Transcript]) -> dict:
    """Per-scenario and overall utterance, token and alternation figures."""
    if not transcripts:
        raise PreconditionError("no transcripts given")
    rows = [dialogue_stats(t) for t in transcripts]

    def block(sel):
        dialogues = len(sel)
        utts = sum(r["utterances"] for r in sel)
        toks = sum(r["tokens"] for r in sel)
        games = sum(r["game_turns"] for r in sel)
        flips = sum(r["flipped"] for r in sel)
        return {
            "dialogues": dialogues,
            "utterances": utts,
            "utt_per_dialogue": utts / dialogues if dialogues else 0.0,
            "tokens_per_utterance": toks / utts if utts else 0.0,
            "game_turns": games,
            "altered": flips,
            "altered_rate": flips / games if games else 0.0,
        }

    cols = {"Court": [r for r in rows if r["scenario"] == "courtroom"], "Debate": [r for r in rows if r["scenario"] == "debate"]}
    report = {name: block(sel) for name, sel in cols.items() if sel}
    report["Overall"] = block(rows)
    return {"columns": report, "dialogues": rows, "token_counting": "backend-reported token counts (whitespace split for fixtures)"}


# -- visible-context audit -------------------------------------------------


def _permitted(t: Transcript) -> list[str]:
    mat = t.material
    texts = [describe_case(mat) if t.scenario == "courtroom" else describe_proposition(mat)]
    texts += [s["text"] for s in t.summaries]
    texts += [r.utterance for r in t.turns]
    texts += list(COURT_STAGES.values()) + list(ROLE_NAMES.values())
    return sorted({x for x in texts if x}, key=len, reverse=True)


def _strip(text: str, permitted: Sequence[str]) -> str:
    for p in permitted:
        text = text.replace(p, "\x00")
    return text


def audit_visible_context(t: Transcript, requests: Sequence[Mapping], label_names: Iterable[str]) -> list[dict]:
    """Scan every logged request context for leaked game intermediates.

    Permitted text (case material, summaries, committed utterances, stage and
    role names) is removed first; what remains must contain no intent or
    strategy name and no non-winning candidate from any game played so far.
    """
    turns = t.turns
    summary_turn = {f"stage-{s['stage']}": s["after_turn"] for s in t.summaries}
    permitted = _permitted(t)
    winners = {r.utterance for r in turns}
    names = sorted(set(label_names), key=len, reverse=True)
    name_re = re.compile("|".join(rf"(?<!\w){re.escape(n)}(?!\w)" for n in names)) if names else None
    violations = []
    for entry in requests:
        req = entry["request"]
        key = req["turn"]
        upto = int(key) if key.isdigit() else summary_turn.get(key, len(turns))
        rest = _strip(req["context"], permitted)
        if name_re is not None:
            for m in name_re.finditer(rest):
                violations.append({"seq": entry.get("seq"), "turn": key, "kind": "label", "text": m.group(0)})
        for r in turns:
            if r.turn > upto:
                break
            for c in r.audit.get("candidates", ()):
                if c not in winners and c in rest:
                    violations.append({"seq": entry.get("seq"), "turn": key, "kind": "candidate", "text": c, "from_turn": r.turn})
    return violations
