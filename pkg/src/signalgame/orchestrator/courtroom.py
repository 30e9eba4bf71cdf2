"""Five-stage courtroom proceeding: the judge manages the floor via explicit directives."""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Callable, Mapping

from ..backend.base import Backend
from ..backend.ops import summarise_stage
from ..backend.prompts import COURT_STAGES
from ..inventory import Inventory
from ..schemas import validate_document
from .runner import drive
from .state import EVERYONE, DialogueConfig, DialogueState
from .turn import base_request, direct_turn, play_turn_game

END_PHRASE = "I hereby declare this stage concluded."
PARTIES = ("plaintiff", "defendant")
LAST_STAGE = "5"

_MENTION = re.compile(r"\b(plaintiff|defendant|defence|defense)\b", re.IGNORECASE)


@dataclass(frozen=True)
class Directive:
    """Parsed outcome of a judge utterance: ``concluded``, ``next`` or ``unknown``."""

    kind: str
    speaker: str | None = None
    ambiguous: bool = False


def _party(word: str) -> str:
    return "plaintiff" if word.lower() == "plaintiff" else "defendant"


def parse_judge_directive(utterance: str) -> Directive:
    """The exact end phrase concludes the stage; otherwise the last party mentioned speaks next."""
    if END_PHRASE in utterance:
        return Directive("concluded")
    named = [_party(m.group(1)) for m in _MENTION.finditer(utterance)]
    if not named:
        return Directive("unknown")
    return Directive("next", named[-1], ambiguous=len(set(named)) > 1)


def other_party(party: str | None) -> str:
    return "defendant" if party == "plaintiff" else "plaintiff"


def start_courtroom(case: Mapping, dialogue_id: str | None = None) -> DialogueState:
    validate_document(case, "case")
    return DialogueState(dialogue_id or case["case_id"], "courtroom", dict(case), "1", next_speaker="judge")


def _end_stage(state: DialogueState, backend: Backend, emit) -> None:
    stage = state.stage
    req = base_request(state, "judge", f"stage-{stage}", purpose="summarise")
    req = replace(req, context=state.visible_context(include_stage=False))
    text = summarise_stage(backend, req, state.stage_transcript(), COURT_STAGES[int(stage)])
    emit(state.commit_summary(stage, text))
    state.history = []
    state.stage_turns = 0
    state.last_party = None
    state.pending = None
    state.next_speaker = "judge"
    state.stage = str(int(stage) + 1) if stage != LAST_STAGE else "closed"
    if state.closed:
        emit({"kind": "end", "turns": state.turn, "closed_by": "judgment", "flags": list(state.flags)})


def _judge_turn(state, backend, inv, config):
    receiver = other_party(state.last_party)
    audit_flags = []
    rec = play_turn_game(state, "judge", receiver, backend, inv, config)
    d = parse_judge_directive(rec.utterance)
    if d.kind == "unknown":
        audit_flags.append({"event": "directive-reprompt"})
        rec = play_turn_game(state, "judge", receiver, backend, inv, config, attempt=1)
        d = parse_judge_directive(rec.utterance)
        if d.kind == "unknown":
            d = Directive("next", "plaintiff")
            audit_flags.append({"event": "directive-default", "speaker": "plaintiff"})
    if d.ambiguous:
        audit_flags.append({"event": "directive-both-parties", "speaker": d.speaker})
    if d.kind == "next" and d.speaker != receiver:
        audit_flags.append({"event": "receiver-mismatch", "planned": receiver, "addressed": d.speaker})
    addressee = d.speaker if d.kind == "next" else EVERYONE
    audit = {**rec.audit, "directive": {"kind": d.kind, "speaker": d.speaker}, "flags": audit_flags}
    return replace(rec, addressee=addressee, audit=audit), d, audit_flags


def step_courtroom(state: DialogueState, backend: Backend, inv: Inventory, config: DialogueConfig, emit: Callable) -> None:
    """Advance the proceeding by one action (a turn or a stage summary)."""
    if state.closed:
        return
    if state.pending == "summary":
        _end_stage(state, backend, emit)
        return
    if state.stage == LAST_STAGE:
        rec = direct_turn(state, "judge", backend, EVERYONE, reason="judgment-monologue")
        emit(state.commit_turn(rec))
        state.pending = "summary"
        return
    if state.stage_turns >= config.max_turns_per_stage:
        state.flag(event="forced-advance", stage=state.stage, turns=state.stage_turns)
        state.pending = "summary"
        return

    speaker = state.next_speaker
    if speaker == "judge":
        rec, d, audit_flags = _judge_turn(state, backend, inv, config)
        emit(state.commit_turn(rec))
        for f in audit_flags:
            state.flag(turn=rec.turn, **f)
        if d.kind == "concluded":
            state.pending = "summary"
        else:
            state.next_speaker = d.speaker
    else:
        rec = play_turn_game(state, speaker, "judge", backend, inv, config, addressee="judge")
        emit(state.commit_turn(rec))
        state.last_party = speaker
        state.next_speaker = "judge"


def run_courtroom(
    case: Mapping,
    backend: Backend,
    inv: Inventory,
    config: DialogueConfig = DialogueConfig(),
    state: DialogueState | None = None,
    sink: Callable[[dict], None] | None = None,
    checkpoint=None,
):
    """Run (or resume) a full proceeding and return its Transcript."""
    if state is None:
        state = start_courtroom(case)
    return drive(state, lambda s, emit: step_courtroom(s, backend, inv, config, emit), sink, checkpoint)
